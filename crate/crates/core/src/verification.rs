//! Independent checkers for the weak-solution conditions: the damage
//! variational inequality, the subgradient and its complementarity relation,
//! the uniform-convexity floor of the quartic monotonicity inequality, and a
//! whole-trajectory report. The dual pairings are probed over deterministic
//! finite batteries of test fields, so every reported violation is a lower
//! bound on the true one.

use crate::energetics::{self, State};
use crate::evolution::{self, Diagnostics, EvolutionError, Trajectory};
use crate::grid::{self, ScalarField};
use crate::material::{self, ModelParams};
use crate::minimizer::MinimizerError;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VerificationError {
    #[error("test function must be nonnegative (found {value:e} at cell {cell})")]
    NegativeInput { cell: usize, value: f64 },
    #[error("shift must be positive, got {0}")]
    NonPositiveShift(f64),
    #[error(transparent)]
    Energetics(#[from] energetics::EnergeticsError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Minimizer(#[from] MinimizerError),
}

/// Cells with z at or below this value count as fully damaged. The box
/// projection produces exact zeros; the tolerance only absorbs descent dust.
pub const DAMAGE_ZERO_TOL: f64 = 1e-9;

/// Static truncation `[ζ - δ]⁺`; the output vanishes on a neighborhood of
/// the zero set of ζ.
pub fn truncate_shift(zeta: &ScalarField, delta: f64) -> Result<ScalarField, VerificationError> {
    if !(delta > 0.0) {
        return Err(VerificationError::NonPositiveShift(delta));
    }
    for (cell, &v) in zeta.data.iter().enumerate() {
        if v < 0.0 {
            return Err(VerificationError::NegativeInput { cell, value: v });
        }
    }
    let mut out = zeta.clone();
    for v in &mut out.data {
        *v = (*v - delta).max(0.0);
    }
    Ok(out)
}

/// The damage subgradient selection `r = -χ_{z≈0} [∂_z W_el]⁺`.
pub fn subgradient_r(
    state: &State,
    params: &ModelParams,
    zero_tol: f64,
) -> Result<ScalarField, VerificationError> {
    let grid = state.grid();
    let dim = grid.dim();
    let e = grid::sym_grad(&state.u);
    let mut r = ScalarField::zeros(&grid);
    let mut packed = [0.0; 6];
    for idx in 0..grid.cell_count() {
        let z = state.z.data[idx];
        if z <= zero_tol {
            e.cell(idx, &mut packed);
            let dz = material::dz_w_el(params, &packed, state.c.data[idx], z.clamp(0.0, 1.0), dim)
                .map_err(energetics::EnergeticsError::from)?;
            r.data[idx] = -dz.max(0.0);
        }
    }
    Ok(r)
}

/// `∫ r (ζ - z) dx` for one nonnegative test field.
pub fn complementarity_pairing(r: &ScalarField, z: &ScalarField, zeta: &ScalarField) -> f64 {
    let vol = r.grid.cell_volume();
    vol * r
        .data
        .iter()
        .zip(zeta.data.iter().zip(&z.data))
        .map(|(&ri, (&zi, &zzi))| ri * (zi - zzi))
        .sum::<f64>()
}

/// Deterministic battery of nonnegative test fields: constants, truncations
/// of z, bump fields, and seeded random fields.
fn nonneg_battery(z: &ScalarField, seed: u64, random_members: usize) -> Vec<ScalarField> {
    let grid = z.grid;
    let mut battery = Vec::new();
    for &c in &[0.5, 1.0, 2.0] {
        battery.push(ScalarField::constant(&grid, c));
    }
    for &delta in &[1e-3, 0.1, 0.3] {
        let mut clipped = z.clone();
        for v in &mut clipped.data {
            *v = v.max(0.0);
        }
        if let Ok(t) = truncate_shift(&clipped, delta) {
            battery.push(t);
        }
    }
    // bump fields centered at a few interior points
    for &frac in &[0.25, 0.5, 0.75] {
        battery.push(ScalarField::from_fn(&grid, |x| {
            let mut d2 = 0.0;
            for &xi in x {
                let dx = xi - frac;
                d2 += dx * dx;
            }
            (-40.0 * d2).exp()
        }));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..random_members {
        let mut f = ScalarField::zeros(&grid);
        for v in &mut f.data {
            *v = rng.gen_range(0.0..1.0);
        }
        battery.push(f);
    }
    battery
}

/// Largest value of `∫ r (ζ - z)` over the nonnegative battery; must stay
/// at or below roundoff for a valid subgradient.
pub fn complementarity_check(state: &State, r: &ScalarField) -> f64 {
    let battery = nonneg_battery(&state.z, 0x5eed, 100);
    battery
        .iter()
        .map(|zeta| complementarity_pairing(r, &state.z, zeta))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// The damage variational-inequality pairing
/// `∫ δ|∇z|^{p-2}∇z·∇ζ + (∂_zW_el - α + β ż) ζ + r ζ` for one test field,
/// assembled with the same face fluxes as the solver (the flux form makes
/// the strong/weak identity exact).
pub fn vi_pairing(
    state: &State,
    zdot: &ScalarField,
    r: &ScalarField,
    params: &ModelParams,
    zeta: &ScalarField,
) -> Result<f64, VerificationError> {
    let mut g = energetics::d_z_energy(state, params)?;
    for (gi, (&zd, &ri)) in g.data.iter_mut().zip(zdot.data.iter().zip(&r.data)) {
        *gi += -params.alpha + params.beta * zd + ri;
    }
    Ok(grid::l2_inner(&g, zeta))
}

/// Smallest VI pairing over a deterministic battery of nonpositive test
/// fields (negated truncations and bumps, the rate direction, random
/// members). Must stay above `-tol` on converged states.
pub fn vi_residual(
    state: &State,
    zdot: &ScalarField,
    r: &ScalarField,
    params: &ModelParams,
) -> Result<f64, VerificationError> {
    let mut battery: Vec<ScalarField> = nonneg_battery(&state.z, 0xbad5eed, 100)
        .into_iter()
        .map(|mut f| {
            f.scale(-1.0);
            f
        })
        .collect();
    if zdot.data.iter().any(|&v| v != 0.0) {
        battery.push(zdot.clone());
    }
    let mut worst = f64::INFINITY;
    for zeta in &battery {
        worst = worst.min(vi_pairing(state, zdot, r, params, zeta)?);
    }
    Ok(worst)
}

/// Sampled floor of the uniform-convexity constant in
/// `C‖x-y‖^q ≤ ⟨‖x‖^{q-2}x - ‖y‖^{q-2}y, x-y⟩`; degenerate pairs x = y are
/// skipped.
pub fn uniform_convexity_probe(q_exp: f64, pairs: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    assert!(q_exp >= 2.0, "probe requires q >= 2");
    let mut floor = f64::INFINITY;
    for (x, y) in pairs {
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut diff_sq = 0.0;
        let mut pairing = 0.0;
        for (xi, yi) in x.iter().zip(y) {
            let d = xi - yi;
            diff_sq += d * d;
            pairing += (nx.powf(q_exp - 2.0) * xi - ny.powf(q_exp - 2.0) * yi) * d;
        }
        if diff_sq == 0.0 {
            continue;
        }
        floor = floor.min(pairing / diff_sq.sqrt().powf(q_exp));
    }
    floor
}

/// Seeded pairs of vectors in ℝ^dim for the convexity probe.
pub fn random_vector_pairs(dim: usize, count: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let x = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let y = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            (x, y)
        })
        .collect()
}

/// Aggregated residuals of the weak-solution conditions over a trajectory.
#[derive(Debug, Clone, Copy)]
pub struct WeakSolutionReport {
    /// Worst mismatch of the mass-flux equation over the battery (per step,
    /// normalized by the H¹ norm of the test field).
    pub diffusion_residual: f64,
    /// Worst L² norm of the potential-equation residual field.
    pub potential_residual: f64,
    /// Worst weak equilibrium residual over Γ-vanishing test fields.
    pub equilibrium_residual: f64,
    /// Smallest VI pairing over the battery and all steps.
    pub vi_min: f64,
    /// Largest complementarity pairing over the battery and all nodes.
    pub complementarity_max: f64,
    /// Smallest half-coefficient inequality slack over node pairs.
    pub coarse_slack_min: f64,
    /// Smallest full-coefficient slack (with the κ̂ correction) over pairs.
    pub precise_slack_min: f64,
    /// Total κ̂ budget over the run.
    pub kappa_total: f64,
}

impl WeakSolutionReport {
    /// Pass verdict at tolerance `el_tol` for the residual channels and
    /// `scale` = E_ε(q⁰) + 1 for the energy channels.
    pub fn passes(&self, el_tol: f64, scale: f64) -> bool {
        self.diffusion_residual <= 10.0 * el_tol
            && self.potential_residual <= 10.0 * el_tol
            && self.equilibrium_residual <= 10.0 * el_tol
            && self.vi_min >= -1e-6 * scale
            && self.complementarity_max <= 1e-10 * scale
            && self.coarse_slack_min >= -1e-7 * scale
            && self.precise_slack_min >= -1e-6 * scale
    }

    pub fn to_key_value(&self) -> String {
        format!(
            "diffusion_residual {:.17e}\npotential_residual {:.17e}\n\
             equilibrium_residual {:.17e}\nvi_min {:.17e}\ncomplementarity_max {:.17e}\n\
             coarse_slack_min {:.17e}\nprecise_slack_min {:.17e}\nkappa_total {:.17e}\n",
            self.diffusion_residual,
            self.potential_residual,
            self.equilibrium_residual,
            self.vi_min,
            self.complementarity_max,
            self.coarse_slack_min,
            self.precise_slack_min,
            self.kappa_total,
        )
    }
}

fn h1_norm(f: &ScalarField) -> f64 {
    (grid::l2_inner(f, f) + grid::dirichlet_form(f, f)).sqrt()
}

/// Signed battery for the flux equation: low cosine modes plus seeded random
/// fields.
fn signed_battery(grid: &grid::GridSpec, seed: u64, random_members: usize) -> Vec<ScalarField> {
    let mut battery = vec![ScalarField::constant(grid, 1.0)];
    for k in 1..4usize {
        battery.push(ScalarField::from_fn(grid, |x| {
            (std::f64::consts::PI * k as f64 * x[0] / (grid.cells(0) as f64 * grid.spacing(0)))
                .cos()
        }));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..random_members {
        let mut f = ScalarField::zeros(grid);
        for v in &mut f.data {
            *v = rng.gen_range(-1.0..1.0);
        }
        battery.push(f);
    }
    battery
}

/// Assembles the weak-solution residuals of a completed trajectory.
pub fn weak_solution_report(
    traj: &Trajectory,
    diag: &Diagnostics,
    params: &ModelParams,
) -> Result<WeakSolutionReport, VerificationError> {
    let grid = traj.state(0).grid();
    let tau = traj.tau;
    let battery = signed_battery(&grid, 0x7e57, 20);

    let mut diffusion: f64 = 0.0;
    let mut potential: f64 = 0.0;
    let mut equilibrium: f64 = 0.0;
    let mut vi_min = f64::INFINITY;
    let mut comp_max = f64::NEG_INFINITY;

    for m in 1..traj.nodes.len() {
        let cur = traj.state(m);
        let prev = traj.state(m - 1);
        let mu = &traj.nodes[m].mu;

        let mut cdot = cur.c.clone();
        cdot.axpy(-1.0, &prev.c);
        cdot.scale(1.0 / tau);

        // flux equation ∫ ∂_t ĉ ζ = -∫ ∇μ·∇ζ
        for zeta in &battery {
            let res = grid::l2_inner(&cdot, zeta) + grid::dirichlet_form(mu, zeta);
            let norm = h1_norm(zeta).max(1e-30);
            diffusion = diffusion.max(res.abs() / norm);
        }

        // potential equation residual field d_cẼ + ε ∂ĉ - μ
        let mut rho = energetics::d_c_energy(cur, params)?;
        rho.axpy(params.epsilon, &cdot);
        rho.axpy(-1.0, mu);
        potential = potential.max(rho.l2_norm());

        // weak equilibrium over Γ-vanishing fields
        let du = energetics::d_u_energy(cur, params)?;
        let vol = grid.cell_volume();
        let mut acc = 0.0;
        for comp in 0..grid.dim() {
            let g = du.component(comp);
            for idx in 0..grid.cell_count() {
                if !grid.is_gamma_cell(idx) {
                    acc += g[idx] * g[idx];
                }
            }
        }
        equilibrium = equilibrium.max((vol * acc).sqrt());

        // damage inequality and subgradient complementarity
        let mut zdot = cur.z.clone();
        zdot.axpy(-1.0, &prev.z);
        zdot.scale(1.0 / tau);
        let r = subgradient_r(cur, params, DAMAGE_ZERO_TOL)?;
        vi_min = vi_min.min(vi_residual(cur, &zdot, &r, params)?);
        comp_max = comp_max.max(complementarity_check(cur, &r));
    }

    let mut coarse_min = f64::INFINITY;
    let mut precise_min = f64::INFINITY;
    let mut kappa_total = 0.0;
    let steps = traj.step_count();
    for m1 in 0..=steps {
        for m2 in m1..=steps {
            let slack = evolution::energy_inequality_check(
                traj,
                diag,
                m1 as f64 * tau,
                m2 as f64 * tau,
            )?;
            coarse_min = coarse_min.min(slack.coarse);
            precise_min = precise_min.min(slack.precise);
            if m1 == 0 && m2 == steps {
                kappa_total = slack.kappa;
            }
        }
    }

    Ok(WeakSolutionReport {
        diffusion_residual: diffusion,
        potential_residual: potential,
        equilibrium_residual: equilibrium,
        vi_min,
        complementarity_max: comp_max,
        coarse_slack_min: coarse_min,
        precise_slack_min: precise_min,
        kappa_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, VectorField};
    use crate::material::PhiKind;

    #[test]
    fn truncate_shift_basics() {
        let grid = GridSpec::unit_interval(10);
        let f = ScalarField::constant(&grid, 0.5);
        let t = truncate_shift(&f, 0.2).unwrap();
        assert!(t.data.iter().all(|&v| (v - 0.3).abs() < 1e-15));

        let t = truncate_shift(&f, 0.7).unwrap();
        assert!(t.data.iter().all(|&v| v == 0.0));

        let mut g = f.clone();
        g.data[3] = -0.1;
        assert!(matches!(truncate_shift(&g, 0.1), Err(VerificationError::NegativeInput { .. })));

        // pointwise bound and monotonicity in δ
        let f = ScalarField::from_fn(&grid, |x| x[0]);
        let d1 = truncate_shift(&f, 0.1).unwrap();
        let d2 = truncate_shift(&f, 0.3).unwrap();
        for ((a, b), orig) in d1.data.iter().zip(&d2.data).zip(&f.data) {
            assert!(a >= b);
            assert!((orig - a).abs() <= 0.1 + 1e-15);
        }
    }

    #[test]
    fn subgradient_cases() {
        let grid = GridSpec::unit_interval(8);
        let params = ModelParams { phi_kind: PhiKind::Linear, ..ModelParams::default() };
        // no zero set: r vanishes
        let state = State {
            u: VectorField::zeros(&grid),
            c: ScalarField::constant(&grid, 1.0),
            z: ScalarField::constant(&grid, 0.5),
            time: 0.0,
        };
        let r = subgradient_r(&state, &params, DAMAGE_ZERO_TOL).unwrap();
        assert!(r.data.iter().all(|&v| v == 0.0));

        // linear Φ with a damaged cell: r = -Ŵ_el there
        let mut state = state;
        state.z.data[4] = 0.0;
        let r = subgradient_r(&state, &params, DAMAGE_ZERO_TOL).unwrap();
        let mut packed = [0.0; 6];
        let e = grid::sym_grad(&state.u);
        e.cell(4, &mut packed);
        let expect = -material::w_hat_el(&params, &packed, 1.0, 1);
        assert!((r.data[4] - expect).abs() < 1e-14);
        assert!(r.data[4] < 0.0);
        // nonpositive everywhere and supported on the zero set
        for (idx, &v) in r.data.iter().enumerate() {
            assert!(v <= 0.0);
            if idx != 4 {
                assert_eq!(v, 0.0);
            }
        }

        // quadratic Φ: Φ'(0) = 0 kills the subgradient
        let params = ModelParams { phi_kind: PhiKind::Quadratic, ..params };
        let r = subgradient_r(&state, &params, DAMAGE_ZERO_TOL).unwrap();
        assert!(r.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn complementarity_sign_structure() {
        let grid = GridSpec::unit_interval(12);
        let params = ModelParams { phi_kind: PhiKind::Linear, ..ModelParams::default() };
        let mut state = State {
            u: VectorField::from_fn(&grid, |x, _| 0.4 * x[0]),
            c: ScalarField::constant(&grid, 0.0),
            z: ScalarField::constant(&grid, 0.6),
            time: 0.0,
        };
        state.z.data[5] = 0.0;
        state.z.data[6] = 0.0;
        let r = subgradient_r(&state, &params, DAMAGE_ZERO_TOL).unwrap();
        assert!(r.data[5] < 0.0);
        let worst = complementarity_check(&state, &r);
        assert!(worst <= 1e-12, "complementarity violated: {worst}");

        let zero = ScalarField::zeros(&grid);
        assert_eq!(complementarity_check(&state, &zero), 0.0);
    }

    #[test]
    fn vi_pairing_zero_test_function() {
        let grid = GridSpec::unit_interval(9);
        let params = ModelParams::default();
        let state = State {
            u: VectorField::zeros(&grid),
            c: ScalarField::constant(&grid, 0.2),
            z: ScalarField::constant(&grid, 1.0),
            time: 0.0,
        };
        let zero = ScalarField::zeros(&grid);
        let q = vi_pairing(&state, &zero, &zero, &params, &zero).unwrap();
        assert_eq!(q, 0.0);
    }

    #[test]
    fn vi_residual_undamaged_state() {
        // z ≡ 1 with driving force below the threshold: every battery member
        // gives a nonnegative pairing, with margin ≈ ∫(α - ∂_zW)|ζ|
        let grid = GridSpec::unit_interval(16);
        let params = ModelParams { eigenstrain_slope: 0.0, ..ModelParams::default() };
        let state = State {
            u: VectorField::zeros(&grid),
            c: ScalarField::constant(&grid, 0.3),
            z: ScalarField::constant(&grid, 1.0),
            time: 0.0,
        };
        let zdot = ScalarField::zeros(&grid);
        let r = ScalarField::zeros(&grid);
        let worst = vi_residual(&state, &zdot, &r, &params).unwrap();
        assert!(worst >= 0.0, "worst pairing {worst}");
        // ζ ≡ -1 evaluates to ∫(α - ∂_zW) = α here (∂_zW = 0 stress-free)
        let minus_one = ScalarField::constant(&grid, -1.0);
        let q = vi_pairing(&state, &zdot, &r, &params, &minus_one).unwrap();
        assert!((q - params.alpha).abs() < 1e-14);
    }

    #[test]
    fn convexity_probe_closed_forms() {
        // scalars x = 1, y = 0 at q = 4: ratio 1
        let ratio = uniform_convexity_probe(4.0, &[(vec![1.0], vec![0.0])]);
        assert!((ratio - 1.0).abs() < 1e-14);
        // antipodal pair: ratio 2^{2-q} = 1/4
        let ratio = uniform_convexity_probe(4.0, &[(vec![0.7, -0.2], vec![-0.7, 0.2])]);
        assert!((ratio - 0.25).abs() < 1e-13);
        // degenerate pair skipped
        let ratio = uniform_convexity_probe(4.0, &[(vec![1.0], vec![1.0]), (vec![1.0], vec![0.0])]);
        assert!((ratio - 1.0).abs() < 1e-14);
    }

    #[test]
    fn convexity_probe_positive_floor_2d() {
        let pairs = random_vector_pairs(2, 10_000, 12345);
        let floor = uniform_convexity_probe(4.0, &pairs);
        assert!(floor >= 0.12, "measured floor {floor}");
    }
}
