//! Global functionals assembled from the grid operators and the energy
//! densities: the regularized Ginzburg-Landau energy, the damage dissipation,
//! variational derivatives as strong-form residual fields, and the chemical
//! potential.

use crate::grid::{
    self, gradient, gradient_adjoint, sym_component_count, sym_grad, sym_grad_adjoint, GridSpec,
    ScalarField, SymTensorField, TensorField, VectorField,
};
use crate::material::{self, MaterialError, ModelParams};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnergeticsError {
    #[error("infeasible state: {0}")]
    InfeasibleState(String),
    #[error("damage rate must be nonpositive, found {max:e}")]
    PositiveRate { max: f64 },
}

impl From<MaterialError> for EnergeticsError {
    fn from(e: MaterialError) -> Self {
        EnergeticsError::InfeasibleState(e.to_string())
    }
}

const BOX_SLACK: f64 = 1e-12;

/// One system configuration q = (u, c, z) at a time node.
///
/// Feasible states keep z in [0,1] cellwise; the mean of c is conserved by
/// the incremental solver, not checked here.
#[derive(Debug, Clone)]
pub struct State {
    pub u: VectorField,
    pub c: ScalarField,
    pub z: ScalarField,
    pub time: f64,
}

impl State {
    pub fn grid(&self) -> GridSpec {
        self.c.grid
    }

    pub fn check_feasible(&self) -> Result<(), EnergeticsError> {
        for &z in &self.z.data {
            if z < -BOX_SLACK || z > 1.0 + BOX_SLACK {
                return Err(EnergeticsError::InfeasibleState(format!(
                    "damage value {z} outside [0,1]"
                )));
            }
        }
        if !(self.u.all_finite() && self.c.all_finite() && self.z.all_finite()) {
            return Err(EnergeticsError::InfeasibleState("non-finite field value".into()));
        }
        Ok(())
    }
}

/// Additive parts of the regularized energy; `total` is their sum and every
/// part is nonnegative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    pub grad_c: f64,
    pub grad_z: f64,
    pub chemical: f64,
    pub elastic: f64,
    pub reg_u: f64,
    pub total: f64,
}

/// Regularized total energy
/// `γ/2 ∫|∇c|² + δ/p ∫|∇z|^p + ∫W_ch(c) + ∫W_el(e(u),c,z) + ε/4 ∫|∇u|⁴`.
pub fn total_energy(q: &State, params: &ModelParams) -> Result<EnergyBreakdown, EnergeticsError> {
    q.check_feasible()?;
    let grid = q.grid();
    let dim = grid.dim();
    let vol = grid.cell_volume();

    let grad_c = 0.5 * params.gamma * grid::dirichlet_form(&q.c, &q.c);
    let grad_z = params.delta / params.p * grid::p_face_energy(&q.z, params.p);

    let chemical = vol * q.c.data.iter().map(|&c| material::w_ch(c)).sum::<f64>();

    let e = sym_grad(&q.u);
    let mut packed = [0.0; 6];
    let mut elastic = 0.0;
    for idx in 0..grid.cell_count() {
        e.cell(idx, &mut packed);
        elastic += material::w_el(params, &packed, q.c.data[idx], q.z.data[idx], dim)?;
    }
    elastic *= vol;

    let reg_u = if params.epsilon > 0.0 {
        let du = gradient(&q.u);
        let mut acc = 0.0;
        for idx in 0..grid.cell_count() {
            let g2 = du.frob_sq(idx);
            acc += g2 * g2;
        }
        0.25 * params.epsilon * vol * acc
    } else {
        0.0
    };

    let total = grad_c + grad_z + chemical + elastic + reg_u;
    Ok(EnergyBreakdown { grad_c, grad_z, chemical, elastic, reg_u, total })
}

/// Dissipation `∫ -α ż + ½ β ż²` of a nonpositive damage rate.
pub fn dissipation_rate(zdot: &ScalarField, params: &ModelParams) -> Result<f64, EnergeticsError> {
    let max = zdot.data.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if max > BOX_SLACK {
        return Err(EnergeticsError::PositiveRate { max });
    }
    let vol = zdot.grid.cell_volume();
    Ok(vol
        * zdot
            .data
            .iter()
            .map(|&r| -params.alpha * r + 0.5 * params.beta * r * r)
            .sum::<f64>())
}

/// Stress field ∂_e W_el(e(u), c, z), packed symmetric per cell.
pub fn stress_field(q: &State, params: &ModelParams) -> Result<SymTensorField, EnergeticsError> {
    let grid = q.grid();
    let dim = grid.dim();
    let e = sym_grad(&q.u);
    let mut s = SymTensorField::zeros(&grid);
    let n = grid.cell_count();
    let mut packed = [0.0; 6];
    let mut out = [0.0; 6];
    for idx in 0..n {
        e.cell(idx, &mut packed);
        material::de_w_el(params, &packed, q.c.data[idx], q.z.data[idx], dim, &mut out)?;
        for k in 0..sym_component_count(dim) {
            s.data[k * n + idx] = out[k];
        }
    }
    Ok(s)
}

/// Quartic regularization flux |∇u|²∇u per cell.
fn reg_flux(du: &TensorField) -> TensorField {
    let grid = du.grid;
    let d = grid.dim();
    let n = grid.cell_count();
    let mut t = du.clone();
    for idx in 0..n {
        let g2 = du.frob_sq(idx);
        for k in 0..d * d {
            t.data[k * n + idx] *= g2;
        }
    }
    t
}

/// L² representative of the u-derivative of the regularized energy: pairing
/// with any test field ζ equals `∫ ∂_eW_el : e(ζ) + ε |∇u|²∇u : ∇ζ`.
pub fn d_u_energy(q: &State, params: &ModelParams) -> Result<VectorField, EnergeticsError> {
    let s = stress_field(q, params)?;
    let mut out = sym_grad_adjoint(&s);
    if params.epsilon > 0.0 {
        let du = gradient(&q.u);
        let t = reg_flux(&du);
        out.axpy(params.epsilon, &gradient_adjoint(&t));
    }
    Ok(out)
}

/// L² representative `-γΔc + W_ch'(c) + ∂_cW_el(e(u), c, z)`.
pub fn d_c_energy(q: &State, params: &ModelParams) -> Result<ScalarField, EnergeticsError> {
    q.check_feasible()?;
    let grid = q.grid();
    let dim = grid.dim();
    let e = sym_grad(&q.u);
    let mut out = grid::neumann_laplacian(&q.c);
    out.scale(-params.gamma);
    let mut packed = [0.0; 6];
    for idx in 0..grid.cell_count() {
        e.cell(idx, &mut packed);
        out.data[idx] += material::dc_w_ch(q.c.data[idx])
            + material::dc_w_el(params, &packed, q.c.data[idx], q.z.data[idx], dim)?;
    }
    Ok(out)
}

/// L² representative `-δ div(|∇z|^{p-2}∇z) + ∂_zW_el(e(u), c, z)`.
pub fn d_z_energy(q: &State, params: &ModelParams) -> Result<ScalarField, EnergeticsError> {
    q.check_feasible()?;
    let grid = q.grid();
    let dim = grid.dim();
    let e = sym_grad(&q.u);
    let mut out = grid::p_flux_divergence(&q.z, params.p);
    out.scale(-params.delta);
    let mut packed = [0.0; 6];
    for idx in 0..grid.cell_count() {
        e.cell(idx, &mut packed);
        out.data[idx] +=
            material::dz_w_el(params, &packed, q.c.data[idx], q.z.data[idx], dim)?;
    }
    Ok(out)
}

/// Chemical potential `μ = -γΔc + W_ch'(c) + ∂_cW_el + ε ∂_t c` with Neumann
/// ghosting on the Laplacian. Reduces to [`d_c_energy`] when ε = 0.
pub fn chemical_potential(
    q: &State,
    c_dot: &ScalarField,
    params: &ModelParams,
) -> Result<ScalarField, EnergeticsError> {
    let mut mu = d_c_energy(q, params)?;
    mu.axpy(params.epsilon, c_dot);
    Ok(mu)
}

/// The u-dependent part of the energy (elastic plus quartic regularization);
/// the incremental solver's u-block line search only re-evaluates this.
pub fn elastic_and_reg_energy(
    u: &VectorField,
    c: &ScalarField,
    z: &ScalarField,
    params: &ModelParams,
) -> Result<f64, EnergeticsError> {
    let grid = u.grid;
    let dim = grid.dim();
    let vol = grid.cell_volume();
    let e = sym_grad(u);
    let mut packed = [0.0; 6];
    let mut acc = 0.0;
    for idx in 0..grid.cell_count() {
        e.cell(idx, &mut packed);
        acc += material::w_el(params, &packed, c.data[idx], z.data[idx], dim)?;
    }
    let mut total = vol * acc;
    if params.epsilon > 0.0 {
        let du = gradient(u);
        let mut reg = 0.0;
        for idx in 0..grid.cell_count() {
            let g2 = du.frob_sq(idx);
            reg += g2 * g2;
        }
        total += 0.25 * params.epsilon * vol * reg;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{l2_inner, GridSpec};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_state(grid: &GridSpec, seed: u64) -> State {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = VectorField::zeros(grid);
        for v in &mut u.data {
            *v = 0.3 * rng.gen_range(-1.0..1.0);
        }
        let mut c = ScalarField::zeros(grid);
        for v in &mut c.data {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mut z = ScalarField::zeros(grid);
        for v in &mut z.data {
            *v = rng.gen_range(0.05..0.95);
        }
        State { u, c, z, time: 0.0 }
    }

    #[test]
    fn energy_of_homogeneous_states() {
        let grid = GridSpec::unit_interval(20);
        let params = ModelParams { eigenstrain_slope: 0.0, ..ModelParams::default() };
        let c0 = 0.5;
        let q = State {
            u: VectorField::zeros(&grid),
            c: ScalarField::constant(&grid, c0),
            z: ScalarField::constant(&grid, 1.0),
            time: 0.0,
        };
        let e = total_energy(&q, &params).unwrap();
        assert_eq!(e.grad_c, 0.0);
        assert_eq!(e.grad_z, 0.0);
        assert_eq!(e.elastic, 0.0);
        assert!((e.chemical - material::w_ch(c0)).abs() < 1e-14);
        assert!((e.total - e.chemical).abs() < 1e-15);
    }

    #[test]
    fn energy_of_eigenstrain_mismatch() {
        // u = 0, c ≡ 1, z ≡ 1, slope 0.1, unit 1-D domain, μ_L = λ_L = 1:
        // elastic part = (1 + η̃) · 1.5 · 0.1².
        let grid = GridSpec::unit_interval(16);
        let params = ModelParams::default();
        let q = State {
            u: VectorField::zeros(&grid),
            c: ScalarField::constant(&grid, 1.0),
            z: ScalarField::constant(&grid, 1.0),
            time: 0.0,
        };
        let e = total_energy(&q, &params).unwrap();
        let expect = (1.0 + params.eta_tilde) * 1.5 * 0.01;
        assert!((e.elastic - expect).abs() < 1e-13, "elastic {} vs {expect}", e.elastic);
    }

    #[test]
    fn energy_scales_linearly_in_gamma_and_epsilon() {
        let grid = GridSpec::unit_interval(12);
        let q = random_state(&grid, 5);
        let p1 = ModelParams::default();
        let p2 = ModelParams { gamma: 2.0 * p1.gamma, ..p1 };
        let e1 = total_energy(&q, &p1).unwrap();
        let e2 = total_energy(&q, &p2).unwrap();
        assert!((e2.grad_c - 2.0 * e1.grad_c).abs() < 1e-13 * e1.grad_c.max(1.0));

        // ε-monotone
        let p3 = ModelParams { epsilon: p1.epsilon * 3.0, ..p1 };
        let e3 = total_energy(&q, &p3).unwrap();
        assert!(e3.total >= e1.total);
        // breakdown adds up and is nonnegative
        for e in [e1, e2, e3] {
            let sum = e.grad_c + e.grad_z + e.chemical + e.elastic + e.reg_u;
            assert!((e.total - sum).abs() <= 1e-12 * e.total.abs().max(1.0));
            assert!(e.grad_c >= 0.0 && e.grad_z >= 0.0 && e.chemical >= 0.0);
            assert!(e.elastic >= 0.0 && e.reg_u >= 0.0);
        }
    }

    #[test]
    fn infeasible_state_rejected() {
        let grid = GridSpec::unit_interval(4);
        let mut q = random_state(&grid, 1);
        q.z.data[2] = 1.5;
        assert!(matches!(total_energy(&q, &ModelParams::default()),
            Err(EnergeticsError::InfeasibleState(_))));
    }

    #[test]
    fn dissipation_values() {
        let grid = GridSpec::unit_interval(10);
        let params = ModelParams::default();
        let zero = ScalarField::zeros(&grid);
        assert_eq!(dissipation_rate(&zero, &params).unwrap(), 0.0);

        let r = ScalarField::constant(&grid, -1.0);
        let v = dissipation_rate(&r, &params).unwrap();
        assert!((v - 0.15).abs() < 1e-14, "expected α + β/2 = 0.15, got {v}");

        // rate-dependence signature: R(2ż) - 2R(ż) = β ∫ ż²
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut zdot = ScalarField::zeros(&grid);
        for v in &mut zdot.data {
            *v = -rng.gen::<f64>();
        }
        let mut zdot2 = zdot.clone();
        zdot2.scale(2.0);
        let lhs = dissipation_rate(&zdot2, &params).unwrap()
            - 2.0 * dissipation_rate(&zdot, &params).unwrap();
        let rhs = params.beta * l2_inner(&zdot, &zdot);
        assert!((lhs - rhs).abs() < 1e-13);

        let bad = ScalarField::constant(&grid, 0.1);
        assert!(matches!(dissipation_rate(&bad, &params),
            Err(EnergeticsError::PositiveRate { .. })));
    }

    #[test]
    fn derivatives_vanish_at_uniform_stress_free_state() {
        let grid = GridSpec::unit_interval(14);
        let params = ModelParams::default();
        let c0 = 0.0; // e*(0) = 0, so u = 0 is stress-free
        let q = State {
            u: VectorField::zeros(&grid),
            c: ScalarField::constant(&grid, c0),
            z: ScalarField::constant(&grid, 0.8),
            time: 0.0,
        };
        let du = d_u_energy(&q, &params).unwrap();
        assert!(du.data.iter().all(|&v| v.abs() < 1e-14));
        let dz = d_z_energy(&q, &params).unwrap();
        assert!(dz.data.iter().all(|&v| v.abs() < 1e-14));
        let dc = d_c_energy(&q, &params).unwrap();
        for v in &dc.data {
            assert!((v - material::dc_w_ch(c0)).abs() < 1e-14);
        }
    }

    #[test]
    fn d_z_at_full_stiffness_is_twice_w_hat() {
        let grid = GridSpec::unit_interval(9);
        let params = ModelParams { phi_kind: crate::material::PhiKind::Quadratic, ..Default::default() };
        let mut q = random_state(&grid, 9);
        q.z = ScalarField::constant(&grid, 1.0);
        let dz = d_z_energy(&q, &params).unwrap();
        let e = sym_grad(&q.u);
        let mut packed = [0.0; 6];
        for idx in 0..grid.cell_count() {
            e.cell(idx, &mut packed);
            let expect = 2.0 * material::w_hat_el(&params, &packed, q.c.data[idx], 1);
            assert!((dz.data[idx] - expect).abs() < 1e-12 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn directional_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for grid in [GridSpec::unit_interval(12), GridSpec::unit_square(5, 4)] {
            let params = ModelParams::default();
            let q = random_state(&grid, 23);
            let h = 1e-5;
            for _ in 0..20 {
                // u-direction
                let mut zeta_u = VectorField::zeros(&grid);
                for v in &mut zeta_u.data {
                    *v = rng.gen_range(-1.0..1.0);
                }
                let pairing = {
                    let d = d_u_energy(&q, &params).unwrap();
                    grid.cell_volume()
                        * d.data.iter().zip(&zeta_u.data).map(|(a, b)| a * b).sum::<f64>()
                };
                let mut qp = q.clone();
                qp.u.axpy(h, &zeta_u);
                let mut qm = q.clone();
                qm.u.axpy(-h, &zeta_u);
                let fd = (total_energy(&qp, &params).unwrap().total
                    - total_energy(&qm, &params).unwrap().total)
                    / (2.0 * h);
                assert!(
                    (pairing - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "u-pairing {pairing} vs fd {fd}"
                );

                // c-direction
                let mut zeta_c = ScalarField::zeros(&grid);
                for v in &mut zeta_c.data {
                    *v = rng.gen_range(-1.0..1.0);
                }
                let pairing = l2_inner(&d_c_energy(&q, &params).unwrap(), &zeta_c);
                let mut qp = q.clone();
                qp.c.axpy(h, &zeta_c);
                let mut qm = q.clone();
                qm.c.axpy(-h, &zeta_c);
                let fd = (total_energy(&qp, &params).unwrap().total
                    - total_energy(&qm, &params).unwrap().total)
                    / (2.0 * h);
                assert!((pairing - fd).abs() <= 1e-5 * (1.0 + fd.abs()));

                // z-direction, kept inside the box
                let mut zeta_z = ScalarField::zeros(&grid);
                for v in &mut zeta_z.data {
                    *v = rng.gen_range(-1.0..1.0);
                }
                let pairing = l2_inner(&d_z_energy(&q, &params).unwrap(), &zeta_z);
                let mut qp = q.clone();
                qp.z.axpy(h, &zeta_z);
                let mut qm = q.clone();
                qm.z.axpy(-h, &zeta_z);
                let fd = (total_energy(&qp, &params).unwrap().total
                    - total_energy(&qm, &params).unwrap().total)
                    / (2.0 * h);
                assert!((pairing - fd).abs() <= 1e-5 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn chemical_potential_reductions() {
        let grid = GridSpec::unit_interval(10);
        let params = ModelParams { epsilon: 0.0, ..ModelParams::default() };
        let q = random_state(&grid, 31);
        let cdot = ScalarField::constant(&grid, 0.7);
        let mu = chemical_potential(&q, &cdot, &params).unwrap();
        let dc = d_c_energy(&q, &params).unwrap();
        assert_eq!(mu.data, dc.data);

        // constant stress-free state with zero rate: μ ≡ W_ch'(c0)
        let params = ModelParams::default();
        let c0 = -0.2;
        let q = State {
            u: VectorField::zeros(&grid),
            c: ScalarField::constant(&grid, c0),
            z: ScalarField::constant(&grid, 1.0),
            time: 0.0,
        };
        // make it stress-free by removing the eigenstrain coupling
        let params = ModelParams { eigenstrain_slope: 0.0, ..params };
        let mu = chemical_potential(&q, &ScalarField::zeros(&grid), &params).unwrap();
        for v in &mu.data {
            assert!((v - material::dc_w_ch(c0)).abs() < 1e-14);
        }
    }
}
