//! Time loop over the incremental problems, the three time interpolants,
//! energy-inequality bookkeeping, and the refinement / vanishing-viscosity
//! study drivers.

use crate::energetics::{self, EnergyBreakdown, State};
use crate::grid::{self, GridSpec, ScalarField, VectorField};
use crate::material::{self, ModelParams};
use crate::minimizer::{self, MinimizerConfig, MinimizerError, StepProblem, StepResult};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("invalid run configuration: {0}")]
    Validation(String),
    #[error("time step {step} did not converge")]
    StepFailed { step: usize, partial: Box<RunOutput> },
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error(transparent)]
    Minimizer(#[from] MinimizerError),
}

/// Boundary displacement data b(t): samples of the W^{1,∞} extension over
/// the whole box, interpolated piecewise-linearly in time.
#[derive(Debug, Clone)]
pub struct BoundaryLoad {
    points: Vec<(f64, VectorField)>,
}

impl BoundaryLoad {
    pub fn constant(field: VectorField) -> Self {
        BoundaryLoad { points: vec![(0.0, field)] }
    }

    pub fn zero(grid: &GridSpec) -> Self {
        BoundaryLoad::constant(VectorField::zeros(grid))
    }

    /// Breakpoint times must be strictly increasing.
    pub fn piecewise_linear(points: Vec<(f64, VectorField)>) -> Result<Self, String> {
        if points.is_empty() {
            return Err("load needs at least one breakpoint".into());
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err("load breakpoints must be strictly increasing".into());
            }
        }
        Ok(BoundaryLoad { points })
    }

    /// Value at time t, clamped to the covered interval.
    pub fn eval(&self, t: f64) -> VectorField {
        let pts = &self.points;
        if t <= pts[0].0 {
            return pts[0].1.clone();
        }
        if t >= pts[pts.len() - 1].0 {
            return pts[pts.len() - 1].1.clone();
        }
        let k = pts.partition_point(|(s, _)| *s <= t) - 1;
        let (t0, ref f0) = pts[k];
        let (t1, ref f1) = pts[k + 1];
        let w = (t - t0) / (t1 - t0);
        let mut out = f0.clone();
        for (x, y) in out.data.iter_mut().zip(&f1.data) {
            *x = (1.0 - w) * *x + w * y;
        }
        out
    }
}

/// One complete run setup.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub horizon: f64,
    pub steps: usize,
    pub grid: GridSpec,
    pub params: ModelParams,
    pub c0: ScalarField,
    pub z0: ScalarField,
    pub load: BoundaryLoad,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), EvolutionError> {
        if !(self.horizon > 0.0) {
            return Err(EvolutionError::Validation("horizon must be positive".into()));
        }
        if self.steps == 0 {
            return Err(EvolutionError::Validation("steps must be at least 1".into()));
        }
        self.params.validate(self.grid.dim()).map_err(EvolutionError::Validation)?;
        if self.c0.len() != self.grid.cell_count() {
            return Err(EvolutionError::Validation("c0 not defined on the run grid".into()));
        }
        if self.z0.len() != self.grid.cell_count() {
            return Err(EvolutionError::Validation("z0 not defined on the run grid".into()));
        }
        if self.z0.data.iter().any(|&z| !(0.0..=1.0).contains(&z)) {
            return Err(EvolutionError::Validation(
                "initial damage must satisfy 0 <= z0 <= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn tau(&self) -> f64 {
        self.horizon / self.steps as f64
    }
}

/// Smallest node time `mτ ≥ t` (snaps to the node when t sits on one).
pub fn d_m(t: f64, tau: f64) -> f64 {
    let s = t / tau;
    let m = if (s - s.round()).abs() < 1e-9 { s.round() } else { s.ceil() };
    m * tau
}

/// Retarded node time `d_M(t) - τ` (equals -τ at t = 0 by convention).
pub fn d_m_minus(t: f64, tau: f64) -> f64 {
    d_m(t, tau) - tau
}

/// Node states plus per-step solver output; node 0 holds the initial
/// displacement minimization.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub tau: f64,
    pub horizon: f64,
    pub nodes: Vec<StepResult>,
    pub failed_at: Option<usize>,
}

impl Trajectory {
    pub fn step_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn state(&self, m: usize) -> &State {
        &self.nodes[m].state
    }

    pub fn node_of(&self, t: f64) -> Result<usize, EvolutionError> {
        if t < -1e-12 || t > self.horizon * (1.0 + 1e-12) {
            return Err(EvolutionError::TimeOutOfRange { t, horizon: self.horizon });
        }
        let m = (d_m(t.max(0.0), self.tau) / self.tau).round() as usize;
        Ok(m.min(self.nodes.len() - 1))
    }

    /// Piecewise-constant interpolant q_M(t) = q^{⌈t/τ⌉}.
    pub fn eval_constant(&self, t: f64) -> Result<State, EvolutionError> {
        Ok(self.state(self.node_of(t)?).clone())
    }

    /// Piecewise-linear interpolant q̂_M.
    pub fn eval_linear(&self, t: f64) -> Result<State, EvolutionError> {
        let m = self.node_of(t)?;
        if m == 0 {
            return Ok(self.state(0).clone());
        }
        let t0 = (m - 1) as f64 * self.tau;
        let beta = ((t - t0) / self.tau).clamp(0.0, 1.0);
        let a = self.state(m - 1);
        let b = self.state(m);
        let mut out = a.clone();
        for (x, y) in out.u.data.iter_mut().zip(&b.u.data) {
            *x = (1.0 - beta) * *x + beta * y;
        }
        for (x, y) in out.c.data.iter_mut().zip(&b.c.data) {
            *x = (1.0 - beta) * *x + beta * y;
        }
        for (x, y) in out.z.data.iter_mut().zip(&b.z.data) {
            *x = (1.0 - beta) * *x + beta * y;
        }
        out.time = t;
        Ok(out)
    }

    /// Retarded interpolant q_M⁻: q_M(t-τ) for t ≥ τ, the initial state
    /// before that.
    pub fn eval_retarded(&self, t: f64) -> Result<State, EvolutionError> {
        if t < -1e-12 || t > self.horizon * (1.0 + 1e-12) {
            return Err(EvolutionError::TimeOutOfRange { t, horizon: self.horizon });
        }
        if t < self.tau {
            return Ok(self.state(0).clone());
        }
        self.eval_constant(t - self.tau)
    }

    /// Largest conservation drift `|∫c(t) - ∫c⁰|` over all nodes.
    pub fn mass_drift(&self) -> f64 {
        let m0 = grid::integrate(&self.state(0).c);
        self.nodes
            .iter()
            .map(|n| (grid::integrate(&n.state.c) - m0).abs())
            .fold(0.0, f64::max)
    }

    /// True when z stays in [0,1] and is cellwise non-increasing along the
    /// node sequence.
    pub fn damage_monotone(&self) -> bool {
        self.nodes.windows(2).all(|w| {
            w[0].state
                .z
                .data
                .iter()
                .zip(&w[1].state.z.data)
                .all(|(&a, &b)| b <= a && (0.0..=1.0).contains(&b))
        })
    }
}

/// Per-step diagnostics row (row 0 carries the initial energies and zero
/// increments).
#[derive(Debug, Clone)]
pub struct DiagRow {
    pub step: usize,
    pub time: f64,
    pub energy: EnergyBreakdown,
    /// α ∫ (z_prev - z) dx ≥ 0.
    pub alpha_inc: f64,
    /// τ·R̃(∂_t ẑ) over the step.
    pub dissipation_inc: f64,
    /// ‖∇μ_m‖²_{L²}.
    pub grad_mu_sq: f64,
    /// ‖∂_t ĉ‖²_{L²}.
    pub cdot_sq: f64,
    /// ‖∂_t ẑ‖²_{L²}.
    pub zdot_sq: f64,
    /// Exact boundary work along the comparison path.
    pub work_inc: f64,
    /// Interpolation correction κ̂_m entering the full-coefficient channel.
    pub kappa: f64,
    /// Per-step slack of the half-coefficient inequality.
    pub slack_step: f64,
    pub residuals: [f64; 3],
    pub outer_iters: usize,
    pub converged: bool,
}

/// Run diagnostics; keeps the ε, β, τ weights it was assembled with so the
/// inequality channels can be rebuilt from the raw per-step quantities.
#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub rows: Vec<DiagRow>,
    pub epsilon: f64,
    pub beta: f64,
    pub tau: f64,
}

impl Diagnostics {
    /// Initial energy scale E_ε(q⁰) + 1 used to normalize tolerances.
    pub fn energy_scale(&self) -> f64 {
        self.rows[0].energy.total + 1.0
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "step,time,e_grad_c,e_grad_z,e_chem,e_elastic,e_reg_u,e_total,\
             alpha_inc,dissipation,grad_mu_sq,cdot_sq,zdot_sq,work,kappa,slack,\
             res_u,res_c,res_z,outer_iters,converged\n",
        );
        for r in &self.rows {
            let e = &r.energy;
            out.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},\
                 {:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},\
                 {:.17e},{:.17e},{:.17e},{},{}\n",
                r.step, r.time, e.grad_c, e.grad_z, e.chemical, e.elastic, e.reg_u, e.total,
                r.alpha_inc, r.dissipation_inc, r.grad_mu_sq, r.cdot_sq, r.zdot_sq,
                r.work_inc, r.kappa, r.slack_step,
                r.residuals[0], r.residuals[1], r.residuals[2],
                r.outer_iters, r.converged,
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub diagnostics: Diagnostics,
}

/// Minimizes u ↦ E_ε(u, c⁰, z⁰) with the trace pinned to b(0); returns the
/// minimizer and its residual.
pub fn init_u0(
    c0: &ScalarField,
    z0: &ScalarField,
    b0: &VectorField,
    params: &ModelParams,
    min_cfg: &MinimizerConfig,
) -> Result<(VectorField, f64), EvolutionError> {
    Ok(minimizer::minimize_displacement(c0, z0, b0, params, min_cfg)?)
}

/// Two-point Gauss quadrature of the interpolation mismatch κ̂_m: nonlinear
/// derivative terms evaluated along the partial-update paths minus their
/// values at the new node, paired with the difference quotients. Exact for
/// the polynomial-in-θ integrands produced by the quartic well and the
/// quadratic elastic density.
fn kappa_step(
    prev: &State,
    cur: &State,
    u_comp: &VectorField,
    params: &ModelParams,
) -> f64 {
    let grid = prev.grid();
    let dim = grid.dim();
    let vol = grid.cell_volume();
    let n = grid.cell_count();
    let e_comp = grid::sym_grad(u_comp);
    let e_cur = grid::sym_grad(&cur.u);
    let mut pc = [0.0; 6];
    let mut pm = [0.0; 6];
    let inv_sqrt3 = 1.0 / 3.0f64.sqrt();
    let thetas = [0.5 - 0.5 * inv_sqrt3, 0.5 + 0.5 * inv_sqrt3];

    let mut kappa = 0.0;
    for idx in 0..n {
        e_comp.cell(idx, &mut pc);
        e_cur.cell(idx, &mut pm);
        let c_old = prev.c.data[idx];
        let c_new = cur.c.data[idx];
        let z_old = prev.z.data[idx];
        let z_new = cur.z.data[idx];
        let dc = c_new - c_old;
        let dz = z_new - z_old;

        let dc_end = material::dc_w_ch(c_new)
            + material::dc_w_el(params, &pm, c_new, z_new.clamp(0.0, 1.0), dim).unwrap();
        let dz_end =
            material::dz_w_el(params, &pm, c_new, z_new.clamp(0.0, 1.0), dim).unwrap();

        for &theta in &thetas {
            let c_t = c_old + theta * dc;
            let z_t = (z_old + theta * dz).clamp(0.0, 1.0);
            let dc_path = material::dc_w_ch(c_t)
                + material::dc_w_el(params, &pc, c_t, z_old.clamp(0.0, 1.0), dim).unwrap();
            kappa += 0.5 * (dc_path - dc_end) * dc;
            let dz_path = material::dz_w_el(params, &pc, c_new, z_t, dim).unwrap();
            kappa += 0.5 * (dz_path - dz_end) * dz;
        }
    }
    vol * kappa
}

fn assemble_row(
    m: usize,
    prev: &State,
    result: &StepResult,
    load: &BoundaryLoad,
    params: &ModelParams,
    tau: f64,
) -> Result<DiagRow, EvolutionError> {
    let cur = &result.state;
    let grid = cur.grid();
    let vol = grid.cell_volume();
    let t_new = m as f64 * tau;
    let t_old = (m - 1) as f64 * tau;

    let energy = energetics::total_energy(cur, params).map_err(MinimizerError::from)?;
    let energy_prev = energetics::total_energy(prev, params).map_err(MinimizerError::from)?;

    let mut alpha_inc = 0.0;
    let mut zdot_sq = 0.0;
    for (&zn, &zp) in cur.z.data.iter().zip(&prev.z.data) {
        let dz = zn - zp;
        alpha_inc += -params.alpha * dz;
        zdot_sq += dz * dz;
    }
    alpha_inc *= vol;
    zdot_sq *= vol / (tau * tau);
    let dissipation_inc = alpha_inc + 0.5 * params.beta * tau * zdot_sq;

    let mut cdot_sq = 0.0;
    for (&cn, &cp) in cur.c.data.iter().zip(&prev.c.data) {
        let d = (cn - cp) / tau;
        cdot_sq += d * d;
    }
    cdot_sq *= vol;

    let grad_mu_sq = grid::dirichlet_form(&result.mu, &result.mu);

    let b_new = load.eval(t_new);
    let b_old = load.eval(t_old);
    let mut u_comp = prev.u.clone();
    u_comp.axpy(1.0, &b_new);
    u_comp.axpy(-1.0, &b_old);
    let comp_state = State { u: u_comp.clone(), c: prev.c.clone(), z: prev.z.clone(), time: t_new };
    let comp_energy =
        energetics::total_energy(&comp_state, params).map_err(MinimizerError::from)?.total;
    let work_inc = comp_energy - energy_prev.total;

    let kappa = kappa_step(prev, cur, &u_comp, params);

    let slack_step = work_inc
        - (energy.total - energy_prev.total
            + dissipation_inc
            + 0.5 * tau * grad_mu_sq
            + 0.5 * params.epsilon * tau * cdot_sq);

    Ok(DiagRow {
        step: m,
        time: t_new,
        energy,
        alpha_inc,
        dissipation_inc,
        grad_mu_sq,
        cdot_sq,
        zdot_sq,
        work_inc,
        kappa,
        slack_step,
        residuals: result.el_residuals,
        outer_iters: result.outer_iters,
        converged: result.converged,
    })
}

/// Runs the full time loop. A non-converged step aborts with the partial
/// trajectory carried inside the error.
pub fn run(cfg: &RunConfig, min_cfg: &MinimizerConfig) -> Result<RunOutput, EvolutionError> {
    cfg.validate()?;
    let tau = cfg.tau();
    let b0 = cfg.load.eval(0.0);
    let (u0, res0) = init_u0(&cfg.c0, &cfg.z0, &b0, &cfg.params, min_cfg)?;
    let q0 = State { u: u0, c: cfg.c0.clone(), z: cfg.z0.clone(), time: 0.0 };

    // node 0 as a pseudo step-result: μ ≡ λ(q⁰); the c/z residual channels
    // are undefined before the first increment and stay zero by convention
    let prob0 = StepProblem {
        prev: q0.clone(),
        tau,
        boundary_u: b0.clone(),
        boundary_u_prev: b0,
        params: cfg.params,
    };
    let (mu0, lambda0) = minimizer::recover_mu_lambda(&q0, &prob0)?;
    let e0 = energetics::total_energy(&q0, &cfg.params).map_err(MinimizerError::from)?;
    let node0 = StepResult {
        state: q0,
        mu: mu0,
        lambda: lambda0,
        el_residuals: [res0, 0.0, 0.0],
        objective: e0.total,
        outer_iters: 0,
        converged: res0 <= min_cfg.el_tolerance,
    };
    let row0 = DiagRow {
        step: 0,
        time: 0.0,
        energy: e0,
        alpha_inc: 0.0,
        dissipation_inc: 0.0,
        grad_mu_sq: 0.0,
        cdot_sq: 0.0,
        zdot_sq: 0.0,
        work_inc: 0.0,
        kappa: 0.0,
        slack_step: 0.0,
        residuals: [res0, 0.0, 0.0],
        outer_iters: 0,
        converged: node0.converged,
    };

    let mut nodes = vec![node0];
    let mut rows = vec![row0];

    for m in 1..=cfg.steps {
        let prev = nodes[m - 1].state.clone();
        let prob = StepProblem {
            prev,
            tau,
            boundary_u: cfg.load.eval(m as f64 * tau),
            boundary_u_prev: cfg.load.eval((m - 1) as f64 * tau),
            params: cfg.params,
        };
        let result = minimizer::solve_step(&prob, min_cfg)?;
        let converged = result.converged;
        let row = assemble_row(m, &prob.prev, &result, &cfg.load, &cfg.params, tau)?;
        nodes.push(result);
        rows.push(row);
        if !converged {
            // abort, but keep the flagged best iterate in the partial output
            let partial = RunOutput {
                trajectory: Trajectory { tau, horizon: cfg.horizon, nodes, failed_at: Some(m) },
                diagnostics: Diagnostics {
                    rows,
                    epsilon: cfg.params.epsilon,
                    beta: cfg.params.beta,
                    tau,
                },
            };
            return Err(EvolutionError::StepFailed { step: m, partial: Box::new(partial) });
        }
    }

    Ok(RunOutput {
        trajectory: Trajectory { tau, horizon: cfg.horizon, nodes, failed_at: None },
        diagnostics: Diagnostics { rows, epsilon: cfg.params.epsilon, beta: cfg.params.beta, tau },
    })
}

/// Rebuilds node results and diagnostics from bare node states (used when a
/// trajectory is reloaded from snapshots). The potential, multiplier and
/// residuals are recomputed from scratch; nothing is trusted from the file
/// contents beyond the states themselves.
pub fn rebuild_from_states(
    states: Vec<State>,
    tau: f64,
    horizon: f64,
    load: &BoundaryLoad,
    params: &ModelParams,
    failed_at: Option<usize>,
) -> Result<RunOutput, EvolutionError> {
    if states.is_empty() {
        return Err(EvolutionError::Validation("no node states to rebuild from".into()));
    }
    if !(tau > 0.0) {
        return Err(EvolutionError::Validation("tau must be positive".into()));
    }
    let b0 = load.eval(0.0);
    let mut nodes: Vec<StepResult> = Vec::with_capacity(states.len());
    let mut rows = Vec::with_capacity(states.len());
    for (m, state) in states.into_iter().enumerate() {
        if m == 0 {
            let prob0 = StepProblem {
                prev: state.clone(),
                tau,
                boundary_u: b0.clone(),
                boundary_u_prev: b0.clone(),
                params: *params,
            };
            let (mu0, lambda0) = minimizer::recover_mu_lambda(&state, &prob0)?;
            let res = minimizer::el_residuals(&state, &mu0, &prob0)?;
            let e0 = energetics::total_energy(&state, params).map_err(MinimizerError::from)?;
            nodes.push(StepResult {
                state,
                mu: mu0,
                lambda: lambda0,
                el_residuals: [res[0], 0.0, 0.0],
                objective: e0.total,
                outer_iters: 0,
                converged: true,
            });
            rows.push(DiagRow {
                step: 0,
                time: 0.0,
                energy: e0,
                alpha_inc: 0.0,
                dissipation_inc: 0.0,
                grad_mu_sq: 0.0,
                cdot_sq: 0.0,
                zdot_sq: 0.0,
                work_inc: 0.0,
                kappa: 0.0,
                slack_step: 0.0,
                residuals: [res[0], 0.0, 0.0],
                outer_iters: 0,
                converged: true,
            });
            continue;
        }
        let prev = nodes[m - 1].state.clone();
        let t_new = m as f64 * tau;
        let prob = StepProblem {
            prev,
            tau,
            boundary_u: load.eval(t_new),
            boundary_u_prev: load.eval(t_new - tau),
            params: *params,
        };
        let (mu, lambda) = minimizer::recover_mu_lambda(&state, &prob)?;
        let el = minimizer::el_residuals(&state, &mu, &prob)?;
        let objective = minimizer::incremental_objective(&state, &prob)?;
        let result = StepResult {
            state,
            mu,
            lambda,
            el_residuals: el,
            objective,
            outer_iters: 0,
            converged: failed_at != Some(m),
        };
        let row = assemble_row(m, &prob.prev, &result, load, params, tau)?;
        nodes.push(result);
        rows.push(row);
    }

    Ok(RunOutput {
        trajectory: Trajectory { tau, horizon, nodes, failed_at },
        diagnostics: Diagnostics { rows, epsilon: params.epsilon, beta: params.beta, tau },
    })
}

/// Slack of the energy-dissipation inequality between two times.
#[derive(Debug, Clone, Copy)]
pub struct InequalitySlack {
    /// Half-coefficient channel (telescoped step minimality); nonnegative up
    /// to solver tolerance.
    pub coarse: f64,
    /// Full-coefficient channel, including the computed κ̂ correction on the
    /// work side.
    pub precise: f64,
    /// Σ|κ̂_m| over the window; shrinks under time refinement.
    pub kappa: f64,
}

/// Evaluates both inequality channels between `t1 ≤ t2`, assembled from the
/// per-step diagnostics at the enclosing nodes.
pub fn energy_inequality_check(
    traj: &Trajectory,
    diag: &Diagnostics,
    t1: f64,
    t2: f64,
) -> Result<InequalitySlack, EvolutionError> {
    if t1 > t2 {
        return Err(EvolutionError::Validation("t1 must not exceed t2".into()));
    }
    let m1 = traj.node_of(t1)?;
    let m2 = traj.node_of(t2)?;
    let e1 = diag.rows[m1].energy.total;
    let e2 = diag.rows[m2].energy.total;
    let tau = diag.tau;

    let mut work = 0.0;
    let mut kappa_sum = 0.0;
    let mut kappa_abs = 0.0;
    let mut coarse_lhs = e2 - e1;
    let mut precise_lhs = e2 - e1;
    for row in &diag.rows[m1 + 1..=m2.max(m1)] {
        work += row.work_inc;
        kappa_sum += row.kappa;
        kappa_abs += row.kappa.abs();
        coarse_lhs += row.dissipation_inc
            + 0.5 * tau * row.grad_mu_sq
            + 0.5 * diag.epsilon * tau * row.cdot_sq;
        precise_lhs += row.alpha_inc
            + diag.beta * tau * row.zdot_sq
            + diag.epsilon * tau * row.cdot_sq
            + tau * row.grad_mu_sq;
    }
    Ok(InequalitySlack {
        coarse: work - coarse_lhs,
        precise: work + kappa_sum - precise_lhs,
        kappa: kappa_abs,
    })
}

/// The six a-priori quantities, normalized by E_ε(q⁰) + 1.
#[derive(Debug, Clone, Copy)]
pub struct AprioriReport {
    pub u_linf_w14: f64,
    pub c_linf_h1: f64,
    pub z_linf_w1p: f64,
    pub cdot_l2: f64,
    pub zdot_l2: f64,
    pub mu_l2h1: f64,
}

impl AprioriReport {
    pub fn as_array(&self) -> [f64; 6] {
        [self.u_linf_w14, self.c_linf_h1, self.z_linf_w1p, self.cdot_l2, self.zdot_l2, self.mu_l2h1]
    }
}

fn w14_norm(u: &VectorField) -> f64 {
    let grid = u.grid;
    let vol = grid.cell_volume();
    let du = grid::gradient(u);
    let mut acc = 0.0;
    for idx in 0..grid.cell_count() {
        let mut usq = 0.0;
        for comp in 0..grid.dim() {
            let v = u.component(comp)[idx];
            usq += v * v;
        }
        let g2 = du.frob_sq(idx);
        acc += usq * usq + g2 * g2;
    }
    (vol * acc).powf(0.25)
}

fn h1_norm(f: &ScalarField) -> f64 {
    (grid::l2_inner(f, f) + grid::dirichlet_form(f, f)).sqrt()
}

fn w1p_norm(f: &ScalarField, p: f64) -> f64 {
    let vol = f.grid.cell_volume();
    let lp: f64 = vol * f.data.iter().map(|v| v.abs().powf(p)).sum::<f64>();
    (lp + grid::p_face_energy(f, p)).powf(1.0 / p)
}

/// Discrete suprema/integrals of the six uniformly bounded quantities,
/// divided by E_ε(q⁰) + 1. Refinement families must keep each ratio inside a
/// factor-2 band.
pub fn apriori_report(traj: &Trajectory, diag: &Diagnostics, params: &ModelParams) -> AprioriReport {
    let scale = diag.energy_scale();
    let tau = diag.tau;

    let mut u_sup: f64 = 0.0;
    let mut c_sup: f64 = 0.0;
    let mut z_sup: f64 = 0.0;
    for node in &traj.nodes {
        u_sup = u_sup.max(w14_norm(&node.state.u));
        c_sup = c_sup.max(h1_norm(&node.state.c));
        z_sup = z_sup.max(w1p_norm(&node.state.z, params.p));
    }
    let mut cdot = 0.0;
    let mut zdot = 0.0;
    let mut mu = 0.0;
    for (row, node) in diag.rows.iter().zip(&traj.nodes).skip(1) {
        cdot += tau * row.cdot_sq;
        zdot += tau * row.zdot_sq;
        mu += tau * (grid::l2_inner(&node.mu, &node.mu) + row.grad_mu_sq);
    }
    AprioriReport {
        u_linf_w14: u_sup / scale,
        c_linf_h1: c_sup / scale,
        z_linf_w1p: z_sup / scale,
        cdot_l2: cdot.sqrt() / scale,
        zdot_l2: zdot.sqrt() / scale,
        mu_l2h1: mu.sqrt() / scale,
    }
}

/// Runs the same setup for every step count in `m_list`, in parallel.
pub fn refinement_family(
    cfg: &RunConfig,
    m_list: &[usize],
    min_cfg: &MinimizerConfig,
) -> Result<Vec<RunOutput>, EvolutionError> {
    m_list
        .par_iter()
        .map(|&m| {
            let mut c = cfg.clone();
            c.steps = m;
            run(&c, min_cfg)
        })
        .collect()
}

/// The eight ε-uniform diagnostics of one viscous run, plus the
/// regularization budget ε ∫∫ |∇u|⁴ used by the decay check.
#[derive(Debug, Clone, Copy)]
pub struct SweepQuantities {
    pub u_linf_h1: f64,
    pub eps14_u_linf_w14: f64,
    pub c_linf_h1: f64,
    pub z_linf_w1p: f64,
    pub cdot_dual: f64,
    pub eps12_cdot_l2: f64,
    pub zdot_l2: f64,
    pub mu_l2h1: f64,
    pub eps_grad_u4: f64,
}

impl SweepQuantities {
    pub fn as_array(&self) -> [f64; 8] {
        [
            self.u_linf_h1,
            self.eps14_u_linf_w14,
            self.c_linf_h1,
            self.z_linf_w1p,
            self.cdot_dual,
            self.eps12_cdot_l2,
            self.zdot_l2,
            self.mu_l2h1,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub epsilon: f64,
    pub quantities: SweepQuantities,
    pub output: RunOutput,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
}

impl SweepReport {
    /// True when every quantity stays below `factor` times its value at the
    /// first (largest) ε.
    pub fn bounded_by(&self, factor: f64) -> bool {
        let base = self.entries[0].quantities.as_array();
        self.entries.iter().all(|e| {
            e.quantities
                .as_array()
                .iter()
                .zip(&base)
                .all(|(&v, &b)| v <= factor * b.max(1e-30))
        })
    }

    /// True when the quartic regularization budget decays from the first to
    /// the last ε.
    pub fn reg_budget_decays(&self) -> bool {
        let first = self.entries[0].quantities.eps_grad_u4;
        let last = self.entries[self.entries.len() - 1].quantities.eps_grad_u4;
        last < first
    }
}

fn u_h1_norm(u: &VectorField) -> f64 {
    let grid = u.grid;
    let vol = grid.cell_volume();
    let du = grid::gradient(u);
    let mut acc = 0.0;
    for idx in 0..grid.cell_count() {
        let mut usq = 0.0;
        for comp in 0..grid.dim() {
            let v = u.component(comp)[idx];
            usq += v * v;
        }
        acc += usq + du.frob_sq(idx);
    }
    (vol * acc).sqrt()
}

fn sweep_quantities(output: &RunOutput, params: &ModelParams) -> Result<SweepQuantities, EvolutionError> {
    let traj = &output.trajectory;
    let diag = &output.diagnostics;
    let tau = diag.tau;
    let eps = params.epsilon;

    let mut u_h1: f64 = 0.0;
    let mut u_w14: f64 = 0.0;
    let mut c_h1: f64 = 0.0;
    let mut z_w1p: f64 = 0.0;
    for node in &traj.nodes {
        u_h1 = u_h1.max(u_h1_norm(&node.state.u));
        u_w14 = u_w14.max(w14_norm(&node.state.u));
        c_h1 = c_h1.max(h1_norm(&node.state.c));
        z_w1p = z_w1p.max(w1p_norm(&node.state.z, params.p));
    }

    let mut cdot_dual_sq = 0.0;
    let mut cdot_l2 = 0.0;
    let mut zdot_l2 = 0.0;
    let mut mu = 0.0;
    let mut grad_u4 = 0.0;
    for (m, row) in diag.rows.iter().enumerate().skip(1) {
        let prev = traj.state(m - 1);
        let cur = traj.state(m);
        let mut cdot = cur.c.clone();
        cdot.axpy(-1.0, &prev.c);
        cdot.scale(1.0 / tau);
        let dual = grid::h1_dual_norm(&cdot).map_err(MinimizerError::from)?;
        cdot_dual_sq += tau * dual * dual;
        cdot_l2 += tau * row.cdot_sq;
        zdot_l2 += tau * row.zdot_sq;
        mu += tau * (grid::l2_inner(&traj.nodes[m].mu, &traj.nodes[m].mu) + row.grad_mu_sq);
        // ∫|∇u|⁴ at the node, weighted by τ
        let du = grid::gradient(&cur.u);
        let vol = cur.grid().cell_volume();
        let mut acc = 0.0;
        for idx in 0..cur.grid().cell_count() {
            let g2 = du.frob_sq(idx);
            acc += g2 * g2;
        }
        grad_u4 += tau * vol * acc;
    }

    Ok(SweepQuantities {
        u_linf_h1: u_h1,
        eps14_u_linf_w14: eps.powf(0.25) * u_w14,
        c_linf_h1: c_h1,
        z_linf_w1p: z_w1p,
        cdot_dual: cdot_dual_sq.sqrt(),
        eps12_cdot_l2: (eps * cdot_l2).sqrt(),
        zdot_l2: zdot_l2.sqrt(),
        mu_l2h1: mu.sqrt(),
        eps_grad_u4: eps * grad_u4,
    })
}

/// Runs the configuration for each viscosity in `eps_list` (expected
/// positive, decreasing) and collects the ε-uniform diagnostics.
pub fn viscosity_sweep(
    cfg: &RunConfig,
    eps_list: &[f64],
    min_cfg: &MinimizerConfig,
) -> Result<SweepReport, EvolutionError> {
    if eps_list.is_empty() || eps_list.iter().any(|&e| !(e > 0.0)) {
        return Err(EvolutionError::Validation("eps list must be positive".into()));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(EvolutionError::Validation("eps list must be decreasing".into()));
    }
    let entries: Result<Vec<SweepEntry>, EvolutionError> = eps_list
        .par_iter()
        .map(|&eps| {
            let mut c = cfg.clone();
            c.params.epsilon = eps;
            let output = run(&c, min_cfg)?;
            let quantities = sweep_quantities(&output, &c.params)?;
            Ok(SweepEntry { epsilon: eps, quantities, output })
        })
        .collect();
    Ok(SweepReport { entries: entries? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Face, FaceSet};

    fn stationary_config(n: usize, steps: usize) -> RunConfig {
        let grid = GridSpec::unit_interval(n);
        RunConfig {
            horizon: 1.0,
            steps,
            grid,
            params: ModelParams { eigenstrain_slope: 0.0, ..ModelParams::default() },
            c0: ScalarField::constant(&grid, 0.5),
            z0: ScalarField::constant(&grid, 1.0),
            load: BoundaryLoad::zero(&grid),
        }
    }

    fn spinodal_config(n: usize, steps: usize) -> RunConfig {
        let grid = GridSpec::unit_interval(n).with_gamma({
            let mut s = FaceSet::single(Face::Low(0));
            s.insert(Face::High(0));
            s
        });
        RunConfig {
            horizon: 1.0,
            steps,
            grid,
            params: ModelParams::default(),
            c0: ScalarField::from_fn(&grid, |x| {
                0.01 * (2.0 * std::f64::consts::PI * x[0]).cos()
            }),
            z0: ScalarField::constant(&grid, 1.0),
            load: BoundaryLoad::zero(&grid),
        }
    }

    #[test]
    fn node_time_functions() {
        let tau = 0.25;
        assert!((d_m(0.3, tau) - 0.5).abs() < 1e-14);
        assert!((d_m_minus(0.3, tau) - 0.25).abs() < 1e-14);
        assert!((d_m(0.5, tau) - 0.5).abs() < 1e-14);
        assert_eq!(d_m(0.0, tau), 0.0);
        assert_eq!(d_m_minus(0.0, tau), -tau);
    }

    #[test]
    fn stationary_run_keeps_state() {
        let cfg = stationary_config(12, 1);
        let out = run(&cfg, &MinimizerConfig::default()).unwrap();
        assert_eq!(out.trajectory.nodes.len(), 2);
        assert_eq!(out.trajectory.state(0).c.data, out.trajectory.state(1).c.data);
        assert_eq!(out.trajectory.state(0).z.data, out.trajectory.state(1).z.data);
        assert!(out.trajectory.mass_drift() < 1e-12);
    }

    #[test]
    fn interpolants_are_consistent() {
        let cfg = spinodal_config(16, 4);
        let out = run(&cfg, &MinimizerConfig::default()).unwrap();
        let traj = &out.trajectory;
        let tau = traj.tau;

        // constant = linear at nodes
        for m in 0..=4 {
            let t = m as f64 * tau;
            let a = traj.eval_constant(t).unwrap();
            let b = traj.eval_linear(t).unwrap();
            assert_eq!(a.c.data, b.c.data);
        }
        // linear at midpoints averages the neighbors
        let t = 1.5 * tau;
        let mid = traj.eval_linear(t).unwrap();
        for (idx, v) in mid.c.data.iter().enumerate() {
            let avg = 0.5 * (traj.state(1).c.data[idx] + traj.state(2).c.data[idx]);
            assert!((v - avg).abs() < 1e-14);
        }
        // retarded: initial state before τ, shifted constant after
        let r = traj.eval_retarded(0.5 * tau).unwrap();
        assert_eq!(r.c.data, traj.state(0).c.data);
        let r = traj.eval_retarded(2.5 * tau).unwrap();
        let c = traj.eval_constant(1.5 * tau).unwrap();
        assert_eq!(r.c.data, c.c.data);

        assert!(traj.eval_constant(1.5).is_err());
        assert!(traj.damage_monotone());
    }

    #[test]
    fn energy_decreases_without_load_motion() {
        let cfg = spinodal_config(64, 8);
        let out = run(&cfg, &MinimizerConfig::default()).unwrap();
        let energies: Vec<f64> = out.diagnostics.rows.iter().map(|r| r.energy.total).collect();
        for w in energies.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0].abs()), "energy rose: {w:?}");
        }
        // strictly decreasing while the perturbation relaxes
        assert!(energies[8] < energies[0]);
        assert!(out.trajectory.mass_drift() <= 1e-10);
    }

    #[test]
    fn inequality_slack_nonnegative_on_benchmark() {
        let cfg = spinodal_config(32, 8);
        let out = run(&cfg, &MinimizerConfig::default()).unwrap();
        let scale = out.diagnostics.energy_scale();
        for m1 in 0..=8usize {
            for m2 in m1..=8usize {
                let t1 = m1 as f64 * out.trajectory.tau;
                let t2 = m2 as f64 * out.trajectory.tau;
                let slack =
                    energy_inequality_check(&out.trajectory, &out.diagnostics, t1, t2).unwrap();
                assert!(
                    slack.coarse >= -1e-8 * scale,
                    "coarse slack {} at ({m1},{m2})",
                    slack.coarse
                );
                assert!(
                    slack.precise >= -1e-6 * scale,
                    "precise slack {} at ({m1},{m2})",
                    slack.precise
                );
                if m1 == m2 {
                    assert_eq!(slack.coarse, 0.0);
                }
            }
        }
    }

    #[test]
    fn init_u0_analytic_cases() {
        // zero eigenstrain, zero boundary data: the minimizer is u = 0
        let grid = GridSpec::unit_interval(16);
        let params = ModelParams { eigenstrain_slope: 0.0, ..ModelParams::default() };
        let c0 = ScalarField::constant(&grid, 0.3);
        let z0 = ScalarField::constant(&grid, 1.0);
        let (u0, res) = init_u0(&c0, &z0, &VectorField::zeros(&grid), &params,
            &MinimizerConfig::default()).unwrap();
        assert!(res <= 1e-7);
        assert!(u0.data.iter().all(|&v| v.abs() < 1e-9), "u0 should vanish");

        // uniform c0 with eigenstrain and a free right end accommodates
        // stress-free with strain = slope·c0 (ε = 0 keeps it exact)
        let params = ModelParams { epsilon: 0.0, ..ModelParams::default() };
        let c0 = ScalarField::constant(&grid, 0.8);
        let (u0, res) = init_u0(&c0, &z0, &VectorField::zeros(&grid), &params,
            &MinimizerConfig::default()).unwrap();
        assert!(res <= 1e-7);
        let e = grid::sym_grad(&u0);
        let expect = params.eigenstrain_slope * 0.8;
        for v in e.component(0) {
            assert!((v - expect).abs() < 1e-7, "strain {v} vs {expect}");
        }
    }

    #[test]
    fn apriori_ratios_constant_for_stationary_family() {
        let cfg = stationary_config(12, 1);
        let outs = refinement_family(&cfg, &[1, 2, 4], &MinimizerConfig::default()).unwrap();
        let reports: Vec<AprioriReport> = outs
            .iter()
            .map(|o| apriori_report(&o.trajectory, &o.diagnostics, &cfg.params))
            .collect();
        for k in 0..6 {
            let vals: Vec<f64> = reports.iter().map(|r| r.as_array()[k]).collect();
            let spread = vals.iter().fold(0.0f64, |m, v| m.max((v - vals[0]).abs()));
            assert!(spread < 1e-9, "quantity {k} not constant: {vals:?}");
        }
    }

    #[test]
    fn run_reports_config_errors() {
        let mut cfg = stationary_config(8, 4);
        cfg.params.p = 0.5;
        match run(&cfg, &MinimizerConfig::default()) {
            Err(EvolutionError::Validation(msg)) => assert!(msg.contains("p > n")),
            other => panic!("expected validation error, got {other:?}"),
        }
        let mut cfg = stationary_config(8, 4);
        cfg.z0.data[3] = 1.5;
        match run(&cfg, &MinimizerConfig::default()) {
            Err(EvolutionError::Validation(msg)) => assert!(msg.contains("0 <= z0 <= 1")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }
}
