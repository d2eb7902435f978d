//! Energy densities: the quartic double-well chemical energy, the degraded
//! quadratic elastic energy with linear eigenstrain, their partial
//! derivatives, and sampled validators for the convexity/growth conditions
//! the analysis needs.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaterialError {
    #[error("damage value {z} outside [0,1] beyond tolerance")]
    ZOutOfRange { z: f64 },
}

/// Degradation profile Φ: continuous, increasing, Φ(0) = 0. The quadratic
/// profile has Φ'(0) = 0, which makes the damage subgradient vanish
/// identically; the linear profile keeps it active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiKind {
    Linear,
    Quadratic,
}

impl PhiKind {
    pub fn phi(&self, z: f64) -> f64 {
        match self {
            PhiKind::Linear => z,
            PhiKind::Quadratic => z * z,
        }
    }

    pub fn dphi(&self, z: f64) -> f64 {
        match self {
            PhiKind::Linear => 1.0,
            PhiKind::Quadratic => 2.0 * z,
        }
    }
}

/// Material and regularization constants.
#[derive(Debug, Clone, Copy)]
pub struct ModelParams {
    /// Weight of the |∇c|² term.
    pub gamma: f64,
    /// Weight of the |∇z|^p term.
    pub delta: f64,
    /// Damage gradient exponent, must exceed the space dimension.
    pub p: f64,
    /// Damage dissipation threshold.
    pub alpha: f64,
    /// Viscous damage dissipation; rate dependence needs β > 0.
    pub beta: f64,
    /// Residual stiffness added to Φ(z).
    pub eta_tilde: f64,
    /// Viscosity of the regularized problem (ε ≥ 0).
    pub epsilon: f64,
    pub lame_mu: f64,
    pub lame_lambda: f64,
    /// e*(c) = eigenstrain_slope · c · I.
    pub eigenstrain_slope: f64,
    pub phi_kind: PhiKind,
    /// Critical exponent used in the chemical growth check.
    pub sobolev_2star: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            gamma: 1.0,
            delta: 1.0,
            p: 4.0,
            alpha: 0.1,
            beta: 0.1,
            eta_tilde: 0.01,
            epsilon: 1.0,
            lame_mu: 1.0,
            lame_lambda: 1.0,
            eigenstrain_slope: 0.1,
            phi_kind: PhiKind::Quadratic,
            sobolev_2star: 6.0,
        }
    }
}

impl ModelParams {
    /// Checks the standing assumptions for spatial dimension `dim`.
    pub fn validate(&self, dim: usize) -> Result<(), String> {
        if !(self.p > dim as f64) {
            return Err(format!("requires p > n: got p = {}, n = {dim}", self.p));
        }
        if !(self.beta > 0.0) {
            return Err("requires beta > 0 (rate-dependent dissipation)".into());
        }
        if !(self.alpha > 0.0) {
            return Err("requires alpha > 0".into());
        }
        if !(self.eta_tilde > 0.0) {
            return Err("requires eta_tilde > 0 (residual stiffness)".into());
        }
        if !(self.epsilon >= 0.0) {
            return Err("requires epsilon >= 0".into());
        }
        if !(self.gamma > 0.0) || !(self.delta > 0.0) {
            return Err("requires gamma > 0 and delta > 0".into());
        }
        if !(self.lame_mu > 0.0) || !(self.lame_lambda > 0.0) {
            return Err("requires lame_mu > 0 and lame_lambda > 0".into());
        }
        Ok(())
    }

    /// Smallest eigenvalue of the stiffness tensor on symmetric matrices.
    pub fn stiffness_min_eigenvalue(&self, dim: usize) -> f64 {
        let spherical = 2.0 * self.lame_mu + dim as f64 * self.lame_lambda;
        if dim == 1 {
            spherical
        } else {
            (2.0 * self.lame_mu).min(spherical)
        }
    }
}

const Z_SLACK: f64 = 1e-12;

fn check_z(z: f64) -> Result<f64, MaterialError> {
    if z < -Z_SLACK || z > 1.0 + Z_SLACK {
        return Err(MaterialError::ZOutOfRange { z });
    }
    Ok(z.clamp(0.0, 1.0))
}

/// Double-well chemical energy (1 - c²)².
pub fn w_ch(c: f64) -> f64 {
    let s = 1.0 - c * c;
    s * s
}

/// Derivative of [`w_ch`]: -4c(1 - c²).
pub fn dc_w_ch(c: f64) -> f64 {
    -4.0 * c * (1.0 - c * c)
}

pub fn d2c_w_ch(c: f64) -> f64 {
    -4.0 + 12.0 * c * c
}

// Packed symmetric tensors: diagonal components first, off-diagonals after
// (order as in grid::sym_index). `dim` selects how many entries are live.

/// Frobenius inner product of two packed symmetric tensors.
pub fn sym_frob_inner(a: &[f64], b: &[f64], dim: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..dim {
        s += a[k] * b[k];
    }
    for k in dim..dim * (dim + 1) / 2 {
        s += 2.0 * a[k] * b[k];
    }
    s
}

pub fn sym_frob_norm_sq(a: &[f64], dim: usize) -> f64 {
    sym_frob_inner(a, a, dim)
}

fn trace(e: &[f64], dim: usize) -> f64 {
    e[..dim].iter().sum()
}

/// Stiffness application ℂξ = 2μξ + λ tr(ξ) I, packed.
pub fn apply_stiffness(params: &ModelParams, e: &[f64], dim: usize, out: &mut [f64]) {
    let tr = trace(e, dim);
    let ncomp = dim * (dim + 1) / 2;
    for k in 0..ncomp {
        out[k] = 2.0 * params.lame_mu * e[k];
    }
    for k in 0..dim {
        out[k] += params.lame_lambda * tr;
    }
}

/// Elastic mismatch e - e*(c) with e*(c) = slope·c·I.
fn mismatch(params: &ModelParams, e: &[f64], c: f64, dim: usize, out: &mut [f64]) {
    let ncomp = dim * (dim + 1) / 2;
    out[..ncomp].copy_from_slice(&e[..ncomp]);
    for k in 0..dim {
        out[k] -= params.eigenstrain_slope * c;
    }
}

/// Undegraded elastic density ½(e - e*(c)) : ℂ(e - e*(c)).
pub fn w_hat_el(params: &ModelParams, e: &[f64], c: f64, dim: usize) -> f64 {
    let mut m = [0.0; 6];
    let mut cm = [0.0; 6];
    mismatch(params, e, c, dim, &mut m);
    apply_stiffness(params, &m, dim, &mut cm);
    0.5 * sym_frob_inner(&m, &cm, dim)
}

/// Degraded elastic density (Φ(z) + η̃) Ŵ_el.
pub fn w_el(params: &ModelParams, e: &[f64], c: f64, z: f64, dim: usize) -> Result<f64, MaterialError> {
    let z = check_z(z)?;
    Ok((params.phi_kind.phi(z) + params.eta_tilde) * w_hat_el(params, e, c, dim))
}

/// Stress ∂_e W_el = (Φ(z) + η̃) ℂ(e - e*(c)), packed into `out`.
pub fn de_w_el(
    params: &ModelParams,
    e: &[f64],
    c: f64,
    z: f64,
    dim: usize,
    out: &mut [f64],
) -> Result<(), MaterialError> {
    let z = check_z(z)?;
    let mut m = [0.0; 6];
    mismatch(params, e, c, dim, &mut m);
    apply_stiffness(params, &m, dim, out);
    let s = params.phi_kind.phi(z) + params.eta_tilde;
    for v in out[..dim * (dim + 1) / 2].iter_mut() {
        *v *= s;
    }
    Ok(())
}

/// ∂_c W_el = -(Φ(z) + η̃) (ℂ(e - e*(c))) : (e*)'(c).
pub fn dc_w_el(params: &ModelParams, e: &[f64], c: f64, z: f64, dim: usize) -> Result<f64, MaterialError> {
    let z = check_z(z)?;
    let mut m = [0.0; 6];
    let mut cm = [0.0; 6];
    mismatch(params, e, c, dim, &mut m);
    apply_stiffness(params, &m, dim, &mut cm);
    let s = params.phi_kind.phi(z) + params.eta_tilde;
    Ok(-s * params.eigenstrain_slope * trace(&cm, dim))
}

/// Second c-derivative of W_el (constant in c for the linear eigenstrain).
pub fn d2c_w_el(params: &ModelParams, z: f64, dim: usize) -> f64 {
    let z = z.clamp(0.0, 1.0);
    let s = params.phi_kind.phi(z) + params.eta_tilde;
    let n = dim as f64;
    s * params.eigenstrain_slope * params.eigenstrain_slope
        * (2.0 * params.lame_mu * n + params.lame_lambda * n * n)
}

/// ∂_z W_el = Φ'(z) Ŵ_el.
pub fn dz_w_el(params: &ModelParams, e: &[f64], c: f64, z: f64, dim: usize) -> Result<f64, MaterialError> {
    let z = check_z(z)?;
    Ok(params.phi_kind.dphi(z) * w_hat_el(params, e, c, dim))
}

// ---------------------------------------------------------------------------
// Growth-condition validation (sampled)
// ---------------------------------------------------------------------------

/// One sampled evaluation point (packed strain, concentration, damage).
#[derive(Debug, Clone, Copy)]
pub struct SamplePoint {
    pub e: [f64; 6],
    pub c: f64,
    pub z: f64,
}

/// Latin-hypercube cloud over strains in [-e_range, e_range], c in
/// [-c_range, c_range], z in [0,1].
pub fn sample_cloud(dim: usize, count: usize, e_range: f64, c_range: f64, seed: u64) -> Vec<SamplePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ncomp = dim * (dim + 1) / 2;
    let vars = ncomp + 2;
    // one stratified permutation per variable
    let strata: Vec<Vec<usize>> = (0..vars)
        .map(|_| {
            let mut idx: Vec<usize> = (0..count).collect();
            idx.shuffle(&mut rng);
            idx
        })
        .collect();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let draw = |v: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng| -> f64 {
            let u = (strata[v][i] as f64 + rng.gen::<f64>()) / count as f64;
            lo + (hi - lo) * u
        };
        let mut e = [0.0; 6];
        for k in 0..ncomp {
            e[k] = draw(k, -e_range, e_range, &mut rng);
        }
        let c = draw(ncomp, -c_range, c_range, &mut rng);
        let z = draw(ncomp + 1, 0.0, 1.0, &mut rng);
        out.push(SamplePoint { e, c, z });
    }
    out
}

/// Sampled verdict for one growth condition: `margin` is the worst coercivity
/// slack for A1 and the estimated feasible constant for A2..A6.
#[derive(Debug, Clone)]
pub struct GrowthEntry {
    pub name: &'static str,
    pub pass: bool,
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct GrowthReport {
    pub entries: Vec<GrowthEntry>,
}

impl GrowthReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn entry(&self, name: &str) -> Option<&GrowthEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Evaluates the six growth/convexity conditions on a sample cloud.
///
/// A1 reports the worst slack of the uniform monotonicity of the stress,
/// with modulus η = η̃·λ_min(ℂ); it passes when the slack stays above -1e-9.
/// A2..A6 report the feasible constant estimated as the supremum of the
/// defining ratio over the cloud; they pass when that constant is finite.
pub fn validate_growth(params: &ModelParams, dim: usize, samples: &[SamplePoint]) -> GrowthReport {
    assert!(!samples.is_empty(), "sample cloud must be nonempty");
    let eta = params.eta_tilde * params.stiffness_min_eigenvalue(dim);
    let ncomp = dim * (dim + 1) / 2;

    let mut a1_margin = f64::INFINITY;
    let mut c2: f64 = 0.0;
    let mut c3: f64 = 0.0;
    let mut c4: f64 = 0.0;
    let mut c5: f64 = 0.0;
    let mut c6: f64 = 0.0;

    let mut s1 = [0.0; 6];
    let mut s2 = [0.0; 6];
    for (i, a) in samples.iter().enumerate() {
        let b = samples[(i + 1) % samples.len()];
        // A1 at (c,z) of sample a, strains from a and b
        let mut diff = [0.0; 6];
        for k in 0..ncomp {
            diff[k] = a.e[k] - b.e[k];
        }
        let d2 = sym_frob_norm_sq(&diff, dim);
        if d2 > 0.0 {
            de_w_el(params, &a.e, a.c, a.z, dim, &mut s1).unwrap();
            de_w_el(params, &b.e, a.c, a.z, dim, &mut s2).unwrap();
            for k in 0..ncomp {
                s1[k] -= s2[k];
            }
            let pairing = sym_frob_inner(&s1, &diff, dim);
            a1_margin = a1_margin.min(pairing - eta * d2);
        }

        let wel = w_el(params, &a.e, a.c, a.z, dim).unwrap();
        let e_norm2 = sym_frob_norm_sq(&a.e, dim);
        c2 = c2.max(wel / (e_norm2 + a.c * a.c + 1.0));

        // A3 with e1 from a, e2 from b
        let mut sum = [0.0; 6];
        for k in 0..ncomp {
            sum[k] = a.e[k] + b.e[k];
        }
        de_w_el(params, &sum, a.c, a.z, dim, &mut s1).unwrap();
        let num = sym_frob_norm_sq(&s1, dim).sqrt();
        c3 = c3.max(num / (wel + sym_frob_norm_sq(&b.e, dim).sqrt() + 1.0));

        let dc = dc_w_el(params, &a.e, a.c, a.z, dim).unwrap();
        c4 = c4.max(dc.abs() / (e_norm2.sqrt() + a.c * a.c + 1.0));

        let dz = dz_w_el(params, &a.e, a.c, a.z, dim).unwrap();
        c5 = c5.max(dz.abs() / (e_norm2 + a.c * a.c + 1.0));

        c6 = c6.max(dc_w_ch(a.c).abs() / (a.c.abs().powf(params.sobolev_2star / 2.0) + 1.0));
    }

    let entries = vec![
        GrowthEntry { name: "A1", pass: a1_margin >= -1e-9, margin: a1_margin },
        GrowthEntry { name: "A2", pass: c2.is_finite(), margin: c2 },
        GrowthEntry { name: "A3", pass: c3.is_finite(), margin: c3 },
        GrowthEntry { name: "A4", pass: c4.is_finite(), margin: c4 },
        GrowthEntry { name: "A5", pass: c5.is_finite(), margin: c5 },
        GrowthEntry { name: "A6", pass: c6.is_finite(), margin: c6 },
    ];
    GrowthReport { entries }
}
