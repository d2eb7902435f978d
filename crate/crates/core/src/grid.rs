//! Uniform cell-centered grids and the discrete differential operators.
//!
//! Scalar unknowns carry homogeneous Neumann data on the whole boundary,
//! realized with mirror ghost cells; the displacement carries Dirichlet data
//! on the face set Γ and is traction-free elsewhere. All H¹ pairings go
//! through face differences so that the discrete Green identity
//! `∫(Δf)g = -∫∇f·∇g` holds exactly, which the energy bookkeeping relies on.

use thiserror::Error;

/// Errors raised by grid operators.
#[derive(Debug, Error)]
pub enum GridError {
    #[error("field defined on a different grid (expected {expected} cells, got {got})")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("field mean {mean:e} exceeds the zero-mean tolerance {tol:e}")]
    NonZeroMean { mean: f64, tol: f64 },
    #[error("conjugate gradient did not reach tolerance {tol:e} in {iterations} iterations")]
    NoConvergence { iterations: usize, tol: f64 },
}

/// One of the up to six axis-aligned boundary faces of the box domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    Low(usize),
    High(usize),
}

/// Set of boundary faces, packed as a bitmask (bit 2a = low face of axis a,
/// bit 2a+1 = high face).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FaceSet(u8);

impl FaceSet {
    pub fn empty() -> Self {
        FaceSet(0)
    }

    pub fn single(face: Face) -> Self {
        let mut s = FaceSet(0);
        s.insert(face);
        s
    }

    pub fn insert(&mut self, face: Face) {
        self.0 |= 1 << Self::bit(face);
    }

    pub fn contains(&self, face: Face) -> bool {
        self.0 & (1 << Self::bit(face)) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn faces(&self) -> Vec<Face> {
        let mut out = Vec::new();
        for axis in 0..3 {
            if self.contains(Face::Low(axis)) {
                out.push(Face::Low(axis));
            }
            if self.contains(Face::High(axis)) {
                out.push(Face::High(axis));
            }
        }
        out
    }

    fn bit(face: Face) -> u8 {
        match face {
            Face::Low(a) => 2 * a as u8,
            Face::High(a) => 2 * a as u8 + 1,
        }
    }
}

/// Uniform cell-centered grid on a box, with the Dirichlet face set Γ for the
/// displacement. Cell `(i0,i1,i2)` sits at `x_a = (i_a + 1/2) h_a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    dim: usize,
    cells: [usize; 3],
    spacing: [f64; 3],
    gamma: FaceSet,
}

impl GridSpec {
    /// Builds a grid. Γ must be nonempty (the displacement needs Dirichlet
    /// data on a set of positive surface measure). Single-cell axes are
    /// allowed for degenerate test problems; run configurations enforce at
    /// least two cells per axis.
    pub fn new(dim: usize, cells: &[usize], spacing: &[f64], gamma: FaceSet) -> Result<Self, String> {
        if dim == 0 || dim > 3 {
            return Err(format!("dim must be 1, 2 or 3, got {dim}"));
        }
        if cells.len() != dim || spacing.len() != dim {
            return Err("cells and spacing must have one entry per axis".into());
        }
        if cells.iter().any(|&c| c == 0) {
            return Err("every axis needs at least one cell".into());
        }
        if spacing.iter().any(|&h| !(h > 0.0) || !h.is_finite()) {
            return Err("spacing must be positive and finite".into());
        }
        if gamma.is_empty() {
            return Err("gamma_faces must be nonempty".into());
        }
        if gamma.faces().iter().any(|f| {
            let a = match f {
                Face::Low(a) | Face::High(a) => *a,
            };
            a >= dim
        }) {
            return Err("gamma_faces refers to an axis beyond dim".into());
        }
        let mut c = [1usize; 3];
        let mut h = [1.0f64; 3];
        c[..dim].copy_from_slice(cells);
        h[..dim].copy_from_slice(spacing);
        Ok(GridSpec { dim, cells: c, spacing: h, gamma })
    }

    /// 1-D unit-interval grid with Γ = {x=0}, the default Dirichlet set.
    pub fn unit_interval(n: usize) -> Self {
        GridSpec::new(1, &[n], &[1.0 / n as f64], FaceSet::single(Face::Low(0))).unwrap()
    }

    /// 2-D unit-square grid with Γ = {x=0}.
    pub fn unit_square(nx: usize, ny: usize) -> Self {
        GridSpec::new(
            2,
            &[nx, ny],
            &[1.0 / nx as f64, 1.0 / ny as f64],
            FaceSet::single(Face::Low(0)),
        )
        .unwrap()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self, axis: usize) -> usize {
        self.cells[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.spacing[axis]
    }

    pub fn gamma(&self) -> FaceSet {
        self.gamma
    }

    pub fn with_gamma(mut self, gamma: FaceSet) -> Self {
        assert!(!gamma.is_empty(), "gamma_faces must be nonempty");
        self.gamma = gamma;
        self
    }

    pub fn cell_count(&self) -> usize {
        self.cells[..self.dim].iter().product()
    }

    /// Volume of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing[..self.dim].iter().product()
    }

    /// Measure of the whole box.
    pub fn domain_volume(&self) -> f64 {
        self.cell_volume() * self.cell_count() as f64
    }

    /// Row-major stride of `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.cells[axis + 1..self.dim].iter().product()
    }

    /// Cell-center coordinate of the flat index along `axis`.
    pub fn coord(&self, idx: usize, axis: usize) -> f64 {
        (self.axis_index(idx, axis) as f64 + 0.5) * self.spacing[axis]
    }

    /// Integer cell index of a flat index along `axis`.
    pub fn axis_index(&self, idx: usize, axis: usize) -> usize {
        (idx / self.stride(axis)) % self.cells[axis]
    }

    /// True when the cell touches a face in Γ (the Dirichlet layer for u).
    pub fn is_gamma_cell(&self, idx: usize) -> bool {
        for axis in 0..self.dim {
            let i = self.axis_index(idx, axis);
            if i == 0 && self.gamma.contains(Face::Low(axis)) {
                return true;
            }
            if i == self.cells[axis] - 1 && self.gamma.contains(Face::High(axis)) {
                return true;
            }
        }
        false
    }

    /// Visits every grid line along `axis` as `(base, stride, len)`.
    pub(crate) fn for_each_line(&self, axis: usize, mut f: impl FnMut(usize, usize, usize)) {
        let stride = self.stride(axis);
        let len = self.cells[axis];
        let total = self.cell_count();
        let line_block = stride * len;
        let mut base_block = 0;
        while base_block < total {
            for offset in 0..stride {
                f(base_block + offset, stride, len);
            }
            base_block += line_block;
        }
    }
}

fn check_len(grid: &GridSpec, len: usize, comps: usize) -> Result<(), GridError> {
    let expected = grid.cell_count() * comps;
    if len != expected {
        return Err(GridError::DimensionMismatch { expected, got: len });
    }
    Ok(())
}

/// Scalar cell values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &GridSpec) -> Self {
        ScalarField { grid: *grid, data: vec![0.0; grid.cell_count()] }
    }

    pub fn constant(grid: &GridSpec, v: f64) -> Self {
        ScalarField { grid: *grid, data: vec![v; grid.cell_count()] }
    }

    pub fn from_fn(grid: &GridSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut data = vec![0.0; grid.cell_count()];
        let mut x = [0.0f64; 3];
        for (idx, v) in data.iter_mut().enumerate() {
            for (a, xa) in x[..grid.dim()].iter_mut().enumerate() {
                *xa = grid.coord(idx, a);
            }
            *v = f(&x[..grid.dim()]);
        }
        ScalarField { grid: *grid, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn axpy(&mut self, a: f64, other: &ScalarField) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for x in &mut self.data {
            *x *= a;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Midpoint-rule L² norm.
    pub fn l2_norm(&self) -> f64 {
        (self.grid.cell_volume() * self.data.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Vector cell values stored as component planes: component `c` occupies
/// `data[c*ncells .. (c+1)*ncells]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: GridSpec,
    pub data: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: &GridSpec) -> Self {
        VectorField { grid: *grid, data: vec![0.0; grid.cell_count() * grid.dim()] }
    }

    pub fn from_fn(grid: &GridSpec, f: impl Fn(&[f64], usize) -> f64) -> Self {
        let n = grid.cell_count();
        let mut data = vec![0.0; n * grid.dim()];
        let mut x = [0.0f64; 3];
        for comp in 0..grid.dim() {
            for idx in 0..n {
                for (a, xa) in x[..grid.dim()].iter_mut().enumerate() {
                    *xa = grid.coord(idx, a);
                }
                data[comp * n + idx] = f(&x[..grid.dim()], comp);
            }
        }
        VectorField { grid: *grid, data }
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.grid.cell_count();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.grid.cell_count();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn axpy(&mut self, a: f64, other: &VectorField) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn l2_norm(&self) -> f64 {
        (self.grid.cell_volume() * self.data.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Symmetric tensor cell values; component planes ordered diagonal first,
/// then off-diagonals: 2-D `[00, 11, 01]`, 3-D `[00, 11, 22, 01, 02, 12]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensorField {
    pub grid: GridSpec,
    pub data: Vec<f64>,
}

/// Index of the symmetric component (a,b) in the plane layout.
pub fn sym_index(dim: usize, a: usize, b: usize) -> usize {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if lo == hi {
        lo
    } else {
        match dim {
            2 => 2,
            3 => match (lo, hi) {
                (0, 1) => 3,
                (0, 2) => 4,
                _ => 5,
            },
            _ => unreachable!("off-diagonal component in 1-D"),
        }
    }
}

pub fn sym_component_count(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

impl SymTensorField {
    pub fn zeros(grid: &GridSpec) -> Self {
        let ncomp = sym_component_count(grid.dim());
        SymTensorField { grid: *grid, data: vec![0.0; grid.cell_count() * ncomp] }
    }

    pub fn component(&self, k: usize) -> &[f64] {
        let n = self.grid.cell_count();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn component_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.grid.cell_count();
        &mut self.data[k * n..(k + 1) * n]
    }

    /// Copies the packed entries of cell `idx` into `out` (length ≥ ncomp).
    pub fn cell(&self, idx: usize, out: &mut [f64]) {
        let n = self.grid.cell_count();
        let ncomp = sym_component_count(self.grid.dim());
        for k in 0..ncomp {
            out[k] = self.data[k * n + idx];
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Full (unsymmetrized) gradient tensor; component (a,b) = ∂_b u_a sits in
/// plane `a*dim + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    pub grid: GridSpec,
    pub data: Vec<f64>,
}

impl TensorField {
    pub fn zeros(grid: &GridSpec) -> Self {
        let d = grid.dim();
        TensorField { grid: *grid, data: vec![0.0; grid.cell_count() * d * d] }
    }

    pub fn component(&self, a: usize, b: usize) -> &[f64] {
        let n = self.grid.cell_count();
        let k = a * self.grid.dim() + b;
        &self.data[k * n..(k + 1) * n]
    }

    pub fn component_mut(&mut self, a: usize, b: usize) -> &mut [f64] {
        let n = self.grid.cell_count();
        let k = a * self.grid.dim() + b;
        &mut self.data[k * n..(k + 1) * n]
    }

    /// Frobenius norm squared of the tensor at cell `idx`.
    pub fn frob_sq(&self, idx: usize) -> f64 {
        let n = self.grid.cell_count();
        let d = self.grid.dim();
        let mut s = 0.0;
        for k in 0..d * d {
            let v = self.data[k * n + idx];
            s += v * v;
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Cell-centered derivative stencils (Dirichlet/traction side, used for u)
// ---------------------------------------------------------------------------

/// Writes the derivative stencil row for cell `i` on a line of `len` cells
/// into `out` as (offset, coefficient) pairs; returns the number of entries.
/// Interior rows are centered, boundary rows one-sided second order.
fn derivative_row(i: usize, len: usize, h: f64, out: &mut [(usize, f64); 3]) -> usize {
    if len == 1 {
        return 0;
    }
    if len == 2 {
        out[0] = (0, -1.0 / h);
        out[1] = (1, 1.0 / h);
        return 2;
    }
    let c = 0.5 / h;
    if i == 0 {
        out[0] = (0, -3.0 * c);
        out[1] = (1, 4.0 * c);
        out[2] = (2, -c);
        3
    } else if i == len - 1 {
        out[0] = (len - 3, c);
        out[1] = (len - 2, -4.0 * c);
        out[2] = (len - 1, 3.0 * c);
        3
    } else {
        out[0] = (i - 1, -c);
        out[1] = (i + 1, c);
        2
    }
}

/// Per-axis cell derivative of a scalar plane (gather form).
fn apply_derivative(grid: &GridSpec, src: &[f64], axis: usize, dst: &mut [f64]) {
    let h = grid.spacing(axis);
    let mut row = [(0usize, 0.0f64); 3];
    grid.for_each_line(axis, |base, stride, len| {
        for i in 0..len {
            let n = derivative_row(i, len, h, &mut row);
            let mut v = 0.0;
            for (off, coef) in &row[..n] {
                v += coef * src[base + off * stride];
            }
            dst[base + i * stride] = v;
        }
    });
}

/// Adjoint of [`apply_derivative`] (scatter form; same rows, transposed).
fn apply_derivative_transpose(grid: &GridSpec, w: &[f64], axis: usize, dst: &mut [f64]) {
    let h = grid.spacing(axis);
    let mut row = [(0usize, 0.0f64); 3];
    dst.iter_mut().for_each(|v| *v = 0.0);
    grid.for_each_line(axis, |base, stride, len| {
        for i in 0..len {
            let n = derivative_row(i, len, h, &mut row);
            let wi = w[base + i * stride];
            for (off, coef) in &row[..n] {
                dst[base + off * stride] += coef * wi;
            }
        }
    });
}

/// Linearized strain e(u) = ½(∇u + ∇uᵀ), centered in the interior and
/// one-sided second order at boundary cells.
pub fn sym_grad(u: &VectorField) -> SymTensorField {
    let grid = u.grid;
    let d = grid.dim();
    let n = grid.cell_count();
    let mut e = SymTensorField::zeros(&grid);
    let mut tmp = vec![0.0; n];
    for a in 0..d {
        for b in a..d {
            let k = sym_index(d, a, b);
            if a == b {
                apply_derivative(&grid, u.component(a), a, e.component_mut(k));
            } else {
                // ½(∂_b u_a + ∂_a u_b)
                apply_derivative(&grid, u.component(a), b, &mut tmp);
                let comp = e.component_mut(k);
                comp.copy_from_slice(&tmp);
                apply_derivative(&grid, u.component(b), a, &mut tmp);
                for (ek, t) in comp.iter_mut().zip(&tmp) {
                    *ek = 0.5 * (*ek + t);
                }
            }
        }
    }
    e
}

/// Adjoint of [`sym_grad`]: the field `v` with `∫ v·ζ = ∫ S : e(ζ)` for all ζ.
pub fn sym_grad_adjoint(s: &SymTensorField) -> VectorField {
    let grid = s.grid;
    let d = grid.dim();
    let n = grid.cell_count();
    let mut out = VectorField::zeros(&grid);
    let mut tmp = vec![0.0; n];
    for a in 0..d {
        let comp = out.component_mut(a);
        for b in 0..d {
            let k = sym_index(d, a, b);
            apply_derivative_transpose(&grid, s.component(k), b, &mut tmp);
            for (o, t) in comp.iter_mut().zip(&tmp) {
                *o += t;
            }
        }
    }
    out
}

/// Full displacement gradient (Du)_{ab} = ∂_b u_a.
pub fn gradient(u: &VectorField) -> TensorField {
    let grid = u.grid;
    let d = grid.dim();
    let mut g = TensorField::zeros(&grid);
    for a in 0..d {
        for b in 0..d {
            apply_derivative(&grid, u.component(a), b, g.component_mut(a, b));
        }
    }
    g
}

/// Adjoint of [`gradient`]: `∫ v·ζ = ∫ T : Dζ` for all ζ.
pub fn gradient_adjoint(t: &TensorField) -> VectorField {
    let grid = t.grid;
    let d = grid.dim();
    let n = grid.cell_count();
    let mut out = VectorField::zeros(&grid);
    let mut tmp = vec![0.0; n];
    for a in 0..d {
        let comp = out.component_mut(a);
        for b in 0..d {
            apply_derivative_transpose(&grid, t.component(a, b), b, &mut tmp);
            for (o, v) in comp.iter_mut().zip(&tmp) {
                *o += v;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Neumann-side operators (scalar unknowns c, z, μ)
// ---------------------------------------------------------------------------

/// Cell gradient with mirror ghost values on every boundary face, encoding
/// zero normal derivative. Exact on constants.
pub fn grad_neumann(f: &ScalarField) -> VectorField {
    let grid = f.grid;
    let mut out = VectorField::zeros(&grid);
    for axis in 0..grid.dim() {
        let h = grid.spacing(axis);
        let c = 0.5 / h;
        let src = &f.data;
        let dst = out.component_mut(axis);
        grid.for_each_line(axis, |base, stride, len| {
            if len == 1 {
                dst[base] = 0.0;
                return;
            }
            // mirror ghosts: f[-1] = f[0], f[len] = f[len-1]
            dst[base] = c * (src[base + stride] - src[base]);
            for i in 1..len - 1 {
                dst[base + i * stride] =
                    c * (src[base + (i + 1) * stride] - src[base + (i - 1) * stride]);
            }
            dst[base + (len - 1) * stride] =
                c * (src[base + (len - 1) * stride] - src[base + (len - 2) * stride]);
        });
    }
    out
}

/// Flux-form Neumann Laplacian: interior face fluxes `(f_{i+1}-f_i)/h`, zero
/// flux through the boundary. Equals the mirror-ghost 3/5/7-point stencil.
pub fn neumann_laplacian(f: &ScalarField) -> ScalarField {
    let grid = f.grid;
    let mut out = ScalarField::zeros(&grid);
    for axis in 0..grid.dim() {
        let h = grid.spacing(axis);
        let inv_h2 = 1.0 / (h * h);
        let src = &f.data;
        let dst = &mut out.data;
        grid.for_each_line(axis, |base, stride, len| {
            if len == 1 {
                return;
            }
            for i in 0..len {
                let fi = src[base + i * stride];
                let mut acc = 0.0;
                if i + 1 < len {
                    acc += src[base + (i + 1) * stride] - fi;
                }
                if i > 0 {
                    acc -= fi - src[base + (i - 1) * stride];
                }
                dst[base + i * stride] += acc * inv_h2;
            }
        });
    }
    out
}

/// Face-difference H¹ semi-inner product `∫ ∇f·∇g` (each interior face
/// carries one cell volume). Satisfies `∫(Δf)g = -dirichlet_form(f,g)`
/// exactly against [`neumann_laplacian`].
pub fn dirichlet_form(f: &ScalarField, g: &ScalarField) -> f64 {
    let grid = f.grid;
    let vol = grid.cell_volume();
    let mut total = 0.0;
    for axis in 0..grid.dim() {
        let h = grid.spacing(axis);
        let w = vol / (h * h);
        let fs = &f.data;
        let gs = &g.data;
        grid.for_each_line(axis, |base, stride, len| {
            for i in 0..len.saturating_sub(1) {
                let df = fs[base + (i + 1) * stride] - fs[base + i * stride];
                let dg = gs[base + (i + 1) * stride] - gs[base + i * stride];
                total += w * df * dg;
            }
        });
    }
    total
}

/// Componentwise face assembly of `∫ |∇z|^p`: each interior face of axis a
/// contributes `V |δz/h_a|^p`. Coincides with the Euclidean gradient norm in
/// 1-D; in higher dimensions it is the anisotropic (split) form whose
/// variational derivative is [`p_flux_divergence`].
pub fn p_face_energy(z: &ScalarField, p: f64) -> f64 {
    let grid = z.grid;
    let vol = grid.cell_volume();
    let mut total = 0.0;
    for axis in 0..grid.dim() {
        let h = grid.spacing(axis);
        let zs = &z.data;
        grid.for_each_line(axis, |base, stride, len| {
            for i in 0..len.saturating_sub(1) {
                let d = (zs[base + (i + 1) * stride] - zs[base + i * stride]) / h;
                total += vol * d.abs().powf(p);
            }
        });
    }
    total
}

/// Divergence of the p-flux `|δz/h|^{p-2}(δz/h)` over interior faces; the
/// exact variational derivative of [`p_face_energy`] is `-div`.
pub fn p_flux_divergence(z: &ScalarField, p: f64) -> ScalarField {
    let grid = z.grid;
    let mut out = ScalarField::zeros(&grid);
    for axis in 0..grid.dim() {
        let h = grid.spacing(axis);
        let zs = &z.data;
        let dst = &mut out.data;
        grid.for_each_line(axis, |base, stride, len| {
            if len == 1 {
                return;
            }
            let flux = |i: usize| -> f64 {
                let d = (zs[base + (i + 1) * stride] - zs[base + i * stride]) / h;
                d.abs().powf(p - 2.0) * d
            };
            for i in 0..len {
                let right = if i + 1 < len { flux(i) } else { 0.0 };
                let left = if i > 0 { flux(i - 1) } else { 0.0 };
                dst[base + i * stride] += (right - left) / h;
            }
        });
    }
    out
}

/// Midpoint-rule integral.
pub fn integrate(f: &ScalarField) -> f64 {
    f.grid.cell_volume() * f.data.iter().sum::<f64>()
}

pub fn mean(f: &ScalarField) -> f64 {
    f.data.iter().sum::<f64>() / f.data.len() as f64
}

/// Subtracts the mean; leaves all other cosine content untouched.
pub fn project_zero_mean(f: &ScalarField) -> ScalarField {
    let m = mean(f);
    let mut out = f.clone();
    for v in &mut out.data {
        *v -= m;
    }
    out
}

/// Midpoint-rule L² inner product.
pub fn l2_inner(f: &ScalarField, g: &ScalarField) -> f64 {
    f.grid.cell_volume() * f.data.iter().zip(&g.data).map(|(a, b)| a * b).sum::<f64>()
}

fn zero_mean_guard(w: &ScalarField) -> Result<(), GridError> {
    let m = mean(w);
    let tol = 1e-12 * w.max_abs().max(f64::MIN_POSITIVE);
    if m.abs() > tol {
        return Err(GridError::NonZeroMean { mean: m, tol });
    }
    Ok(())
}

/// Relative tolerance used by the conjugate-gradient solves.
pub const CG_TOL: f64 = 1e-10;

/// Inverse Neumann Laplacian on zero-mean fields: returns the zero-mean `v`
/// with `-Δv = w`, by conjugate gradients with a mean projection every
/// iteration (tolerance [`CG_TOL`], cap `10·N`).
pub fn inv_neg_laplacian(w: &ScalarField) -> Result<ScalarField, GridError> {
    check_len(&w.grid, w.data.len(), 1)?;
    zero_mean_guard(w)?;
    cg_neumann(w, 0.0, CG_TOL, 10 * w.len().max(100), true)
}

/// CG solve of `(shift·I - Δ) v = w` with Neumann fluxes. `project` subtracts
/// the mean from every iterate (required when `shift = 0`).
fn cg_neumann(
    w: &ScalarField,
    shift: f64,
    tol: f64,
    max_iter: usize,
    project: bool,
) -> Result<ScalarField, GridError> {
    let grid = w.grid;
    let apply = |f: &ScalarField| -> ScalarField {
        let mut out = neumann_laplacian(f);
        for (o, v) in out.data.iter_mut().zip(&f.data) {
            *o = shift * v - *o;
        }
        out
    };
    let b_norm = w.l2_norm();
    let mut x = ScalarField::zeros(&grid);
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = w.clone();
    if project {
        r = project_zero_mean(&r);
    }
    let mut p = r.clone();
    let mut rs_old = l2_inner(&r, &r);
    let target = tol * b_norm;
    for _ in 0..max_iter {
        if rs_old.sqrt() <= target {
            return Ok(x);
        }
        let mut ap = apply(&p);
        if project {
            ap = project_zero_mean(&ap);
        }
        let alpha = rs_old / l2_inner(&p, &ap);
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        if project {
            r = project_zero_mean(&r);
        }
        let rs_new = l2_inner(&r, &r);
        let beta = rs_new / rs_old;
        for (pv, rv) in p.data.iter_mut().zip(&r.data) {
            *pv = rv + beta * *pv;
        }
        rs_old = rs_new;
    }
    if rs_old.sqrt() <= target {
        Ok(x)
    } else {
        Err(GridError::NoConvergence { iterations: max_iter, tol })
    }
}

/// H⁻¹ inner product on zero-mean fields:
/// `⟨w1,w2⟩ = ∫ ∇(-Δ)⁻¹w1 · ∇(-Δ)⁻¹w2`.
pub fn h_minus1_inner(w1: &ScalarField, w2: &ScalarField) -> Result<f64, GridError> {
    let v1 = inv_neg_laplacian(w1)?;
    let v2 = inv_neg_laplacian(w2)?;
    Ok(dirichlet_form(&v1, &v2))
}

/// Discrete dual norm `‖w‖_{(H¹)*}` via the Riesz solve `(I - Δ) v = w`.
pub fn h1_dual_norm(w: &ScalarField) -> Result<f64, GridError> {
    let v = cg_neumann(w, 1.0, CG_TOL, 10 * w.len().max(100), false)?;
    Ok(l2_inner(w, &v).max(0.0).sqrt())
}

// ---------------------------------------------------------------------------
// Exact cosine eigenbasis of the Neumann Laplacian (used as a preconditioner
// inside the incremental solver; the public inverse stays CG-based).
// ---------------------------------------------------------------------------

/// Orthonormal per-axis cosine bases diagonalizing [`neumann_laplacian`].
pub struct NeumannSpectral {
    grid: GridSpec,
    basis: Vec<Vec<f64>>,  // per axis: row-major N×N, basis[axis][k*N+i] = q_k(i)
    eigen: Vec<Vec<f64>>,  // per axis: λ_k = (2/h²)(1 - cos(πk/N))
}

impl NeumannSpectral {
    pub fn new(grid: &GridSpec) -> Self {
        let mut basis = Vec::new();
        let mut eigen = Vec::new();
        for axis in 0..grid.dim() {
            let n = grid.cells(axis);
            let h = grid.spacing(axis);
            let mut q = vec![0.0; n * n];
            let mut lam = vec![0.0; n];
            for k in 0..n {
                let norm = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
                for i in 0..n {
                    q[k * n + i] =
                        norm * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n as f64).cos();
                }
                lam[k] = 2.0 / (h * h) * (1.0 - (std::f64::consts::PI * k as f64 / n as f64).cos());
            }
            basis.push(q);
            eigen.push(lam);
        }
        NeumannSpectral { grid: *grid, basis, eigen }
    }

    /// Applies the per-axis transform: `forward` maps cell values to cosine
    /// coefficients, otherwise back.
    fn transform(&self, data: &mut [f64], forward: bool) {
        let grid = &self.grid;
        for axis in 0..grid.dim() {
            let n = grid.cells(axis);
            let q = &self.basis[axis];
            let mut line = vec![0.0; n];
            let mut out = vec![0.0; n];
            grid.for_each_line(axis, |base, stride, len| {
                for (i, l) in line.iter_mut().enumerate() {
                    *l = data[base + i * stride];
                    let _ = len;
                }
                for (k, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for i in 0..n {
                        // Q is orthonormal: forward uses rows, inverse columns.
                        let qv = if forward { q[k * n + i] } else { q[i * n + k] };
                        acc += qv * line[i];
                    }
                    *o = acc;
                }
                for (i, o) in out.iter().enumerate() {
                    data[base + i * stride] = *o;
                }
            });
        }
    }

    /// Applies `f ↦ Σ_k g(λ_k) f̂_k q_k` where λ_k is the Laplacian eigenvalue
    /// of the tensor cosine mode k.
    pub fn solve_modes(&self, f: &ScalarField, g: impl Fn(f64) -> f64) -> ScalarField {
        let grid = self.grid;
        let mut data = f.data.clone();
        self.transform(&mut data, true);
        let n = grid.cell_count();
        for idx in 0..n {
            let mut lam = 0.0;
            for axis in 0..grid.dim() {
                lam += self.eigen[axis][grid.axis_index(idx, axis)];
            }
            data[idx] *= g(lam);
        }
        self.transform(&mut data, false);
        ScalarField { grid, data }
    }

    /// Exact inverse Neumann Laplacian on zero-mean fields.
    pub fn inv_neg_laplacian(&self, f: &ScalarField) -> ScalarField {
        self.solve_modes(f, |lam| if lam > 0.0 { 1.0 / lam } else { 0.0 })
    }
}
