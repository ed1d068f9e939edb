//! Piecewise-constant matrix weights, symbols and vector fields on the
//! finest cells, plus deterministic random instance generators.
//!
//! Real symmetric model: weights are symmetric positive definite per cell,
//! symbols are symmetric with unconstrained sign. Piecewise-constant data at
//! level `L` turns every integral downstream into an exact finite sum; the
//! refinement level is the accuracy knob.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::linalg;

/// Eigenvalue floor applied by the generators (not by file loaders).
pub const GENERATOR_EIGEN_FLOOR: f64 = 1e-10;

const TRIPLE_TOL: f64 = 1e-12;

/// Lebesgue exponents `(p, q)`, fractional order `alpha` and dimension `d`
/// tied by `alpha/d + 1/q = 1/p`, with the conjugates precomputed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentTriple {
    pub p: f64,
    pub q: f64,
    pub alpha: f64,
    pub d: u32,
}

impl ExponentTriple {
    pub fn new(p: f64, q: f64, alpha: f64, d: u32) -> Result<Self> {
        if !(1..=2).contains(&d) {
            return Err(Error::parameter("dimension must be 1 or 2"));
        }
        if !(p > 1.0 && q >= p && q.is_finite()) {
            return Err(Error::parameter(format!(
                "need 1 < p <= q < infinity, got p={p}, q={q}"
            )));
        }
        if !(0.0..d as f64).contains(&alpha) {
            return Err(Error::parameter(format!(
                "need 0 <= alpha < d, got alpha={alpha}"
            )));
        }
        let defect = (alpha / d as f64 + 1.0 / q - 1.0 / p).abs();
        if defect > TRIPLE_TOL {
            return Err(Error::parameter(format!(
                "exponent constraint alpha/d + 1/q = 1/p violated by {defect:.3e}"
            )));
        }
        if alpha == 0.0 && (p - q).abs() > TRIPLE_TOL {
            return Err(Error::parameter("alpha = 0 requires p = q (A_p limiting case)"));
        }
        Ok(ExponentTriple { p, q, alpha, d })
    }

    /// Builds the triple from `(alpha, q, d)`, solving for `p`.
    pub fn from_alpha_q(alpha: f64, q: f64, d: u32) -> Result<Self> {
        let p = 1.0 / (alpha / d as f64 + 1.0 / q);
        Self::new(p, q, alpha, d)
    }

    /// Builds the triple from `(p, q, d)`, solving for `alpha`.
    pub fn from_p_q(p: f64, q: f64, d: u32) -> Result<Self> {
        let alpha = d as f64 * (1.0 / p - 1.0 / q);
        Self::new(p, q, alpha.max(0.0), d)
    }

    /// Conjugate exponent `p' = p/(p-1)`.
    pub fn p_conj(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    /// Conjugate exponent `q' = q/(q-1)`.
    pub fn q_conj(&self) -> f64 {
        self.q / (self.q - 1.0)
    }

    /// The dual triple `(q', p')` with the same `alpha` and `d`.
    pub fn dual(&self) -> ExponentTriple {
        ExponentTriple {
            p: self.q_conj(),
            q: self.p_conj(),
            alpha: self.alpha,
            d: self.d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    /// Symmetric positive definite per cell (weights U, V, W).
    Weight,
    /// Symmetric, unconstrained sign (symbols B, b).
    Symbol,
}

/// One `n x n` real symmetric matrix per finest cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField {
    grid: GridSpec,
    n: usize,
    kind: FieldKind,
    values: Vec<DMatrix<f64>>,
    /// Eigenvalue range over all cells, recorded for weights.
    eigen_range: (f64, f64),
}

impl MatrixField {
    pub fn from_cells(
        grid: GridSpec,
        n: usize,
        kind: FieldKind,
        values: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} cell matrices, got {}",
                grid.cell_count(),
                values.len()
            )));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (i, m) in values.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::ShapeMismatch(format!(
                    "cell {i}: expected {n}x{n}, got {}x{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if !m.iter().all(|v| v.is_finite()) {
                return Err(Error::degeneracy("non-finite entry", Some(i)));
            }
            let asym = (m - m.transpose()).norm();
            if asym > 1e-12 * (1.0 + m.norm()) {
                return Err(Error::degeneracy("non-symmetric cell matrix", Some(i)));
            }
            let (cell_lo, cell_hi) = linalg::sym_eigen_range(m);
            lo = lo.min(cell_lo);
            hi = hi.max(cell_hi);
            if kind == FieldKind::Weight && cell_lo <= 0.0 {
                return Err(Error::degeneracy(
                    format!("weight eigenvalue {cell_lo:.3e} <= 0"),
                    Some(i),
                ));
            }
        }
        Ok(MatrixField {
            grid,
            n,
            kind,
            values,
            eigen_range: (lo, hi),
        })
    }

    /// Constant field with the same matrix on every cell.
    pub fn constant(grid: GridSpec, kind: FieldKind, m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        Self::from_cells(grid, n, kind, vec![m; grid.cell_count()])
    }

    pub fn identity(grid: GridSpec, n: usize) -> Self {
        Self::constant(grid, FieldKind::Weight, DMatrix::identity(n, n)).expect("identity is SPD")
    }

    /// Scalar (n = 1) field from per-cell values.
    pub fn scalar_from_cells(grid: GridSpec, kind: FieldKind, values: &[f64]) -> Result<Self> {
        let cells = values
            .iter()
            .map(|&v| DMatrix::from_element(1, 1, v))
            .collect();
        Self::from_cells(grid, 1, kind, cells)
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn cell(&self, i: usize) -> &DMatrix<f64> {
        &self.values[i]
    }

    pub fn cells(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    pub fn eigen_range(&self) -> (f64, f64) {
        self.eigen_range
    }

    /// Plain average of the cell matrices over `cells`.
    pub fn average_over(&self, cells: &[usize]) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.n, self.n);
        for &c in cells {
            acc += &self.values[c];
        }
        acc / cells.len() as f64
    }

    /// Per-cell scaling `c * W` (exact homogeneity helper).
    pub fn scale(&self, c: f64) -> Result<MatrixField> {
        let values = self.values.iter().map(|m| m * c).collect();
        Self::from_cells(self.grid, self.n, self.kind, values)
    }

    /// Per-cell sum `self + other` (symbols).
    pub fn add(&self, other: &MatrixField) -> Result<MatrixField> {
        if self.grid != other.grid || self.n != other.n {
            return Err(Error::ShapeMismatch("field addition".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Self::from_cells(self.grid, self.n, FieldKind::Symbol, values)
    }
}

/// Per-cell symmetric eigendecomposition with eigenvalues raised to `exponent`.
pub fn matrix_power(w: &MatrixField, exponent: f64) -> Result<MatrixField> {
    if w.kind() != FieldKind::Weight {
        return Err(Error::parameter("matrix_power requires a weight field"));
    }
    let values = w
        .values
        .iter()
        .enumerate()
        .map(|(i, m)| linalg::spd_power(m, exponent, Some(i)))
        .collect::<Result<Vec<_>>>()?;
    MatrixField::from_cells(w.grid, w.n, FieldKind::Weight, values)
}

/// The dual weight `W^{-p'/q}` for the exponent triple `e`.
pub fn dual_weight(w: &MatrixField, e: &ExponentTriple) -> Result<MatrixField> {
    matrix_power(w, -e.p_conj() / e.q)
}

/// One n-vector per finest cell.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: GridSpec,
    n: usize,
    values: Vec<DVector<f64>>,
}

impl VectorField {
    pub fn from_cells(grid: GridSpec, n: usize, values: Vec<DVector<f64>>) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} cell vectors, got {}",
                grid.cell_count(),
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if v.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "cell {i}: expected vector of length {n}"
                )));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::degeneracy("non-finite vector entry", Some(i)));
            }
        }
        Ok(VectorField { grid, n, values })
    }

    pub fn constant(grid: GridSpec, v: DVector<f64>) -> Self {
        let n = v.len();
        VectorField {
            grid,
            n,
            values: vec![v; grid.cell_count()],
        }
    }

    pub fn zero(grid: GridSpec, n: usize) -> Self {
        Self::constant(grid, DVector::zeros(n))
    }

    /// Scalar field from per-cell values.
    pub fn scalar(grid: GridSpec, values: &[f64]) -> Result<Self> {
        Self::from_cells(
            grid,
            1,
            values.iter().map(|&v| DVector::from_element(1, v)).collect(),
        )
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn cell(&self, i: usize) -> &DVector<f64> {
        &self.values[i]
    }

    pub fn cells(&self) -> &[DVector<f64>] {
        &self.values
    }

    /// Euclidean magnitude per cell.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }
}

/// Families of generated test weights.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightFamily {
    /// One random SPD matrix repeated on every cell.
    Constant,
    /// `n = 1`: cell averages of `|x - x0|^beta`.
    ScalarPower { beta: f64, center: [f64; 2] },
    /// `R(x) diag(|x-x0|^{beta_i}) R(x)^T`, rotation angle Lipschitz in `x`.
    RotatingDiagonal {
        betas: Vec<f64>,
        center: [f64; 2],
        omega: f64,
    },
    /// Log-eigenvalues uniform in `[-log_bound, log_bound]`, random frames.
    LogBoundedRandom { log_bound: f64 },
}

/// Families of generated test symbols.
#[derive(Debug, Clone, PartialEq)]
pub enum SymbolFamily {
    /// One random symmetric matrix repeated on every cell.
    Constant,
    /// Independent symmetric matrices with entries uniform in `[-scale, scale]`.
    RandomSymmetric { scale: f64 },
    /// `n = 1`: two-level step along the first axis.
    ScalarStep { low: f64, high: f64 },
}

/// Power-range guard for generated power weights: `|beta| >= d * min(q/p', 1)`
/// makes A_{p,q} membership doubtful. Membership is decided by the computed
/// characteristic, so this only produces a warning string for reports.
pub fn power_guard(betas: &[f64], e: &ExponentTriple) -> Option<String> {
    let cap = e.d as f64 * (e.q / e.p_conj()).min(1.0);
    let bad: Vec<&f64> = betas.iter().filter(|b| b.abs() >= cap).collect();
    if bad.is_empty() {
        None
    } else {
        Some(format!(
            "power exponents {bad:?} at or beyond the guard {cap:.4}; characteristic may be huge"
        ))
    }
}

// 8-point Gauss-Legendre rule on [-1, 1].
const GAUSS_X: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GAUSS_W: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Averages `f` over cell `index` with tensor Gauss quadrature.
fn cell_average<F: Fn([f64; 2]) -> DMatrix<f64>>(
    grid: &GridSpec,
    index: usize,
    n: usize,
    f: F,
) -> DMatrix<f64> {
    let h = 1.0 / grid.side() as f64;
    let c = grid.cell_coords(index);
    let a = [c[0] as f64 * h, c[1] as f64 * h];
    let mut acc = DMatrix::zeros(n, n);
    match grid.dim() {
        1 => {
            for k in 0..GAUSS_X.len() {
                let x = a[0] + 0.5 * h * (GAUSS_X[k] + 1.0);
                acc += f([x, 0.0]) * (0.5 * GAUSS_W[k]);
            }
        }
        _ => {
            for kx in 0..GAUSS_X.len() {
                for ky in 0..GAUSS_X.len() {
                    let x = a[0] + 0.5 * h * (GAUSS_X[kx] + 1.0);
                    let y = a[1] + 0.5 * h * (GAUSS_X[ky] + 1.0);
                    acc += f([x, y]) * (0.25 * GAUSS_W[kx] * GAUSS_W[ky]);
                }
            }
        }
    }
    acc
}

fn random_rotation(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    if n == 1 {
        return DMatrix::identity(1, 1);
    }
    // QR of a Gaussian matrix; sign-fix the diagonal for a proper frame.
    let g = DMatrix::from_fn(n, n, |_, _| {
        let u: f64 = rng.random::<f64>();
        let v: f64 = rng.random::<f64>();
        (-2.0 * u.max(1e-300).ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    });
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

fn rotation_matrix(n: usize, theta: f64) -> DMatrix<f64> {
    let mut r = DMatrix::identity(n, n);
    if n >= 2 {
        r[(0, 0)] = theta.cos();
        r[(0, 1)] = -theta.sin();
        r[(1, 0)] = theta.sin();
        r[(1, 1)] = theta.cos();
    }
    if n >= 3 {
        // second Givens plane, slower angle
        let phi = 0.7 * theta;
        let g = {
            let mut g = DMatrix::identity(n, n);
            g[(1, 1)] = phi.cos();
            g[(1, 2)] = -phi.sin();
            g[(2, 1)] = phi.sin();
            g[(2, 2)] = phi.cos();
            g
        };
        r *= g;
    }
    r
}

/// Deterministic-in-seed weight generator. All emitted fields are SPD on
/// every cell with eigenvalues floored at [`GENERATOR_EIGEN_FLOOR`].
pub fn generate_weight(
    seed: u64,
    grid: &GridSpec,
    n: usize,
    family: &WeightFamily,
) -> Result<MatrixField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let floor = GENERATOR_EIGEN_FLOOR;
    let cells = match family {
        WeightFamily::Constant => {
            let q = random_rotation(&mut rng, n);
            let eig = DVector::from_fn(n, |_, _| {
                let t: f64 = rng.random_range(-1.0..1.0);
                t.exp().max(floor)
            });
            let m = &q * DMatrix::from_diagonal(&eig) * q.transpose();
            vec![linalg::symmetrize(&m); grid.cell_count()]
        }
        WeightFamily::ScalarPower { beta, center } => {
            if n != 1 {
                return Err(Error::parameter("scalar-power family requires n = 1"));
            }
            (0..grid.cell_count())
                .map(|i| {
                    let avg = cell_average(grid, i, 1, |x| {
                        let dx = x[0] - center[0];
                        let dy = if grid.dim() == 2 { x[1] - center[1] } else { 0.0 };
                        let r = (dx * dx + dy * dy).sqrt().max(1e-30);
                        DMatrix::from_element(1, 1, r.powf(*beta))
                    });
                    avg.map(|v| v.max(floor))
                })
                .collect()
        }
        WeightFamily::RotatingDiagonal {
            betas,
            center,
            omega,
        } => {
            if betas.len() != n {
                return Err(Error::parameter("rotating-diagonal needs one beta per row"));
            }
            let betas = betas.clone();
            (0..grid.cell_count())
                .map(|i| {
                    let avg = cell_average(grid, i, n, |x| {
                        let dx = x[0] - center[0];
                        let dy = if grid.dim() == 2 { x[1] - center[1] } else { 0.0 };
                        let r = (dx * dx + dy * dy).sqrt().max(1e-30);
                        let theta = omega * (x[0] + x[1]);
                        let rot = rotation_matrix(n, theta);
                        let diag =
                            DMatrix::from_diagonal(&DVector::from_fn(n, |k, _| {
                                r.powf(betas[k]).max(floor)
                            }));
                        &rot * diag * rot.transpose()
                    });
                    linalg::symmetrize(&avg)
                })
                .collect()
        }
        WeightFamily::LogBoundedRandom { log_bound } => (0..grid.cell_count())
            .map(|_| {
                let q = random_rotation(&mut rng, n);
                let eig = DVector::from_fn(n, |_, _| {
                    let t: f64 = rng.random_range(-log_bound..=*log_bound);
                    t.exp().max(floor)
                });
                linalg::symmetrize(&(&q * DMatrix::from_diagonal(&eig) * q.transpose()))
            })
            .collect(),
    };
    MatrixField::from_cells(*grid, n, FieldKind::Weight, cells)
}

/// Deterministic-in-seed symbol generator.
pub fn generate_symbol(
    seed: u64,
    grid: &GridSpec,
    n: usize,
    family: &SymbolFamily,
) -> Result<MatrixField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ca1ab1e);
    let cells: Vec<DMatrix<f64>> = match family {
        SymbolFamily::Constant => {
            let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            vec![linalg::symmetrize(&m); grid.cell_count()]
        }
        SymbolFamily::RandomSymmetric { scale } => (0..grid.cell_count())
            .map(|_| {
                let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-*scale..*scale));
                linalg::symmetrize(&m)
            })
            .collect(),
        SymbolFamily::ScalarStep { low, high } => {
            if n != 1 {
                return Err(Error::parameter("scalar-step family requires n = 1"));
            }
            (0..grid.cell_count())
                .map(|i| {
                    let x = grid.cell_center(i)[0];
                    DMatrix::from_element(1, 1, if x < 0.5 { *low } else { *high })
                })
                .collect()
        }
    };
    MatrixField::from_cells(*grid, n, FieldKind::Symbol, cells)
}

/// Deterministic-in-seed vector field with Gaussian entries.
pub fn generate_vector(seed: u64, grid: &GridSpec, n: usize, scale: f64) -> VectorField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf1e1d);
    let values = (0..grid.cell_count())
        .map(|_| {
            DVector::from_fn(n, |_, _| {
                let u: f64 = rng.random::<f64>();
                let v: f64 = rng.random::<f64>();
                scale * (-2.0 * u.max(1e-300).ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
            })
        })
        .collect();
    VectorField::from_cells(*grid, n, values).expect("generated vectors are finite")
}
