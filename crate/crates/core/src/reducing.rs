//! Reducing matrices for averaged weighted norms.
//!
//! For a weight `W`, a cell set `S`, an averaging exponent `r` and a power
//! `s` (always `+1/q` or `-1/q` in the callers), the norm
//!
//! ```text
//!   rho(e) = ( avg_{x in S} |W^s(x) e|^r )^{1/r}
//! ```
//!
//! is represented by an SPD matrix `A` with `c^-1 |Ae| <= rho(e) <= c |Ae|`
//! on the sampled directions, `c` the certified distortion. Two paths:
//!
//! - `r = 2` (and all of `n = 1`): the exact square root of the averaged
//!   Gram matrix, distortion 1 up to floating error;
//! - otherwise: minimum-volume enclosing ellipsoid of the sampled
//!   `rho`-unit-ball boundary via Khachiyan barycentric ascent with away
//!   steps, distortion certified from the samples.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{dual_weight, matrix_power, ExponentTriple, FieldKind, MatrixField};
use crate::grid::CubeSet;
use crate::linalg;

/// Khachiyan iteration cap.
pub const MVEE_MAX_ITERATIONS: usize = 100_000;
/// Relative volume tolerance of the MVEE solve.
pub const MVEE_VOLUME_TOL: f64 = 1e-7;
/// Direction counts per matrix size (quasi-uniform unit vectors).
pub fn direction_count(n: usize) -> usize {
    match n {
        0 | 1 => 1,
        2 => 64,
        3 => 256,
        _ => 128 * n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReduceMode {
    /// Exact square root of the averaged Gram matrix (`r = 2` or `n = 1`).
    Exact,
    /// MVEE of sampled boundary points.
    Mvee {
        directions: usize,
        iterations: usize,
        volume_tol: f64,
    },
}

/// An SPD matrix equivalent to an averaged norm, with its certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducingMatrix {
    matrix: DMatrix<f64>,
    mode: ReduceMode,
    distortion: f64,
}

impl ReducingMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn mode(&self) -> &ReduceMode {
        &self.mode
    }

    /// Certified factor `c >= 1` valid on the sampled directions.
    pub fn distortion(&self) -> f64 {
        self.distortion
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply_norm(&self, e: &DVector<f64>) -> f64 {
        (&self.matrix * e).norm()
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        linalg::spd_inverse(&self.matrix, None)
    }
}

/// The averaged norm `rho` itself, evaluated exactly as a finite sum.
pub struct AveragedNorm {
    mats: Vec<DMatrix<f64>>,
    r: f64,
}

impl AveragedNorm {
    /// `rho(e) = (avg_{x in S} |W^power(x) e|^r)^{1/r}`.
    pub fn new(w: &MatrixField, s: &CubeSet, r: f64, power: f64) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::parameter("averaged norm over an empty cell set"));
        }
        if !(r >= 1.0 && r.is_finite()) {
            return Err(Error::parameter(format!("averaging exponent r={r} out of range")));
        }
        let powered = matrix_power(w, power)?;
        let mats = s.members().iter().map(|&c| powered.cell(c).clone()).collect();
        Ok(AveragedNorm { mats, r })
    }

    pub fn size(&self) -> usize {
        self.mats[0].nrows()
    }

    pub fn eval(&self, e: &DVector<f64>) -> f64 {
        let count = self.mats.len() as f64;
        let sum: f64 = self.mats.iter().map(|m| (m * e).norm().powf(self.r)).sum();
        (sum / count).powf(1.0 / self.r)
    }

    /// Exact Gram matrix `avg W^{2 power}` used by the `r = 2` path.
    fn gram(&self) -> DMatrix<f64> {
        let n = self.size();
        let mut acc = DMatrix::zeros(n, n);
        for m in &self.mats {
            acc += m.transpose() * m;
        }
        acc / self.mats.len() as f64
    }
}

/// Deterministic quasi-uniform unit directions in dimension `n`.
pub fn sample_directions(n: usize) -> Vec<DVector<f64>> {
    let count = direction_count(n);
    match n {
        0 | 1 => vec![DVector::from_element(1, 1.0)],
        2 => (0..count)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                DVector::from_vec(vec![t.cos(), t.sin()])
            })
            .collect(),
        3 => {
            // Fibonacci sphere halves plus exact antipodes.
            let half = count / 2;
            let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
            let mut dirs = Vec::with_capacity(count);
            for k in 0..half {
                let z = 1.0 - (2.0 * k as f64 + 1.0) / half as f64;
                let rad = (1.0 - z * z).max(0.0).sqrt();
                let phi = golden * k as f64;
                let v = DVector::from_vec(vec![rad * phi.cos(), rad * phi.sin(), z]);
                dirs.push(-&v);
                dirs.push(v);
            }
            dirs
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x0d17ec7);
            let half = count / 2;
            let mut dirs = Vec::with_capacity(2 * half);
            for _ in 0..half {
                let mut v = DVector::from_fn(n, |_, _| {
                    let u: f64 = rng.random::<f64>();
                    let t: f64 = rng.random::<f64>();
                    (-2.0 * u.max(1e-300).ln()).sqrt() * (2.0 * std::f64::consts::PI * t).cos()
                });
                let norm = v.norm();
                if norm > 0.0 {
                    v /= norm;
                }
                dirs.push(-&v);
                dirs.push(v);
            }
            dirs
        }
    }
}

/// Inverts the symmetric `n x n` matrix `m` (flat row-major) into `out`.
fn invert_flat(n: usize, m: &[f64], out: &mut [f64]) -> bool {
    match n {
        1 => {
            if m[0] == 0.0 {
                return false;
            }
            out[0] = 1.0 / m[0];
            true
        }
        2 => {
            let det = m[0] * m[3] - m[1] * m[2];
            if det == 0.0 || !det.is_finite() {
                return false;
            }
            out[0] = m[3] / det;
            out[1] = -m[1] / det;
            out[2] = -m[2] / det;
            out[3] = m[0] / det;
            true
        }
        3 => {
            let c00 = m[4] * m[8] - m[5] * m[7];
            let c01 = m[5] * m[6] - m[3] * m[8];
            let c02 = m[3] * m[7] - m[4] * m[6];
            let det = m[0] * c00 + m[1] * c01 + m[2] * c02;
            if det == 0.0 || !det.is_finite() {
                return false;
            }
            out[0] = c00 / det;
            out[1] = (m[2] * m[7] - m[1] * m[8]) / det;
            out[2] = (m[1] * m[5] - m[2] * m[4]) / det;
            out[3] = c01 / det;
            out[4] = (m[0] * m[8] - m[2] * m[6]) / det;
            out[5] = (m[2] * m[3] - m[0] * m[5]) / det;
            out[6] = c02 / det;
            out[7] = (m[1] * m[6] - m[0] * m[7]) / det;
            out[8] = (m[0] * m[4] - m[1] * m[3]) / det;
            true
        }
        _ => {
            let dm = DMatrix::from_row_slice(n, n, m);
            match dm.try_inverse() {
                Some(inv) => {
                    for i in 0..n {
                        for j in 0..n {
                            out[i * n + j] = inv[(i, j)];
                        }
                    }
                    true
                }
                None => false,
            }
        }
    }
}

/// Centered MVEE of a symmetric point cloud: the shape matrix `M` of the
/// minimal-volume ellipsoid `{x : x^T M x <= 1}` containing the points,
/// to relative volume tolerance [`MVEE_VOLUME_TOL`].
///
/// Two phases of Khachiyan-style barycentric ascent on `logdet` of the
/// weighted moment matrix: rank-one steps with away steps (Sherman-Morrison
/// updates, state rebuilt periodically to wash out drift) for the bulk,
/// then Newton steps on the active support for the tolerance endgame, where
/// first-order steps crawl on near-ellipsoidal clouds.
fn mvee_centered(points: &[DVector<f64>], n: usize) -> Result<(DMatrix<f64>, usize)> {
    let count = points.len();
    let nf = n as f64;
    // kappa_max <= n (1 + eps) certifies relative volume (1+tol)-optimality
    let eps = 2.0 * MVEE_VOLUME_TOL / nf;
    let nn = n * n;
    let flat: Vec<f64> = points.iter().flat_map(|p| p.iter().copied()).collect();
    let mut u = vec![1.0 / count as f64; count];
    let mut xinv = vec![0.0f64; nn];
    let mut kappa = vec![0.0f64; count];
    let mut work = vec![0.0f64; n];
    const REBUILD_EVERY: usize = 512;
    const ASCENT_BUDGET: usize = 5_000;
    const ASCENT_TARGET: f64 = 1e-4;

    let rebuild = |u: &[f64], xinv: &mut [f64], kappa: &mut [f64]| -> bool {
        let total: f64 = u.iter().sum();
        let mut x = vec![0.0f64; nn];
        for (k, w) in u.iter().enumerate() {
            if *w > 0.0 {
                let p = &flat[k * n..(k + 1) * n];
                let w = *w / total;
                for i in 0..n {
                    for j in 0..n {
                        x[i * n + j] += w * p[i] * p[j];
                    }
                }
            }
        }
        if !invert_flat(n, &x, xinv) {
            return false;
        }
        for k in 0..count {
            let p = &flat[k * n..(k + 1) * n];
            let mut acc = 0.0;
            for i in 0..n {
                let mut row = 0.0;
                for j in 0..n {
                    row += xinv[i * n + j] * p[j];
                }
                acc += p[i] * row;
            }
            kappa[k] = acc;
        }
        true
    };
    let singular = |iterations: usize, residual: f64| Error::Convergence {
        what: "mvee (singular moment matrix)".into(),
        iterations,
        residual,
    };

    if !rebuild(&u, &mut xinv, &mut kappa) {
        return Err(singular(0, f64::NAN));
    }

    let mut iterations = 0usize;
    let mut residual = f64::NAN;

    // phase 1: rank-one ascent with away steps
    loop {
        if iterations >= ASCENT_BUDGET {
            break;
        }
        if iterations > 0 && iterations % REBUILD_EVERY == 0 && !rebuild(&u, &mut xinv, &mut kappa)
        {
            return Err(singular(iterations, residual));
        }
        let mut jmax = 0;
        let mut kmax = f64::NEG_INFINITY;
        let mut imin = usize::MAX;
        let mut kmin = f64::INFINITY;
        for k in 0..count {
            let val = kappa[k];
            if val > kmax {
                kmax = val;
                jmax = k;
            }
            if u[k] > 1e-14 && val < kmin {
                kmin = val;
                imin = k;
            }
        }
        residual = (kmax - nf) / nf;
        if kmax <= nf * (1.0 + eps) {
            let shape = DMatrix::from_fn(n, n, |i, j| xinv[i * n + j] / nf);
            return Ok((linalg::symmetrize(&shape), iterations));
        }
        if residual <= ASCENT_TARGET {
            break;
        }
        iterations += 1;

        let add_gain = kmax - nf;
        let away_gain = if imin != usize::MAX { nf - kmin } else { f64::NEG_INFINITY };
        let (pivot, t, toward) = if away_gain > add_gain && imin != usize::MAX {
            let ki = kappa[imin];
            let tmax = u[imin] / (1.0 - u[imin]);
            let t = if ki > 1.0 + 1e-14 {
                ((nf - ki) / (nf * (ki - 1.0))).min(tmax)
            } else {
                tmax
            };
            (imin, t.max(0.0), false)
        } else {
            let step = (kmax - nf) / (nf * (kmax - 1.0));
            (jmax, step, true)
        };
        if t <= 0.0 {
            break;
        }

        let p = &flat[pivot * n..(pivot + 1) * n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += xinv[i * n + j] * p[j];
            }
            work[i] = acc;
        }
        let kp = kappa[pivot];
        let (scale, tt, denom) = if toward {
            ((1.0 - t).recip(), t, (1.0 - t) + t * kp)
        } else {
            ((1.0 + t).recip(), -t, (1.0 + t) - t * kp)
        };
        if denom <= 0.0 {
            if !rebuild(&u, &mut xinv, &mut kappa) {
                return Err(singular(iterations, residual));
            }
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                xinv[i * n + j] = scale * (xinv[i * n + j] - tt * work[i] * work[j] / denom);
            }
        }
        for k in 0..count {
            let q = &flat[k * n..(k + 1) * n];
            let mut m = 0.0;
            for i in 0..n {
                m += q[i] * work[i];
            }
            kappa[k] = scale * (kappa[k] - tt * m * m / denom);
        }
        if toward {
            for v in u.iter_mut() {
                *v *= 1.0 - t;
            }
            u[pivot] += t;
        } else {
            for v in u.iter_mut() {
                *v *= 1.0 + t;
            }
            u[pivot] -= t;
            u[pivot] = u[pivot].max(0.0);
        }
    }

    // phase 2: Newton on the active support (equality-constrained ascent of
    // logdet with all violators joined per round)
    let build_dense = |u: &[f64]| -> DMatrix<f64> {
        let mut x = DMatrix::zeros(n, n);
        for (k, p) in points.iter().enumerate() {
            if u[k] > 0.0 {
                x += p * p.transpose() * u[k];
            }
        }
        x
    };
    let newton_rounds = (MVEE_MAX_ITERATIONS - iterations.min(MVEE_MAX_ITERATIONS)).min(400);
    for _round in 0..newton_rounds {
        iterations += 1;
        let x = build_dense(&u);
        let xinv_d = match x.clone().try_inverse() {
            Some(m) => m,
            None => return Err(singular(iterations, residual)),
        };
        for (k, p) in points.iter().enumerate() {
            kappa[k] = (p.transpose() * &xinv_d * p)[(0, 0)];
        }
        let kmax = kappa.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        residual = (kmax - nf) / nf;
        if kmax <= nf * (1.0 + eps) {
            return Ok((linalg::symmetrize(&(xinv_d / nf)), iterations));
        }
        let umax = u.iter().cloned().fold(0.0f64, f64::max);
        let mut support: Vec<usize> = (0..count).filter(|&k| u[k] > 1e-9 * umax).collect();
        for k in 0..count {
            if kappa[k] > nf * (1.0 + 0.5 * eps) && !support.contains(&k) {
                support.push(k);
            }
        }
        support.sort_unstable();
        let m = support.len();
        let mut hess = DMatrix::zeros(m, m);
        let mut grad = DVector::zeros(m);
        for (a, &k) in support.iter().enumerate() {
            grad[a] = kappa[k];
            for (bb, &l) in support.iter().enumerate() {
                let cross = (points[k].transpose() * &xinv_d * &points[l])[(0, 0)];
                hess[(a, bb)] = cross * cross;
            }
        }
        // the Hessian has rank at most n(n+1)/2 (it is the Hadamard square
        // of a rank-n Gram matrix); null directions leave the moment matrix
        // unchanged, so the ascent step is the pseudoinverse step in the
        // row space with the sum constraint restored through the null space
        let svd = hess.clone().svd(true, true);
        let sigma_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
        let hpinv = match svd.pseudo_inverse(1e-12 * sigma_max.max(1e-300)) {
            Ok(m) => m,
            Err(_) => return Err(singular(iterations, residual)),
        };
        let ones = DVector::from_element(m, 1.0);
        let r_step = &hpinv * &grad;
        let null_ones = &ones - &hess * (&hpinv * &ones);
        let mut du = r_step.clone();
        if null_ones.norm() > 1e-8 * (m as f64).sqrt() {
            let z_scale = -(ones.dot(&r_step)) / ones.dot(&null_ones);
            du += null_ones * z_scale;
        } else {
            // constraint direction lies in the row space: classical KKT
            let denom = (ones.transpose() * &hpinv * &ones)[(0, 0)];
            if denom.abs() < 1e-300 {
                return Err(singular(iterations, residual));
            }
            let nu = (ones.transpose() * &hpinv * &grad)[(0, 0)] / denom;
            du = &hpinv * (&grad - &ones * nu);
        }
        let ldet_old = x.determinant().ln();
        let mut moved = false;
        let mut t = 1.0f64;
        for _ in 0..40 {
            let mut u_new = u.clone();
            for (a, &k) in support.iter().enumerate() {
                u_new[k] = (u_new[k] + t * du[a]).max(0.0);
            }
            let total: f64 = u_new.iter().sum();
            for v in u_new.iter_mut() {
                *v /= total;
            }
            let ldet_new = build_dense(&u_new).determinant().ln();
            if ldet_new.is_finite() && ldet_new > ldet_old + 1e-300 {
                u = u_new;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            // Newton direction exhausted: take one plain ascent step toward
            // the worst violator to change the support
            let jmax = (0..count)
                .max_by(|&a, &b| kappa[a].partial_cmp(&kappa[b]).unwrap())
                .unwrap();
            let kmaxv = kappa[jmax];
            let step = (kmaxv - nf) / (nf * (kmaxv - 1.0));
            if step > 0.0 {
                for v in u.iter_mut() {
                    *v *= 1.0 - step;
                }
                u[jmax] += step;
            }
        }
    }
    Err(Error::Convergence {
        what: "mvee".into(),
        iterations,
        residual,
    })
}

/// Builds the reducing matrix of `rho(e) = (avg_S |W^{sign/q} e|^r)^{1/r}`.
///
/// `sign = Plus` gives the reducing matrix (use `r = q`), `sign = Minus` the
/// dual reducing matrix (use `r = p'`).
pub fn reduce(
    w: &MatrixField,
    s: &CubeSet,
    r: f64,
    sign: Sign,
    e: &ExponentTriple,
) -> Result<ReducingMatrix> {
    let power = match sign {
        Sign::Plus => 1.0 / e.q,
        Sign::Minus => -1.0 / e.q,
    };
    reduce_with_power(w, s, r, power)
}

/// General form: `rho(e) = (avg_S |W^power e|^r)^{1/r}`.
pub fn reduce_with_power(
    w: &MatrixField,
    s: &CubeSet,
    r: f64,
    power: f64,
) -> Result<ReducingMatrix> {
    if w.kind() != FieldKind::Weight {
        return Err(Error::parameter("reducing matrices require a weight field"));
    }
    let rho = AveragedNorm::new(w, s, r, power)?;
    let n = rho.size();

    if n == 1 {
        let val = rho.eval(&DVector::from_element(1, 1.0));
        return Ok(ReducingMatrix {
            matrix: DMatrix::from_element(1, 1, val),
            mode: ReduceMode::Exact,
            distortion: 1.0,
        });
    }
    // single cell: rho is exactly the ellipsoidal norm |W^power e|
    if s.len() == 1 {
        let powered = matrix_power(w, power)?;
        return Ok(ReducingMatrix {
            matrix: powered.cell(s.members()[0]).clone(),
            mode: ReduceMode::Exact,
            distortion: 1.0,
        });
    }
    if (r - 2.0).abs() < 1e-14 {
        let a = linalg::spd_sqrt(&rho.gram(), None)?;
        return Ok(ReducingMatrix {
            matrix: a,
            mode: ReduceMode::Exact,
            distortion: 1.0,
        });
    }

    let dirs = sample_directions(n);
    let mut points = Vec::with_capacity(dirs.len());
    for dir in &dirs {
        let val = rho.eval(dir);
        if !(val > 0.0 && val.is_finite()) {
            return Err(Error::degeneracy(
                format!("averaged norm value {val:.3e} on a sample direction"),
                None,
            ));
        }
        points.push(dir / val);
    }
    // precondition by the exact r = 2 ellipsoid of the same average: the
    // MVEE is affine-invariant and the solver converges much faster on a
    // near-spherical cloud
    let precond = linalg::spd_sqrt(&rho.gram(), None)?;
    let z_points: Vec<DVector<f64>> = points.iter().map(|x| &precond * x).collect();
    let (shape_z, iterations) = mvee_centered(&z_points, n)?;
    let shape = linalg::symmetrize(&(&precond * shape_z * &precond));
    let a0 = linalg::spd_sqrt(&shape, None)?;

    // Balance so the sampled two-sided ratios are symmetric around 1.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (dir, point) in dirs.iter().zip(&points) {
        let ratio = rho.eval(dir) / (&a0 * dir).norm();
        let _ = point;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    let scale = (lo * hi).sqrt();
    let matrix = &a0 * scale;
    let distortion = (hi / lo).sqrt() * (1.0 + 1e-9);
    Ok(ReducingMatrix {
        matrix,
        mode: ReduceMode::Mvee {
            directions: dirs.len(),
            iterations,
            volume_tol: MVEE_VOLUME_TOL,
        },
        distortion,
    })
}

/// Checks the sandwich `c^-1 |Ae| <= rho(e) <= c |Ae|` on the sampled
/// directions, re-evaluating `rho` exactly. Returns the worst slack factor
/// (`<= 1` means the certificate holds).
pub fn sandwich_slack(
    rm: &ReducingMatrix,
    w: &MatrixField,
    s: &CubeSet,
    r: f64,
    power: f64,
) -> Result<f64> {
    let rho = AveragedNorm::new(w, s, r, power)?;
    let mut worst: f64 = 0.0;
    for dir in sample_directions(rm.size()) {
        let exact = rho.eval(&dir);
        let approx = rm.apply_norm(&dir);
        let ratio = exact / approx;
        worst = worst.max(ratio / rm.distortion()).max(1.0 / (ratio * rm.distortion()));
    }
    Ok(worst)
}

/// `|| M^-1 (M')^-1 ||`, the matrix Holder defect of a reducing pair.
///
/// Contract: `<= 1` plus the combined distortion slack; the defect is
/// returned as-is, never clipped.
pub fn matrix_holder_defect(m: &ReducingMatrix, mp: &ReducingMatrix) -> Result<f64> {
    if m.size() != mp.size() {
        return Err(Error::ShapeMismatch("matrix Holder defect".into()));
    }
    let minv = m.inverse()?;
    let mpinv = mp.inverse()?;
    Ok(linalg::spectral_norm(&(minv * mpinv)))
}

/// Maximal sampled log-ratio between the two routes to the dual reducing
/// matrix: `V_S(W^{-p'/q}, p')` versus `V'_S(W, p, q)`.
///
/// Bounded by the sum of the two distortion logs.
pub fn duality_gap(w: &MatrixField, s: &CubeSet, e: &ExponentTriple) -> Result<f64> {
    let pc = e.p_conj();
    let wd = dual_weight(w, e)?;
    let via_dual = reduce_with_power(&wd, s, pc, 1.0 / pc)?;
    let direct = reduce(w, s, pc, Sign::Minus, e)?;
    let mut gap: f64 = 0.0;
    for dir in sample_directions(w.size()) {
        let a = via_dual.apply_norm(&dir);
        let b = direct.apply_norm(&dir);
        gap = gap.max((a / b).ln().abs());
    }
    Ok(gap)
}
