//! Small dense linear-algebra helpers shared by every module.
//!
//! Matrices here are tiny (n = 1..4, block weights up to 2n = 8), but the
//! spectral norm is evaluated inside O(cells^2)-per-cube double sums, so the
//! n = 1 and n = 2 cases get closed forms.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Spectral (largest singular value) norm.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    match n {
        0 => 0.0,
        1 => m[(0, 0)].abs(),
        2 => {
            // Largest eigenvalue of M^T M, stable closed form.
            let (a, b) = (m[(0, 0)], m[(0, 1)]);
            let (c, d) = (m[(1, 0)], m[(1, 1)]);
            let g11 = a * a + c * c;
            let g12 = a * b + c * d;
            let g22 = b * b + d * d;
            let tr = g11 + g22;
            let diff = g11 - g22;
            let disc = (diff * diff + 4.0 * g12 * g12).sqrt();
            (0.5 * (tr + disc)).max(0.0).sqrt()
        }
        _ => {
            let gram = m.transpose() * m;
            let eig = gram.symmetric_eigenvalues();
            eig.iter().fold(0.0f64, |acc, &l| acc.max(l)).max(0.0).sqrt()
        }
    }
}

/// Frobenius-norm distance, used by entrywise identity checks.
pub fn frob_dist(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigendecomposition-based power of a symmetric positive definite matrix.
///
/// Fails with a degeneracy error when an eigenvalue is `<= 0` (the caller
/// supplies the cell index for the error message).
pub fn spd_power(m: &DMatrix<f64>, exponent: f64, cell: Option<usize>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n == 1 {
        let v = m[(0, 0)];
        if v <= 0.0 {
            return Err(Error::degeneracy("matrix power (non-positive value)", cell));
        }
        return Ok(DMatrix::from_element(1, 1, v.powf(exponent)));
    }
    let eig = symmetrize(m).clone_owned().symmetric_eigen();
    let mut powered = DVector::zeros(n);
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l <= 0.0 {
            return Err(Error::degeneracy(
                format!("matrix power (eigenvalue {l:.3e} <= 0)"),
                cell,
            ));
        }
        powered[i] = l.powf(exponent);
    }
    let q = &eig.eigenvectors;
    let res = q * DMatrix::from_diagonal(&powered) * q.transpose();
    Ok(symmetrize(&res))
}

/// Symmetric square root of an SPD matrix.
pub fn spd_sqrt(m: &DMatrix<f64>, cell: Option<usize>) -> Result<DMatrix<f64>> {
    spd_power(m, 0.5, cell)
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn sym_eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 1 {
        return (m[(0, 0)], m[(0, 0)]);
    }
    let eig = symmetrize(m).symmetric_eigenvalues();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &l in eig.iter() {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    (lo, hi)
}

/// Inverse of an SPD matrix through its eigendecomposition.
pub fn spd_inverse(m: &DMatrix<f64>, cell: Option<usize>) -> Result<DMatrix<f64>> {
    spd_power(m, -1.0, cell)
}

/// Relative gap `|a - b| / max(|a|, |b|, floor)` for scalar comparisons.
pub fn rel_gap(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spectral_norm_matches_svd_small() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 0.5]);
        let svd = m.clone().svd(false, false);
        assert_relative_eq!(
            spectral_norm(&m),
            svd.singular_values[0],
            max_relative = 1e-12
        );
    }

    #[test]
    fn spectral_norm_scalar_is_abs() {
        let m = DMatrix::from_element(1, 1, -4.0);
        assert_eq!(spectral_norm(&m), 4.0);
    }

    #[test]
    fn spd_power_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        let r = spd_power(&m, 0.5, None).unwrap();
        assert_relative_eq!(r[(0, 0)], 2.0, max_relative = 1e-14);
        assert_relative_eq!(r[(1, 1)], 3.0, max_relative = 1e-14);
        assert!(r[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn spd_power_inverse_example() {
        // [[2,1],[1,2]]^{-1} = [[2/3,-1/3],[-1/3,2/3]]
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let inv = spd_power(&m, -1.0, None).unwrap();
        assert_relative_eq!(inv[(0, 0)], 2.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(inv[(0, 1)], -1.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(inv[(1, 1)], 2.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn spd_power_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(spd_power(&m, 0.5, Some(3)).is_err());
    }
}
