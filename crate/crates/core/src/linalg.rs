//! Small dense helpers on top of nalgebra shared by the numerical modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{FilterError, Result};

/// `(S + S^T) / 2`.
pub fn symmetrize(s: &DMatrix<f64>) -> DMatrix<f64> {
    (s + s.transpose()) * 0.5
}

pub fn frobenius(s: &DMatrix<f64>) -> f64 {
    s.norm()
}

pub fn min_eigenvalue(s: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(s)).eigenvalues.min()
}

pub fn is_symmetric(s: &DMatrix<f64>, tol: f64) -> bool {
    s.is_square() && (s - s.transpose()).amax() <= tol * (1.0 + s.amax())
}

/// Factor `L` with `L L^T = S` for a symmetric PSD matrix.
///
/// Cholesky when positive definite; otherwise an eigen-factor with the
/// negative round-off eigenvalues clamped to zero.
pub fn psd_factor(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = symmetrize(s);
    if let Some(ch) = s.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = SymmetricEigen::new(s.clone());
    let scale = eig.eigenvalues.amax().max(1.0);
    let min = eig.eigenvalues.min();
    if min < -1e-10 * scale {
        return Err(FilterError::NotPositiveSemiDefinite {
            step: 0,
            min_eigenvalue: min,
        });
    }
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

/// Symmetric square root of a symmetric PSD matrix.
pub fn sqrtm_psd(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(s));
    if eig.eigenvalues.min() < 0.0 {
        return Err(FilterError::NotPositiveSemiDefinite {
            step: 0,
            min_eigenvalue: eig.eigenvalues.min(),
        });
    }
    let sqrt = eig.eigenvalues.map(f64::sqrt);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt) * eig.eigenvectors.transpose())
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix together with an
/// orthonormal basis of its numerical kernel.
///
/// Eigenvalues below `1e-12 * max|eigenvalue|` count as zero.
pub fn symmetric_pinv(s: &DMatrix<f64>) -> (DMatrix<f64>, Vec<DVector<f64>>) {
    let eig = SymmetricEigen::new(symmetrize(s));
    let d = s.nrows();
    let threshold = 1e-12 * eig.eigenvalues.amax();
    let mut pinv = DMatrix::zeros(d, d);
    let mut kernel = Vec::new();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k).into_owned();
        if lambda.abs() > threshold && lambda != 0.0 {
            pinv += &v * v.transpose() / lambda;
        } else {
            kernel.push(v);
        }
    }
    (pinv, kernel)
}

/// Half-vectorization (upper triangle, row by row).
pub fn vech(s: &DMatrix<f64>) -> Vec<f64> {
    let d = s.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in i..d {
            out.push(s[(i, j)]);
        }
    }
    out
}

pub fn all_finite(s: &DMatrix<f64>) -> bool {
    s.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_factor_handles_singular_prior() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = psd_factor(&s).unwrap();
        assert!((&l * l.transpose() - &s).amax() < 1e-12);
    }

    #[test]
    fn pinv_reports_kernel() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
        let (p, ker) = symmetric_pinv(&s);
        assert!((p[(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(p[(1, 1)], 0.0);
        assert_eq!(ker.len(), 1);
        assert!((ker[0][1].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sqrtm_squares_back() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let r = sqrtm_psd(&s).unwrap();
        assert!((&r * &r - &s).amax() < 1e-12);
    }
}
