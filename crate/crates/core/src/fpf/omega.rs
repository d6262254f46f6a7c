//! Optimal skew-symmetric gauge term.
//!
//! Solves `Omega P + P Omega = (A^T - A) + (Sigma C^T C - C^T C Sigma)/2
//! + (sigma_B sigma_B^T Sigma - Sigma sigma_B sigma_B^T)/2` with
//! `P = Sigma^{-1}` over the `d(d-1)/2` independent entries of `Omega`.

use nalgebra::{DMatrix, DVector};

use crate::error::{FilterError, Result};
use crate::model::LinearGaussianModel;

pub const OMEGA_RESIDUAL_TOLERANCE: f64 = 1e-10;

/// Right side of the gauge equation; skew-symmetric by construction.
pub fn omega_rhs(sigma: &DMatrix<f64>, model: &LinearGaussianModel) -> DMatrix<f64> {
    let info = model.info();
    let q = model.process_cov();
    let a_skew = model.a.transpose() - &model.a;
    let info_part = (sigma * &info - &info * sigma) * 0.5;
    let noise_part = (&q * sigma - sigma * &q) * 0.5;
    a_skew + info_part + noise_part
}

/// `Omega P + P Omega` minus the right side.
pub fn omega_residual(omega: &DMatrix<f64>, sigma: &DMatrix<f64>, model: &LinearGaussianModel) -> Result<f64> {
    let p = inverse(sigma)?;
    Ok((omega * &p + &p * omega - omega_rhs(sigma, model)).norm())
}

fn inverse(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sigma
        .clone()
        .try_inverse()
        .ok_or_else(|| FilterError::Singular("covariance is not invertible".into()))
}

pub fn omega_solve(sigma: &DMatrix<f64>, model: &LinearGaussianModel) -> Result<DMatrix<f64>> {
    let d = sigma.nrows();
    if d == 1 {
        return Ok(DMatrix::zeros(1, 1));
    }
    let p = inverse(sigma)?;
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| ((i + 1)..d).map(move |j| (i, j))).collect();
    let n = pairs.len();

    // column q holds the upper-triangle image of the skew basis element E_q
    let mut system = DMatrix::zeros(n, n);
    for (q, &(i, j)) in pairs.iter().enumerate() {
        let mut basis = DMatrix::zeros(d, d);
        basis[(i, j)] = 1.0;
        basis[(j, i)] = -1.0;
        let image = &basis * &p + &p * &basis;
        for (r, &(k, l)) in pairs.iter().enumerate() {
            system[(r, q)] = image[(k, l)];
        }
    }
    let rhs = omega_rhs(sigma, model);
    let b = DVector::from_iterator(n, pairs.iter().map(|&(k, l)| rhs[(k, l)]));
    let coeffs = system
        .lu()
        .solve(&b)
        .ok_or_else(|| FilterError::Singular("gauge equation has no unique solution".into()))?;

    let mut omega = DMatrix::zeros(d, d);
    for (q, &(i, j)) in pairs.iter().enumerate() {
        omega[(i, j)] = coeffs[q];
        omega[(j, i)] = -coeffs[q];
    }
    let residual = (&omega * &p + &p * &omega - &rhs).norm();
    let scale = 1.0 + rhs.norm();
    if !(residual < OMEGA_RESIDUAL_TOLERANCE * scale) {
        return Err(FilterError::Singular(format!(
            "gauge equation residual {residual:e} exceeds tolerance"
        )));
    }
    Ok(omega)
}
