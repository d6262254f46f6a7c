//! Riccati machinery: the covariance ODE
//!
//! ```text
//! dSigma/dt = A Sigma + Sigma A^T + sigma_B sigma_B^T - Sigma C^T C Sigma
//! ```
//!
//! its stabilizing fixed point (the ARE solution), the spectral bound
//! `lambda0` of `F_inf = A - Sigma_inf C^T C`, closed-form solutions in the
//! scalar and vector case, and the explicit scalar error constants.

use nalgebra::DMatrix;

use crate::error::{FilterError, Result};
use crate::linalg::{self, symmetrize};
use crate::model::{step_count, LinearGaussianModel};

/// Frobenius residual at which the ARE is considered solved.
pub const ARE_TOLERANCE: f64 = 1e-10;

/// Below this gap `Sigma0` is treated as the fixed point itself.
const FIXED_POINT_GAP: f64 = 1e-12;

const PSD_FLOOR: f64 = -1e-10;

pub fn riccati_rhs(sigma: &DMatrix<f64>, model: &LinearGaussianModel) -> DMatrix<f64> {
    let a_s = &model.a * sigma;
    let rhs = &a_s + a_s.transpose() + model.process_cov() - sigma * model.info() * sigma;
    symmetrize(&rhs)
}

fn rk4_step(sigma: &DMatrix<f64>, h: f64, model: &LinearGaussianModel) -> DMatrix<f64> {
    let k1 = riccati_rhs(sigma, model);
    let k2 = riccati_rhs(&(sigma + &k1 * (h / 2.0)), model);
    let k3 = riccati_rhs(&(sigma + &k2 * (h / 2.0)), model);
    let k4 = riccati_rhs(&(sigma + &k3 * h), model);
    symmetrize(&(sigma + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)))
}

/// Covariance trajectory on the grid `t_k = k dt`, `k = 0..=steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceTrajectory {
    pub dt: f64,
    pub sigmas: Vec<DMatrix<f64>>,
}

impl CovarianceTrajectory {
    pub fn times(&self) -> Vec<f64> {
        (0..self.sigmas.len()).map(|k| k as f64 * self.dt).collect()
    }
}

/// Classical RK4 integration of the Riccati ODE.
pub fn integrate_riccati(
    sigma0: &DMatrix<f64>,
    model: &LinearGaussianModel,
    dt: f64,
    horizon: f64,
) -> Result<CovarianceTrajectory> {
    let steps = step_count(dt, horizon)?;
    let mut sigmas = Vec::with_capacity(steps + 1);
    let mut sigma = symmetrize(sigma0);
    sigmas.push(sigma.clone());
    for k in 0..steps {
        sigma = rk4_step(&sigma, dt, model);
        if !linalg::all_finite(&sigma) {
            return Err(FilterError::NonFinite {
                step: k + 1,
                what: "Riccati covariance",
            });
        }
        let min = linalg::min_eigenvalue(&sigma);
        if min < PSD_FLOOR {
            return Err(FilterError::NotPositiveSemiDefinite {
                step: k + 1,
                min_eigenvalue: min,
            });
        }
        sigmas.push(sigma.clone());
    }
    Ok(CovarianceTrajectory { dt, sigmas })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub sigma_inf: DMatrix<f64>,
    /// `min { -Re lambda : lambda eigenvalue of F_inf }`.
    pub lambda0: f64,
    /// `A - Sigma_inf C^T C`.
    pub f_inf: DMatrix<f64>,
    /// Frobenius norm of the ARE residual at `sigma_inf`.
    pub residual: f64,
}

impl SteadyState {
    pub fn is_hurwitz(&self) -> bool {
        self.f_inf
            .clone()
            .complex_eigenvalues()
            .iter()
            .all(|l| l.re < 0.0)
    }
}

/// Spectral bound of a square matrix: `min -Re lambda`.
pub fn spectral_bound(f: &DMatrix<f64>) -> f64 {
    f.clone()
        .complex_eigenvalues()
        .iter()
        .map(|l| -l.re)
        .fold(f64::INFINITY, f64::min)
}

/// Solves the ARE by integrating the Riccati ODE from the identity until
/// the residual drops below `1e-10`.
pub fn solve_are(model: &LinearGaussianModel) -> Result<SteadyState> {
    const MAX_STEPS: usize = 5_000_000;
    let d = model.d();
    let info_norm = model.info().norm();
    let a_norm = model.a.norm();
    let mut sigma = DMatrix::<f64>::identity(d, d);
    let mut horizon = 0.0;
    let mut residual = riccati_rhs(&sigma, model).norm();
    let mut steps = 0;
    while residual >= ARE_TOLERANCE {
        if steps == MAX_STEPS || !residual.is_finite() {
            return Err(FilterError::NoConvergence { residual, horizon });
        }
        // keep h |lambda| well inside the RK4 stability region
        let stiffness = 2.0 * a_norm + 2.0 * info_norm * sigma.norm() + 1e-3;
        let h = (0.5 / stiffness).min(1.0);
        sigma = rk4_step(&sigma, h, model);
        horizon += h;
        residual = riccati_rhs(&sigma, model).norm();
        steps += 1;
    }
    let f_inf = &model.a - &sigma * model.info();
    Ok(SteadyState {
        lambda0: spectral_bound(&f_inf),
        sigma_inf: sigma,
        f_inf,
        residual,
    })
}

/// Closed-form scalar fixed point: `(Sigma_inf, lambda0)`.
///
/// With `C != 0`, `lambda0 = (A^2 + sigma_B^2 C^2)^(1/2)` and
/// `Sigma_inf = (A + lambda0) / C^2`; with `C = 0` the ARE is the Lyapunov
/// equation `2 A Sigma + sigma_B^2 = 0`.
pub fn scalar_steady_state(model: &LinearGaussianModel) -> Result<(f64, f64)> {
    require_scalar(model)?;
    let (a, c, s) = (model.a[(0, 0)], model.c[(0, 0)], model.sigma_b[(0, 0)]);
    if c != 0.0 {
        let lambda0 = (a * a + s * s * c * c).sqrt();
        if lambda0 == 0.0 {
            return Err(FilterError::InvalidArgument(
                "A = 0 and sigma_B C = 0: no exponentially stable fixed point".into(),
            ));
        }
        Ok(((a + lambda0) / (c * c), lambda0))
    } else if a < 0.0 {
        Ok((-s * s / (2.0 * a), -a))
    } else {
        Err(FilterError::InvalidArgument(
            "C = 0 with A >= 0: the ARE has no stabilizing solution".into(),
        ))
    }
}

fn require_scalar(model: &LinearGaussianModel) -> Result<()> {
    if !model.is_scalar() {
        return Err(FilterError::InvalidArgument(format!(
            "scalar formula needs d = m = 1, got d = {}, m = {}",
            model.d(),
            model.m()
        )));
    }
    Ok(())
}

/// Explicit scalar solution `f(Sigma0, t)` of the Riccati ODE.
pub fn scalar_explicit(sigma0: f64, t: f64, model: &LinearGaussianModel) -> Result<f64> {
    let (sigma_inf, lambda0) = scalar_steady_state(model)?;
    let c = model.c[(0, 0)];
    let gap = sigma0 - sigma_inf;
    if gap.abs() < FIXED_POINT_GAP {
        return Ok(sigma_inf);
    }
    let decay = (-2.0 * lambda0 * t).exp();
    Ok(sigma_inf + decay / (1.0 / gap + c * c / (2.0 * lambda0) * (1.0 - decay)))
}

/// Explicit vector solution
/// `Sigma_t = Sigma_inf + e^{F t} D_t^{-1} e^{F^T t}` with
/// `D_t = (Sigma0 - Sigma_inf)^{-1} + int_0^t e^{F^T s} C^T C e^{F s} ds`.
///
/// The integral is accumulated with RK4 on `dD/dt = e^{F^T t} C^T C e^{F t}`
/// using steps of at most `dt`.
pub fn vector_explicit(
    sigma0: &DMatrix<f64>,
    t: f64,
    dt: f64,
    model: &LinearGaussianModel,
    steady: &SteadyState,
) -> Result<DMatrix<f64>> {
    if t == 0.0 {
        return Ok(sigma0.clone());
    }
    let steps = (t / dt).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let traj = explicit_on_grid(sigma0, h, steps, model, steady)?;
    Ok(traj.sigmas.last().cloned().unwrap())
}

/// Explicit vector solution evaluated on `t_k = k dt`, `k = 0..=steps`.
pub fn explicit_on_grid(
    sigma0: &DMatrix<f64>,
    dt: f64,
    steps: usize,
    model: &LinearGaussianModel,
    steady: &SteadyState,
) -> Result<CovarianceTrajectory> {
    let gap = sigma0 - &steady.sigma_inf;
    if gap.norm() < FIXED_POINT_GAP {
        return Ok(CovarianceTrajectory {
            dt,
            sigmas: vec![steady.sigma_inf.clone(); steps + 1],
        });
    }
    let mut d_t = gap.try_inverse().ok_or_else(|| {
        FilterError::Singular("Sigma0 - Sigma_inf is not invertible".into())
    })?;
    let f = &steady.f_inf;
    let info = model.info();
    let half = (f * (dt / 2.0)).exp();
    let integrand = |e: &DMatrix<f64>| e.transpose() * &info * e;

    let mut sigmas = Vec::with_capacity(steps + 1);
    sigmas.push(sigma0.clone());
    let mut e_k = DMatrix::identity(f.nrows(), f.ncols());
    for k in 1..=steps {
        let e_mid = &e_k * &half;
        let e_next = (f * (k as f64 * dt)).exp();
        // RK4 on a pure quadrature reduces to Simpson's rule
        d_t += (integrand(&e_k) + integrand(&e_mid) * 4.0 + integrand(&e_next)) * (dt / 6.0);
        let d_inv = d_t.clone().try_inverse().ok_or_else(|| {
            FilterError::Singular(format!("D_t is singular at t = {}", k as f64 * dt))
        })?;
        sigmas.push(symmetrize(&(&steady.sigma_inf + &e_next * d_inv * e_next.transpose())));
        e_k = e_next;
    }
    Ok(CovarianceTrajectory { dt, sigmas })
}

/// Explicit constants of the scalar mean-squared error bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarConstants {
    pub lambda0: f64,
    pub sigma_inf: f64,
    /// `(2 lambda0 / (lambda0 - A))^2`, the Lipschitz constant of `f(., t)`
    /// up to the factor `e^{-2 lambda0 t}`.
    pub beta: f64,
    pub c1: f64,
    pub c3: f64,
    c: f64,
}

impl ScalarConstants {
    /// `c2(t) = (C^2 / 2 lambda0) beta^2 e^{|log beta|} (1 - e^{-2 lambda0 t})`.
    pub fn c2(&self, t: f64) -> f64 {
        self.c * self.c / (2.0 * self.lambda0)
            * self.beta
            * self.beta
            * self.beta.ln().abs().exp()
            * (1.0 - (-2.0 * self.lambda0 * t).exp())
    }
}

pub fn scalar_constants(model: &LinearGaussianModel) -> Result<ScalarConstants> {
    require_scalar(model)?;
    let (a, c, s) = (model.a[(0, 0)], model.c[(0, 0)], model.sigma_b[(0, 0)]);
    if s * c == 0.0 {
        return Err(FilterError::InvalidArgument(
            "sigma_B C = 0 makes lambda0 = |A| and beta singular".into(),
        ));
    }
    let (sigma_inf, lambda0) = scalar_steady_state(model)?;
    let beta = (2.0 * lambda0 / (lambda0 - a)).powi(2);
    Ok(ScalarConstants {
        lambda0,
        sigma_inf,
        beta,
        c1: beta.ln().abs().exp(),
        c3: beta * beta,
        c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::fit::{fit_rate, FitMode};
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn baseline() -> LinearGaussianModel {
        LinearGaussianModel::scalar(0.1, 1.0, 1.0, 3.0, 5.0)
    }

    fn m1(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn rhs_hand_values() {
        let m = baseline();
        assert!((riccati_rhs(&m1(5.0), &m)[(0, 0)] - (-23.0)).abs() < 1e-14);
        assert_eq!(riccati_rhs(&m1(0.0), &m), m.process_cov());
        let ss = solve_are(&m).unwrap();
        assert!(riccati_rhs(&ss.sigma_inf, &m).norm() < ARE_TOLERANCE);
    }

    #[test]
    fn are_matches_scalar_closed_form() {
        let ss = solve_are(&baseline()).unwrap();
        let lambda0 = (0.01f64 + 1.0).sqrt();
        assert!((ss.lambda0 - lambda0).abs() < 1e-8);
        assert!((ss.sigma_inf[(0, 0)] - (0.1 + lambda0)).abs() < 1e-8);
        assert!((ss.sigma_inf[(0, 0)] - 1.104988).abs() < 1e-6);
        assert!((ss.lambda0 - 1.004988).abs() < 1e-6);
        assert!(ss.is_hurwitz());
    }

    #[test]
    fn are_symmetric_balance_point() {
        let ss = solve_are(&LinearGaussianModel::scalar(0.0, 1.0, 1.0, 0.0, 1.0)).unwrap();
        assert!((ss.sigma_inf[(0, 0)] - 1.0).abs() < 1e-9);
        assert!((ss.lambda0 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn are_without_observations_is_lyapunov() {
        let m = LinearGaussianModel::scalar(-2.0, 0.0, 1.0, 0.0, 1.0);
        let ss = solve_are(&m).unwrap();
        assert!((ss.sigma_inf[(0, 0)] - 0.25).abs() < 1e-9);
        assert!((ss.lambda0 - 2.0).abs() < 1e-12);
        assert_eq!(scalar_steady_state(&m).unwrap(), (0.25, 2.0));
    }

    #[test]
    fn fixed_point_trajectory_is_constant() {
        let m = baseline();
        let ss = solve_are(&m).unwrap();
        let traj = integrate_riccati(&ss.sigma_inf, &m, 1e-2, 2.0).unwrap();
        for s in &traj.sigmas {
            assert!((s - &ss.sigma_inf).norm() < 1e-9);
        }
        assert!((scalar_explicit(ss.sigma_inf[(0, 0)], 3.0, &m).unwrap() - ss.sigma_inf[(0, 0)]).abs() < 1e-9);
    }

    #[test]
    fn scalar_explicit_limits_and_oracle() {
        let m = baseline();
        let (sigma_inf, _) = scalar_steady_state(&m).unwrap();
        for s0 in [0.0, 0.5, 5.0, 20.0] {
            assert!((scalar_explicit(s0, 0.0, &m).unwrap() - s0).abs() < 1e-12);
            assert!((scalar_explicit(s0, 60.0, &m).unwrap() - sigma_inf).abs() < 1e-12);
        }
        let traj = integrate_riccati(&m1(5.0), &m, 1e-3, 1.0).unwrap();
        let rk4 = traj.sigmas.last().unwrap()[(0, 0)];
        assert!((scalar_explicit(5.0, 1.0, &m).unwrap() - rk4).abs() < 1e-6);
    }

    #[test]
    fn baseline_trajectory_decreases_to_fixed_point() {
        let m = baseline();
        let traj = integrate_riccati(&m1(5.0), &m, 1e-3, 5.0).unwrap();
        for w in traj.sigmas.windows(2) {
            assert!(w[1][(0, 0)] < w[0][(0, 0)]);
        }
        assert!((traj.sigmas.last().unwrap()[(0, 0)] - 1.104988).abs() < 1e-3);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let m = baseline();
        let err = |dt: f64| {
            let traj = integrate_riccati(&m1(5.0), &m, dt, 2.0).unwrap();
            traj.sigmas
                .iter()
                .enumerate()
                .map(|(k, s)| (s[(0, 0)] - scalar_explicit(5.0, k as f64 * dt, &m).unwrap()).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(0.04) / err(0.02);
        assert!(ratio >= 8.0, "ratio {ratio}");
    }

    #[test]
    fn loss_of_psd_aborts() {
        // huge step drives the scalar covariance negative
        let m = LinearGaussianModel::scalar(0.0, 1.0, 0.0, 0.0, 1.0);
        let err = integrate_riccati(&m1(50.0), &m, 1.0, 3.0).unwrap_err();
        assert!(matches!(
            err,
            FilterError::NotPositiveSemiDefinite { .. } | FilterError::NonFinite { .. }
        ));
    }

    #[test]
    fn vector_explicit_collapses_to_scalar() {
        let m = baseline();
        let ss = solve_are(&m).unwrap();
        for t in [0.0, 0.3, 1.0, 4.0] {
            let v = vector_explicit(&m1(5.0), t, 1e-3, &m, &ss).unwrap()[(0, 0)];
            assert!((v - scalar_explicit(5.0, t, &m).unwrap()).abs() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn vector_explicit_matches_rk4_in_2d() {
        let m = LinearGaussianModel::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.1, -0.5])),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::identity(2, 2) * 2.0,
        )
        .unwrap();
        let ss = solve_are(&m).unwrap();
        let sigma0 = DMatrix::identity(2, 2) * 2.0;
        let explicit = vector_explicit(&sigma0, 1.0, 1e-3, &m, &ss).unwrap();
        let rk4 = integrate_riccati(&sigma0, &m, 1e-3, 1.0).unwrap();
        assert!((explicit - rk4.sigmas.last().unwrap()).norm() < 1e-6);
        assert_eq!(vector_explicit(&sigma0, 0.0, 1e-3, &m, &ss).unwrap(), sigma0);
    }

    #[test]
    fn scalar_constants_baseline_values() {
        let k = scalar_constants(&baseline()).unwrap();
        // beta = (2 lambda0 / (lambda0 - A))^2 evaluated by hand
        let lambda0 = 1.01f64.sqrt();
        let beta = (2.0 * lambda0 / (lambda0 - 0.1)).powi(2);
        assert!((k.lambda0 - 1.004988).abs() < 1e-6);
        assert!((k.beta - beta).abs() < 1e-12);
        assert!((k.beta - 4.932830).abs() < 1e-6);
        assert!((k.c3 - 24.332811).abs() < 1e-6);
        assert!((k.c1 - k.beta).abs() < 1e-12);
        assert_eq!(k.c2(0.0), 0.0);
    }

    #[test]
    fn scalar_constants_symmetric_case() {
        let k = scalar_constants(&LinearGaussianModel::scalar(0.0, 1.0, 1.0, 0.0, 1.0)).unwrap();
        assert!((k.lambda0 - 1.0).abs() < 1e-15);
        assert!((k.beta - 4.0).abs() < 1e-14);
        assert!((k.c1 - 4.0).abs() < 1e-13);
        assert!((k.c3 - 16.0).abs() < 1e-12);
        assert!(scalar_constants(&LinearGaussianModel::scalar(-1.0, 0.0, 1.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn covariance_converges_at_twice_lambda0() {
        let m = baseline();
        let ss = solve_are(&m).unwrap();
        let traj = integrate_riccati(&m1(5.0), &m, 1e-3, 8.0).unwrap();
        let (ts, ys): (Vec<f64>, Vec<f64>) = traj
            .sigmas
            .iter()
            .enumerate()
            .filter(|(k, _)| k % 50 == 0 && *k >= 2000)
            .map(|(k, s)| (k as f64 * 1e-3, (s - &ss.sigma_inf).norm()))
            .unzip();
        let fit = fit_rate(&ts, &ys, FitMode::Exponential).unwrap();
        assert!(-fit.slope >= 0.9 * 2.0 * ss.lambda0, "rate {}", -fit.slope);
    }

    proptest! {
        #[test]
        fn scalar_explicit_is_lipschitz(s0 in 0.01f64..20.0, s1 in 0.01f64..20.0, t in 0.0f64..5.0) {
            let m = baseline();
            let k = scalar_constants(&m).unwrap();
            let lhs = (scalar_explicit(s0, t, &m).unwrap() - scalar_explicit(s1, t, &m).unwrap()).abs();
            let rhs = k.beta * (-2.0 * k.lambda0 * t).exp() * (s0 - s1).abs();
            prop_assert!(lhs <= rhs * (1.0 + 1e-9) + 1e-14);
        }

        #[test]
        fn random_scalar_models_agree_with_rk4(a in -2.0f64..2.0, c in 0.3f64..2.0, s in 0.3f64..2.0, s0 in 0.1f64..8.0) {
            let m = LinearGaussianModel::scalar(a, c, s, 0.0, s0);
            let traj = integrate_riccati(&m1(s0), &m, 1e-3, 5.0).unwrap();
            for (k, sig) in traj.sigmas.iter().enumerate().step_by(250) {
                let e = scalar_explicit(s0, k as f64 * 1e-3, &m).unwrap();
                prop_assert!((sig[(0, 0)] - e).abs() < 1e-6);
            }
            let ss = solve_are(&m).unwrap();
            prop_assert!(ss.residual < ARE_TOLERANCE);
            prop_assert!(ss.is_hurwitz());
        }
    }
}
