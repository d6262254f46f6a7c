//! Kalman-Bucy filter, discretized with the same explicit Euler step the
//! particle filters use so that moment comparisons hold step by step.

use nalgebra::{DMatrix, DVector};

use crate::error::{FilterError, Result};
use crate::linalg::{self, symmetrize};
use crate::model::{LinearGaussianModel, ObservationPath};
use crate::riccati::riccati_rhs;

/// Conditional mean and covariance at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub m: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub t: f64,
}

impl FilterState {
    pub fn new(m: DVector<f64>, sigma: DMatrix<f64>) -> Self {
        Self { m, sigma, t: 0.0 }
    }

    pub fn prior(model: &LinearGaussianModel) -> Self {
        Self::new(model.m0.clone(), model.sigma0.clone())
    }

    /// Kalman gain `Sigma C^T`.
    pub fn gain(&self, model: &LinearGaussianModel) -> DMatrix<f64> {
        &self.sigma * model.c.transpose()
    }
}

/// One Euler step: `m+ = m + A m dt + Sigma C^T (dZ - C m dt)`,
/// `Sigma+ = Sigma + Ric(Sigma) dt`.
pub fn kalman_step(
    state: &FilterState,
    dz: &DVector<f64>,
    dt: f64,
    model: &LinearGaussianModel,
) -> Result<FilterState> {
    if !(dt > 0.0) {
        return Err(FilterError::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let innovation = dz - &model.c * &state.m * dt;
    let m = &state.m + &model.a * &state.m * dt + state.gain(model) * innovation;
    let sigma = symmetrize(&(&state.sigma + riccati_rhs(&state.sigma, model) * dt));
    Ok(FilterState {
        m,
        sigma,
        t: state.t + dt,
    })
}

/// Runs the filter over every increment; returns `steps + 1` states.
pub fn run_kalman(
    model: &LinearGaussianModel,
    obs: &ObservationPath,
    init: FilterState,
) -> Result<Vec<FilterState>> {
    if init.t != 0.0 {
        return Err(FilterError::InvalidArgument(format!(
            "Kalman run must start at t = 0, got {}",
            init.t
        )));
    }
    let mut out = Vec::with_capacity(obs.steps() + 1);
    out.push(init);
    for (k, dz) in obs.dz.iter().enumerate() {
        let next = kalman_step(out.last().unwrap(), dz, obs.dt, model)?;
        if !next.m.iter().all(|x| x.is_finite()) || !linalg::all_finite(&next.sigma) {
            return Err(FilterError::NonFinite {
                step: k,
                what: "Kalman state",
            });
        }
        out.push(next);
    }
    Ok(out)
}

/// Euler Riccati covariance trajectory (observation independent).
pub fn euler_covariances(
    sigma0: &DMatrix<f64>,
    model: &LinearGaussianModel,
    dt: f64,
    steps: usize,
) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut sigma = sigma0.clone();
    out.push(sigma.clone());
    for _ in 0..steps {
        sigma = symmetrize(&(&sigma + riccati_rhs(&sigma, model) * dt));
        out.push(sigma.clone());
    }
    out
}
