//! Mean-field copies of the deterministic filter and the scalar closed form.
//!
//! Copy `i` starts from the same draw as particle `i` of the finite-N
//! filter and is driven by the exact Kalman moments instead of the
//! empirical ones, so `X^i - Xbar^i` isolates the finite-N error.

use nalgebra::{DMatrix, DVector};

use super::{deterministic_update, FpfOptions};
use crate::error::{FilterError, Result};
use crate::kalman::{run_kalman, FilterState};
use crate::model::{sample_gaussian, LinearGaussianModel, ObservationPath};
use crate::linalg::psd_factor;
use crate::riccati::scalar_explicit;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldEnsemble {
    pub particles: DMatrix<f64>,
    /// Kalman moments `(m_t, Sigma_t)` consumed at this grid point.
    pub reference: FilterState,
}

/// Advances mean-field copies by one step using the exact moments in
/// `reference`.
pub fn step_meanfield(
    particles: &DMatrix<f64>,
    reference: &FilterState,
    dz: &DVector<f64>,
    dt: f64,
    model: &LinearGaussianModel,
    opts: &FpfOptions,
) -> Result<DMatrix<f64>> {
    deterministic_update(particles, &reference.m, &reference.sigma, dz, dt, model, opts)
}

/// Draws the same initial states as `initial_ensemble` (any `n >= 1`).
pub(crate) fn coupled_initial_draws(model: &LinearGaussianModel, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let factor = psd_factor(&model.sigma0)?;
    let mut particles = DMatrix::zeros(model.d(), n);
    for i in 0..n {
        let mut source = RngStream::particle(seed, i).generator();
        particles.set_column(i, &sample_gaussian(&model.m0, &factor, &mut source));
    }
    Ok(particles)
}

/// Runs `n` mean-field copies on `obs`, with initial draws coupled to
/// `run_fpf(.., n, Deterministic, .., seed, ..)` and the Kalman filter started
/// from the true prior.
pub fn run_meanfield_copies(
    model: &LinearGaussianModel,
    obs: &ObservationPath,
    n: usize,
    seed: u64,
    opts: &FpfOptions,
) -> Result<Vec<MeanFieldEnsemble>> {
    if n == 0 {
        return Err(FilterError::InvalidArgument("need at least one copy".into()));
    }
    let initial = coupled_initial_draws(model, n, seed)?;
    let kalman = run_kalman(model, obs, FilterState::prior(model))?;
    run_meanfield_from(model, obs, initial, &kalman, opts)
}

pub(crate) fn run_meanfield_from(
    model: &LinearGaussianModel,
    obs: &ObservationPath,
    initial: DMatrix<f64>,
    kalman: &[FilterState],
    opts: &FpfOptions,
) -> Result<Vec<MeanFieldEnsemble>> {
    let mut out = Vec::with_capacity(obs.steps() + 1);
    let mut particles = initial;
    for (k, dz) in obs.dz.iter().enumerate() {
        let next = step_meanfield(&particles, &kalman[k], dz, obs.dt, model, opts)?;
        out.push(MeanFieldEnsemble {
            particles,
            reference: kalman[k].clone(),
        });
        particles = next;
    }
    out.push(MeanFieldEnsemble {
        particles,
        reference: kalman[obs.steps()].clone(),
    });
    Ok(out)
}

/// Closed-form scalar particle positions at grid point `k`:
/// `X^i_t = m^(N)_t + (Sigma^(N)_t / Sigma^(N)_0)^(1/2) (X^i_0 - m^(N)_0)`.
///
/// `(m^(N)_0, Sigma^(N)_0)` are the empirical moments of `x0`; `Sigma^(N)_t`
/// comes from the explicit Riccati solution and `m^(N)_t` from an Euler
/// Kalman mean recursion driven by that covariance.
pub fn explicit_deterministic_scalar(
    x0: &[f64],
    obs: &ObservationPath,
    k: usize,
    model: &LinearGaussianModel,
) -> Result<Vec<f64>> {
    if !model.is_scalar() {
        return Err(FilterError::InvalidArgument("explicit particle solution needs d = 1".into()));
    }
    if x0.len() < 2 {
        return Err(FilterError::InvalidArgument("need at least two particles".into()));
    }
    if k > obs.steps() {
        return Err(FilterError::InvalidArgument(format!(
            "grid index {k} beyond {} steps",
            obs.steps()
        )));
    }
    let n = x0.len() as f64;
    let m0 = x0.iter().sum::<f64>() / n;
    let s0 = x0.iter().map(|x| (x - m0).powi(2)).sum::<f64>() / (n - 1.0);
    if s0 == 0.0 {
        return Err(FilterError::InvalidArgument("Sigma^(N)_0 = 0: explicit solution undefined".into()));
    }
    let (a, c, dt) = (model.a[(0, 0)], model.c[(0, 0)], obs.dt);
    let mut mean = m0;
    for (j, dz) in obs.dz.iter().take(k).enumerate() {
        let sigma = scalar_explicit(s0, j as f64 * dt, model)?;
        mean += a * mean * dt + sigma * c * (dz[0] - c * mean * dt);
    }
    let scale = (scalar_explicit(s0, k as f64 * dt, model)? / s0).sqrt();
    Ok(x0.iter().map(|x| mean + scale * (x - m0)).collect())
}
