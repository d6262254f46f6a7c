//! Finite-N linear feedback particle filters.
//!
//! Two variants share the empirical moments `m^(N)`, `Sigma^(N)` (with the
//! `N - 1` denominator) and the gain `K^(N) = Sigma^(N) C^T`:
//!
//! * stochastic: `dX^i = A X^i dt + sigma_B dB^i + K (dZ - (C X^i + C m)/2 dt)`
//! * deterministic: `dX^i = A m dt + K (dZ - C m dt) + G (X^i - m) dt` with
//!   `G = A - K C / 2 + sigma_B sigma_B^T Sigma^{-1} / 2 + Omega Sigma^{-1}`.
//!
//! Moments are frozen at the start of every step. The deterministic filter
//! is affine in the particle state, so one step maps every particle by the
//! same `X -> shift + Phi (X - m)`.

mod meanfield;
pub mod omega;

pub use meanfield::{
    explicit_deterministic_scalar, run_meanfield_copies, step_meanfield, MeanFieldEnsemble,
};
pub use omega::omega_solve;
pub(crate) use meanfield::coupled_initial_draws;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FilterError, Result};
use crate::linalg::{self, psd_factor, symmetric_pinv, symmetrize};
use crate::model::{sample_gaussian, LinearGaussianModel, ObservationPath};
use crate::riccati::riccati_rhs;
use crate::rng::{GaussianSource, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Deterministic,
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OmegaMode {
    #[default]
    Zero,
    Optimal,
}

/// Time stepping of the deterministic filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DeterministicScheme {
    /// `X+ = shift + Phi (X - m)` with `Phi = I + G dt + O(dt^2)` chosen so
    /// that `Phi Sigma Phi^T = Sigma + Ric(Sigma) dt`: the empirical moments
    /// follow the Euler Kalman-Bucy recursion exactly.
    #[default]
    MomentMatched,
    /// Plain explicit Euler, `Phi = I + G dt`.
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FpfOptions {
    pub omega: OmegaMode,
    pub scheme: DeterministicScheme,
    /// Replace `Sigma^{-1}` by the pseudo-inverse when
    /// `Ker(Sigma) ⊆ Ker(sigma_B sigma_B^T)`. Euler scheme only.
    pub pseudo_inverse: bool,
}

/// Particle states, one column per particle.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub particles: DMatrix<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub gain: DMatrix<f64>,
}

impl Ensemble {
    pub fn new(particles: DMatrix<f64>) -> Self {
        Self { particles, t: 0.0 }
    }

    pub fn from_scalars(xs: &[f64]) -> Self {
        Self::new(DMatrix::from_row_slice(1, xs.len(), xs))
    }

    pub fn n(&self) -> usize {
        self.particles.ncols()
    }

    pub fn d(&self) -> usize {
        self.particles.nrows()
    }

    pub fn fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for x in self.particles.iter() {
            x.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Per-particle noise sources; particle `i` owns stream `2 + i`.
#[derive(Debug, Clone)]
pub struct ParticleNoise {
    sources: Vec<GaussianSource>,
}

impl ParticleNoise {
    pub fn fill(&mut self, eta: &mut DMatrix<f64>) {
        for (i, source) in self.sources.iter_mut().enumerate() {
            for x in eta.column_mut(i).iter_mut() {
                *x = source.normal();
            }
        }
    }
}

/// Draws `X^i_0 ~ N(m0, Sigma0)` i.i.d., particle `i` from its own stream.
///
/// The returned noise sources continue those streams, so the first `d`
/// normals of every stream are the initial draw regardless of `N` or the
/// filter variant.
pub fn initial_ensemble(
    model: &LinearGaussianModel,
    n: usize,
    seed: u64,
) -> Result<(Ensemble, ParticleNoise)> {
    if n < 2 {
        return Err(FilterError::InvalidArgument(format!("need N >= 2 particles, got {n}")));
    }
    let factor = psd_factor(&model.sigma0)?;
    let d = model.d();
    let mut particles = DMatrix::zeros(d, n);
    let mut sources = Vec::with_capacity(n);
    for i in 0..n {
        let mut source = RngStream::particle(seed, i).generator();
        particles.set_column(i, &sample_gaussian(&model.m0, &factor, &mut source));
        sources.push(source);
    }
    Ok((Ensemble::new(particles), ParticleNoise { sources }))
}

/// Sample mean and `(N - 1)`-normalized sample covariance.
pub fn empirical_moments(ens: &Ensemble, model: &LinearGaussianModel) -> Result<EmpiricalMoments> {
    let n = ens.n();
    if n < 2 {
        return Err(FilterError::InvalidArgument(format!("need N >= 2 particles, got {n}")));
    }
    let (mean, cov) = mean_and_cov(&ens.particles);
    let gain = &cov * model.c.transpose();
    Ok(EmpiricalMoments { mean, cov, gain })
}

fn mean_and_cov(particles: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = particles.ncols();
    let mean = particles.column_mean();
    let mut centered = particles.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let cov = symmetrize(&(&centered * centered.transpose() / (n as f64 - 1.0)));
    (mean, cov)
}

/// `(Sigma^{-1}` or its pseudo-inverse`)`. Errors when `Sigma` is singular
/// and the relaxation is off or its kernel condition fails.
fn covariance_inverse(
    sigma: &DMatrix<f64>,
    model: &LinearGaussianModel,
    pseudo_inverse: bool,
) -> Result<DMatrix<f64>> {
    if sigma.nrows() == 1 {
        let s = sigma[(0, 0)];
        if s > 0.0 {
            return Ok(DMatrix::from_element(1, 1, 1.0 / s));
        }
    }
    let (pinv, kernel) = symmetric_pinv(sigma);
    if kernel.is_empty() {
        return Ok(pinv);
    }
    if !pseudo_inverse {
        return Err(FilterError::Singular(
            "empirical covariance is singular; enable pseudo-inverse mode".into(),
        ));
    }
    let q = model.process_cov();
    let tol = 1e-9 * q.norm().max(1.0);
    for v in &kernel {
        if (&q * v).norm() > tol {
            return Err(FilterError::KernelCondition {
                vector: v.iter().copied().collect(),
            });
        }
    }
    Ok(pinv)
}

/// Deterministic gain
/// `G = A - K C / 2 + sigma_B sigma_B^T Sigma^{-1} / 2 + Omega Sigma^{-1}`.
pub fn gain_g(
    sigma: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    model: &LinearGaussianModel,
    pseudo_inverse: bool,
) -> Result<DMatrix<f64>> {
    let inv = covariance_inverse(sigma, model, pseudo_inverse)?;
    let k = sigma * model.c.transpose();
    Ok(&model.a - &k * &model.c * 0.5 + model.process_cov() * &inv * 0.5 + omega * &inv)
}

fn gauge(sigma: &DMatrix<f64>, model: &LinearGaussianModel, mode: OmegaMode) -> Result<DMatrix<f64>> {
    match mode {
        OmegaMode::Zero => Ok(DMatrix::zeros(sigma.nrows(), sigma.ncols())),
        OmegaMode::Optimal => omega_solve(sigma, model),
    }
}

/// Step matrix of the moment-matched scheme.
///
/// With `Sigma = L L^T` and `H = L^{-1} G L`, `Phi = L S Q L^{-1}` where
/// `S = (I + L^{-1} Ric(Sigma) L^{-T} dt)^{1/2}` and `Q` is the Cayley
/// transform of `(H - H^T) dt / 2`. Then `Phi Sigma Phi^T = Sigma + Ric dt`
/// and `Phi = I + G dt + O(dt^2)`.
fn moment_matched_map(
    sigma: &DMatrix<f64>,
    g: &DMatrix<f64>,
    dt: f64,
    model: &LinearGaussianModel,
) -> Result<DMatrix<f64>> {
    let ric = riccati_rhs(sigma, model);
    let d = sigma.nrows();
    if d == 1 {
        let ratio = 1.0 + ric[(0, 0)] * dt / sigma[(0, 0)];
        if !(ratio > 0.0) {
            return Err(FilterError::NotPositiveSemiDefinite {
                step: 0,
                min_eigenvalue: sigma[(0, 0)] * ratio,
            });
        }
        return Ok(DMatrix::from_element(1, 1, ratio.sqrt()));
    }
    let l = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| {
            FilterError::Singular("moment-matched step needs an invertible covariance".into())
        })?
        .l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| FilterError::Singular("Cholesky factor is singular".into()))?;
    let eye = DMatrix::<f64>::identity(d, d);
    let stretch = linalg::sqrtm_psd(&(&eye + &l_inv * ric * l_inv.transpose() * dt))?;
    let h = &l_inv * g * &l;
    let w = (&h - h.transpose()) * (0.5 * dt / 2.0);
    let rotation = (&eye - &w)
        .try_inverse()
        .ok_or_else(|| FilterError::Singular("Cayley transform is singular".into()))?
        * (&eye + &w);
    Ok(&l * stretch * rotation * l_inv)
}

/// Deterministic update of `particles` using the moments `(mean, sigma)`.
///
/// Shared by the finite-N filter (empirical moments) and the mean-field
/// copies (Kalman moments).
pub(crate) fn deterministic_update(
    particles: &DMatrix<f64>,
    mean: &DVector<f64>,
    sigma: &DMatrix<f64>,
    dz: &DVector<f64>,
    dt: f64,
    model: &LinearGaussianModel,
    opts: &FpfOptions,
) -> Result<DMatrix<f64>> {
    let omega = gauge(sigma, model, opts.omega)?;
    let g = gain_g(sigma, &omega, model, opts.pseudo_inverse)?;
    let k = sigma * model.c.transpose();
    let drift = &model.a * mean * dt + &k * (dz - &model.c * mean * dt);
    let mut centered = particles.clone();
    for mut col in centered.column_iter_mut() {
        col -= mean;
    }
    let next = match opts.scheme {
        DeterministicScheme::Euler => {
            let mut next = particles + &g * centered * dt;
            for mut col in next.column_iter_mut() {
                col += &drift;
            }
            next
        }
        DeterministicScheme::MomentMatched => {
            if opts.pseudo_inverse {
                return Err(FilterError::InvalidArgument(
                    "pseudo-inverse mode requires the Euler scheme".into(),
                ));
            }
            let phi = moment_matched_map(sigma, &g, dt, model)?;
            let shift = mean + drift;
            let mut next = phi * centered;
            for mut col in next.column_iter_mut() {
                col += &shift;
            }
            next
        }
    };
    Ok(next)
}

/// One step of the deterministic filter.
pub fn step_deterministic(
    ens: &Ensemble,
    dz: &DVector<f64>,
    dt: f64,
    model: &LinearGaussianModel,
    opts: &FpfOptions,
) -> Result<Ensemble> {
    let mom = empirical_moments(ens, model)?;
    let particles = deterministic_update(&ens.particles, &mom.mean, &mom.cov, dz, dt, model, opts)?;
    Ok(Ensemble {
        particles,
        t: ens.t + dt,
    })
}

/// One Euler-Maruyama step of the stochastic filter with caller-supplied
/// standard-normal draws `eta` (one column per particle).
pub fn step_stochastic_with(
    ens: &Ensemble,
    dz: &DVector<f64>,
    dt: f64,
    model: &LinearGaussianModel,
    eta: &DMatrix<f64>,
) -> Result<Ensemble> {
    let mom = empirical_moments(ens, model)?;
    let d = ens.d();
    let kc = &mom.gain * &model.c;
    let propagator = DMatrix::<f64>::identity(d, d) + (&model.a - &kc * 0.5) * dt;
    let offset = &mom.gain * dz - &kc * &mom.mean * (0.5 * dt);
    let mut next = propagator * &ens.particles + &model.sigma_b * eta * dt.sqrt();
    for mut col in next.column_iter_mut() {
        col += &offset;
    }
    Ok(Ensemble { particles: next, t: ens.t + dt })
}

pub fn step_stochastic(
    ens: &Ensemble,
    dz: &DVector<f64>,
    dt: f64,
    model: &LinearGaussianModel,
    noise: &mut ParticleNoise,
) -> Result<Ensemble> {
    let mut eta = DMatrix::zeros(ens.d(), ens.n());
    noise.fill(&mut eta);
    step_stochastic_with(ens, dz, dt, model, &eta)
}

/// Recorded output of an FPF run on the grid `t_0 .. t_K`.
#[derive(Debug, Clone)]
pub struct FpfRun {
    /// Empirical moments at every grid point.
    pub moments: Vec<EmpiricalMoments>,
    /// Ensemble snapshots, when requested.
    pub ensembles: Option<Vec<Ensemble>>,
}

/// Runs a finite-N filter, calling `visit(k, ensemble, moments)` at every
/// grid point `k = 0..=steps`. Nothing beyond the current step is stored.
pub fn run_fpf_with<F>(
    model: &LinearGaussianModel,
    obs: &ObservationPath,
    n: usize,
    variant: Variant,
    opts: &FpfOptions,
    seed: u64,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(usize, &Ensemble, &EmpiricalMoments),
{
    let (mut ens, mut noise) = initial_ensemble(model, n, seed)?;
    let mut eta = DMatrix::zeros(ens.d(), n);
    for (k, dz) in obs.dz.iter().enumerate() {
        let mom = empirical_moments(&ens, model)?;
        visit(k, &ens, &mom);
        let particles = match variant {
            Variant::Deterministic => {
                deterministic_update(&ens.particles, &mom.mean, &mom.cov, dz, obs.dt, model, opts)?
            }
            Variant::Stochastic => {
                noise.fill(&mut eta);
                step_stochastic_with(&ens, dz, obs.dt, model, &eta)?.particles
            }
        };
        if !linalg::all_finite(&particles) {
            return Err(FilterError::NonFinite { step: k, what: "particle state" });
        }
        ens = Ensemble { particles, t: ens.t + obs.dt };
    }
    let mom = empirical_moments(&ens, model)?;
    visit(obs.steps(), &ens, &mom);
    Ok(())
}

pub fn run_fpf(
    model: &LinearGaussianModel,
    obs: &ObservationPath,
    n: usize,
    variant: Variant,
    opts: &FpfOptions,
    seed: u64,
    record_particles: bool,
) -> Result<FpfRun> {
    let mut moments = Vec::with_capacity(obs.steps() + 1);
    let mut ensembles = record_particles.then(|| Vec::with_capacity(obs.steps() + 1));
    run_fpf_with(model, obs, n, variant, opts, seed, |_, ens, mom| {
        moments.push(mom.clone());
        if let Some(e) = ensembles.as_mut() {
            e.push(ens.clone());
        }
    })?;
    Ok(FpfRun { moments, ensembles })
}
