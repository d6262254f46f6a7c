//! Monte-Carlo error harness.
//!
//! Every experiment runs `M` independent replicas. Replica `r` derives its
//! master seed from the experiment seed, simulates its own signal and
//! observation path, runs the Kalman-Bucy reference from the true prior and
//! the particle filters on the same increments. Results are collected in
//! replica order and reduced sequentially, so the output does not depend on
//! the number of worker threads.

pub mod fit;
pub mod quadrature;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FilterError, Result};
use crate::fpf::{
    coupled_initial_draws, initial_ensemble, run_fpf_with, step_meanfield, FpfOptions,
    Variant,
};
use crate::kalman::{run_kalman, FilterState};
use crate::model::{simulate_truth, step_count, LinearGaussianModel};
use crate::riccati::{riccati_rhs, scalar_constants};
use crate::rng::replica_seed;

use fit::{fit_rate, fit_rate_weighted, FitMode, RateFit};
use quadrature::GaussHermite;

/// Number of Gauss-Hermite nodes for conditional expectations.
pub const QUADRATURE_NODES: usize = 64;

/// Fraction of failed replicas above which an experiment is rejected.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub enum Axis {
    Time(Vec<f64>),
    Particles(Vec<usize>),
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Axis::Time(t) => t.clone(),
            Axis::Particles(n) => n.iter().map(|&n| n as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub axis: Axis,
    /// `E |m^(N) - m|^2`.
    pub mse_mean: Vec<f64>,
    pub se_mean: Vec<f64>,
    /// `E ||Sigma^(N) - Sigma||_F^2`.
    pub mse_cov: Vec<f64>,
    pub se_cov: Vec<f64>,
    pub bound_mean: Option<Vec<f64>>,
    pub bound_cov: Option<Vec<f64>>,
    /// Decay rate (time axis) or power-law exponent (N axis) of `mse_mean`.
    pub fit: Option<RateFit>,
    /// Power-law exponent of `mse_cov` (N axis only).
    pub fit_cov: Option<RateFit>,
    pub replicas: usize,
    pub failed: usize,
}

impl ErrorReport {
    /// Exponential fit of `mse_mean` restricted to `from <= t <= to`.
    pub fn fit_decay(&self, from: f64, to: f64) -> Result<RateFit> {
        let Axis::Time(ts) = &self.axis else {
            return Err(FilterError::InvalidArgument("decay fit needs a time axis".into()));
        };
        let (xs, ys): (Vec<f64>, Vec<f64>) = ts
            .iter()
            .zip(&self.mse_mean)
            .filter(|(t, _)| **t >= from && **t <= to)
            .map(|(t, y)| (*t, *y))
            .unzip();
        fit_rate(&xs, &ys, FitMode::Exponential)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PocReport {
    pub n_list: Vec<usize>,
    /// `E |X^i_t - Xbar^i_t|^2` averaged over particles and replicas.
    pub coupling_mse: Vec<f64>,
    pub se_coupling: Vec<f64>,
    /// `E |(1/N) sum f(X^i_t) - E[f(X_t) | Z_t]|^2`.
    pub weak_stat: Vec<f64>,
    pub se_weak: Vec<f64>,
    pub coupling_fit: Option<RateFit>,
    pub weak_fit: Option<RateFit>,
    pub replicas: usize,
    pub failed: usize,
}

/// Bounded Lipschitz test functions for the weak-convergence statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TestFunction {
    #[default]
    Tanh,
    Sin,
    /// `f = 1`.
    Const,
}

impl TestFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            TestFunction::Tanh => x.tanh(),
            TestFunction::Sin => x.sin(),
            TestFunction::Const => 1.0,
        }
    }
}

/// Mean and standard error of the mean.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs `job(replica, replica_seed)` for every replica in parallel and
/// returns the successes in replica order together with the failure count.
pub fn replicate<T, F>(replicas: usize, seed: u64, job: F) -> Result<(Vec<T>, usize)>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync,
{
    if replicas < 2 {
        return Err(FilterError::InvalidArgument(format!("need M >= 2 replicas, got {replicas}")));
    }
    let results: Vec<Result<T>> = (0..replicas)
        .into_par_iter()
        .map(|r| job(r, replica_seed(seed, r)))
        .collect();
    let mut ok = Vec::with_capacity(replicas);
    let mut failed = 0;
    let mut first = None;
    for res in results {
        match res {
            Ok(v) => ok.push(v),
            Err(e) => {
                failed += 1;
                first.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if failed as f64 > MAX_FAILURE_FRACTION * replicas as f64 {
        return Err(FilterError::TooManyFailures {
            failed,
            total: replicas,
            first: first.unwrap_or_default(),
        });
    }
    Ok((ok, failed))
}

fn column_stats(rows: &[Vec<f64>], len: usize) -> (Vec<f64>, Vec<f64>) {
    let mut means = Vec::with_capacity(len);
    let mut ses = Vec::with_capacity(len);
    let mut col = vec![0.0; rows.len()];
    for k in 0..len {
        for (c, row) in col.iter_mut().zip(rows) {
            *c = row[k];
        }
        let (m, s) = mean_and_stderr(&col);
        means.push(m);
        ses.push(s);
    }
    (means, ses)
}

/// Scalar bound overlays for the mean and covariance MSE with a Gaussian
/// prior (`E|X0 - m0|^2 = Sigma0`, `E|X0 - m0|^4 = 3 Sigma0^2`).
pub fn bound_curves(model: &LinearGaussianModel, ts: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !model.is_scalar() {
        return Err(FilterError::InvalidArgument(
            "bound overlays are explicit only for d = 1".into(),
        ));
    }
    let k = scalar_constants(model)?;
    let s0 = model.sigma0[(0, 0)];
    let (second, fourth) = (s0, 3.0 * s0 * s0);
    let nf = n as f64;
    let mean = ts
        .iter()
        .map(|&t| (k.c1 * second + k.c2(t) * fourth) * (-2.0 * k.lambda0 * t).exp() / nf)
        .collect();
    let cov = ts
        .iter()
        .map(|&t| k.c3 * fourth * (-4.0 * k.lambda0 * t).exp() / nf)
        .collect();
    Ok((mean, cov))
}

/// Start of the default decay-fit window as a fraction of the horizon.
pub const DECAY_FIT_START: f64 = 0.25;

/// MSE of the empirical moments against the Kalman-Bucy filter over time.
#[allow(clippy::too_many_arguments)]
pub fn mse_vs_time(
    model: &LinearGaussianModel,
    n: usize,
    replicas: usize,
    dt: f64,
    horizon: f64,
    variant: Variant,
    opts: &FpfOptions,
    seed: u64,
) -> Result<ErrorReport> {
    let steps = step_count(dt, horizon)?;
    let (rows, failed) = replicate(replicas, seed, |_, rseed| {
        let obs = simulate_truth(model, dt, horizon, rseed)?;
        let kf = run_kalman(model, &obs, FilterState::prior(model))?;
        let mut mean_err = Vec::with_capacity(steps + 1);
        let mut cov_err = Vec::with_capacity(steps + 1);
        run_fpf_with(model, &obs, n, variant, opts, rseed, |k, _, mom| {
            mean_err.push((&mom.mean - &kf[k].m).norm_squared());
            cov_err.push((&mom.cov - &kf[k].sigma).norm_squared());
        })?;
        Ok((mean_err, cov_err))
    })?;
    let (means, covs): (Vec<Vec<f64>>, Vec<Vec<f64>>) = rows.into_iter().unzip();
    let (mse_mean, se_mean) = column_stats(&means, steps + 1);
    let (mse_cov, se_cov) = column_stats(&covs, steps + 1);
    let ts: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let (bound_mean, bound_cov) = match bound_curves(model, &ts, n) {
        Ok((b, c)) => (Some(b), Some(c)),
        Err(_) => (None, None),
    };
    let mut report = ErrorReport {
        axis: Axis::Time(ts),
        mse_mean,
        se_mean,
        mse_cov,
        se_cov,
        bound_mean,
        bound_cov,
        fit: None,
        fit_cov: None,
        replicas,
        failed,
    };
    report.fit = report.fit_decay(DECAY_FIT_START * horizon, horizon).ok();
    Ok(report)
}

/// MSE at `t_star` for each ensemble size, with a weighted log-log fit.
#[allow(clippy::too_many_arguments)]
pub fn mse_vs_n(
    model: &LinearGaussianModel,
    n_list: &[usize],
    t_star: f64,
    replicas: usize,
    dt: f64,
    variant: Variant,
    opts: &FpfOptions,
    seed: u64,
) -> Result<ErrorReport> {
    check_n_list(n_list)?;
    let steps = step_count(dt, t_star)?;
    let (rows, failed) = replicate(replicas, seed, |_, rseed| {
        let obs = simulate_truth(model, dt, t_star, rseed)?;
        let kf = run_kalman(model, &obs, FilterState::prior(model))?;
        let reference = &kf[steps];
        let mut mean_err = Vec::with_capacity(n_list.len());
        let mut cov_err = Vec::with_capacity(n_list.len());
        for &n in n_list {
            let mut last = None;
            run_fpf_with(model, &obs, n, variant, opts, rseed, |k, _, mom| {
                if k == steps {
                    last = Some(mom.clone());
                }
            })?;
            let mom = last.expect("final grid point visited");
            mean_err.push((&mom.mean - &reference.m).norm_squared());
            cov_err.push((&mom.cov - &reference.sigma).norm_squared());
        }
        Ok((mean_err, cov_err))
    })?;
    let (means, covs): (Vec<Vec<f64>>, Vec<Vec<f64>>) = rows.into_iter().unzip();
    let (mse_mean, se_mean) = column_stats(&means, n_list.len());
    let (mse_cov, se_cov) = column_stats(&covs, n_list.len());
    let xs: Vec<f64> = n_list.iter().map(|&n| n as f64).collect();
    let fit = fit_rate_weighted(&xs, &mse_mean, &se_mean, FitMode::Power).ok();
    let fit_cov = fit_rate_weighted(&xs, &mse_cov, &se_cov, FitMode::Power).ok();
    Ok(ErrorReport {
        axis: Axis::Particles(n_list.to_vec()),
        mse_mean,
        se_mean,
        mse_cov,
        se_cov,
        bound_mean: None,
        bound_cov: None,
        fit,
        fit_cov,
        replicas,
        failed,
    })
}

fn check_n_list(n_list: &[usize]) -> Result<()> {
    if n_list.is_empty() || n_list.iter().any(|&n| n < 2) || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(FilterError::InvalidArgument(format!(
            "N list must be strictly increasing with every N >= 2, got {n_list:?}"
        )));
    }
    Ok(())
}

/// Propagation-of-chaos sweep for the scalar deterministic filter.
#[allow(clippy::too_many_arguments)]
pub fn poc_sweep(
    model: &LinearGaussianModel,
    n_list: &[usize],
    t_star: f64,
    replicas: usize,
    dt: f64,
    f: TestFunction,
    opts: &FpfOptions,
    seed: u64,
) -> Result<PocReport> {
    if !model.is_scalar() {
        return Err(FilterError::InvalidArgument("propagation-of-chaos sweep needs d = 1".into()));
    }
    check_n_list(n_list)?;
    let steps = step_count(dt, t_star)?;
    let gh = GaussHermite::new(QUADRATURE_NODES);
    let (rows, failed) = replicate(replicas, seed, |_, rseed| {
        let obs = simulate_truth(model, dt, t_star, rseed)?;
        let kf = run_kalman(model, &obs, FilterState::prior(model))?;
        let reference = &kf[steps];
        let conditional = gh.expect(reference.m[0], reference.sigma[(0, 0)], |x| f.eval(x));
        let obs_hash = obs.fingerprint();
        let mut coupling = Vec::with_capacity(n_list.len());
        let mut weak = Vec::with_capacity(n_list.len());
        for &n in n_list {
            let mut finite: Option<DMatrix<f64>> = None;
            let mut initial_hash = 0;
            run_fpf_with(model, &obs, n, Variant::Deterministic, opts, rseed, |k, ens, _| {
                if k == 0 {
                    initial_hash = ens.fingerprint();
                }
                if k == steps {
                    finite = Some(ens.particles.clone());
                }
            })?;
            let finite = finite.expect("final grid point visited");

            let initial = coupled_initial_draws(model, n, rseed)?;
            if crate::fpf::Ensemble::new(initial.clone()).fingerprint() != initial_hash
                || obs.fingerprint() != obs_hash
            {
                return Err(FilterError::InvalidArgument("coupled runs diverged in their inputs".into()));
            }
            let mut copies = initial;
            for (k, dz) in obs.dz.iter().enumerate() {
                copies = step_meanfield(&copies, &kf[k], dz, dt, model, opts)?;
            }
            let nf = n as f64;
            coupling.push((&finite - &copies).norm_squared() / nf);
            let empirical = finite.iter().map(|&x| f.eval(x)).sum::<f64>() / nf;
            weak.push((empirical - conditional).powi(2));
        }
        Ok((coupling, weak))
    })?;
    let (c_rows, w_rows): (Vec<Vec<f64>>, Vec<Vec<f64>>) = rows.into_iter().unzip();
    let (coupling_mse, se_coupling) = column_stats(&c_rows, n_list.len());
    let (weak_stat, se_weak) = column_stats(&w_rows, n_list.len());
    let xs: Vec<f64> = n_list.iter().map(|&n| n as f64).collect();
    Ok(PocReport {
        n_list: n_list.to_vec(),
        coupling_fit: fit_rate_weighted(&xs, &coupling_mse, &se_coupling, FitMode::Power).ok(),
        weak_fit: fit_rate_weighted(&xs, &weak_stat, &se_weak, FitMode::Power).ok(),
        coupling_mse,
        se_coupling,
        weak_stat,
        se_weak,
        replicas,
        failed,
    })
}

/// Drift of the stochastic filter's empirical covariance against the
/// Riccati right side, `(Sigma_{k+1} - Sigma_k)/dt - Ric(Sigma_k)`, averaged
/// over steps within each replica and then over replicas.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    /// Mean drift per `vech` entry of the covariance.
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    /// `mean / stderr` per entry.
    pub z: Vec<f64>,
    pub replicas: usize,
    pub failed: usize,
}

impl DriftReport {
    pub fn max_abs_z(&self) -> f64 {
        self.z.iter().fold(0.0, |a, z| a.max(z.abs()))
    }
}

pub fn covariance_drift(
    model: &LinearGaussianModel,
    n: usize,
    replicas: usize,
    dt: f64,
    horizon: f64,
    seed: u64,
) -> Result<DriftReport> {
    let steps = step_count(dt, horizon)?;
    let d = model.d();
    let entries = d * (d + 1) / 2;
    let (rows, failed) = replicate(replicas, seed, |_, rseed| {
        let obs = simulate_truth(model, dt, horizon, rseed)?;
        let mut acc = vec![0.0; entries];
        let mut prev: Option<DMatrix<f64>> = None;
        run_fpf_with(model, &obs, n, Variant::Stochastic, &FpfOptions::default(), rseed, |_, _, mom| {
            if let Some(p) = prev.take() {
                let drift = (&mom.cov - &p) / dt - riccati_rhs(&p, model);
                for (a, v) in acc.iter_mut().zip(crate::linalg::vech(&drift)) {
                    *a += v;
                }
            }
            prev = Some(mom.cov.clone());
        })?;
        Ok(acc.into_iter().map(|a| a / steps as f64).collect::<Vec<f64>>())
    })?;
    let (mean, stderr) = column_stats(&rows, entries);
    let z = mean.iter().zip(&stderr).map(|(m, s)| m / s).collect();
    Ok(DriftReport {
        mean,
        stderr,
        z,
        replicas,
        failed,
    })
}

/// Sanity helper used by tests and the CLI: the finite-N filter and the
/// mean-field copies must start from identical draws.
pub fn coupling_fingerprints(model: &LinearGaussianModel, n: usize, seed: u64) -> Result<(u64, u64)> {
    let (ens, _) = initial_ensemble(model, n, seed)?;
    let copies = coupled_initial_draws(model, n, seed)?;
    Ok((ens.fingerprint(), crate::fpf::Ensemble::new(copies).fingerprint()))
}
