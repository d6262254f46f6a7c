//! The linear-Gaussian filtering problem
//!
//! ```text
//! dX_t = A X_t dt + sigma_B dB_t,     X_0 ~ N(m0, Sigma0)
//! dZ_t = C X_t dt + dW_t
//! ```
//!
//! with unit-covariance Wiener processes `B`, `W`, plus detectability and
//! stabilizability checks and an Euler-Maruyama simulator for the hidden signal and the
//! observation increments.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{FilterError, Result};
use crate::linalg::{self, psd_factor};
use crate::rng::RngStream;

/// Modes with real part at or above this value must pass the PBH rank test.
pub const PBH_EIGEN_THRESHOLD: f64 = -1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianModel {
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub sigma_b: DMatrix<f64>,
    pub m0: DVector<f64>,
    pub sigma0: DMatrix<f64>,
}

impl LinearGaussianModel {
    /// Builds a model, checking that every block is dimensionally consistent
    /// with the state dimension `d = m0.len()`.
    pub fn new(
        a: DMatrix<f64>,
        c: DMatrix<f64>,
        sigma_b: DMatrix<f64>,
        m0: DVector<f64>,
        sigma0: DMatrix<f64>,
    ) -> Result<Self> {
        let d = m0.len();
        if d == 0 {
            return Err(dim("m0", "at least 1", "0"));
        }
        check_shape("A", &a, d, d)?;
        if c.ncols() != d || c.nrows() == 0 {
            return Err(dim("C", &format!("m x {d}"), &shape(&c)));
        }
        check_shape("sigma_B", &sigma_b, d, d)?;
        check_shape("Sigma0", &sigma0, d, d)?;
        Ok(Self {
            a,
            c,
            sigma_b,
            m0,
            sigma0,
        })
    }

    pub fn scalar(a: f64, c: f64, sigma_b: f64, m0: f64, sigma0: f64) -> Self {
        Self {
            a: DMatrix::from_element(1, 1, a),
            c: DMatrix::from_element(1, 1, c),
            sigma_b: DMatrix::from_element(1, 1, sigma_b),
            m0: DVector::from_element(1, m0),
            sigma0: DMatrix::from_element(1, 1, sigma0),
        }
    }

    /// State dimension.
    pub fn d(&self) -> usize {
        self.m0.len()
    }

    /// Observation dimension.
    pub fn m(&self) -> usize {
        self.c.nrows()
    }

    /// `sigma_B sigma_B^T`.
    pub fn process_cov(&self) -> DMatrix<f64> {
        &self.sigma_b * self.sigma_b.transpose()
    }

    /// `C^T C`.
    pub fn info(&self) -> DMatrix<f64> {
        self.c.transpose() * &self.c
    }

    pub fn is_scalar(&self) -> bool {
        self.d() == 1 && self.m() == 1
    }

    pub fn with_prior(&self, m0: DVector<f64>, sigma0: DMatrix<f64>) -> Result<Self> {
        Self::new(self.a.clone(), self.c.clone(), self.sigma_b.clone(), m0, sigma0)
    }
}

fn shape(m: &DMatrix<f64>) -> String {
    format!("{} x {}", m.nrows(), m.ncols())
}

fn dim(field: &'static str, expected: &str, got: &str) -> FilterError {
    FilterError::Dimension {
        field,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}

fn check_shape(field: &'static str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(dim(field, &format!("{rows} x {cols}"), &shape(m)));
    }
    Ok(())
}

/// Outcome of one PBH rank test.
#[derive(Debug, Clone, PartialEq)]
pub struct PbhCheck {
    pub passed: bool,
    /// Non-stable eigenvalues of `A` at which the rank test failed.
    pub failing_eigenvalues: Vec<Complex<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub detectable: PbhCheck,
    pub stabilizable: PbhCheck,
    pub sigma0_symmetric: bool,
    pub sigma0_psd: bool,
    pub sigma0_pd: bool,
    /// Whether a PSD-but-singular prior is accepted (pseudo-inverse mode).
    pub allow_singular_prior: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.detectable.passed
            && self.stabilizable.passed
            && self.sigma0_symmetric
            && self.sigma0_psd
            && (self.sigma0_pd || self.allow_singular_prior)
    }

    /// One line per condition, `PASS`/`FAIL` prefixed.
    pub fn lines(&self) -> Vec<String> {
        let tag = |ok: bool| if ok { "PASS" } else { "FAIL" };
        let eigs = |c: &PbhCheck| {
            c.failing_eigenvalues
                .iter()
                .map(|l| format!("{:.6}{:+.6}i", l.re, l.im))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let mut out = Vec::new();
        let mut pbh = |name: &str, c: &PbhCheck| {
            if c.passed {
                out.push(format!("PASS {name}"));
            } else {
                out.push(format!("FAIL {name}: PBH rank deficient at eigenvalue(s) {}", eigs(c)));
            }
        };
        pbh("detectability (A, C)", &self.detectable);
        pbh("stabilizability (A, sigma_B)", &self.stabilizable);
        out.push(format!("{} Sigma0 symmetric", tag(self.sigma0_symmetric)));
        out.push(format!("{} Sigma0 positive semi-definite", tag(self.sigma0_psd)));
        let pd_ok = self.sigma0_pd || self.allow_singular_prior;
        let note = if !self.sigma0_pd && self.allow_singular_prior {
            " (singular prior allowed)"
        } else {
            ""
        };
        out.push(format!("{} Sigma0 positive definite{note}", tag(pd_ok)));
        out
    }
}

/// Checks detectability of `(A, C)`, stabilizability of `(A, sigma_B)` and
/// the prior covariance.
pub fn validate_model(model: &LinearGaussianModel, allow_singular_prior: bool) -> ValidationReport {
    let at = model.a.transpose();
    let sbt = model.sigma_b.transpose();
    let detectable = pbh_check(&model.a, &model.c);
    let stabilizable = pbh_check(&at, &sbt);
    let sigma0_symmetric = linalg::is_symmetric(&model.sigma0, 1e-12);
    let min_eig = linalg::min_eigenvalue(&model.sigma0);
    let scale = model.sigma0.amax().max(1.0);
    ValidationReport {
        detectable,
        stabilizable,
        sigma0_symmetric,
        sigma0_psd: min_eig >= -1e-12 * scale,
        sigma0_pd: min_eig > 1e-12 * scale,
        allow_singular_prior,
    }
}

/// PBH test: `rank [A - lambda I; C] = d` for every eigenvalue `lambda` of
/// `A` with `Re lambda >= -1e-12`.
pub fn pbh_check(a: &DMatrix<f64>, c: &DMatrix<f64>) -> PbhCheck {
    let d = a.nrows();
    let rows = d + c.nrows();
    let scale = a.norm().max(c.norm()).max(1.0);
    let tol = 1e-6 * scale;
    let mut failing = Vec::new();
    for lambda in a.clone().complex_eigenvalues().iter() {
        if lambda.re < PBH_EIGEN_THRESHOLD {
            continue;
        }
        let mut stacked = DMatrix::<Complex<f64>>::zeros(rows, d);
        for i in 0..d {
            for j in 0..d {
                let mut v = Complex::new(a[(i, j)], 0.0);
                if i == j {
                    v -= lambda;
                }
                stacked[(i, j)] = v;
            }
        }
        for i in 0..c.nrows() {
            for j in 0..d {
                stacked[(d + i, j)] = Complex::new(c[(i, j)], 0.0);
            }
        }
        let sv = stacked.svd(false, false).singular_values;
        let rank = sv.iter().filter(|&&s| s > tol).count();
        if rank < d {
            failing.push(*lambda);
        }
    }
    PbhCheck {
        passed: failing.is_empty(),
        failing_eigenvalues: failing,
    }
}

/// A discretized observation record shared by every filter in a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPath {
    pub dt: f64,
    /// Observation increments, one per step.
    pub dz: Vec<DVector<f64>>,
    /// Hidden signal at `t_0 .. t_K` when the path was simulated.
    pub x_true: Option<Vec<DVector<f64>>>,
}

impl ObservationPath {
    pub fn new(dt: f64, dz: Vec<DVector<f64>>) -> Self {
        Self { dt, dz, x_true: None }
    }

    pub fn steps(&self) -> usize {
        self.dz.len()
    }

    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    /// The same path on a grid `factor` times coarser: increments are summed
    /// and the hidden signal is subsampled.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.steps() % factor != 0 {
            return Err(FilterError::InvalidArgument(format!(
                "cannot coarsen {} steps by {factor}",
                self.steps()
            )));
        }
        let dz = self
            .dz
            .chunks(factor)
            .map(|c| c.iter().skip(1).fold(c[0].clone(), |acc, v| acc + v))
            .collect();
        let x_true = self
            .x_true
            .as_ref()
            .map(|xs| xs.iter().step_by(factor).cloned().collect());
        Ok(Self {
            dt: self.dt * factor as f64,
            dz,
            x_true,
        })
    }

    /// Hash of the increments' bit patterns; equal for bitwise-identical paths.
    pub fn fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.dt.to_bits().hash(&mut h);
        for v in &self.dz {
            for x in v.iter() {
                x.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Number of Euler steps covering `[0, horizon]` with step `dt`.
pub fn step_count(dt: f64, horizon: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(FilterError::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if !(horizon >= dt) {
        return Err(FilterError::InvalidArgument(format!(
            "horizon T={horizon} must be at least dt={dt}"
        )));
    }
    Ok((horizon / dt).round() as usize)
}

/// Draws `m + L z` with `L L^T = cov` and `z` standard normal.
pub fn sample_gaussian(
    mean: &DVector<f64>,
    factor: &DMatrix<f64>,
    source: &mut crate::rng::GaussianSource,
) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| source.normal());
    mean + factor * z
}

/// Euler-Maruyama simulation of the signal and observation increments.
///
/// `X_{k+1} = X_k + A X_k dt + sigma_B sqrt(dt) eta_k`,
/// `dZ_k = C X_k dt + sqrt(dt) nu_k`. The prior draw and `eta` come from the
/// signal stream of `seed`, `nu` from its observation stream.
pub fn simulate_truth(
    model: &LinearGaussianModel,
    dt: f64,
    horizon: f64,
    seed: u64,
) -> Result<ObservationPath> {
    let steps = step_count(dt, horizon)?;
    let d = model.d();
    let m = model.m();
    let mut signal = RngStream::signal(seed).generator();
    let mut obs = RngStream::observation(seed).generator();
    let factor = psd_factor(&model.sigma0)?;
    let sqdt = dt.sqrt();

    let mut x = sample_gaussian(&model.m0, &factor, &mut signal);
    let mut xs = Vec::with_capacity(steps + 1);
    let mut dz = Vec::with_capacity(steps);
    xs.push(x.clone());
    let mut eta = DVector::zeros(d);
    let mut nu = DVector::zeros(m);
    for k in 0..steps {
        signal.fill_normal(eta.as_mut_slice());
        obs.fill_normal(nu.as_mut_slice());
        let inc = &model.c * &x * dt + &nu * sqdt;
        let next = &x + &model.a * &x * dt + &model.sigma_b * &eta * sqdt;
        if !next.iter().chain(inc.iter()).all(|v| v.is_finite()) {
            return Err(FilterError::NonFinite {
                step: k,
                what: "signal or observation",
            });
        }
        dz.push(inc);
        x = next;
        xs.push(x.clone());
    }
    Ok(ObservationPath {
        dt,
        dz,
        x_true: Some(xs),
    })
}
