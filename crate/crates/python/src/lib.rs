//! Python bindings: `import fpf_lab`.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fpf_core::analysis::{self, ErrorReport, TestFunction};
use fpf_core::fpf::{self, DeterministicScheme, FpfOptions, OmegaMode, Variant};
use fpf_core::kalman::{self, FilterState};
use fpf_core::model::{self, LinearGaussianModel};
use fpf_core::{riccati, FilterError};

fn err(e: FilterError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>], field: &str) -> PyResult<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err(format!("{field} must be a non-empty rectangular list of rows")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn variant(name: &str) -> PyResult<Variant> {
    match name {
        "deterministic" => Ok(Variant::Deterministic),
        "stochastic" => Ok(Variant::Stochastic),
        _ => Err(PyValueError::new_err(format!("unknown variant {name:?}"))),
    }
}

fn options(omega: &str, scheme: &str) -> PyResult<FpfOptions> {
    let omega = match omega {
        "zero" => OmegaMode::Zero,
        "optimal" => OmegaMode::Optimal,
        _ => return Err(PyValueError::new_err(format!("unknown omega mode {omega:?}"))),
    };
    let scheme = match scheme {
        "moment-matched" => DeterministicScheme::MomentMatched,
        "euler" => DeterministicScheme::Euler,
        _ => return Err(PyValueError::new_err(format!("unknown scheme {scheme:?}"))),
    };
    Ok(FpfOptions { omega, scheme, pseudo_inverse: false })
}

/// Linear-Gaussian model `dX = A X dt + sigma_B dB`, `dZ = C X dt + dW`.
#[pyclass(name = "Model", module = "fpf_lab", frozen)]
struct PyModel {
    inner: LinearGaussianModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (a, c, sigma_b, m0, sigma0))]
    fn new(a: Vec<Vec<f64>>, c: Vec<Vec<f64>>, sigma_b: Vec<Vec<f64>>, m0: Vec<f64>, sigma0: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = LinearGaussianModel::new(
            matrix(&a, "A")?,
            matrix(&c, "C")?,
            matrix(&sigma_b, "sigma_B")?,
            DVector::from_vec(m0),
            matrix(&sigma0, "Sigma0")?,
        )
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn scalar(a: f64, c: f64, sigma_b: f64, m0: f64, sigma0: f64) -> Self {
        Self { inner: LinearGaussianModel::scalar(a, c, sigma_b, m0, sigma0) }
    }

    #[staticmethod]
    fn from_config(path: &str) -> PyResult<Self> {
        let cfg = fpf_core::ExperimentConfig::load(path.as_ref()).map_err(err)?;
        Ok(Self { inner: cfg.model.build().map_err(err)? })
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    /// `(passed, report_lines)`.
    #[pyo3(signature = (allow_singular_prior = false))]
    fn validate(&self, allow_singular_prior: bool) -> (bool, Vec<String>) {
        let r = model::validate_model(&self.inner, allow_singular_prior);
        (r.passed(), r.lines())
    }

    fn solve_are<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let ss = riccati::solve_are(&self.inner).map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("sigma_inf", rows(&ss.sigma_inf))?;
        out.set_item("lambda0", ss.lambda0)?;
        out.set_item("f_inf", rows(&ss.f_inf))?;
        out.set_item("residual", ss.residual)?;
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!("Model(d={}, m={})", self.inner.d(), self.inner.m())
    }
}

/// Closed-form scalar Riccati solution at time `t`.
#[pyfunction]
fn scalar_explicit(sigma0: f64, t: f64, model: &PyModel) -> PyResult<f64> {
    riccati::scalar_explicit(sigma0, t, &model.inner).map_err(err)
}

/// RK4 covariance trajectory as a list of matrices.
#[pyfunction]
fn integrate_riccati(model: &PyModel, dt: f64, horizon: f64) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let m = &model.inner;
    let traj = riccati::integrate_riccati(&m.sigma0, m, dt, horizon).map_err(err)?;
    Ok(traj.sigmas.iter().map(rows).collect())
}

/// Simulates one signal/observation path and runs the Kalman-Bucy filter
/// and a finite-N filter on it.
#[pyfunction]
#[pyo3(signature = (model, n, dt, horizon, seed, variant = "deterministic", omega = "zero", scheme = "moment-matched"))]
#[allow(clippy::too_many_arguments)]
fn run_filters<'py>(
    py: Python<'py>,
    model: &PyModel,
    n: usize,
    dt: f64,
    horizon: f64,
    seed: u64,
    variant: &str,
    omega: &str,
    scheme: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let m = &model.inner;
    let obs = model::simulate_truth(m, dt, horizon, seed).map_err(err)?;
    let kf = kalman::run_kalman(m, &obs, FilterState::prior(m)).map_err(err)?;
    let run = fpf::run_fpf(m, &obs, n, self::variant(variant)?, &options(omega, scheme)?, seed, true).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("t", (0..=obs.steps()).map(|k| k as f64 * dt).collect::<Vec<_>>())?;
    let vec = |v: &DVector<f64>| v.iter().copied().collect::<Vec<f64>>();
    out.set_item("x_true", obs.x_true.as_ref().map(|xs| xs.iter().map(vec).collect::<Vec<_>>()))?;
    out.set_item("m_kf", kf.iter().map(|s| vec(&s.m)).collect::<Vec<_>>())?;
    out.set_item("sigma_kf", kf.iter().map(|s| rows(&s.sigma)).collect::<Vec<_>>())?;
    out.set_item("m_n", run.moments.iter().map(|s| vec(&s.mean)).collect::<Vec<_>>())?;
    out.set_item("sigma_n", run.moments.iter().map(|s| rows(&s.cov)).collect::<Vec<_>>())?;
    let ens = run.ensembles.unwrap_or_default();
    out.set_item("particles", ens.iter().map(|e| rows(&e.particles)).collect::<Vec<_>>())?;
    Ok(out)
}

fn report_dict<'py>(py: Python<'py>, r: &ErrorReport) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("axis", r.axis.values())?;
    out.set_item("mse_mean", r.mse_mean.clone())?;
    out.set_item("se_mean", r.se_mean.clone())?;
    out.set_item("mse_cov", r.mse_cov.clone())?;
    out.set_item("se_cov", r.se_cov.clone())?;
    out.set_item("bound_mean", r.bound_mean.clone())?;
    out.set_item("bound_cov", r.bound_cov.clone())?;
    out.set_item("fit", r.fit.as_ref().map(|f| (f.slope, f.half_width)))?;
    out.set_item("fit_cov", r.fit_cov.as_ref().map(|f| (f.slope, f.half_width)))?;
    out.set_item("replicas", r.replicas)?;
    out.set_item("failed", r.failed)?;
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (model, n, replicas, dt, horizon, seed, variant = "deterministic", omega = "zero"))]
#[allow(clippy::too_many_arguments)]
fn mse_vs_time<'py>(
    py: Python<'py>,
    model: &PyModel,
    n: usize,
    replicas: usize,
    dt: f64,
    horizon: f64,
    seed: u64,
    variant: &str,
    omega: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let (v, o) = (self::variant(variant)?, options(omega, "moment-matched")?);
    let r = py
        .detach(|| analysis::mse_vs_time(&model.inner, n, replicas, dt, horizon, v, &o, seed))
        .map_err(err)?;
    report_dict(py, &r)
}

#[pyfunction]
#[pyo3(signature = (model, n_list, t_star, replicas, dt, seed, variant = "deterministic", omega = "zero"))]
#[allow(clippy::too_many_arguments)]
fn mse_vs_n<'py>(
    py: Python<'py>,
    model: &PyModel,
    n_list: Vec<usize>,
    t_star: f64,
    replicas: usize,
    dt: f64,
    seed: u64,
    variant: &str,
    omega: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let (v, o) = (self::variant(variant)?, options(omega, "moment-matched")?);
    let r = py
        .detach(|| analysis::mse_vs_n(&model.inner, &n_list, t_star, replicas, dt, v, &o, seed))
        .map_err(err)?;
    report_dict(py, &r)
}

#[pyfunction]
#[pyo3(signature = (model, n_list, t_star, replicas, dt, seed, test_function = "tanh"))]
#[allow(clippy::too_many_arguments)]
fn poc_sweep<'py>(
    py: Python<'py>,
    model: &PyModel,
    n_list: Vec<usize>,
    t_star: f64,
    replicas: usize,
    dt: f64,
    seed: u64,
    test_function: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let f = match test_function {
        "tanh" => TestFunction::Tanh,
        "sin" => TestFunction::Sin,
        "const" => TestFunction::Const,
        _ => return Err(PyValueError::new_err(format!("unknown test function {test_function:?}"))),
    };
    let o = FpfOptions::default();
    let r = py
        .detach(|| analysis::poc_sweep(&model.inner, &n_list, t_star, replicas, dt, f, &o, seed))
        .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("n", r.n_list.clone())?;
    out.set_item("coupling_mse", r.coupling_mse.clone())?;
    out.set_item("se_coupling", r.se_coupling.clone())?;
    out.set_item("weak_stat", r.weak_stat.clone())?;
    out.set_item("se_weak", r.se_weak.clone())?;
    out.set_item("coupling_fit", r.coupling_fit.as_ref().map(|f| (f.slope, f.half_width)))?;
    out.set_item("weak_fit", r.weak_fit.as_ref().map(|f| (f.slope, f.half_width)))?;
    Ok(out)
}

#[pymodule]
fn fpf_lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(scalar_explicit, m)?)?;
    m.add_function(wrap_pyfunction!(integrate_riccati, m)?)?;
    m.add_function(wrap_pyfunction!(run_filters, m)?)?;
    m.add_function(wrap_pyfunction!(mse_vs_time, m)?)?;
    m.add_function(wrap_pyfunction!(mse_vs_n, m)?)?;
    m.add_function(wrap_pyfunction!(poc_sweep, m)?)?;
    Ok(())
}
