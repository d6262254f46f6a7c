//! TOML experiment configuration.
//!
//! ```toml
//! [model]
//! A = 0.1                  # scalar, flat row-major array, or nested rows
//! C = 1.0
//! sigma_B = 1.0
//! m0 = 3.0                 # d = len(m0)
//! Sigma0 = 5.0
//!
//! [run]
//! variant = "deterministic"
//! N = 100
//! dt = 0.001
//! T = 5.0
//! ```

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analysis::TestFunction;
use crate::error::{FilterError, Result};
use crate::fpf::{DeterministicScheme, FpfOptions, OmegaMode, Variant};
use crate::model::LinearGaussianModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArrayValue {
    Scalar(f64),
    Flat(Vec<f64>),
    Rows(Vec<Vec<f64>>),
}

impl ArrayValue {
    fn flat(&self) -> Vec<f64> {
        match self {
            ArrayValue::Scalar(x) => vec![*x],
            ArrayValue::Flat(v) => v.clone(),
            ArrayValue::Rows(rows) => rows.iter().flatten().copied().collect(),
        }
    }

    fn row_lengths_consistent(&self) -> bool {
        match self {
            ArrayValue::Rows(rows) => rows.windows(2).all(|w| w[0].len() == w[1].len()),
            _ => true,
        }
    }

    /// Matrix with `cols` columns filled in row-major order.
    fn matrix(&self, field: &'static str, cols: usize) -> Result<DMatrix<f64>> {
        let data = self.flat();
        if !self.row_lengths_consistent() || data.is_empty() || data.len() % cols != 0 {
            return Err(FilterError::Dimension {
                field,
                expected: format!("a multiple of {cols} entries in equal-length rows"),
                got: format!("{} entries", data.len()),
            });
        }
        Ok(DMatrix::from_row_slice(data.len() / cols, cols, &data))
    }
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(rename = "A")]
    pub a: ArrayValue,
    #[serde(rename = "C")]
    pub c: ArrayValue,
    pub sigma_B: ArrayValue,
    pub m0: ArrayValue,
    #[serde(rename = "Sigma0")]
    pub sigma0: ArrayValue,
    #[serde(default)]
    pub allow_singular_prior: bool,
}

impl ModelConfig {
    pub fn build(&self) -> Result<LinearGaussianModel> {
        let m0 = DVector::from_vec(self.m0.flat());
        let d = m0.len();
        if d == 0 {
            return Err(FilterError::Dimension {
                field: "m0",
                expected: "at least one entry".into(),
                got: "0".into(),
            });
        }
        let a = self.a.matrix("A", d)?;
        let c = self.c.matrix("C", d)?;
        let sigma_b = self.sigma_B.matrix("sigma_B", d)?;
        let sigma0 = self.sigma0.matrix("Sigma0", d)?;
        LinearGaussianModel::new(a, c, sigma_b, m0, sigma0)
    }
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub variant: Variant,
    pub omega_mode: OmegaMode,
    pub scheme: DeterministicScheme,
    pub pseudo_inverse: bool,
    pub N: usize,
    pub M: usize,
    pub dt: f64,
    pub T: f64,
    pub t_star: f64,
    pub N_list: Vec<usize>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub test_function: TestFunction,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Deterministic,
            omega_mode: OmegaMode::Zero,
            scheme: DeterministicScheme::MomentMatched,
            pseudo_inverse: false,
            N: 100,
            M: 1000,
            dt: 1e-3,
            T: 5.0,
            t_star: 2.0,
            N_list: vec![10, 32, 100, 316, 1000],
            seed: 0,
            output_dir: PathBuf::from("out"),
            test_function: TestFunction::Tanh,
        }
    }
}

impl RunConfig {
    pub fn options(&self) -> FpfOptions {
        FpfOptions {
            omega: self.omega_mode,
            scheme: self.scheme,
            pseudo_inverse: self.pseudo_inverse,
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(FilterError::InvalidArgument(msg));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("run.dt must be positive, got {}", self.dt));
        }
        if !(self.T >= self.dt) {
            return bad(format!("run.T = {} must be at least dt", self.T));
        }
        if !(self.t_star >= self.dt) {
            return bad(format!("run.t_star = {} must be at least dt", self.t_star));
        }
        if self.N < 2 {
            return bad(format!("run.N must be >= 2, got {}", self.N));
        }
        if self.M < 2 {
            return bad(format!("run.M must be >= 2, got {}", self.M));
        }
        if self.N_list.is_empty() || self.N_list.iter().any(|&n| n < 2) || self.N_list.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("run.N_list must be strictly increasing with entries >= 2, got {:?}", self.N_list));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| FilterError::InvalidArgument(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FilterError::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Model plus run-block checks, all before any computation.
    pub fn resolve(&self) -> Result<LinearGaussianModel> {
        self.run.check()?;
        self.model.build()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }
}
