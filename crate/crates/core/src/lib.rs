//! Linear-Gaussian filtering lab: Kalman-Bucy filter, finite-N feedback
//! particle filters, mean-field copies, Riccati routines and a Monte-Carlo
//! error harness.

pub mod analysis;
pub mod config;
pub mod error;
pub mod fpf;
pub mod io;
pub mod kalman;
pub mod linalg;
pub mod model;
pub mod riccati;
pub mod rng;

pub use config::ExperimentConfig;
pub use error::{FilterError, Result};
pub use fpf::{DeterministicScheme, Ensemble, EmpiricalMoments, FpfOptions, OmegaMode, Variant};
pub use kalman::FilterState;
pub use model::{LinearGaussianModel, ObservationPath};
pub use riccati::SteadyState;
pub use rng::RngStream;
