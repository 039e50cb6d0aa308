//! Log-symmetric semiparametric regression and Poisson GLMs for age × period
//! mortality tables.
//!
//! The location and dispersion of `log T` each get a linear predictor with
//! optional penalized spline terms (natural cubic or P-splines). A Poisson
//! GLM with a population offset serves as the count-scale baseline.
//! Diagnostics cover simulated residual envelopes, the correlation between
//! fitted and observed log-rates, and AIC comparison.

pub mod basis;
pub mod data;
pub mod diagnostics;
pub mod family;
pub mod fit;
pub mod linalg;
pub mod model;
pub mod par;
pub mod poisson;
pub mod stats;
pub mod synthetic;

pub use data::{ObservationTable, ZeroPolicy};
pub use diagnostics::{
    compare_models, simulated_envelope, ComparisonReport, EnvelopeKind, EnvelopeResult, FittedModel,
};
pub use family::Generator;
pub use fit::{fit, fit_with, FitError, LogSymFit};
pub use model::{Covariate, ModelSpec, Smoothing, TermSpec};
pub use par::Execution;
pub use poisson::{fit_poisson, PoissonFit};
pub use synthetic::{simulate_table, TruthSpec};
