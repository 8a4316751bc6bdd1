//! Semiparametric linear regression for left-truncated and right-censored
//! responses.
//!
//! The model is `Y* = Xᵀβ + e` with the error law left unspecified. The log
//! hazard of `e` is approximated by a cubic B-spline, and `(β, γ)` are
//! estimated jointly by maximizing the resulting sieve log-likelihood.
//! Variance estimates come either from the efficient-score plug-in or from
//! inverting the observed information of `(β, γ)`.
//!
//! ```no_run
//! use ltrc_sieve::{fit, infer, FitConfig, Observation};
//!
//! # fn main() -> ltrc_sieve::Result<()> {
//! let data: Vec<Observation> = load();
//! let result = fit(&data, 1, &FitConfig::default())?;
//! let report = infer(&result, &data)?;
//! println!("{:?} ± {:?}", result.theta_hat.beta, report.std_errors());
//! # Ok(())
//! # }
//! # fn load() -> Vec<Observation> { unimplemented!() }
//! ```

pub mod basis;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod likelihood;
mod linalg;
pub mod quadrature;
pub mod simulation;

pub use basis::{build_basis, eval_basis, BasisSpec, KnotPlacement};
pub use error::{Error, EvalError, Result};
pub use estimator::{fit, maximize, naive_ls, select_knots, FitConfig, FitResult};
pub use inference::{efficient_scores, infer, variance_estimates, xbar, InferenceReport};
pub use likelihood::{information, log_likelihood, residuals, score, Observation, Theta};
pub use quadrature::{quadrature_grid, QuadratureGrid};
pub use simulation::{run_study, simulate_dataset, ErrorLaw, SimReport, SimScenario};
