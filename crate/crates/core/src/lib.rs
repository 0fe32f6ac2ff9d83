//! Jackknife model averaging of partially linear quantile-coefficient models.
//!
//! Each candidate model makes one continuous covariate nonparametric (a
//! B-spline block) and keeps the rest linear; all coefficients are linear
//! combinations of known functions of the quantile level, fitted by
//! minimizing the check loss integrated over τ. Simplex weights over the
//! candidates are chosen by leave-one-out cross-validation.

pub mod averaging;
pub mod baselines;
pub mod candidate;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod model_file;
pub mod simulation;
pub mod solver;
pub mod spline;
pub mod tau_basis;

pub use candidate::{build_design, regression_vector, CandidateModel, CoefMatrix, ColumnOrder, Design};
pub use data::{ColumnKind, Dataset};
pub use error::{QpmaError, Result};
pub use solver::{check_loss, fit, fit_loo, integrated_loss, FitConfig, FitResult};
pub use spline::SplineSpec;
pub use tau_basis::{normal_quantile, tau_grid, TauBasis};
