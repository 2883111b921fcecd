//! Per-delay-map linear response models.
//!
//! Three fitting routes share one [`LinearModel`] type: ordinary least
//! squares with a minimum-norm answer for rank-deficient designs, a
//! least-angle path chosen by blocked cross-validation, and a uniformly
//! shrunken least-squares fallback for when cross-validation keeps no
//! variable at all.

mod cv;
mod lars;
mod model;
mod ols;

pub use cv::{fit_lars_cv, CvSettings, FRACTION_GRID_POINTS};
pub use lars::{lars_path, LarsPath, LarsStep};
pub use model::{predict, read_models_csv, write_models_csv, FitMethod, LinearModel};
pub use ols::{fit_ols, ols_coefficients};
