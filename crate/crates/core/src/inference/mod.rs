//! Parameter estimation: transforms, the simplex optimizer, multi-start
//! fitting, profile intervals and predictive checks.

mod fit;
mod nelder_mead;
mod ppcheck;
mod profile;
mod transform;

pub use fit::{fit, loglik_at, FitOptions, FitResult, Hypercube, StartRecord};
pub use nelder_mead::{nelder_mead, NelderMeadOptions, NelderMeadResult};
pub use ppcheck::{initial_counts, post_predictive, quantile, PredictiveRow};
pub use profile::{
    confidence_interval, default_grid, profile_ci, ProfileResult, CI_THRESHOLD, DEFAULT_GRID_POINTS,
};
pub use transform::{Parameterization, Transform, MU_FLOOR};
