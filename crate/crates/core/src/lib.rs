//! Approximate likelihood inference for partially observed epidemics.
//!
//! A density-dependent Markov jump epidemic (SIR, SEIR) is approximated by a
//! linear Gaussian state-space system built from the limiting ODE, its
//! resolvent and the diffusion matrix. Reporting and measurement noise are
//! folded into a Gaussian observation equation, and the resulting
//! likelihood is evaluated with a Kalman filter and maximized with
//! multi-start Nelder-Mead.
//!
//! Module map:
//!
//! - [`model`]: jump models and their drift, diffusion and Jacobian.
//! - [`simulate`]: exact SSA trajectories, extinction filtering and noisy
//!   observations.
//! - [`gaussian_approx`]: ODE solution, resolvent and the discrete system.
//! - [`kalman`]: conditioning, filtering and the log-likelihood.
//! - [`inference`]: transforms, optimizer, fitting, profiles, predictive checks.
//! - [`study`]: replication scenarios (simulate then fit, many times).
//! - [`data`]: observation CSV I/O and the bundled boarding-school outbreak.

// `!(x > 0.0)` is used on purpose to reject NaN alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod data;
pub mod error;
pub mod gaussian_approx;
pub mod inference;
pub mod kalman;
pub(crate) mod linalg;
pub mod model;
pub mod simulate;
pub mod study;

pub use error::{Error, Result};
pub use gaussian_approx::{DiscreteSystem, OdeSolution, SystemOptions};
pub use kalman::{FilterState, LogLikResult};
pub use model::{CompartmentalModel, EpidemicParams, ModelKind, ThetaFull};
pub use simulate::{ObservationSeries, Trajectory};
