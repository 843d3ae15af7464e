//! Adaptive probabilistic forecasting of electricity (net-)load.
//!
//! The engine is built in two steps. An additive model with penalized
//! spline effects is fitted offline and produces a mean forecast; its
//! frozen, standardized effects then feed a Kalman filter that adapts the
//! linear combination online. Quantile forecasts come from quantile
//! regressions on the residuals of the mean model, adapted online by
//! gradient descent on the pinball loss, with the step size chosen by
//! Bernstein Online Aggregation.
//!
//! Modules follow the flow of data:
//!
//! - [`dataset`]: CSV ingestion, feature construction, splits, synthetic series
//! - [`gam`]: spline bases and the penalized additive fit
//! - [`kalman`]: state-space adaptation and the Gaussian predictive law
//! - [`quantile`]: pinball loss, offline quantile regression, online updates
//! - [`aggregation`]: expert pools over step sizes
//! - [`evaluation`]: point and probabilistic metrics, reliability, persistence
//! - [`pipeline`]: strategies, the online engine, and the no-lookahead audit

pub mod aggregation;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod gam;
pub mod kalman;
mod linalg;
pub mod pipeline;
pub mod quantile;

pub use error::{Error, ErrorKind, Result};
