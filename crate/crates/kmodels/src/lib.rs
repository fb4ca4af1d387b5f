//! K-Models clustering of time series under shared autoregressive and
//! ARMA models, with portmanteau goodness-of-fit diagnostics.
//!
//! The pipeline: simulate or ingest series ([`series`], [`simulate`]),
//! fit cluster-wide models ([`ar`], [`arma`]), alternate assignment and
//! refitting ([`engine`]), then judge the result with grouped residual
//! tests ([`diagnostics`]) and partition scores ([`evaluation`]).

pub mod ar;
pub mod arma;
pub mod chi2;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod evaluation;
mod linalg;
pub mod series;
pub mod simulate;

pub use error::Error;
