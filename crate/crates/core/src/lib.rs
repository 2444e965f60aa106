//! Rainbow networks: training, alignment, weight-covariance estimation and
//! resampling of bias-free deep networks.

extern crate openblas_src;

pub mod align;
pub mod check;
pub mod data;
pub mod dynamics;
pub mod equivariance;
pub mod experiment;
pub mod error;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod net;
pub mod rainbow;
pub mod rng;

pub use error::{Error, Result};
