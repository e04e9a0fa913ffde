//! Spectral loss functions and verification tools for global fields.
//!
//! The crate provides spherical-harmonic transforms on Gaussian and
//! equiangular grids, the amplitude/coherence decomposition of the mean
//! squared error, the amplitude-adjusted AMSE loss with gradients, effective
//! resolution diagnostics, ensemble scores, quantile–quantile statistics and
//! a small training experiment that exhibits MSE smoothing.

pub mod diag;
pub mod ensemble;
pub mod error;
pub mod grid;
pub mod io;
pub mod legendre;
pub mod loss;
pub mod qq;
pub mod quadrature;
pub mod random;
pub mod sht;
pub mod toy;

pub use diag::{diagnostics, SpectralDiagnostics};
pub use ensemble::{EnsembleSet, ScoreSeries};
pub use error::{Error, FormatErrorKind, Result};
pub use grid::{Grid, GridField, GridKind};
pub use loss::{LossBreakdown, LossKind};
pub use qq::QQResult;
pub use sht::{SpectralField, Transform, Truncation};
pub use toy::{SyntheticSpec, TrainConfig, Trajectory};
