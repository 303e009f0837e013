//! Matrix completion and extrapolation with Kronecker-structured kernels.
//!
//! The crate covers graph and kernel construction, the closed-form and
//! feature-space kernel regression estimators, online SGD, factorization
//! baselines, numerical checks of the error theory, and experiment sweeps.

pub mod error;
pub mod graphs;
pub mod kernels;
pub mod linalg;
pub mod sampling;
pub mod analysis;
pub mod bench;
pub mod io;
pub mod solvers;

pub use error::{Error, Result};
pub use faer::Mat;
