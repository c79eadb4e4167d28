//! Nonlinear spectral decompositions of finite-dimensional signals with
//! respect to absolutely one-homogeneous regularizers.

pub mod error;
pub mod flows;
pub mod generate;
pub mod io;
pub mod operator;
pub mod prox;
pub mod regularizer;
pub mod signal;
pub mod solver;
pub mod spectral;
mod vecser;
pub mod verify;

pub use error::{Error, Result};
pub use regularizer::{DualCertificate, Regularizer};
pub use signal::{Shape, Signal};
pub use solver::SolverConfig;
