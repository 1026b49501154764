//! Univariate-ReLU networks for NARX system identification.

pub mod boucwen;
pub mod cli;
pub mod cpd;
pub mod dataset;
pub mod error;
pub mod hessian;
pub mod linalg;
pub mod polyfit;
pub mod pwl;
pub mod urelu;
pub mod varpro;

pub use error::{Error, Result};
