//! Numerical machinery: damped least squares, sparse Cholesky, polynomial
//! roots and the minimal geometric solvers used inside RANSAC.

pub mod essential;
pub mod lm;
pub mod p3p;
pub mod poly;
pub mod ransac;
pub mod sparse;

pub use lm::{minimize, LeastSquaresProblem, Linearization, LmOptions, LmReport, SolverError, Termination};
pub use ransac::RansacOptions;
pub use sparse::BlockSymmetric;
