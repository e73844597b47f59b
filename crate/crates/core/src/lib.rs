//! Krein's special method for systems of Fredholm integral equations of the
//! second kind with matrix kernels.

pub mod expr;
pub mod grid;
pub mod kernels;
pub mod linalg;
pub mod nystrom;
pub mod krein;
pub mod parallel;
pub mod problem;
pub mod runner;
pub mod symmetric;
