//! Factor-analysis maximum likelihood: the discrepancy function, its exact
//! gradient, the polynomial likelihood equations, and numerical checks of the
//! positive-dimensional critical sets those equations admit.

pub mod acceptance;
pub mod cli;
pub mod error;
pub mod likelihood;
pub mod matcore;
pub mod polysys;
pub mod solver;
pub mod variety;

pub use error::{Error, Result};
pub use matcore::{FactorParams, GradientBundle, SampleCovariance, SymMatrix};
