//! Nonnegative matrix factorization where every column of the left factor is
//! the sampling of a nonnegative rational function of fixed degree.

pub mod data;
pub mod error;
pub mod factorize;
pub mod metrics;
pub mod nls;
pub mod par;
pub mod polybasis;
pub mod project;
pub mod qpcone;
pub mod rational;
pub mod sos;

pub use error::{Error, Result};
