//! Out-of-distribution feature shaping from a variational information-theoretic loss.

pub mod cli;
pub mod densities;
pub mod detect;
pub mod error;
pub mod io;
pub mod oracle;
pub mod quadrature;
pub mod shaping;
pub mod tune;
pub mod varopt;

pub use error::{Error, ErrorClass, Result};
