//! Regularization for design: atomic-norm co-design of controller architectures
//! with recovery certificates.

pub mod certify;
pub mod cli;
pub mod config;
pub mod error;
pub mod firlin;
pub mod linalg;
pub mod penalties;
pub mod plantmaps;
pub mod report;
pub mod serde_ext;
pub mod solver;
pub mod systems;

pub use error::{Result, RfdError};
