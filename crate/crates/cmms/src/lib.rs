//! File formats, TCP transport and the command-line front end for
//! `cmms-core`.

pub mod cli;
pub mod deployment;
pub mod error;
pub mod files;
pub mod scenario;
pub mod socket;
pub mod workspace;

pub use error::{Error, Result};
