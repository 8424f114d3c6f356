#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod canonical;
pub mod nodes;
pub mod certs;
pub mod deploy;
mod error;
pub mod policy;
pub mod protocol;
pub mod session;
pub mod signer;
pub mod sim;

pub use error::ErrorCode;
