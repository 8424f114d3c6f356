#![allow(dead_code)]

pub mod arb;
pub mod e2e;
pub mod policy_oracle;
