//! The SERVICE_LIST a user receives equals the direct composition
//! policy_map(impose(filter(cert, considered), imposed), table).

mod common;
mod support;

use proptest::test_runner::{Config, RngSeed, TestRunner};

#[test]
fn simulated_service_list_equals_direct_composition() {
    let mut runner = TestRunner::new(Config {
        cases: 100,
        rng_seed: RngSeed::Fixed(0xE2E),
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&support::e2e::world(), support::e2e::check).unwrap();
}
