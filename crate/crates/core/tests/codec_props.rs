//! Envelope codec round-trips for every catalog type.

mod common;
mod support;

use cmms_core::protocol::*;
use cmms_core::ErrorCode;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed, TestRunner};
use support::arb::{any_envelope, envelope};

#[test]
fn every_type_round_trips() {
    let mut total = 0;
    for (i, t) in MsgType::ALL.iter().enumerate() {
        let mut runner = TestRunner::new(Config {
            cases: 200,
            rng_seed: RngSeed::Fixed(0xC0DEC + i as u64),
            failure_persistence: None,
            ..Config::default()
        });
        runner
            .run(&envelope(*t), |env| {
                let wire = encode_envelope(&env);
                prop_assert_eq!(wire.iter().filter(|b| **b == b'\n').count(), 1);
                prop_assert_eq!(wire.last(), Some(&b'\n'));
                prop_assert_eq!(decode_envelope(&wire).unwrap(), env.clone());
                prop_assert_eq!(encode_envelope(&decode_envelope(&wire).unwrap()), wire);
                Ok(())
            })
            .unwrap_or_else(|e| panic!("{t}: {e}"));
        total += 200;
    }
    assert!(total >= 1000);
    assert_eq!(MsgType::ALL.len(), 28);
}

#[test]
fn truncated_lines_are_schema_errors() {
    let mut runner = TestRunner::new(Config {
        cases: 300,
        rng_seed: RngSeed::Fixed(0x7A11),
        failure_persistence: None,
        ..Config::default()
    });
    let strat = any_envelope().prop_flat_map(|env| {
            let len = encode_envelope(&env).len();
            (Just(env), 1..len - 1)
        });
    runner
        .run(&strat, |(env, cut)| {
            let wire = encode_envelope(&env);
            let err = decode_envelope(&wire[..cut]).unwrap_err();
            prop_assert_eq!(err.code, ErrorCode::Schema);
            Ok(())
        })
        .unwrap();
}
