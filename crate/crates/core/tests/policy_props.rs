//! Seeded property suites for the policy algebra.

mod common;
mod support;

use std::collections::BTreeMap;

use cmms_core::policy::{
    decode_services, effective_state, encode_services, filter, impose, lookup, parse_policy,
    parse_policy_table, policy_map, render_policy, render_policy_table, GridConfig, PolicyEntry,
    StateId, StateSet, VoFilterConfig,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

fn config() -> Config {
    Config {
        cases: 1000,
        rng_seed: RngSeed::Fixed(0x00C3_3C55),
        failure_persistence: None,
        ..Config::default()
    }
}

use support::policy_oracle::*;

proptest! {
    #![proptest_config(config())]

    #[test]
    fn policy_map_matches_oracle(inst in instance()) {
        let got = policy_map(states(&inst.effective), &inst.table());
        prop_assert_eq!(got, services(&inst.oracle(&inst.effective)));
    }

    #[test]
    fn policy_map_is_antitone(inst in instance(), extra in proptest::collection::vec(any::<bool>(), 16)) {
        let small = &inst.effective;
        prop_assume!(small.iter().any(|b| *b));
        let big: Vec<bool> = small.iter().zip(&extra).map(|(a, b)| *a || *b).collect();
        let t = inst.table();
        let wide = policy_map(states(&big), &t);
        let narrow = policy_map(states(small), &t);
        prop_assert!(wide.is_subset(narrow));
    }

    #[test]
    fn singleton_equals_lookup(inst in instance(), pick in any::<prop::sample::Index>()) {
        let s = StateId::new(pick.index(inst.n as usize) as u8 + 1).unwrap();
        let t = inst.table();
        prop_assert_eq!(policy_map(StateSet::of(&[s.get()]), &t), lookup(&t, s));
    }

    #[test]
    fn encode_decode_round_trip((n, m, w) in grid_dims(), bits in proptest::collection::vec(any::<bool>(), 16)) {
        let _ = n;
        let g = GridConfig::new(1, m, w).unwrap();
        let set = services(&bits[..m as usize]);
        let entry = encode_services(set, &g).unwrap();
        prop_assert_eq!(entry.raw() >> m, 0);
        for (j, b) in bits[..m as usize].iter().enumerate() {
            prop_assert_eq!((entry.raw() >> j) & 1 == 1, *b);
        }
        prop_assert_eq!(decode_services(entry, &g), set);
    }

    #[test]
    fn decode_ignores_high_bits((_n, m, w) in grid_dims(), raw in any::<u64>()) {
        let g = GridConfig::new(1, m, w).unwrap();
        let raw = raw & ((1u64 << w) - 1);
        let low = raw & ((1u64 << m) - 1);
        let full = decode_services(PolicyEntry::new(raw, &g).unwrap(), &g);
        let masked = decode_services(PolicyEntry::new(low, &g).unwrap(), &g);
        prop_assert_eq!(full, masked);
        let expect: Vec<bool> = (0..m).map(|j| (raw >> j) & 1 == 1).collect();
        prop_assert_eq!(full, services(&expect));
    }

    #[test]
    fn filter_laws(s in proptest::collection::vec(any::<bool>(), 16), c in proptest::collection::vec(any::<bool>(), 16)) {
        let (ss, cs) = (states(&s), states(&c));
        let f = filter(ss, cs);
        let expect: Vec<bool> = s.iter().zip(&c).map(|(a, b)| *a && *b).collect();
        prop_assert_eq!(f, states(&expect));
        prop_assert!(f.is_subset(ss) && f.is_subset(cs));
        prop_assert_eq!(filter(f, cs), f);
    }

    #[test]
    fn impose_laws(s in proptest::collection::vec(any::<bool>(), 16), i in proptest::collection::vec(any::<bool>(), 16)) {
        let (ss, is) = (states(&s), states(&i));
        let u = impose(ss, is);
        let expect: Vec<bool> = s.iter().zip(&i).map(|(a, b)| *a || *b).collect();
        prop_assert_eq!(u, states(&expect));
        prop_assert!(ss.is_subset(u) && is.is_subset(u));
        prop_assert_eq!(impose(ss, StateSet::empty()), ss);
    }

    #[test]
    fn effective_state_composes(
        cert in proptest::collection::vec(any::<bool>(), 16),
        considered in proptest::collection::vec(any::<bool>(), 16),
        imposed in proptest::collection::vec(any::<bool>(), 16),
        listed in any::<bool>(),
    ) {
        let imposed: Vec<bool> = imposed.iter().zip(&considered).map(|(a, b)| *a && *b).collect();
        let mut list = BTreeMap::new();
        if listed {
            list.insert("u".to_string(), states(&imposed));
        }
        let cfg = VoFilterConfig::new(states(&considered), list).unwrap();
        let expect: Vec<bool> = (0..16)
            .map(|k| (cert[k] && considered[k]) || (listed && imposed[k]))
            .collect();
        prop_assert_eq!(effective_state(states(&cert), &cfg, "u"), states(&expect));
    }

    #[test]
    fn render_parse_round_trip((n, m, w) in grid_dims(), pick in any::<prop::sample::Index>(), bits in proptest::collection::vec(any::<bool>(), 16)) {
        let g = GridConfig::new(n, m, w).unwrap();
        let set = services(&bits[..m as usize]);
        prop_assume!(!set.is_empty());
        let state = StateId::new(pick.index(n as usize) as u8 + 1).unwrap();
        let text = render_policy(state, set);
        prop_assert_eq!(parse_policy(&text, &g).unwrap(), (state, set));
    }

    #[test]
    fn table_text_round_trip(inst in instance()) {
        let t = inst.table();
        let text = render_policy_table(&t);
        prop_assert_eq!(parse_policy_table(&text, &inst.grid()).unwrap(), t);
    }
}
