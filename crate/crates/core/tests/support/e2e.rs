//! Random deployments for the end-to-end authorization law.

use std::collections::BTreeMap;

use cmms_core::policy::{filter, impose, policy_map, GridConfig, PolicyTable, StateId, StateSet, VoFilterConfig};
use cmms_core::protocol::Message;
use cmms_core::session::AdminStep;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use crate::common::*;

#[derive(Debug, Clone)]
pub struct World {
    pub n: u8,
    pub m: u8,
    pub cert: u64,
    pub considered: u64,
    pub imposed: u64,
    pub tables: [Vec<Option<u64>>; 2],
}

pub fn world() -> impl Strategy<Value = World> {
    (1u8..=16, 1u8..=16).prop_flat_map(|(n, m)| {
        let mask = (1u64 << n) - 1;
        let entries = || proptest::collection::vec(proptest::option::weighted(0.8, 0..(1u64 << m)), n as usize);
        (any::<u64>(), any::<u64>(), any::<u64>(), entries(), entries()).prop_map(
            move |(cert, considered, imposed, t1, t2)| World {
                n,
                m,
                cert: cert & mask,
                considered: considered & mask,
                imposed: imposed & considered & mask,
                tables: [t1, t2],
            },
        )
    })
}

pub fn table(grid: GridConfig, entries: &[Option<u64>]) -> PolicyTable {
    let mut t = PolicyTable::new(grid);
    for (i, raw) in entries.iter().enumerate() {
        if let Some(raw) = raw {
            t.set(StateId::new(i as u8 + 1).unwrap(), *raw).unwrap();
        }
    }
    t
}

/// Runs the full flow in `w` and compares the SERVICE_LIST with the direct
/// composition on the table of the node that answered.
pub fn check(w: World) -> Result<(), TestCaseError> {
    let grid = GridConfig::new(w.n, w.m, w.m).unwrap();
    let considered = StateSet::from_bits(w.considered);
    let imposed = StateSet::from_bits(w.imposed);
    let mut d = spig();
    d.grid = grid;
    d.vo_filter = VoFilterConfig::new(considered, BTreeMap::from([("u".to_string(), imposed)])).unwrap();
    for (spec, entries) in d.service_nodes.iter_mut().zip(&w.tables) {
        spec.table = table(grid, entries);
    }
    let tables: BTreeMap<String, PolicyTable> =
        d.service_nodes.iter().map(|s| (s.address.clone(), s.table.clone())).collect();
    let mut s = session(d);
    s.apply(&AdminStep::Register { user: "u".into(), states: Some(StateSet::from_bits(w.cert)) })
        .unwrap();
    let entries = request(&mut s, "u", None);
    let (node, services) = entries
        .iter()
        .find_map(|e| match &e.envelope.message {
            Message::ServiceList(l) => Some((e.envelope.sender.clone(), l.services)),
            _ => None,
        })
        .expect("flow completes");
    let effective = impose(filter(StateSet::from_bits(w.cert), considered), imposed);
    prop_assert_eq!(services, policy_map(effective, &tables[&node]));
    Ok(())
}
