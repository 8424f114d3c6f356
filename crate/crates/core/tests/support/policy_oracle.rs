//! Membership-vector oracles for the policy algebra. Expected values are
//! computed from plain `Vec<bool>`, never from bitmasks.

use cmms_core::policy::{GridConfig, PolicyTable, ServiceSet, StateId, StateSet};
use proptest::prelude::*;

pub fn states(members: &[bool]) -> StateSet {
    members
        .iter()
        .enumerate()
        .filter(|(_, m)| **m)
        .map(|(i, _)| StateId::new(i as u8 + 1).unwrap())
        .collect()
}

pub fn services(members: &[bool]) -> ServiceSet {
    ServiceSet::of(
        &members
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(|(i, _)| i as u8 + 1)
            .collect::<Vec<_>>(),
    )
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub n: u8,
    pub m: u8,
    pub w: u8,
    /// Raw entry per state, `None` when the table has no line for it.
    pub entries: Vec<Option<u64>>,
    pub effective: Vec<bool>,
}

impl Instance {
    pub fn grid(&self) -> GridConfig {
        GridConfig::new(self.n, self.m, self.w).unwrap()
    }

    pub fn table(&self) -> PolicyTable {
        let mut t = PolicyTable::new(self.grid());
        for (i, raw) in self.entries.iter().enumerate() {
            if let Some(raw) = raw {
                t.set(StateId::new(i as u8 + 1).unwrap(), *raw).unwrap();
            }
        }
        t
    }

    /// Service j granted iff the effective set is nonempty and every
    /// effective state has an entry with bit j-1 set.
    pub fn oracle(&self, effective: &[bool]) -> Vec<bool> {
        let chosen: Vec<usize> = (0..effective.len()).filter(|&i| effective[i]).collect();
        (0..self.m as usize)
            .map(|j| {
                !chosen.is_empty()
                    && chosen
                        .iter()
                        .all(|&s| self.entries[s].is_some_and(|raw| (raw >> j) & 1 == 1))
            })
            .collect()
    }
}

pub fn grid_dims() -> impl Strategy<Value = (u8, u8, u8)> {
    (1u8..=16, 1u8..=16).prop_flat_map(|(n, m)| (Just(n), Just(m), m..=24u8))
}

pub fn instance() -> impl Strategy<Value = Instance> {
    grid_dims().prop_flat_map(|(n, m, w)| {
        let max = (1u64 << w) - 1;
        (
            proptest::collection::vec(proptest::option::weighted(0.85, 0..=max), n as usize),
            proptest::collection::vec(any::<bool>(), n as usize),
        )
            .prop_map(move |(entries, effective)| Instance {
                n,
                m,
                w,
                entries,
                effective,
            })
    })
}
