//! State → policy → service mapping.
//!
//! A user's certificate carries a set of numbered states. The discovery node
//! narrows that set to the states its VO cares about ([`filter`]) and adds
//! VO-assigned states ([`impose`]); the result is the *effective state*. A
//! service node then looks up one policy entry per effective state and grants
//! only the services common to all of them ([`policy_map`]).
//!
//! Policy entries are integers whose low `M` bits are a service mask, service
//! `i` at bit `i - 1`. Bits at or above `M` are kept in storage but never take
//! part in a decision.

mod sets;
mod text;

use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ErrorCode;

pub use sets::{ServiceId, ServiceSet, StateId, StateSet, MAX_UNIVERSE};
pub use text::{parse_policy, parse_policy_table, render_policy, render_policy_table};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("malformed policy: {0}")]
    Parse(String),
    #[error("state {state} outside 1..={limit}")]
    StateOutOfRange { state: u64, limit: u8 },
    #[error("service {service} outside 1..={limit}")]
    ServiceOutOfRange { service: u64, limit: u8 },
    #[error("policy entry {raw} does not fit in {width} bits")]
    EntryOutOfRange { raw: u64, width: u8 },
    #[error("service {0} listed twice")]
    DuplicateService(u8),
    #[error("state {0} has more than one policy line")]
    DuplicateState(u8),
    #[error("imposed states {states} for {user} are not all considered by the VO")]
    ImposedOutsideConsidered { user: String, states: StateSet },
    #[error("invalid grid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("line {line}: {inner}")]
    AtLine {
        line: usize,
        inner: alloc::boxed::Box<PolicyError>,
    },
}

impl PolicyError {
    pub fn code(&self) -> ErrorCode {
        match self {
            PolicyError::Parse(_) => ErrorCode::Parse,
            PolicyError::StateOutOfRange { .. }
            | PolicyError::ServiceOutOfRange { .. }
            | PolicyError::EntryOutOfRange { .. } => ErrorCode::Range,
            PolicyError::DuplicateService(_) => ErrorCode::Dup,
            PolicyError::DuplicateState(_) => ErrorCode::DupState,
            PolicyError::ImposedOutsideConsidered { .. } | PolicyError::InvalidConfig(_) => {
                ErrorCode::Config
            }
            PolicyError::AtLine { inner, .. } => inner.code(),
        }
    }
}

/// Sizes of the state universe `N`, the service universe `M`, and the policy
/// entry width `W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGridConfig", into = "RawGridConfig")]
pub struct GridConfig {
    states: u8,
    services: u8,
    entry_width: u8,
}

#[derive(Serialize, Deserialize)]
struct RawGridConfig {
    state_universe_size: u8,
    service_count: u8,
    policy_entry_width: u8,
}

impl TryFrom<RawGridConfig> for GridConfig {
    type Error = PolicyError;

    fn try_from(raw: RawGridConfig) -> Result<Self, Self::Error> {
        GridConfig::new(raw.state_universe_size, raw.service_count, raw.policy_entry_width)
    }
}

impl From<GridConfig> for RawGridConfig {
    fn from(cfg: GridConfig) -> Self {
        RawGridConfig {
            state_universe_size: cfg.states,
            service_count: cfg.services,
            policy_entry_width: cfg.entry_width,
        }
    }
}

impl GridConfig {
    pub fn new(states: u8, services: u8, entry_width: u8) -> Result<Self, PolicyError> {
        if states == 0 || states > MAX_UNIVERSE {
            return Err(PolicyError::InvalidConfig("state universe must be 1..=64"));
        }
        if services == 0 || services > MAX_UNIVERSE {
            return Err(PolicyError::InvalidConfig("service count must be 1..=64"));
        }
        if entry_width < services || entry_width > 64 {
            return Err(PolicyError::InvalidConfig(
                "policy entry width must be between service count and 64",
            ));
        }
        Ok(Self {
            states,
            services,
            entry_width,
        })
    }

    /// The SPIG prototype: 8 states, 4 services, byte-wide policy entries.
    pub const fn spig() -> Self {
        Self {
            states: 8,
            services: 4,
            entry_width: 8,
        }
    }

    pub const fn state_universe_size(&self) -> u8 {
        self.states
    }

    pub const fn service_count(&self) -> u8 {
        self.services
    }

    pub const fn policy_entry_width(&self) -> u8 {
        self.entry_width
    }

    pub const fn service_mask(&self) -> u64 {
        ServiceSet::full(self.services).bits()
    }

    pub fn state(&self, value: u64) -> Result<StateId, PolicyError> {
        match u8::try_from(value).ok().and_then(StateId::new) {
            Some(id) if id.get() <= self.states => Ok(id),
            _ => Err(PolicyError::StateOutOfRange {
                state: value,
                limit: self.states,
            }),
        }
    }

    pub fn service(&self, value: u64) -> Result<ServiceId, PolicyError> {
        match u8::try_from(value).ok().and_then(ServiceId::new) {
            Some(id) if id.get() <= self.services => Ok(id),
            _ => Err(PolicyError::ServiceOutOfRange {
                service: value,
                limit: self.services,
            }),
        }
    }

    pub fn check_states(&self, set: StateSet) -> Result<(), PolicyError> {
        match set.max() {
            Some(max) if max.get() > self.states => Err(PolicyError::StateOutOfRange {
                state: max.get().into(),
                limit: self.states,
            }),
            _ => Ok(()),
        }
    }

    pub fn check_services(&self, set: ServiceSet) -> Result<(), PolicyError> {
        match set.max() {
            Some(max) if max.get() > self.services => Err(PolicyError::ServiceOutOfRange {
                service: max.get().into(),
                limit: self.services,
            }),
            _ => Ok(()),
        }
    }
}

/// One state's policy: a `W`-bit integer whose low `M` bits are a service mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PolicyEntry(u64);

impl PolicyEntry {
    pub fn new(raw: u64, cfg: &GridConfig) -> Result<Self, PolicyError> {
        if cfg.entry_width < 64 && raw >> cfg.entry_width != 0 {
            return Err(PolicyError::EntryOutOfRange {
                raw,
                width: cfg.entry_width,
            });
        }
        Ok(Self(raw))
    }

    pub const fn raw(self) -> u64 {
        self.0
    }
}

/// Partial map from state to policy entry for one service node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyTable {
    config: GridConfig,
    entries: BTreeMap<StateId, PolicyEntry>,
}

impl PolicyTable {
    pub fn new(config: GridConfig) -> Self {
        Self {
            config,
            entries: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    /// Sets the entry for `state`, replacing any previous one.
    pub fn set(&mut self, state: StateId, raw: u64) -> Result<Option<PolicyEntry>, PolicyError> {
        let state = self.config.state(state.get().into())?;
        let entry = PolicyEntry::new(raw, &self.config)?;
        Ok(self.entries.insert(state, entry))
    }

    /// Sets the entry for `state` to exactly `services`.
    pub fn grant(
        &mut self,
        state: StateId,
        services: ServiceSet,
    ) -> Result<Option<PolicyEntry>, PolicyError> {
        let entry = encode_services(services, &self.config)?;
        self.set(state, entry.raw())
    }

    pub fn get(&self, state: StateId) -> Option<PolicyEntry> {
        self.entries.get(&state).copied()
    }

    pub fn remove(&mut self, state: StateId) -> Option<PolicyEntry> {
        self.entries.remove(&state)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (StateId, PolicyEntry)> + '_ {
        self.entries.iter().map(|(s, e)| (*s, *e))
    }
}

/// VO-level filtering configuration kept by a discovery node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawVoFilter", into = "RawVoFilter")]
pub struct VoFilterConfig {
    considered: StateSet,
    imposed: BTreeMap<String, StateSet>,
}

#[derive(Serialize, Deserialize)]
struct RawVoFilter {
    considered_states: StateSet,
    imposed_list: BTreeMap<String, StateSet>,
}

impl TryFrom<RawVoFilter> for VoFilterConfig {
    type Error = PolicyError;

    fn try_from(raw: RawVoFilter) -> Result<Self, Self::Error> {
        VoFilterConfig::new(raw.considered_states, raw.imposed_list)
    }
}

impl From<VoFilterConfig> for RawVoFilter {
    fn from(cfg: VoFilterConfig) -> Self {
        RawVoFilter {
            considered_states: cfg.considered,
            imposed_list: cfg.imposed,
        }
    }
}

impl VoFilterConfig {
    /// Rejects any imposed set that is not a subset of `considered`.
    pub fn new(
        considered: StateSet,
        imposed: BTreeMap<String, StateSet>,
    ) -> Result<Self, PolicyError> {
        if let Some((user, states)) = imposed.iter().find(|(_, s)| !s.is_subset(considered)) {
            return Err(PolicyError::ImposedOutsideConsidered {
                user: user.clone(),
                states: *states,
            });
        }
        Ok(Self {
            considered,
            imposed,
        })
    }

    pub fn considered_states(&self) -> StateSet {
        self.considered
    }

    pub fn imposed_for(&self, user: &str) -> StateSet {
        self.imposed.get(user).copied().unwrap_or_default()
    }

    pub fn imposed_list(&self) -> &BTreeMap<String, StateSet> {
        &self.imposed
    }
}

/// Drops the certificate states the VO does not consider.
pub fn filter(cert_states: StateSet, considered: StateSet) -> StateSet {
    cert_states.intersection(considered)
}

/// Adds VO-imposed states to an already filtered set.
pub fn impose(filtered: StateSet, imposed: StateSet) -> StateSet {
    filtered.union(imposed)
}

pub fn effective_state(cert_states: StateSet, cfg: &VoFilterConfig, user: &str) -> StateSet {
    impose(
        filter(cert_states, cfg.considered_states()),
        cfg.imposed_for(user),
    )
}

pub fn encode_services(services: ServiceSet, cfg: &GridConfig) -> Result<PolicyEntry, PolicyError> {
    cfg.check_services(services)?;
    Ok(PolicyEntry(services.bits()))
}

/// Masks the entry down to its low `M` bits and reads the services off it.
pub fn decode_services(entry: PolicyEntry, cfg: &GridConfig) -> ServiceSet {
    ServiceSet::from_bits(entry.raw() & cfg.service_mask())
}

/// Services granted to holders of `state`; nothing when the table has no entry.
pub fn lookup(table: &PolicyTable, state: StateId) -> ServiceSet {
    table
        .get(state)
        .map(|entry| decode_services(entry, table.config()))
        .unwrap_or_default()
}

/// Services common to every effective state. An empty effective set maps to
/// no services rather than to the full universe.
pub fn policy_map(effective: StateSet, table: &PolicyTable) -> ServiceSet {
    let mut states = effective.iter();
    let Some(first) = states.next() else {
        return ServiceSet::empty();
    };
    states.fold(lookup(table, first), |acc, state| {
        acc.intersection(lookup(table, state))
    })
}
