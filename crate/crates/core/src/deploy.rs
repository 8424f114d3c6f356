//! Deployment description and the built-in SPIG profile.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::certs::{CertificateAuthority, Repository};
use crate::nodes::{
    CaNode, DiscoveryNode, DiscoveryTiming, MonitorNode, Node, RepositoryNode, ServiceNode,
    ServiceTiming, Trust, UserAgent,
};
use crate::policy::{GridConfig, PolicyTable, ServiceId, StateId, StateSet, VoFilterConfig};
use crate::signer::{derive_seed, Keypair, Scheme, SignerContract};

pub const CA: &str = "ca";
pub const REPOSITORY: &str = "ca-repo";
pub const MONITOR: &str = "ca-monitor";
pub const DISCOVERY: &str = "vo-disc";
/// Address of the operator; replies to injected commands land here.
pub const ADMIN: &str = "admin";

pub const SPIG_STATES: [(u8, &str); 8] = [
    (1, "On Duty"),
    (2, "Suspended"),
    (3, "Transferred"),
    (4, "Convicted"),
    (5, "On Leave"),
    (6, "View Restricted"),
    (7, "Edit Restricted"),
    (8, "User"),
];

pub const SPIG_SERVICES: [(u8, &str); 4] = [
    (1, "Criminal Records Database"),
    (2, "FIR Records"),
    (3, "Search for INV status"),
    (4, "ADD FIR/Criminal Records"),
];

/// Raw entries of the default SPIG table. 5 and 6 keep the high bits of
/// the published bytes; 1 and 8 are demo defaults.
pub const SPIG_TABLE: [(u8, u64); 5] = [(1, 15), (5, 94), (6, 98), (7, 12), (8, 4)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    pub cert_validity: u64,
    pub ticket_ttl: u64,
    pub replay_window: u64,
    pub hold_window: u64,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            cert_validity: 100_000,
            ticket_ttl: 100,
            replay_window: 50,
            hold_window: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceNodeSpec {
    pub address: String,
    pub table: PolicyTable,
    /// Services this node delegates, and to whom.
    pub forward_routes: BTreeMap<ServiceId, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deployment {
    pub grid: GridConfig,
    pub scheme: Scheme,
    pub seed: u64,
    pub vo_filter: VoFilterConfig,
    pub default_states: StateSet,
    pub timing: Timing,
    pub service_nodes: Vec<ServiceNodeSpec>,
    pub users: Vec<String>,
    pub state_names: BTreeMap<StateId, String>,
    pub service_names: BTreeMap<ServiceId, String>,
    /// Keys that override seed derivation, by address.
    pub keys: BTreeMap<String, Keypair>,
}

pub fn spig_table() -> PolicyTable {
    let grid = GridConfig::spig();
    let mut table = PolicyTable::new(grid);
    for (state, raw) in SPIG_TABLE {
        let state = grid.state(u64::from(state)).expect("SPIG states are in range");
        table.set(state, raw).expect("SPIG entries fit in 8 bits");
    }
    table
}

impl Deployment {
    /// The SPIG prototype: two service nodes with the default table, every
    /// state considered, nothing imposed, newcomers start as "User".
    pub fn spig(scheme: Scheme, seed: u64) -> Self {
        let grid = GridConfig::spig();
        let node = |address: &str| ServiceNodeSpec {
            address: address.into(),
            table: spig_table(),
            forward_routes: BTreeMap::new(),
        };
        Self {
            grid,
            scheme,
            seed,
            vo_filter: VoFilterConfig::new(StateSet::full(8), BTreeMap::new())
                .expect("nothing imposed"),
            default_states: StateSet::of(&[8]),
            timing: Timing::default(),
            service_nodes: alloc::vec![node("vo-serv-1"), node("vo-serv-2")],
            users: Vec::new(),
            state_names: SPIG_STATES
                .iter()
                .map(|&(i, name)| (StateId::new(i).unwrap(), name.to_string()))
                .collect(),
            service_names: SPIG_SERVICES
                .iter()
                .map(|&(i, name)| (ServiceId::new(i).unwrap(), name.to_string()))
                .collect(),
            keys: BTreeMap::new(),
        }
    }

    pub fn keypair(&self, address: &str) -> Keypair {
        self.keys
            .get(address)
            .cloned()
            .unwrap_or_else(|| self.scheme.generate(derive_seed(self.seed, address)))
    }

    pub fn trust(&self) -> Trust {
        Trust {
            scheme: self.scheme,
            ca_pub: self.keypair(CA).public,
            repository: REPOSITORY.into(),
        }
    }

    pub fn service_name(&self, id: ServiceId) -> Option<&str> {
        self.service_names.get(&id).map(String::as_str)
    }

    pub fn state_name(&self, id: StateId) -> Option<&str> {
        self.state_names.get(&id).map(String::as_str)
    }

    /// Addresses of every infrastructure node, registration order.
    pub fn infrastructure(&self) -> Vec<String> {
        let mut out: Vec<String> = [CA, REPOSITORY, MONITOR, DISCOVERY]
            .iter()
            .map(|s| s.to_string())
            .collect();
        out.extend(self.service_nodes.iter().map(|s| s.address.clone()));
        out
    }

    pub fn user_node(&self, name: &str) -> Node {
        Node::User(UserAgent::new(name, self.trust(), self.keypair(name)))
    }

    /// Fresh, unregistered nodes for the whole topology.
    pub fn build_nodes(&self) -> Vec<Node> {
        let trust = self.trust();
        let ca_keys = self.keypair(CA);
        let disc_keys = self.keypair(DISCOVERY);
        let mut nodes = alloc::vec![
            Node::Ca(CaNode::new(
                CA,
                CertificateAuthority::new(CA, ca_keys.clone()),
                MONITOR,
                REPOSITORY,
                self.timing.cert_validity,
            )),
            Node::Repository(RepositoryNode::new(
                REPOSITORY,
                Repository::new(self.scheme, ca_keys.public.clone()),
                CA,
            )),
            Node::Monitor(MonitorNode::new(MONITOR, self.grid, CA, self.default_states)),
            Node::Discovery(DiscoveryNode::new(
                DISCOVERY,
                trust.clone(),
                disc_keys.clone(),
                self.vo_filter.clone(),
                DiscoveryTiming {
                    ticket_ttl: self.timing.ticket_ttl,
                    replay_window: self.timing.replay_window,
                },
                derive_seed(self.seed, "vo-disc/tickets"),
            )),
        ];
        for spec in &self.service_nodes {
            nodes.push(Node::Service(ServiceNode::new(
                spec.address.clone(),
                trust.clone(),
                self.keypair(&spec.address),
                spec.table.clone(),
                DISCOVERY,
                disc_keys.public.clone(),
                ServiceTiming {
                    hold_window: self.timing.hold_window,
                },
                self.service_names.clone(),
                spec.forward_routes.clone(),
            )));
        }
        for user in &self.users {
            nodes.push(self.user_node(user));
        }
        nodes
    }
}
