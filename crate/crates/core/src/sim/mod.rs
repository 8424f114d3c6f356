//! Deterministic discrete-event transport.
//!
//! Links are FIFO queues keyed by `(from, to)`. An envelope sent at tick `t`
//! becomes deliverable at `t + 1 + delay(from, to)`. Every tick each node
//! handles at most one envelope; nodes are visited in address order, so the
//! outcome never depends on anything but the inputs and the seed.

mod trace;

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use trace::{diff_traces, parse_trace, render_trace, Trace, TraceDiff, TraceEntry, TraceError};

use crate::nodes::{Mailbox, Node, NodeFault, NodeSummary};
use crate::protocol::Envelope;
use crate::ErrorCode;

/// Sender address of transport-generated bounces.
pub const NET: &str = "net";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeliveryPolicy {
    #[default]
    InOrder,
    /// Picks uniformly among deliverable link heads. Order within a link
    /// is never perturbed.
    SeededShuffle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultKind {
    DropNode { address: String },
    DelayLink { from: String, to: String, ticks: u64 },
    RevokeSubject { name: String },
    /// Every service node forgets its sessions and buffered records.
    ExpireTickets,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub at_tick: u64,
    pub kind: FaultKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub tick_limit: u64,
    #[serde(default)]
    pub delivery_policy: DeliveryPolicy,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tick_limit: 10_000,
            delivery_policy: DeliveryPolicy::InOrder,
            faults: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("still active at tick limit {0}")]
    TickLimit(u64),
}

impl SimError {
    pub fn code(&self) -> ErrorCode {
        match self {
            SimError::Config(_) => ErrorCode::Config,
            SimError::TickLimit(_) => ErrorCode::TickLimit,
        }
    }
}

#[derive(Debug, Clone)]
struct InFlight {
    arrival: u64,
    seq: u64,
    env: Envelope,
}

type Link = (String, String);

#[derive(Debug, Clone)]
pub struct Simulator {
    nodes: BTreeMap<String, Node>,
    externals: BTreeSet<String>,
    dropped: BTreeSet<String>,
    links: BTreeMap<Link, VecDeque<InFlight>>,
    delays: BTreeMap<Link, u64>,
    script: VecDeque<Envelope>,
    faults: Vec<FaultSpec>,
    next_fault: usize,
    tick: u64,
    tick_limit: u64,
    seq: u64,
    policy: DeliveryPolicy,
    rng: ChaCha8Rng,
    net: Mailbox,
    entries: Vec<TraceEntry>,
}

impl Simulator {
    /// `admin` is registered as an external sink.
    pub fn new(nodes: Vec<Node>, cfg: &SimConfig) -> Result<Self, SimError> {
        if cfg.tick_limit == 0 {
            return Err(SimError::Config("tick_limit must be positive".into()));
        }
        if let Some(f) = cfg.faults.iter().find(|f| f.at_tick >= cfg.tick_limit) {
            return Err(SimError::Config(alloc::format!(
                "fault at tick {} is beyond the tick limit",
                f.at_tick
            )));
        }
        let mut faults = cfg.faults.clone();
        faults.sort_by_key(|f| f.at_tick);
        let mut sim = Self {
            nodes: BTreeMap::new(),
            externals: BTreeSet::new(),
            dropped: BTreeSet::new(),
            links: BTreeMap::new(),
            delays: BTreeMap::new(),
            script: VecDeque::new(),
            faults,
            next_fault: 0,
            tick: 0,
            tick_limit: cfg.tick_limit,
            seq: 0,
            policy: cfg.delivery_policy,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            net: Mailbox::new(NET),
            entries: Vec::new(),
        };
        sim.add_external(crate::deploy::ADMIN);
        for node in nodes {
            sim.add_node(node)?;
        }
        Ok(sim)
    }

    pub fn add_node(&mut self, node: Node) -> Result<(), SimError> {
        let addr = node.address().to_string();
        if addr == NET || self.nodes.contains_key(&addr) || self.externals.contains(&addr) {
            return Err(SimError::Config(alloc::format!("duplicate address {addr}")));
        }
        self.nodes.insert(addr, node);
        Ok(())
    }

    /// An address outside the topology whose mail is recorded, not processed.
    pub fn add_external(&mut self, address: &str) {
        self.externals.insert(address.into());
    }

    pub fn node(&self, address: &str) -> Option<&Node> {
        self.nodes.get(address)
    }

    pub fn contains(&self, address: &str) -> bool {
        self.nodes.contains_key(address)
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Queues an envelope to be sent once the network is idle. Its
    /// `sent_at` is overwritten with the injection tick.
    pub fn push_script(&mut self, env: Envelope) {
        self.script.push_back(env);
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn summaries(&self) -> BTreeMap<String, NodeSummary> {
        self.nodes
            .iter()
            .map(|(a, n)| (a.clone(), n.summary()))
            .collect()
    }

    pub fn trace(&self) -> Trace {
        Trace {
            entries: self.entries.clone(),
            final_states: self.summaries(),
        }
    }

    fn busy(&self) -> bool {
        self.links.values().any(|q| !q.is_empty())
            || self.nodes.values().any(|n| n.next_deadline().is_some())
    }

    /// Runs until nothing is in flight, no timer is armed, and the script
    /// is exhausted. Faults scheduled past that point never fire.
    pub fn run(&mut self) -> Result<(), SimError> {
        loop {
            self.apply_faults();
            if !self.busy() {
                if let Some(mut env) = self.script.pop_front() {
                    env.sent_at = self.tick;
                    self.enqueue(env);
                } else {
                    return Ok(());
                }
            }
            if self.tick >= self.tick_limit {
                return Err(SimError::TickLimit(self.tick_limit));
            }
            self.fire_timers();
            self.deliver();
            self.tick += 1;
        }
    }

    fn apply_faults(&mut self) {
        while let Some(fault) = self.faults.get(self.next_fault) {
            if fault.at_tick > self.tick {
                break;
            }
            let kind = fault.kind.clone();
            self.next_fault += 1;
            self.apply_fault(&kind);
        }
    }

    fn apply_fault(&mut self, kind: &FaultKind) {
        let now = self.tick;
        match kind {
            FaultKind::DropNode { address } => self.drop_node(address),
            FaultKind::DelayLink { from, to, ticks } => {
                self.delays.insert((from.clone(), to.clone()), *ticks);
            }
            FaultKind::RevokeSubject { name } => {
                let fault = NodeFault::RevokeSubject(name);
                let out: Vec<Envelope> = self
                    .nodes
                    .values_mut()
                    .flat_map(|n| n.apply_fault(&fault, now))
                    .collect();
                out.into_iter().for_each(|e| self.enqueue(e));
            }
            FaultKind::ExpireTickets => {
                let out: Vec<Envelope> = self
                    .nodes
                    .values_mut()
                    .flat_map(|n| n.apply_fault(&NodeFault::ExpireTickets, now))
                    .collect();
                out.into_iter().for_each(|e| self.enqueue(e));
            }
        }
    }

    fn drop_node(&mut self, address: &str) {
        if self.nodes.remove(address).is_none() {
            return;
        }
        self.dropped.insert(address.into());
        let links: Vec<Link> = self
            .links
            .keys()
            .filter(|(f, t)| f == address || t == address)
            .cloned()
            .collect();
        let mut bounced = Vec::new();
        for link in links {
            let queue = self.links.remove(&link).unwrap_or_default();
            if link.1 == address {
                bounced.extend(queue.into_iter().map(|f| f.env));
            }
        }
        for env in bounced {
            self.bounce(&env);
        }
    }

    fn bounce(&mut self, env: &Envelope) {
        if env.sender == NET || !self.reachable(&env.sender) {
            return;
        }
        let mut out = Vec::new();
        self.net.error(
            &mut out,
            &env.sender,
            Some(env.msg_id),
            self.tick,
            ErrorCode::Unreachable,
            env.recipient.clone(),
        );
        out.into_iter().for_each(|e| self.enqueue(e));
    }

    fn reachable(&self, address: &str) -> bool {
        self.nodes.contains_key(address) || self.externals.contains(address)
    }

    fn enqueue(&mut self, env: Envelope) {
        if !self.reachable(&env.recipient) {
            self.bounce(&env);
            return;
        }
        let link = (env.sender.clone(), env.recipient.clone());
        let delay = self.delays.get(&link).copied().unwrap_or(0);
        let arrival = env.sent_at.max(self.tick) + 1 + delay;
        self.seq += 1;
        let item = InFlight {
            arrival,
            seq: self.seq,
            env,
        };
        self.links.entry(link).or_default().push_back(item);
    }

    fn fire_timers(&mut self) {
        let now = self.tick;
        let due: Vec<String> = self
            .nodes
            .iter()
            .filter(|(_, n)| n.next_deadline().is_some_and(|d| d <= now))
            .map(|(a, _)| a.clone())
            .collect();
        for addr in due {
            let out = self.nodes.get_mut(&addr).map(|n| n.on_timer(now)).unwrap_or_default();
            out.into_iter().for_each(|e| self.enqueue(e));
        }
    }

    /// Deliverable link heads addressed to `to`, in link order.
    fn candidates(&self, to: &str) -> Vec<(Link, u64, u64)> {
        self.links
            .iter()
            .filter(|((_, t), _)| t == to)
            .filter_map(|(link, q)| q.front().map(|h| (link.clone(), h.arrival, h.seq)))
            .filter(|&(_, arrival, _)| arrival <= self.tick)
            .collect()
    }

    fn pick(&mut self, candidates: &[(Link, u64, u64)]) -> Option<Link> {
        if candidates.is_empty() {
            return None;
        }
        let index = match self.policy {
            DeliveryPolicy::InOrder => candidates
                .iter()
                .enumerate()
                .min_by_key(|(_, (_, arrival, seq))| (*arrival, *seq))
                .map(|(i, _)| i)
                .unwrap_or(0),
            DeliveryPolicy::SeededShuffle => {
                (self.rng.next_u64() % candidates.len() as u64) as usize
            }
        };
        Some(candidates[index].0.clone())
    }

    fn pop(&mut self, link: &Link) -> Option<Envelope> {
        let queue = self.links.get_mut(link)?;
        let item = queue.pop_front();
        if queue.is_empty() {
            self.links.remove(link);
        }
        item.map(|i| i.env)
    }

    fn deliver(&mut self) {
        let now = self.tick;
        let mut outputs = Vec::new();
        let addresses: Vec<String> = self.nodes.keys().cloned().collect();
        for addr in addresses {
            let candidates = self.candidates(&addr);
            let Some(link) = self.pick(&candidates) else {
                continue;
            };
            let Some(env) = self.pop(&link) else {
                continue;
            };
            self.entries.push(TraceEntry {
                tick: now,
                envelope: env.clone(),
            });
            if let Some(node) = self.nodes.get_mut(&addr) {
                outputs.extend(node.step(&env, now));
            }
        }
        let sinks: Vec<String> = self.externals.iter().cloned().collect();
        for sink in sinks {
            loop {
                let arrived = self.candidates(&sink);
                let Some((link, _, _)) = arrived.into_iter().min_by_key(|&(_, a, s)| (a, s)) else {
                    break;
                };
                if let Some(envelope) = self.pop(&link) {
                    self.entries.push(TraceEntry { tick: now, envelope });
                }
            }
        }
        outputs.into_iter().for_each(|e| self.enqueue(e));
    }
}

/// One-shot run: builds a simulator, feeds the script, runs to quiescence.
/// On [`SimError::TickLimit`] the partial trace is still returned.
pub fn run(nodes: Vec<Node>, script: Vec<Envelope>, cfg: &SimConfig) -> Result<(Trace, Result<(), SimError>), SimError> {
    let mut sim = Simulator::new(nodes, cfg)?;
    script.into_iter().for_each(|e| sim.push_script(e));
    let status = sim.run();
    Ok((sim.trace(), status))
}
