//! Deterministic behaviors for the six node roles.
//!
//! Every node is a single-threaded state machine: [`Node::step`] consumes one
//! envelope at a logical time and returns the envelopes it sends. Nodes never
//! share memory; the transport (simulated or TCP) only moves envelopes.

mod authority;
mod discovery;
mod service;
mod user;

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use authority::{CaNode, MonitorNode, RepositoryNode};
pub use discovery::{DiscoveryNode, DiscoveryTiming};
pub use service::{ServiceNode, ServiceTiming, SessionSummary, MAX_HELD_REQUESTS};
pub use user::UserAgent;

use crate::canonical::Bytes;
use crate::certs::{verify, CertStatus, Certificate, Crl, SubjectKind};
use crate::policy::{ServiceId, ServiceSet, StateSet};
use crate::protocol::{Envelope, ErrorReply, Message, TicketId, PROTOCOL_VERSION};
use crate::signer::Scheme;
use crate::ErrorCode;

/// Knowledge every node is configured with: the signature scheme, the CA's
/// public key, and where the certificate repository lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trust {
    pub scheme: Scheme,
    pub ca_pub: Bytes,
    pub repository: String,
}

impl Trust {
    pub fn check(&self, cert: &Certificate, now: u64, crl: &Crl) -> CertStatus {
        verify(cert, self.scheme, self.ca_pub.as_slice(), now, crl)
    }

    /// Ok status, expected kind and expected subject, all at once.
    pub fn accepts(
        &self,
        cert: &Certificate,
        kind: SubjectKind,
        subject: &str,
        now: u64,
        crl: &Crl,
    ) -> bool {
        cert.kind == kind && cert.subject_name == subject && self.check(cert, now, crl) == CertStatus::Ok
    }
}

/// Address plus per-sender message counter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mailbox {
    address: String,
    next_msg_id: u64,
}

impl Mailbox {
    pub fn new(address: impl Into<String>) -> Self {
        Self {
            address: address.into(),
            next_msg_id: 1,
        }
    }

    pub fn address(&self) -> &str {
        &self.address
    }

    /// Builds an envelope, returning it together with its fresh msg_id.
    pub fn send(
        &mut self,
        out: &mut Vec<Envelope>,
        to: &str,
        correlation_id: Option<u64>,
        now: u64,
        message: Message,
    ) -> u64 {
        let msg_id = self.next_msg_id;
        self.next_msg_id += 1;
        out.push(Envelope {
            version: PROTOCOL_VERSION,
            msg_id,
            correlation_id,
            sender: self.address.clone(),
            recipient: to.to_string(),
            sent_at: now,
            message,
        });
        msg_id
    }

    pub fn reply(&mut self, out: &mut Vec<Envelope>, to: &Envelope, now: u64, message: Message) -> u64 {
        self.send(out, &to.sender, Some(to.msg_id), now, message)
    }

    pub fn error(
        &mut self,
        out: &mut Vec<Envelope>,
        to: &str,
        correlation_id: Option<u64>,
        now: u64,
        code: ErrorCode,
        detail: impl Into<String>,
    ) {
        let message = Message::Error(ErrorReply {
            code,
            detail: detail.into(),
        });
        self.send(out, to, correlation_id, now, message);
    }

    /// Answers `env` with ERROR unless `env` is itself a reply or a
    /// notification, so two confused nodes never ping-pong errors.
    pub fn reject(
        &mut self,
        out: &mut Vec<Envelope>,
        env: &Envelope,
        now: u64,
        code: ErrorCode,
        detail: impl Into<String>,
    ) {
        if env.msg_type().success_reply().is_some() {
            self.error(out, &env.sender, Some(env.msg_id), now, code, detail);
        }
    }

    pub fn unexpected(&mut self, out: &mut Vec<Envelope>, env: &Envelope, now: u64) {
        let detail = alloc::format!("{} does not handle {}", self.address, env.msg_type());
        self.reject(out, env, now, ErrorCode::Unexpected, detail);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    User,
    Discovery,
    Service,
    Ca,
    Repository,
    Monitor,
}

/// Environment-level disturbances the simulator can apply to a node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeFault<'a> {
    /// Revoke the named subject's current certificate (CA only).
    RevokeSubject(&'a str),
    /// Forget every session and buffered effective state (service nodes).
    ExpireTickets,
}

/// Observable end-of-run state of a node, recorded in traces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NodeSummary {
    User {
        cert_serial: Option<u64>,
        active_services: ServiceSet,
        service_node: Option<String>,
        ticket: Option<TicketId>,
        last_error: Option<ErrorCode>,
        results: Vec<ServiceId>,
    },
    Discovery {
        roster: Vec<String>,
        free_nodes: Vec<String>,
        rr_cursor: usize,
        tickets_issued: u64,
    },
    Service {
        busy: bool,
        held_requests: usize,
        sessions: BTreeMap<String, SessionSummary>,
    },
    Ca {
        next_serial: u64,
        revoked: Vec<u64>,
    },
    Repository {
        certs: BTreeMap<String, u64>,
        revoked: Vec<u64>,
    },
    Monitor {
        states: BTreeMap<String, StateSet>,
        registered: Vec<String>,
    },
}

#[derive(Debug, Clone)]
pub enum Node {
    User(UserAgent),
    Discovery(DiscoveryNode),
    Service(ServiceNode),
    Ca(CaNode),
    Repository(RepositoryNode),
    Monitor(MonitorNode),
}

impl Node {
    pub fn address(&self) -> &str {
        match self {
            Node::User(n) => n.address(),
            Node::Discovery(n) => n.address(),
            Node::Service(n) => n.address(),
            Node::Ca(n) => n.address(),
            Node::Repository(n) => n.address(),
            Node::Monitor(n) => n.address(),
        }
    }

    pub fn kind(&self) -> NodeKind {
        match self {
            Node::User(_) => NodeKind::User,
            Node::Discovery(_) => NodeKind::Discovery,
            Node::Service(_) => NodeKind::Service,
            Node::Ca(_) => NodeKind::Ca,
            Node::Repository(_) => NodeKind::Repository,
            Node::Monitor(_) => NodeKind::Monitor,
        }
    }

    /// Consumes one envelope at logical time `now`.
    pub fn step(&mut self, env: &Envelope, now: u64) -> Vec<Envelope> {
        match self {
            Node::User(n) => n.step(env, now),
            Node::Discovery(n) => n.step(env, now),
            Node::Service(n) => n.step(env, now),
            Node::Ca(n) => n.step(env, now),
            Node::Repository(n) => n.step(env, now),
            Node::Monitor(n) => n.step(env, now),
        }
    }

    /// Earliest tick at which [`Node::on_timer`] has work to do.
    pub fn next_deadline(&self) -> Option<u64> {
        match self {
            Node::Service(n) => n.next_deadline(),
            _ => None,
        }
    }

    pub fn on_timer(&mut self, now: u64) -> Vec<Envelope> {
        match self {
            Node::Service(n) => n.on_timer(now),
            _ => Vec::new(),
        }
    }

    pub fn apply_fault(&mut self, fault: &NodeFault<'_>, now: u64) -> Vec<Envelope> {
        match (self, fault) {
            (Node::Ca(n), NodeFault::RevokeSubject(subject)) => n.revoke_silently(subject, now),
            (Node::Service(n), NodeFault::ExpireTickets) => n.expire_all(now),
            _ => Vec::new(),
        }
    }

    pub fn summary(&self) -> NodeSummary {
        match self {
            Node::User(n) => n.summary(),
            Node::Discovery(n) => n.summary(),
            Node::Service(n) => n.summary(),
            Node::Ca(n) => n.summary(),
            Node::Repository(n) => n.summary(),
            Node::Monitor(n) => n.summary(),
        }
    }
}
