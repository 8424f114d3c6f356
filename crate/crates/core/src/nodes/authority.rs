//! CA-side nodes: the issuing CA, the certificate/CRL repository, and the
//! monitor that owns every subject's authoritative state list.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{Mailbox, NodeSummary};
use crate::canonical::Bytes;
use crate::certs::{CertificateAuthority, Repository, SubjectKind};
use crate::policy::{GridConfig, StateSet};
use crate::protocol::{
    Ack, CertResponse, CrlUpdate, Envelope, Message, RegAck, StateChange, StateQuery, StoreCert,
    SubjectStates,
};
use crate::ErrorCode;

#[derive(Debug, Clone)]
struct PendingRegistration {
    requester: String,
    request_id: u64,
    subject: String,
    public_key: Bytes,
}

#[derive(Debug, Clone)]
pub struct CaNode {
    mailbox: Mailbox,
    ca: CertificateAuthority,
    monitor: String,
    repository: String,
    validity_ticks: u64,
    /// Keyed by the msg_id of the STATE_QUERY sent to the monitor.
    pending: BTreeMap<u64, PendingRegistration>,
}

impl CaNode {
    pub fn new(
        address: impl Into<String>,
        ca: CertificateAuthority,
        monitor: impl Into<String>,
        repository: impl Into<String>,
        validity_ticks: u64,
    ) -> Self {
        Self {
            mailbox: Mailbox::new(address),
            ca,
            monitor: monitor.into(),
            repository: repository.into(),
            validity_ticks,
            pending: BTreeMap::new(),
        }
    }

    pub fn address(&self) -> &str {
        self.mailbox.address()
    }

    pub fn authority(&self) -> &CertificateAuthority {
        &self.ca
    }

    pub fn step(&mut self, env: &Envelope, now: u64) -> Vec<Envelope> {
        let mut out = Vec::new();
        match &env.message {
            Message::RegUser(reg) | Message::RegDisc(reg) | Message::RegServ(reg) => {
                if reg.subject_name != env.sender {
                    self.mailbox
                        .reject(&mut out, env, now, ErrorCode::Auth, "subjects register themselves");
                    return out;
                }
                let live = self
                    .ca
                    .current(&reg.subject_name)
                    .is_some_and(|c| !self.ca.crl().contains(c.serial));
                let in_flight = self.pending.values().any(|p| p.subject == reg.subject_name);
                if live || in_flight {
                    self.mailbox.reject(
                        &mut out,
                        env,
                        now,
                        ErrorCode::DuplicateSubject,
                        reg.subject_name.clone(),
                    );
                    return out;
                }
                match &env.message {
                    Message::RegUser(_) => {
                        let query = Message::StateQuery(StateQuery {
                            subject_name: reg.subject_name.clone(),
                        });
                        let monitor = self.monitor.clone();
                        let id = self.mailbox.send(&mut out, &monitor, None, now, query);
                        self.pending.insert(
                            id,
                            PendingRegistration {
                                requester: env.sender.clone(),
                                request_id: env.msg_id,
                                subject: reg.subject_name.clone(),
                                public_key: reg.public_key.clone(),
                            },
                        );
                    }
                    other => {
                        let kind = if matches!(other, Message::RegDisc(_)) {
                            SubjectKind::Discovery
                        } else {
                            SubjectKind::Service
                        };
                        let pending = PendingRegistration {
                            requester: env.sender.clone(),
                            request_id: env.msg_id,
                            subject: reg.subject_name.clone(),
                            public_key: reg.public_key.clone(),
                        };
                        self.complete_registration(&mut out, pending, kind, StateSet::empty(), now);
                    }
                }
            }
            Message::StateReply(reply) => {
                let Some(pending) = env.correlation_id.and_then(|id| self.pending.remove(&id)) else {
                    return out;
                };
                if env.sender != self.monitor || reply.subject_name != pending.subject {
                    let (to, id) = (pending.requester.clone(), pending.request_id);
                    self.mailbox
                        .error(&mut out, &to, Some(id), now, ErrorCode::Auth, "state reply mismatch");
                    return out;
                }
                self.complete_registration(&mut out, pending, SubjectKind::User, reply.states, now);
            }
            Message::Error(err) => {
                if let Some(pending) = env.correlation_id.and_then(|id| self.pending.remove(&id)) {
                    let (to, id) = (pending.requester, pending.request_id);
                    self.mailbox
                        .error(&mut out, &to, Some(id), now, err.code, err.detail.clone());
                }
            }
            Message::StateChange(change) => {
                if env.sender != self.monitor {
                    self.mailbox
                        .reject(&mut out, env, now, ErrorCode::Auth, "only the monitor changes states");
                    return out;
                }
                self.handle_state_change(&mut out, env, change, now);
            }
            Message::Revoke(revoke) => match self.ca.revoke(&revoke.subject_name, now) {
                Ok(crl) => {
                    let repo = self.repository.clone();
                    self.mailbox
                        .send(&mut out, &repo, None, now, Message::CrlUpdate(CrlUpdate { crl }));
                    self.mailbox.reply(&mut out, env, now, Message::Ack(Ack {}));
                }
                Err(e) => self.mailbox.reject(&mut out, env, now, e.code(), e.to_string()),
            },
            Message::Ack(_) => {}
            _ => self.mailbox.unexpected(&mut out, env, now),
        }
        out
    }

    fn complete_registration(
        &mut self,
        out: &mut Vec<Envelope>,
        pending: PendingRegistration,
        kind: SubjectKind,
        states: StateSet,
        now: u64,
    ) {
        let issued = self.ca.issue(
            &pending.subject,
            kind,
            pending.public_key,
            states,
            now,
            self.validity_ticks,
        );
        match issued {
            Ok(cert) => {
                let store = Message::StoreCert(StoreCert {
                    cert: cert.clone(),
                    crl: self.ca.crl().clone(),
                });
                self.mailbox.send(
                    out,
                    &pending.requester,
                    Some(pending.request_id),
                    now,
                    Message::RegAck(RegAck { cert }),
                );
                let repo = self.repository.clone();
                self.mailbox.send(out, &repo, None, now, store);
            }
            Err(e) => self.mailbox.error(
                out,
                &pending.requester,
                Some(pending.request_id),
                now,
                e.code(),
                e.to_string(),
            ),
        }
    }

    /// Reissues the subject's certificate with the monitor's new states and
    /// publishes it together with the grown CRL.
    pub fn handle_state_change(
        &mut self,
        out: &mut Vec<Envelope>,
        env: &Envelope,
        change: &StateChange,
        now: u64,
    ) {
        let Some(old) = self.ca.current(&change.user).cloned() else {
            self.mailbox
                .reject(out, env, now, ErrorCode::UnknownSubject, change.user.clone());
            return;
        };
        match self.ca.reissue(&old, change.new_states, now, self.validity_ticks) {
            Ok((cert, crl)) => {
                let repo = self.repository.clone();
                self.mailbox
                    .send(out, &repo, None, now, Message::StoreCert(StoreCert { cert, crl }));
                self.mailbox.reply(out, env, now, Message::Ack(Ack {}));
            }
            Err(e) => self.mailbox.reject(out, env, now, e.code(), e.to_string()),
        }
    }

    pub(crate) fn revoke_silently(&mut self, subject: &str, now: u64) -> Vec<Envelope> {
        let mut out = Vec::new();
        if let Ok(crl) = self.ca.revoke(subject, now) {
            let repo = self.repository.clone();
            self.mailbox
                .send(&mut out, &repo, None, now, Message::CrlUpdate(CrlUpdate { crl }));
        }
        out
    }

    pub fn summary(&self) -> NodeSummary {
        NodeSummary::Ca {
            next_serial: self.ca.next_serial(),
            revoked: self.ca.crl().revoked_serials.iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RepositoryNode {
    mailbox: Mailbox,
    repo: Repository,
    ca: String,
}

impl RepositoryNode {
    pub fn new(address: impl Into<String>, repo: Repository, ca: impl Into<String>) -> Self {
        Self {
            mailbox: Mailbox::new(address),
            repo,
            ca: ca.into(),
        }
    }

    pub fn address(&self) -> &str {
        self.mailbox.address()
    }

    pub fn repository(&self) -> &Repository {
        &self.repo
    }

    pub fn step(&mut self, env: &Envelope, now: u64) -> Vec<Envelope> {
        let mut out = Vec::new();
        match &env.message {
            Message::GetCert(req) => match self.repo.get_cert(&req.subject_name) {
                Ok(cert) => {
                    let resp = Message::CertResponse(CertResponse {
                        cert: cert.clone(),
                        crl: self.repo.get_crl().clone(),
                    });
                    self.mailbox.reply(&mut out, env, now, resp);
                }
                Err(e) => self.mailbox.reject(&mut out, env, now, e.code(), e.to_string()),
            },
            Message::StoreCert(store) if env.sender == self.ca => {
                self.repo.merge_crl(&store.crl);
                if let Err(e) = self.repo.store_cert(store.cert.clone(), now) {
                    let ca = self.ca.clone();
                    self.mailbox
                        .error(&mut out, &ca, Some(env.msg_id), now, e.code(), e.to_string());
                }
            }
            Message::CrlUpdate(update) if env.sender == self.ca => {
                self.repo.merge_crl(&update.crl);
            }
            Message::Error(_) | Message::Ack(_) => {}
            _ => self.mailbox.unexpected(&mut out, env, now),
        }
        out
    }

    pub fn summary(&self) -> NodeSummary {
        NodeSummary::Repository {
            certs: self
                .repo
                .subjects()
                .map(|(name, cert)| (String::from(name), cert.serial))
                .collect(),
            revoked: self.repo.get_crl().revoked_serials.iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MonitorNode {
    mailbox: Mailbox,
    grid: GridConfig,
    ca: String,
    default_states: StateSet,
    states: BTreeMap<String, StateSet>,
    registered: BTreeSet<String>,
    /// STATE_CHANGE msg_id → (operator address, operator request id).
    pending: BTreeMap<u64, (String, u64)>,
}

impl MonitorNode {
    pub fn new(
        address: impl Into<String>,
        grid: GridConfig,
        ca: impl Into<String>,
        default_states: StateSet,
    ) -> Self {
        Self {
            mailbox: Mailbox::new(address),
            grid,
            ca: ca.into(),
            default_states,
            states: BTreeMap::new(),
            registered: BTreeSet::new(),
            pending: BTreeMap::new(),
        }
    }

    pub fn address(&self) -> &str {
        self.mailbox.address()
    }

    pub fn states_of(&self, subject: &str) -> Option<StateSet> {
        self.states.get(subject).copied()
    }

    pub fn step(&mut self, env: &Envelope, now: u64) -> Vec<Envelope> {
        let mut out = Vec::new();
        match &env.message {
            Message::StateQuery(query) => {
                let states = *self
                    .states
                    .entry(query.subject_name.clone())
                    .or_insert(self.default_states);
                self.registered.insert(query.subject_name.clone());
                let reply = Message::StateReply(SubjectStates {
                    subject_name: query.subject_name.clone(),
                    states,
                });
                self.mailbox.reply(&mut out, env, now, reply);
            }
            Message::SeedStates(seed) => {
                if let Err(e) = self.grid.check_states(seed.states) {
                    self.mailbox.reject(&mut out, env, now, e.code(), e.to_string());
                } else if self.registered.contains(&seed.subject_name) {
                    self.mailbox.reject(
                        &mut out,
                        env,
                        now,
                        ErrorCode::DuplicateSubject,
                        "subject already registered; use SET_STATES",
                    );
                } else {
                    self.states.insert(seed.subject_name.clone(), seed.states);
                    self.mailbox.reply(&mut out, env, now, Message::Ack(Ack {}));
                }
            }
            Message::SetStates(set) => {
                out = self.set_states(&set.subject_name, set.states, env, now);
            }
            Message::Ack(_) | Message::Error(_) => {
                if let Some((to, id)) = env.correlation_id.and_then(|id| self.pending.remove(&id)) {
                    self.mailbox.send(&mut out, &to, Some(id), now, env.message.clone());
                }
            }
            _ => self.mailbox.unexpected(&mut out, env, now),
        }
        out
    }

    /// Records new authoritative states for a registered subject and signals
    /// the CA to reissue its certificate.
    pub fn set_states(
        &mut self,
        subject: &str,
        states: StateSet,
        request: &Envelope,
        now: u64,
    ) -> Vec<Envelope> {
        let mut out = Vec::new();
        if let Err(e) = self.grid.check_states(states) {
            self.mailbox.reject(&mut out, request, now, e.code(), e.to_string());
            return out;
        }
        if !self.registered.contains(subject) {
            self.mailbox
                .reject(&mut out, request, now, ErrorCode::UnknownSubject, subject);
            return out;
        }
        self.states.insert(subject.into(), states);
        let change = Message::StateChange(StateChange {
            user: subject.into(),
            new_states: states,
        });
        let ca = self.ca.clone();
        let id = self.mailbox.send(&mut out, &ca, None, now, change);
        self.pending
            .insert(id, (request.sender.clone(), request.msg_id));
        out
    }

    pub fn summary(&self) -> NodeSummary {
        NodeSummary::Monitor {
            states: self.states.clone(),
            registered: self.registered.iter().cloned().collect(),
        }
    }
}
