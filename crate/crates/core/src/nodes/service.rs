use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Mailbox, NodeSummary, Trust};
use crate::canonical::{to_canonical_vec, Bytes};
use crate::certs::{Certificate, Crl, SubjectKind};
use crate::policy::{policy_map, PolicyTable, ServiceId, ServiceSet, StateSet};
use crate::protocol::{
    forward_proof_bytes, validate_ticket, Envelope, ForwardReq, GetCert, Message, NodeStatus,
    Register, ServReq, ServiceInvoke, ServiceList, ServiceResult, Ticket, TicketId, TicketStatus,
};
use crate::signer::{Keypair, SignerContract};
use crate::ErrorCode;

/// Upper bound on SERV_REQs waiting for their effective state.
pub const MAX_HELD_REQUESTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServiceTiming {
    /// How long a SERV_REQ may wait for its SEND_EFF_STATE.
    pub hold_window: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSummary {
    pub user: String,
    pub effective_states: StateSet,
    pub services: ServiceSet,
}

#[derive(Debug, Clone)]
struct EffRecord {
    user: String,
    states: StateSet,
    expires_at: u64,
}

#[derive(Debug, Clone)]
struct Session {
    ticket: Ticket,
    effective: StateSet,
    services: ServiceSet,
}

#[derive(Debug, Clone)]
struct Inbound {
    from: String,
    request_id: u64,
}

#[derive(Debug, Clone)]
struct HeldRequest {
    origin: Inbound,
    request: ServReq,
    deadline: u64,
}

#[derive(Debug, Clone)]
enum CertWait {
    User {
        origin: Inbound,
        request: ServReq,
        effective: StateSet,
    },
    Origin {
        origin: Inbound,
        request: ForwardReq,
    },
}

/// Level-2 authentication, POLICY_MAP, and service rendering, including
/// forwarding a request to another service node.
#[derive(Debug, Clone)]
pub struct ServiceNode {
    mailbox: Mailbox,
    trust: Trust,
    keypair: Keypair,
    table: PolicyTable,
    discovery: String,
    discovery_pub: Bytes,
    timing: ServiceTiming,
    service_names: BTreeMap<ServiceId, String>,
    forward_routes: BTreeMap<ServiceId, String>,
    eff_records: BTreeMap<TicketId, EffRecord>,
    held: Vec<HeldRequest>,
    sessions: BTreeMap<TicketId, Session>,
    /// Keyed by the msg_id of the GET_CERT sent to the repository.
    cert_waits: BTreeMap<u64, CertWait>,
    /// FORWARD_REQ msg_id → the user's SERVICE_INVOKE.
    forwards: BTreeMap<u64, Inbound>,
    /// Tickets accepted via SEND_EFF_STATE and not yet answered.
    open_flows: BTreeSet<TicketId>,
    own_cert: Option<Certificate>,
}

impl ServiceNode {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        address: impl Into<String>,
        trust: Trust,
        keypair: Keypair,
        table: PolicyTable,
        discovery: impl Into<String>,
        discovery_pub: Bytes,
        timing: ServiceTiming,
        service_names: BTreeMap<ServiceId, String>,
        forward_routes: BTreeMap<ServiceId, String>,
    ) -> Self {
        Self {
            mailbox: Mailbox::new(address),
            trust,
            keypair,
            table,
            discovery: discovery.into(),
            discovery_pub,
            timing,
            service_names,
            forward_routes,
            eff_records: BTreeMap::new(),
            held: Vec::new(),
            sessions: BTreeMap::new(),
            cert_waits: BTreeMap::new(),
            forwards: BTreeMap::new(),
            open_flows: BTreeSet::new(),
            own_cert: None,
        }
    }

    pub fn address(&self) -> &str {
        self.mailbox.address()
    }

    pub fn policy_table(&self) -> &PolicyTable {
        &self.table
    }

    /// Services mapped for `ticket`, if a session exists.
    pub fn mapped_services(&self, ticket: &TicketId) -> Option<ServiceSet> {
        self.sessions.get(ticket).map(|s| s.services)
    }

    /// Earliest held-request timeout or orphaned record expiry.
    pub fn next_deadline(&self) -> Option<u64> {
        let held = self.held.iter().map(|h| h.deadline);
        let records = self.eff_records.values().map(|r| r.expires_at);
        held.chain(records).min()
    }

    pub fn on_timer(&mut self, now: u64) -> Vec<Envelope> {
        let mut out = Vec::new();
        self.purge(&mut out, now);
        out
    }

    fn expire_held(&mut self, out: &mut Vec<Envelope>, now: u64) {
        let (expired, kept): (Vec<_>, Vec<_>) =
            self.held.drain(..).partition(|h| h.deadline <= now);
        self.held = kept;
        for h in expired {
            self.mailbox.error(
                out,
                &h.origin.from,
                Some(h.origin.request_id),
                now,
                ErrorCode::NoSession,
                "no effective state arrived for this ticket",
            );
            self.close_flow(out, &h.request.ticket.ticket_id, now);
        }
    }

    fn purge(&mut self, out: &mut Vec<Envelope>, now: u64) {
        let stale: Vec<TicketId> = self
            .eff_records
            .iter()
            .filter(|(_, r)| r.expires_at <= now)
            .map(|(id, _)| *id)
            .collect();
        for id in stale {
            self.eff_records.remove(&id);
            self.close_flow(out, &id, now);
        }
        self.sessions.retain(|_, s| s.ticket.expires_at() > now);
        self.expire_held(out, now);
    }

    /// Drops every session and buffered record, as if all tickets expired.
    pub(crate) fn expire_all(&mut self, now: u64) -> Vec<Envelope> {
        let mut out = Vec::new();
        self.eff_records.clear();
        self.sessions.clear();
        for h in core::mem::take(&mut self.held) {
            self.mailbox.error(
                &mut out,
                &h.origin.from,
                Some(h.origin.request_id),
                now,
                ErrorCode::NoSession,
                "tickets expired",
            );
        }
        if !self.open_flows.is_empty() {
            self.open_flows.clear();
            self.announce(&mut out, true, now);
        }
        out
    }

    fn announce(&mut self, out: &mut Vec<Envelope>, free: bool, now: u64) {
        let disc = self.discovery.clone();
        self.mailbox
            .send(out, &disc, None, now, Message::NodeStatus(NodeStatus { free }));
    }

    fn open_flow(&mut self, out: &mut Vec<Envelope>, id: TicketId, now: u64) {
        let was_idle = self.open_flows.is_empty();
        if self.open_flows.insert(id) && was_idle {
            self.announce(out, false, now);
        }
    }

    fn close_flow(&mut self, out: &mut Vec<Envelope>, id: &TicketId, now: u64) {
        if self.open_flows.remove(id) && self.open_flows.is_empty() {
            self.announce(out, true, now);
        }
    }

    fn ticket_status(&self, ticket: &Ticket, now: u64) -> TicketStatus {
        validate_ticket(ticket, self.trust.scheme, self.discovery_pub.as_slice(), now)
    }

    pub fn step(&mut self, env: &Envelope, now: u64) -> Vec<Envelope> {
        let mut out = Vec::new();
        self.purge(&mut out, now);
        match &env.message {
            Message::CmdRegister(cmd) => {
                let reg = Message::RegServ(Register {
                    subject_name: self.address().into(),
                    public_key: self.keypair.public.clone(),
                });
                self.mailbox.send(&mut out, &cmd.ca_addr, None, now, reg);
            }
            Message::RegAck(ack) => {
                self.own_cert = Some(ack.cert.clone());
                self.announce(&mut out, true, now);
            }
            Message::SendEffState(eff) => {
                if env.sender != self.discovery
                    || eff.ticket.user != eff.user
                    || self.ticket_status(&eff.ticket, now) != TicketStatus::Ok
                {
                    return out;
                }
                let id = eff.ticket.ticket_id;
                self.eff_records.insert(
                    id,
                    EffRecord {
                        user: eff.user.clone(),
                        states: eff.effective_states,
                        expires_at: eff.ticket.expires_at(),
                    },
                );
                self.open_flow(&mut out, id, now);
                if let Some(pos) = self.held.iter().position(|h| h.request.ticket.ticket_id == id) {
                    let held = self.held.remove(pos);
                    self.join(&mut out, held.origin, held.request, now);
                }
            }
            Message::ServReq(req) => self.handle_serv_req(&mut out, env, req, now),
            Message::ServiceInvoke(inv) => self.handle_invoke(&mut out, env, inv, now),
            Message::ForwardReq(fwd) => self.handle_forward(&mut out, env, fwd, now),
            Message::CertResponse(resp) => {
                if let Some(wait) = env.correlation_id.and_then(|id| self.cert_waits.remove(&id)) {
                    self.cert_arrived(&mut out, wait, &resp.cert, &resp.crl, now);
                }
            }
            Message::ServiceResult(_) | Message::Error(_) => {
                if let Some(wait) = env.correlation_id.and_then(|id| self.cert_waits.remove(&id)) {
                    // Repository could not produce the certificate.
                    let (origin, code, ticket) = match wait {
                        CertWait::User { origin, request, .. } => {
                            (origin, ErrorCode::Cert, Some(request.ticket.ticket_id))
                        }
                        CertWait::Origin { origin, .. } => (origin, ErrorCode::Auth, None),
                    };
                    self.mailbox.error(
                        &mut out,
                        &origin.from,
                        Some(origin.request_id),
                        now,
                        code,
                        "certificate unavailable",
                    );
                    if let Some(id) = ticket {
                        self.close_flow(&mut out, &id, now);
                    }
                } else if let Some(user) = env.correlation_id.and_then(|id| self.forwards.remove(&id)) {
                    // Relay the next node's verdict to the user.
                    self.mailbox.send(
                        &mut out,
                        &user.from,
                        Some(user.request_id),
                        now,
                        env.message.clone(),
                    );
                }
            }
            Message::NodeStatus(_) | Message::Ack(_) => {}
            _ => self.mailbox.unexpected(&mut out, env, now),
        }
        out
    }

    /// Level-2 check: ticket first, then join with the pushed effective
    /// state (holding the request if it has not arrived yet).
    pub fn handle_serv_req(&mut self, out: &mut Vec<Envelope>, env: &Envelope, req: &ServReq, now: u64) {
        if env.sender != req.user {
            self.mailbox
                .reject(out, env, now, ErrorCode::Auth, "sender does not match user");
            return;
        }
        if req.ticket.user != req.user || self.ticket_status(&req.ticket, now) != TicketStatus::Ok {
            self.mailbox
                .reject(out, env, now, ErrorCode::NoSession, "ticket invalid or expired");
            return;
        }
        let origin = Inbound {
            from: env.sender.clone(),
            request_id: env.msg_id,
        };
        if self.eff_records.contains_key(&req.ticket.ticket_id) {
            self.join(out, origin, req.clone(), now);
        } else if self.held.len() >= MAX_HELD_REQUESTS {
            self.mailbox
                .reject(out, env, now, ErrorCode::NoSession, "too many held requests");
        } else {
            self.held.push(HeldRequest {
                origin,
                request: req.clone(),
                deadline: now + self.timing.hold_window + 1,
            });
        }
    }

    fn join(&mut self, out: &mut Vec<Envelope>, origin: Inbound, request: ServReq, now: u64) {
        let id = request.ticket.ticket_id;
        let Some(record) = self.eff_records.get(&id).filter(|r| r.user == request.user) else {
            self.mailbox.error(
                out,
                &origin.from,
                Some(origin.request_id),
                now,
                ErrorCode::NoSession,
                "effective state belongs to another user",
            );
            return;
        };
        let effective = record.states;
        let repo = self.trust.repository.clone();
        let get = Message::GetCert(GetCert {
            subject_name: request.user.clone(),
        });
        let msg = self.mailbox.send(out, &repo, None, now, get);
        self.cert_waits.insert(
            msg,
            CertWait::User {
                origin,
                request,
                effective,
            },
        );
    }

    fn cert_arrived(&mut self, out: &mut Vec<Envelope>, wait: CertWait, cert: &Certificate, crl: &Crl, now: u64) {
        match wait {
            CertWait::User {
                origin,
                request,
                effective,
            } => {
                let id = request.ticket.ticket_id;
                self.eff_records.remove(&id);
                if !self
                    .trust
                    .accepts(cert, SubjectKind::User, &request.user, now, crl)
                {
                    let detail = format!(
                        "certificate {} for {}: {:?}",
                        cert.serial,
                        request.user,
                        self.trust.check(cert, now, crl)
                    );
                    self.mailbox
                        .error(out, &origin.from, Some(origin.request_id), now, ErrorCode::Cert, detail);
                } else {
                    let services = policy_map(effective, &self.table);
                    self.sessions.insert(
                        id,
                        Session {
                            ticket: request.ticket.clone(),
                            effective,
                            services,
                        },
                    );
                    let list = Message::ServiceList(ServiceList {
                        services,
                        ticket: request.ticket,
                    });
                    self.mailbox
                        .send(out, &origin.from, Some(origin.request_id), now, list);
                }
                self.close_flow(out, &id, now);
            }
            CertWait::Origin { origin, request } => {
                let reply_to = Some(origin.request_id);
                if !self.trust.accepts(
                    cert,
                    SubjectKind::Service,
                    &request.origin_node,
                    now,
                    crl,
                ) {
                    self.mailbox.error(
                        out,
                        &origin.from,
                        reply_to,
                        now,
                        ErrorCode::Cert,
                        "forwarding node certificate rejected",
                    );
                    return;
                }
                let proof = forward_proof_bytes(
                    &request.ticket,
                    request.effective_states,
                    &request.origin_node,
                    request.service_id,
                );
                if !self.trust.scheme.verify(
                    cert.public_key.as_slice(),
                    &proof,
                    request.origin_signature.as_slice(),
                ) {
                    self.mailbox
                        .error(out, &origin.from, reply_to, now, ErrorCode::Auth, "bad origin signature");
                    return;
                }
                let services = policy_map(request.effective_states, &self.table);
                if services.contains(request.service_id) {
                    let result = self.render(request.service_id);
                    self.mailbox.send(out, &origin.from, reply_to, now, result);
                } else {
                    self.mailbox.error(
                        out,
                        &origin.from,
                        reply_to,
                        now,
                        ErrorCode::NotAuthorized,
                        format!("service {} not mapped at {}", request.service_id, self.address()),
                    );
                }
            }
        }
    }

    fn render(&self, service: ServiceId) -> Message {
        #[derive(Serialize)]
        struct Body<'a> {
            node: &'a str,
            service: &'a str,
            service_id: ServiceId,
        }
        let fallback = format!("service {service}");
        let name = self
            .service_names
            .get(&service)
            .map(String::as_str)
            .unwrap_or(&fallback);
        let body = to_canonical_vec(&Body {
            node: self.address(),
            service: name,
            service_id: service,
        })
        .expect("result body always serializes");
        Message::ServiceResult(ServiceResult {
            service_id: service,
            body: Bytes(body),
        })
    }

    /// Renders a service for a live session, or forwards it when this node
    /// routes that service elsewhere.
    pub fn handle_invoke(&mut self, out: &mut Vec<Envelope>, env: &Envelope, inv: &ServiceInvoke, now: u64) {
        let id = inv.ticket.ticket_id;
        let session = self
            .sessions
            .get(&id)
            .filter(|s| s.ticket == inv.ticket && s.ticket.user == env.sender)
            .cloned();
        let Some(session) = session.filter(|_| self.ticket_status(&inv.ticket, now) == TicketStatus::Ok)
        else {
            self.mailbox
                .reject(out, env, now, ErrorCode::NoSession, "no session for this ticket");
            return;
        };
        if !session.services.contains(inv.service_id) {
            let detail = format!("service {} not in {}", inv.service_id, session.services);
            self.mailbox
                .reject(out, env, now, ErrorCode::NotAuthorized, detail);
            return;
        }
        match self.forward_routes.get(&inv.service_id).cloned() {
            Some(next) => {
                let origin = Inbound {
                    from: env.sender.clone(),
                    request_id: env.msg_id,
                };
                self.forward_request(out, &session.ticket, session.effective, inv.service_id, &next, origin, now);
            }
            None => {
                let result = self.render(inv.service_id);
                self.mailbox.reply(out, env, now, result);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn forward_request(
        &mut self,
        out: &mut Vec<Envelope>,
        ticket: &Ticket,
        effective: StateSet,
        service_id: ServiceId,
        next_node: &str,
        origin: Inbound,
        now: u64,
    ) {
        let proof = forward_proof_bytes(ticket, effective, self.address(), service_id);
        let fwd = Message::ForwardReq(ForwardReq {
            ticket: ticket.clone(),
            effective_states: effective,
            origin_node: self.address().to_string(),
            origin_signature: self.keypair.sign(&proof),
            service_id,
        });
        let id = self.mailbox.send(out, next_node, None, now, fwd);
        self.forwards.insert(id, origin);
    }

    fn handle_forward(&mut self, out: &mut Vec<Envelope>, env: &Envelope, fwd: &ForwardReq, now: u64) {
        match self.ticket_status(&fwd.ticket, now) {
            TicketStatus::BadSignature => {
                self.mailbox
                    .reject(out, env, now, ErrorCode::Auth, "ticket signature invalid");
                return;
            }
            TicketStatus::Expired => {
                self.mailbox
                    .reject(out, env, now, ErrorCode::NoSession, "ticket expired");
                return;
            }
            TicketStatus::Ok => {}
        }
        if fwd.origin_node != env.sender {
            self.mailbox
                .reject(out, env, now, ErrorCode::Auth, "origin does not match sender");
            return;
        }
        let repo = self.trust.repository.clone();
        let get = Message::GetCert(GetCert {
            subject_name: fwd.origin_node.clone(),
        });
        let msg = self.mailbox.send(out, &repo, None, now, get);
        self.cert_waits.insert(
            msg,
            CertWait::Origin {
                origin: Inbound {
                    from: env.sender.clone(),
                    request_id: env.msg_id,
                },
                request: fwd.clone(),
            },
        );
    }

    pub fn summary(&self) -> NodeSummary {
        NodeSummary::Service {
            busy: !self.open_flows.is_empty(),
            held_requests: self.held.len(),
            sessions: self
                .sessions
                .iter()
                .map(|(id, s)| {
                    (
                        id.to_string(),
                        SessionSummary {
                            user: s.ticket.user.clone(),
                            effective_states: s.effective,
                            services: s.services,
                        },
                    )
                })
                .collect(),
        }
    }
}
