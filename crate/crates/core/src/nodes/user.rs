use alloc::string::String;
use alloc::vec::Vec;

use super::{Mailbox, NodeSummary, Trust};
use crate::certs::{Certificate, Crl, SubjectKind};
use crate::policy::{ServiceId, ServiceSet};
use crate::protocol::{
    auth_proof_bytes, Envelope, GetCert, GetNode, Message, Register, ServReq, ServiceInvoke,
    Ticket,
};
use crate::signer::Keypair;
use crate::ErrorCode;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Phase {
    Idle,
    /// GET_CERT for the discovery node is in flight.
    DiscoveryCert { discovery: String, request: u64 },
    GetNode { request: u64 },
    ServiceCert { request: u64 },
    ServReq { request: u64 },
}

/// The user side of the flow. Only interfaces in the most recent
/// SERVICE_LIST are activated.
#[derive(Debug, Clone)]
pub struct UserAgent {
    mailbox: Mailbox,
    trust: Trust,
    keypair: Keypair,
    own_cert: Option<Certificate>,
    phase: Phase,
    pending_invoke: Option<ServiceId>,
    service_node: Option<String>,
    ticket: Option<Ticket>,
    active_services: ServiceSet,
    last_error: Option<ErrorCode>,
    results: Vec<ServiceId>,
}

impl UserAgent {
    pub fn new(address: impl Into<String>, trust: Trust, keypair: Keypair) -> Self {
        Self {
            mailbox: Mailbox::new(address),
            trust,
            keypair,
            own_cert: None,
            phase: Phase::Idle,
            pending_invoke: None,
            service_node: None,
            ticket: None,
            active_services: ServiceSet::empty(),
            last_error: None,
            results: Vec::new(),
        }
    }

    pub fn address(&self) -> &str {
        self.mailbox.address()
    }

    pub fn cert(&self) -> Option<&Certificate> {
        self.own_cert.as_ref()
    }

    pub fn active_services(&self) -> ServiceSet {
        self.active_services
    }

    pub fn last_error(&self) -> Option<ErrorCode> {
        self.last_error
    }

    pub fn results(&self) -> &[ServiceId] {
        &self.results
    }

    fn fail(&mut self, code: ErrorCode) {
        self.last_error = Some(code);
        self.phase = Phase::Idle;
        self.pending_invoke = None;
    }

    fn expects(&self, env: &Envelope) -> bool {
        let id = match &self.phase {
            Phase::Idle => return false,
            Phase::DiscoveryCert { request, .. }
            | Phase::GetNode { request }
            | Phase::ServiceCert { request }
            | Phase::ServReq { request } => *request,
        };
        env.correlation_id == Some(id)
    }

    pub fn step(&mut self, env: &Envelope, now: u64) -> Vec<Envelope> {
        let mut out = Vec::new();
        match &env.message {
            Message::CmdRegister(cmd) => {
                let reg = Message::RegUser(Register {
                    subject_name: self.address().into(),
                    public_key: self.keypair.public.clone(),
                });
                self.mailbox.send(&mut out, &cmd.ca_addr, None, now, reg);
            }
            Message::RegAck(ack) => {
                if ack.cert.subject_name == self.address() {
                    self.own_cert = Some(ack.cert.clone());
                }
            }
            Message::CmdAccess(cmd) => {
                self.last_error = None;
                self.pending_invoke = cmd.invoke;
                self.request_access(&mut out, &cmd.discovery_addr, now);
            }
            Message::CmdInvoke(cmd) => {
                self.last_error = None;
                self.invoke(&mut out, cmd.service_id, now)
            }
            Message::CertResponse(resp) if self.expects(env) => {
                self.peer_cert(&mut out, &resp.cert, &resp.crl, now)
            }
            Message::SendNode(send) if self.expects(env) => {
                self.service_node = Some(send.service_node_addr.clone());
                self.ticket = Some(send.ticket.clone());
                let repo = self.trust.repository.clone();
                let get = Message::GetCert(GetCert {
                    subject_name: send.service_node_addr.clone(),
                });
                let request = self.mailbox.send(&mut out, &repo, None, now, get);
                self.phase = Phase::ServiceCert { request };
            }
            Message::ServiceList(list) if self.expects(env) => {
                self.active_services = list.services;
                self.phase = Phase::Idle;
                if let Some(service) = self.pending_invoke.take() {
                    self.invoke(&mut out, service, now);
                }
            }
            Message::ServiceResult(result) => self.results.push(result.service_id),
            Message::Error(err) => {
                if self.expects(env) {
                    self.fail(err.code);
                } else {
                    self.last_error = Some(err.code);
                }
            }
            Message::Ack(_) => {}
            _ => self.mailbox.unexpected(&mut out, env, now),
        }
        out
    }

    /// Starts the access flow by fetching the discovery node's certificate.
    pub fn request_access(&mut self, out: &mut Vec<Envelope>, discovery: &str, now: u64) {
        if self.own_cert.is_none() {
            self.fail(ErrorCode::Cert);
            return;
        }
        self.active_services = ServiceSet::empty();
        self.ticket = None;
        self.service_node = None;
        let repo = self.trust.repository.clone();
        let get = Message::GetCert(GetCert {
            subject_name: discovery.into(),
        });
        let request = self.mailbox.send(out, &repo, None, now, get);
        self.phase = Phase::DiscoveryCert {
            discovery: discovery.into(),
            request,
        };
    }

    fn peer_cert(&mut self, out: &mut Vec<Envelope>, cert: &Certificate, crl: &Crl, now: u64) {
        match self.phase.clone() {
            Phase::DiscoveryCert { discovery, .. } => {
                if !self
                    .trust
                    .accepts(cert, SubjectKind::Discovery, &discovery, now, crl)
                {
                    self.fail(ErrorCode::BadPeerCert);
                    return;
                }
                let user = String::from(self.address());
                let proof = auth_proof_bytes(&user, now, &discovery);
                let get = Message::GetNode(GetNode {
                    cert_serial: self.own_cert.as_ref().map_or(0, |c| c.serial),
                    timestamp: now,
                    user_signature: self.keypair.sign(&proof),
                    user,
                });
                let request = self.mailbox.send(out, &discovery, None, now, get);
                self.phase = Phase::GetNode { request };
            }
            Phase::ServiceCert { .. } => {
                let (Some(node), Some(ticket)) = (self.service_node.clone(), self.ticket.clone())
                else {
                    self.fail(ErrorCode::NoSession);
                    return;
                };
                if !self.trust.accepts(cert, SubjectKind::Service, &node, now, crl) {
                    self.fail(ErrorCode::BadPeerCert);
                    return;
                }
                let req = Message::ServReq(ServReq {
                    user: self.address().into(),
                    ticket,
                    cert_serial: self.own_cert.as_ref().map_or(0, |c| c.serial),
                });
                let request = self.mailbox.send(out, &node, None, now, req);
                self.phase = Phase::ServReq { request };
            }
            _ => {}
        }
    }

    /// Invokes a service through the current session. Services outside the
    /// active set are refused locally and never reach the wire.
    pub fn invoke(&mut self, out: &mut Vec<Envelope>, service: ServiceId, now: u64) {
        let (Some(node), Some(ticket)) = (self.service_node.clone(), self.ticket.clone()) else {
            self.last_error = Some(ErrorCode::NoSession);
            return;
        };
        if !self.active_services.contains(service) {
            self.last_error = Some(ErrorCode::NotAuthorized);
            return;
        }
        let inv = Message::ServiceInvoke(ServiceInvoke {
            service_id: service,
            ticket,
        });
        self.mailbox.send(out, &node, None, now, inv);
    }

    pub fn summary(&self) -> NodeSummary {
        NodeSummary::User {
            cert_serial: self.own_cert.as_ref().map(|c| c.serial),
            active_services: self.active_services,
            service_node: self.service_node.clone(),
            ticket: self.ticket.as_ref().map(|t| t.ticket_id),
            last_error: self.last_error,
            results: self.results.clone(),
        }
    }
}
