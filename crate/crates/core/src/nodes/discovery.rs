use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::{Mailbox, NodeSummary, Trust};
use crate::certs::{Certificate, SubjectKind};
use crate::policy::{effective_state, VoFilterConfig};
use crate::protocol::{
    auth_proof_bytes, Envelope, GetCert, GetNode, Message, Register, SendEffState, SendNode,
    Ticket, TicketId,
};
use crate::signer::{Keypair, SignerContract};
use crate::ErrorCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscoveryTiming {
    pub ticket_ttl: u64,
    pub replay_window: u64,
}

#[derive(Debug, Clone)]
struct PendingAccess {
    user_addr: String,
    request_id: u64,
    request: GetNode,
}

/// VO entry point: level-1 authentication, FILTER and IMPOSE, and
/// round-robin selection of a free service node.
#[derive(Debug, Clone)]
pub struct DiscoveryNode {
    mailbox: Mailbox,
    trust: Trust,
    keypair: Keypair,
    vo_filter: VoFilterConfig,
    timing: DiscoveryTiming,
    /// Every service node ever announced, in announcement order.
    roster: Vec<String>,
    free: BTreeSet<String>,
    /// Index into `roster` where the next selection search starts.
    rr_cursor: usize,
    /// Keyed by the msg_id of the GET_CERT sent to the repository.
    pending: BTreeMap<u64, PendingAccess>,
    seen_proofs: BTreeSet<(String, u64)>,
    rng: ChaCha8Rng,
    tickets_issued: u64,
    own_cert: Option<Certificate>,
}

impl DiscoveryNode {
    pub fn new(
        address: impl Into<String>,
        trust: Trust,
        keypair: Keypair,
        vo_filter: VoFilterConfig,
        timing: DiscoveryTiming,
        ticket_seed: [u8; 32],
    ) -> Self {
        Self {
            mailbox: Mailbox::new(address),
            trust,
            keypair,
            vo_filter,
            timing,
            roster: Vec::new(),
            free: BTreeSet::new(),
            rr_cursor: 0,
            pending: BTreeMap::new(),
            seen_proofs: BTreeSet::new(),
            rng: ChaCha8Rng::from_seed(ticket_seed),
            tickets_issued: 0,
            own_cert: None,
        }
    }

    pub fn address(&self) -> &str {
        self.mailbox.address()
    }

    pub fn public_key(&self) -> &[u8] {
        self.keypair.public.as_slice()
    }

    /// Free nodes in roster order.
    pub fn free_nodes(&self) -> Vec<String> {
        self.roster
            .iter()
            .filter(|a| self.free.contains(*a))
            .cloned()
            .collect()
    }

    fn set_status(&mut self, node: &str, free: bool) {
        if !self.roster.iter().any(|a| a == node) {
            if !free {
                return;
            }
            self.roster.push(node.into());
        }
        if free {
            self.free.insert(node.into());
        } else {
            self.free.remove(node);
        }
    }

    /// Next free node at or after the cursor, wrapping around the roster.
    fn select_node(&mut self) -> Option<String> {
        let n = self.roster.len();
        (0..n)
            .map(|offset| (self.rr_cursor + offset) % n)
            .find(|&i| self.free.contains(&self.roster[i]))
            .map(|i| {
                self.rr_cursor = (i + 1) % n;
                self.roster[i].clone()
            })
    }

    pub fn step(&mut self, env: &Envelope, now: u64) -> Vec<Envelope> {
        let mut out = Vec::new();
        match &env.message {
            Message::CmdRegister(cmd) => {
                let reg = Message::RegDisc(Register {
                    subject_name: self.address().into(),
                    public_key: self.keypair.public.clone(),
                });
                self.mailbox.send(&mut out, &cmd.ca_addr, None, now, reg);
            }
            Message::RegAck(ack) => self.own_cert = Some(ack.cert.clone()),
            Message::GetNode(req) => self.handle_get_node(&mut out, env, req, now),
            Message::CertResponse(resp) => {
                if let Some(pending) = env.correlation_id.and_then(|id| self.pending.remove(&id)) {
                    self.finish_access(&mut out, pending, &resp.cert, &resp.crl, now);
                }
            }
            Message::NodeStatus(status) => self.set_status(&env.sender, status.free),
            Message::Error(err) => {
                if let Some(pending) = env.correlation_id.and_then(|id| self.pending.remove(&id)) {
                    self.mailbox.error(
                        &mut out,
                        &pending.user_addr,
                        Some(pending.request_id),
                        now,
                        ErrorCode::Cert,
                        err.detail.clone(),
                    );
                } else if err.code == ErrorCode::Unreachable {
                    // Transport bounce: the named node is gone.
                    self.free.remove(&err.detail);
                }
            }
            _ => self.mailbox.unexpected(&mut out, env, now),
        }
        out
    }

    /// Level-1 check, part one: replay window, then fetch the user's
    /// certificate from the repository.
    pub fn handle_get_node(&mut self, out: &mut Vec<Envelope>, env: &Envelope, req: &GetNode, now: u64) {
        let stale = req.timestamp > now || now - req.timestamp > self.timing.replay_window;
        let replayed = self.seen_proofs.contains(&(req.user.clone(), req.timestamp));
        if env.sender != req.user || stale || replayed {
            let detail = if replayed {
                "replayed authentication proof"
            } else if stale {
                "authentication proof outside the replay window"
            } else {
                "sender does not match user"
            };
            self.mailbox.reject(out, env, now, ErrorCode::Auth, detail);
            return;
        }
        let repo = self.trust.repository.clone();
        let get = Message::GetCert(GetCert {
            subject_name: req.user.clone(),
        });
        let id = self.mailbox.send(out, &repo, None, now, get);
        self.pending.insert(
            id,
            PendingAccess {
                user_addr: env.sender.clone(),
                request_id: env.msg_id,
                request: req.clone(),
            },
        );
    }

    fn finish_access(
        &mut self,
        out: &mut Vec<Envelope>,
        pending: PendingAccess,
        cert: &Certificate,
        crl: &crate::certs::Crl,
        now: u64,
    ) {
        let PendingAccess {
            user_addr,
            request_id,
            request,
        } = pending;
        let reply_to = Some(request_id);
        if !self
            .trust
            .accepts(cert, SubjectKind::User, &request.user, now, crl)
        {
            let detail = alloc::format!(
                "certificate {} for {}: {:?}",
                cert.serial,
                request.user,
                self.trust.check(cert, now, crl)
            );
            self.mailbox
                .error(out, &user_addr, reply_to, now, ErrorCode::Cert, detail);
            return;
        }
        let proof = auth_proof_bytes(&request.user, request.timestamp, self.address());
        if !self.trust.scheme.verify(
            cert.public_key.as_slice(),
            &proof,
            request.user_signature.as_slice(),
        ) {
            self.mailbox
                .error(out, &user_addr, reply_to, now, ErrorCode::Auth, "bad authentication proof");
            return;
        }
        self.seen_proofs
            .insert((request.user.clone(), request.timestamp));
        let Some(node) = self.select_node() else {
            self.mailbox
                .error(out, &user_addr, reply_to, now, ErrorCode::NoNode, "no free service node");
            return;
        };
        let effective = effective_state(cert.state_list, &self.vo_filter, &request.user);
        let mut id = [0u8; 16];
        self.rng.fill_bytes(&mut id);
        self.tickets_issued += 1;
        let ticket = Ticket::issue(
            &self.keypair,
            TicketId(id),
            &request.user,
            now,
            self.timing.ticket_ttl,
        );
        let send_node = Message::SendNode(SendNode {
            service_node_addr: node.clone(),
            ticket: ticket.clone(),
        });
        self.mailbox.send(out, &user_addr, reply_to, now, send_node);
        let eff = Message::SendEffState(SendEffState {
            user: request.user.to_string(),
            effective_states: effective,
            ticket,
        });
        self.mailbox.send(out, &node, None, now, eff);
    }

    pub fn summary(&self) -> NodeSummary {
        NodeSummary::Discovery {
            roster: self.roster.clone(),
            free_nodes: self.free_nodes(),
            rr_cursor: self.rr_cursor,
            tickets_issued: self.tickets_issued,
        }
    }
}
