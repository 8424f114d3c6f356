//! Operator-level driver: admin steps on top of the simulator.
//!
//! Each step injects one or more admin envelopes, runs the network to
//! quiescence, and reads the outcome back from the trace.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certs::{verify, CertStatus, Certificate, Crl};
use crate::deploy::{Deployment, ADMIN, CA, DISCOVERY, MONITOR};
use crate::nodes::{Mailbox, Node, NodeSummary};
use crate::policy::{ServiceId, ServiceSet, StateSet};
use crate::protocol::{
    CmdAccess, CmdInvoke, CmdRegister, Envelope, Message, Revoke, SubjectStates,
};
use crate::sim::{SimConfig, SimError, Simulator, TraceEntry};
use crate::ErrorCode;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdminStep {
    /// Registers the discovery node and every service node.
    Bootstrap,
    Register {
        user: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        states: Option<StateSet>,
    },
    SetStates {
        user: String,
        states: StateSet,
    },
    Request {
        user: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        invoke: Option<ServiceId>,
    },
    Invoke {
        user: String,
        service: ServiceId,
    },
    Revoke {
        user: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("{code}: {detail}")]
    Protocol { code: ErrorCode, detail: String },
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl SessionError {
    pub fn code(&self) -> ErrorCode {
        match self {
            SessionError::Protocol { code, .. } => *code,
            SessionError::Sim(e) => e.code(),
        }
    }

    fn protocol(code: ErrorCode, detail: impl Into<String>) -> Self {
        SessionError::Protocol {
            code,
            detail: detail.into(),
        }
    }
}

/// What a user ended up with after a `Request` or `Invoke` step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessOutcome {
    /// The SERVICE_LIST delivered during this step, if any.
    pub service_list: Option<ServiceSet>,
    pub service_node: Option<String>,
    pub results: Vec<(ServiceId, Vec<u8>)>,
    pub error: Option<ErrorCode>,
}

#[derive(Debug, Clone)]
pub struct Session {
    deployment: Deployment,
    sim: Simulator,
    admin: Mailbox,
    history: Vec<AdminStep>,
}

impl Session {
    pub fn new(deployment: Deployment, cfg: &SimConfig) -> Result<Self, SessionError> {
        let sim = Simulator::new(deployment.build_nodes(), cfg)?;
        Ok(Self {
            deployment,
            sim,
            admin: Mailbox::new(ADMIN),
            history: Vec::new(),
        })
    }

    pub fn deployment(&self) -> &Deployment {
        &self.deployment
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    /// Every step applied so far, failed ones included.
    pub fn history(&self) -> &[AdminStep] {
        &self.history
    }

    pub fn now(&self) -> u64 {
        self.sim.tick()
    }

    fn command(&mut self, to: &str, message: Message) -> u64 {
        let mut out = Vec::new();
        let id = self.admin.send(&mut out, to, None, self.sim.tick(), message);
        out.into_iter().for_each(|e| self.sim.push_script(e));
        id
    }

    /// The reply delivered to the admin for request `id`.
    fn admin_reply(&self, since: usize, id: u64) -> Option<&Envelope> {
        self.sim.entries()[since..]
            .iter()
            .map(|e| &e.envelope)
            .find(|e| e.recipient == ADMIN && e.correlation_id == Some(id))
    }

    fn expect_ack(&self, since: usize, id: u64) -> Result<(), SessionError> {
        match self.admin_reply(since, id).map(|e| &e.message) {
            Some(Message::Ack(_)) => Ok(()),
            Some(Message::Error(err)) => Err(SessionError::protocol(err.code, err.detail.clone())),
            _ => Err(SessionError::protocol(ErrorCode::Unexpected, "no reply")),
        }
    }

    fn user_summary(&self, user: &str) -> Option<NodeSummary> {
        self.sim.node(user).map(Node::summary)
    }

    /// Runs one step. The step enters the history even when it fails, so
    /// replaying the history reproduces ticks and message ids exactly.
    pub fn apply(&mut self, step: &AdminStep) -> Result<Vec<TraceEntry>, SessionError> {
        let since = self.sim.entries().len();
        self.history.push(step.clone());
        self.run_step(step, since)?;
        Ok(self.sim.entries()[since..].to_vec())
    }

    /// Sends an arbitrary envelope (its `sent_at` is replaced) and runs to
    /// quiescence. Not recorded in the history.
    pub fn inject(&mut self, env: Envelope) -> Result<Vec<TraceEntry>, SessionError> {
        let since = self.sim.entries().len();
        self.sim.push_script(env);
        self.sim.run()?;
        Ok(self.sim.entries()[since..].to_vec())
    }

    fn run_step(&mut self, step: &AdminStep, since: usize) -> Result<(), SessionError> {
        match step {
            AdminStep::Bootstrap => {
                let mut nodes = alloc::vec![DISCOVERY.to_string()];
                nodes.extend(self.deployment.service_nodes.iter().map(|s| s.address.clone()));
                for node in nodes {
                    let cmd = Message::CmdRegister(CmdRegister { ca_addr: CA.into() });
                    self.command(&node, cmd);
                }
                self.sim.run()?;
                Ok(())
            }
            AdminStep::Register { user, states } => {
                if !self.sim.contains(user) {
                    self.sim.add_node(self.deployment.user_node(user))?;
                    self.deployment.users.push(user.clone());
                }
                if let Some(states) = states {
                    let seed = Message::SeedStates(SubjectStates {
                        subject_name: user.clone(),
                        states: *states,
                    });
                    let id = self.command(MONITOR, seed);
                    self.sim.run()?;
                    self.expect_ack(since, id)?;
                }
                let cmd = Message::CmdRegister(CmdRegister { ca_addr: CA.into() });
                self.command(user, cmd);
                self.sim.run()?;
                match self.user_summary(user) {
                    Some(NodeSummary::User {
                        cert_serial: Some(_),
                        last_error: None,
                        ..
                    }) => Ok(()),
                    _ => Err(self.user_error(user, since, ErrorCode::Unexpected)),
                }
            }
            AdminStep::SetStates { user, states } => {
                let set = Message::SetStates(SubjectStates {
                    subject_name: user.clone(),
                    states: *states,
                });
                let id = self.command(MONITOR, set);
                self.sim.run()?;
                self.expect_ack(since, id)
            }
            AdminStep::Revoke { user } => {
                let id = self.command(
                    CA,
                    Message::Revoke(Revoke {
                        subject_name: user.clone(),
                    }),
                );
                self.sim.run()?;
                self.expect_ack(since, id)
            }
            AdminStep::Request { user, invoke } => {
                self.require_user(user)?;
                let cmd = Message::CmdAccess(CmdAccess {
                    discovery_addr: DISCOVERY.into(),
                    invoke: *invoke,
                });
                self.command(user, cmd);
                self.sim.run()?;
                Ok(())
            }
            AdminStep::Invoke { user, service } => {
                self.require_user(user)?;
                let cmd = Message::CmdInvoke(CmdInvoke {
                    service_id: *service,
                });
                self.command(user, cmd);
                self.sim.run()?;
                Ok(())
            }
        }
    }

    fn require_user(&self, user: &str) -> Result<(), SessionError> {
        match self.sim.node(user) {
            Some(Node::User(_)) => Ok(()),
            _ => Err(SessionError::protocol(ErrorCode::UnknownSubject, user)),
        }
    }

    /// The error a user node reported during the step, with the detail of
    /// the matching ERROR envelope when one reached it.
    fn user_error(&self, user: &str, since: usize, fallback: ErrorCode) -> SessionError {
        let detail = self.sim.entries()[since..]
            .iter()
            .rev()
            .map(|e| &e.envelope)
            .filter(|e| e.recipient == user)
            .find_map(|e| match &e.message {
                Message::Error(err) => Some((err.code, err.detail.clone())),
                _ => None,
            });
        let code = match self.user_summary(user) {
            Some(NodeSummary::User {
                last_error: Some(code),
                ..
            }) => code,
            _ => fallback,
        };
        let detail = detail
            .filter(|(c, _)| *c == code)
            .map(|(_, d)| d)
            .unwrap_or_default();
        SessionError::protocol(code, detail)
    }

    /// Outcome of the last access or invoke step for `user`, read from the
    /// envelopes delivered to it in `entries`.
    pub fn access_outcome(&self, user: &str, entries: &[TraceEntry]) -> AccessOutcome {
        let mut outcome = AccessOutcome {
            service_list: None,
            service_node: None,
            results: Vec::new(),
            error: None,
        };
        for env in entries.iter().map(|e| &e.envelope).filter(|e| e.recipient == user) {
            match &env.message {
                Message::ServiceList(list) => {
                    outcome.service_list = Some(list.services);
                    outcome.service_node = Some(env.sender.clone());
                }
                Message::ServiceResult(r) => outcome.results.push((r.service_id, r.body.0.clone())),
                _ => {}
            }
        }
        if let Some(NodeSummary::User { last_error, .. }) = self.user_summary(user) {
            outcome.error = last_error;
        }
        outcome
    }

    /// The repository's current certificate for `subject` and its status.
    pub fn certificate(&self, subject: &str) -> Result<(Certificate, CertStatus, Crl), SessionError> {
        let Some(Node::Repository(repo)) = self.sim.node(crate::deploy::REPOSITORY) else {
            return Err(SessionError::protocol(ErrorCode::Config, "no repository"));
        };
        let repo = repo.repository();
        let cert = repo
            .get_cert(subject)
            .map_err(|e| SessionError::protocol(e.code(), e.to_string()))?
            .clone();
        let crl = repo.get_crl().clone();
        let status = verify(
            &cert,
            self.deployment.scheme,
            self.deployment.keypair(CA).public.as_slice(),
            self.now(),
            &crl,
        );
        Ok((cert, status, crl))
    }
}
