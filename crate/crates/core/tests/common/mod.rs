#![allow(dead_code)]

use std::collections::BTreeMap;

use cmms_core::deploy::{Deployment, ServiceNodeSpec};
use cmms_core::policy::{GridConfig, PolicyTable, ServiceId, ServiceSet, StateId, StateSet};
use cmms_core::protocol::{Envelope, Message, MsgType, ServiceInvoke, Ticket};
use cmms_core::session::{AdminStep, Session};
use cmms_core::signer::Scheme;
use cmms_core::sim::{SimConfig, TraceEntry};
use cmms_core::ErrorCode;

pub fn spig() -> Deployment {
    Deployment::spig(Scheme::Digest, 7)
}

pub fn session(d: Deployment) -> Session {
    session_with(d, SimConfig::default())
}

pub fn session_with(d: Deployment, cfg: SimConfig) -> Session {
    let mut s = Session::new(d, &cfg).unwrap();
    s.apply(&AdminStep::Bootstrap).unwrap();
    s
}

pub fn register(s: &mut Session, user: &str, states: &[u8]) {
    s.apply(&AdminStep::Register {
        user: user.into(),
        states: Some(StateSet::of(states)),
    })
    .unwrap();
}

pub fn request(s: &mut Session, user: &str, invoke: Option<u8>) -> Vec<TraceEntry> {
    s.apply(&AdminStep::Request {
        user: user.into(),
        invoke: invoke.map(|i| ServiceId::new(i).unwrap()),
    })
    .unwrap()
}

pub fn of_type(entries: &[TraceEntry], t: MsgType) -> Vec<&Envelope> {
    entries
        .iter()
        .map(|e| &e.envelope)
        .filter(|e| e.msg_type() == t)
        .collect()
}

pub fn errors_to(entries: &[TraceEntry], to: &str) -> Vec<ErrorCode> {
    entries
        .iter()
        .map(|e| &e.envelope)
        .filter(|e| e.recipient == to)
        .filter_map(|e| match &e.message {
            Message::Error(err) => Some(err.code),
            _ => None,
        })
        .collect()
}

/// Compares `actual` with a frozen fixture. `CMMS_BLESS=1` rewrites it.
pub fn golden(name: &str, actual: &[u8]) {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name);
    if std::env::var_os("CMMS_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read(&path)
        .unwrap_or_else(|e| panic!("{}: {e} (run with CMMS_BLESS=1 to create)", path.display()));
    assert!(
        expected == actual,
        "{} differs:\n--- fixture\n{}\n--- actual\n{}",
        name,
        String::from_utf8_lossy(&expected),
        String::from_utf8_lossy(actual)
    );
}

pub fn fixture(name: &str) -> Vec<u8> {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name);
    std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn service_list(entries: &[TraceEntry]) -> Vec<ServiceSet> {
    of_type(entries, MsgType::ServiceList)
        .into_iter()
        .map(|e| match &e.message {
            Message::ServiceList(l) => l.services,
            _ => unreachable!(),
        })
        .collect()
}
pub fn last_ticket(s: &Session, user: &str) -> Ticket {
    s.simulator()
        .entries()
        .iter()
        .rev()
        .find_map(|e| match &e.envelope.message {
            Message::SendNode(n) if e.envelope.recipient == user => Some(n.ticket.clone()),
            _ => None,
        })
        .unwrap()
}

pub fn forged_invoke(from: &str, to: &str, service: u8, ticket: Ticket) -> Envelope {
    Envelope {
        version: 1,
        msg_id: 9_000,
        correlation_id: None,
        sender: from.into(),
        recipient: to.into(),
        sent_at: 0,
        message: Message::ServiceInvoke(ServiceInvoke {
            service_id: ServiceId::new(service).unwrap(),
            ticket,
        }),
    }
}
/// Two service nodes; vo-serv-1 forwards service 2 to vo-serv-2. Each node
/// grants service 2 to state 5 only when its flag is set. Returns the
/// envelopes of one forged invoke of service 2 at vo-serv-1.
pub fn forwarding(at_origin: bool, at_next: bool) -> (Vec<TraceEntry>, Session) {
    let grid = GridConfig::spig();
    let table = |grant: bool| {
        let mut t = PolicyTable::new(grid);
        let services = if grant { ServiceSet::of(&[2, 3]) } else { ServiceSet::of(&[3]) };
        t.grant(StateId::new(5).unwrap(), services).unwrap();
        t
    };
    let mut d = spig();
    d.service_nodes = vec![
        ServiceNodeSpec {
            address: "vo-serv-1".into(),
            table: table(at_origin),
            forward_routes: BTreeMap::from([(ServiceId::new(2).unwrap(), "vo-serv-2".to_string())]),
        },
        ServiceNodeSpec {
            address: "vo-serv-2".into(),
            table: table(at_next),
            forward_routes: BTreeMap::new(),
        },
    ];
    let mut s = session(d);
    register(&mut s, "u", &[5]);
    request(&mut s, "u", None);
    let ticket = last_ticket(&s, "u");
    let entries = s.inject(forged_invoke("u", "vo-serv-1", 2, ticket)).unwrap();
    (entries, s)
}
