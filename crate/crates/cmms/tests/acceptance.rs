//! Acceptance criteria 1-9, one PASS/FAIL line each.

#[path = "../../core/tests/common/mod.rs"]
mod common;
#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use cmms::scenario::{Scenario, Verdict};
use cmms::socket::{projection_mismatches, replay_admin_script};
use cmms::workspace::{Workspace, SCENARIO_DIR};
use cmms_core::certs::{verify, CertStatus};
use cmms_core::deploy::{spig_table, Deployment, CA};
use cmms_core::policy::{
    decode_services, encode_services, filter, impose, parse_policy, policy_map, GridConfig,
    PolicyEntry, ServiceSet, StateId, StateSet,
};
use cmms_core::protocol::{decode_envelope, encode_envelope, Message, MsgType};
use cmms_core::session::AdminStep;
use cmms_core::signer::Scheme;
use cmms_core::sim::render_trace;
use cmms_core::ErrorCode;
use common::*;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed, TestRunner};

fn runner(cases: u32, seed: u64) -> TestRunner {
    TestRunner::new(Config {
        cases,
        rng_seed: RngSeed::Fixed(seed),
        failure_persistence: None,
        ..Config::default()
    })
}

fn within(started: Instant, budget: Duration, what: &str) {
    let took = started.elapsed();
    assert!(took < budget, "{what} took {took:?}, budget {budget:?}");
}

fn workspace() -> (tempfile::TempDir, Workspace) {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::init(dir.path(), "spig", Scheme::Ed25519, cmms::deployment::DEFAULT_SEED, false).unwrap();
    (dir, ws)
}

fn scenario(ws: &Workspace, name: &str) -> (std::path::PathBuf, Scenario) {
    let path = ws.dir().join(SCENARIO_DIR).join(name);
    let s = Scenario::load(&path).unwrap();
    (path, s)
}

fn worked_example() {
    let started = Instant::now();
    let direct = policy_map(StateSet::of(&[5, 6]), &spig_table());
    assert_eq!(direct, ServiceSet::of(&[2]));
    let mut s = session(Deployment::spig(Scheme::Ed25519, 1));
    register(&mut s, "insp_rao", &[5, 6]);
    let entries = request(&mut s, "insp_rao", None);
    assert_eq!(service_list(&entries), vec![ServiceSet::of(&[2])]);
    within(started, Duration::from_secs(1), "worked example");
}

fn filter_impose_tables() {
    let twelve: Vec<u8> = (1..=12).collect();
    assert_eq!(filter(StateSet::of(&[1, 4, 15]), StateSet::of(&twelve)), StateSet::of(&[1, 4]));
    assert_eq!(impose(StateSet::of(&[1, 4]), StateSet::of(&[11, 12])), StateSet::of(&[1, 4, 11, 12]));
}

fn policy_seven() {
    let (state, services) = parse_policy("7: 3,4", &GridConfig::spig()).unwrap();
    assert_eq!((state, services), (StateId::new(7).unwrap(), ServiceSet::of(&[3, 4])));
    let mut s = session(spig());
    register(&mut s, "si", &[7]);
    assert_eq!(service_list(&request(&mut s, "si", None)), vec![services]);
}

fn flow_conformance() {
    use MsgType::*;
    let (_dir, ws) = workspace();
    let (path, scn) = scenario(&ws, "spig_happy.scn");
    let run = scn.run(&ws.loaded().deployment).unwrap();
    assert!(matches!(scn.check(&path, &run).unwrap(), Verdict::Match), "golden trace differs");
    let steps = [
        RegUser, RegAck, RegDisc, RegServ, GetCert, CertResponse, GetNode, SendNode,
        SendEffState, ServReq, ServiceList, ServiceInvoke, ServiceResult,
    ];
    let types = run.trace.msg_types();
    let mut at = 0;
    for step in steps {
        at += types[at..]
            .iter()
            .position(|t| *t == step)
            .unwrap_or_else(|| panic!("{step} missing after entry {at}"))
            + 1;
    }
    let again = scn.run(&ws.loaded().deployment).unwrap();
    assert_eq!(render_trace(&run.trace), render_trace(&again.trace));
}

fn revocation_lifecycle() {
    let mut s = session(spig());
    register(&mut s, "u", &[1]);
    let (old, _, _) = s.certificate("u").unwrap();
    s.apply(&AdminStep::SetStates { user: "u".into(), states: StateSet::of(&[2]) }).unwrap();
    let (new, status, crl) = s.certificate("u").unwrap();
    assert_ne!(new.serial, old.serial);
    assert_eq!(status, CertStatus::Ok);
    assert!(crl.contains(old.serial));
    let ca = s.deployment().keypair(CA).public;
    assert_eq!(verify(&old, s.deployment().scheme, ca.as_slice(), s.now(), &crl), CertStatus::Revoked);

    let entries = request(&mut s, "u", None);
    let eff: Vec<StateSet> = of_type(&entries, MsgType::SendEffState)
        .into_iter()
        .map(|e| match &e.message {
            Message::SendEffState(m) => m.effective_states,
            _ => unreachable!(),
        })
        .collect();
    assert_eq!(eff, vec![StateSet::of(&[2])]);
    assert_eq!(service_list(&entries), vec![policy_map(StateSet::of(&[2]), &spig_table())]);

    let (_dir, ws) = workspace();
    let (path, scn) = scenario(&ws, "suspend_midflight.scn");
    let run = scn.run(&ws.loaded().deployment).unwrap();
    assert!(matches!(scn.check(&path, &run).unwrap(), Verdict::Match), "golden trace differs");
    let last = run.trace.inbox("insp_rao").last().unwrap();
    assert_eq!(last.sender, "vo-serv-1");
    match &last.message {
        Message::Error(e) => assert_eq!(e.code, ErrorCode::Cert),
        other => panic!("ended with {other:?}"),
    }
    assert!(of_type(&run.trace.entries, MsgType::ServiceResult).is_empty());
}

fn property_suites() {
    use support::policy_oracle::*;
    let started = Instant::now();
    let cases = 1000;
    let bits = || proptest::collection::vec(any::<bool>(), 16);

    runner(cases, 61).run(&instance(), |inst| {
        prop_assert_eq!(policy_map(states(&inst.effective), &inst.table()), services(&inst.oracle(&inst.effective)));
        Ok(())
    }).unwrap();
    runner(cases, 62).run(&(instance(), bits()), |(inst, extra)| {
        let big: Vec<bool> = inst.effective.iter().zip(&extra).map(|(a, b)| *a || *b).collect();
        if inst.effective.iter().any(|b| *b) {
            let t = inst.table();
            prop_assert!(policy_map(states(&big), &t).is_subset(policy_map(states(&inst.effective), &t)));
        }
        Ok(())
    }).unwrap();
    runner(cases, 63).run(&(grid_dims(), bits(), any::<u64>()), |((_, m, w), b, raw)| {
        let g = GridConfig::new(1, m, w).unwrap();
        let set = services(&b[..m as usize]);
        prop_assert_eq!(decode_services(encode_services(set, &g).unwrap(), &g), set);
        let raw = raw & ((1u64 << w) - 1);
        let low = raw & ((1u64 << m) - 1);
        prop_assert_eq!(
            decode_services(PolicyEntry::new(raw, &g).unwrap(), &g),
            decode_services(PolicyEntry::new(low, &g).unwrap(), &g)
        );
        Ok(())
    }).unwrap();
    runner(cases, 64).run(&(bits(), bits()), |(a, b)| {
        let (x, y) = (states(&a), states(&b));
        let and: Vec<bool> = a.iter().zip(&b).map(|(p, q)| *p && *q).collect();
        let or: Vec<bool> = a.iter().zip(&b).map(|(p, q)| *p || *q).collect();
        prop_assert_eq!(filter(x, y), states(&and));
        prop_assert_eq!(filter(filter(x, y), y), filter(x, y));
        prop_assert_eq!(impose(x, y), states(&or));
        prop_assert_eq!(impose(x, StateSet::empty()), x);
        Ok(())
    }).unwrap();

    let seen = RefCell::new(BTreeSet::new());
    runner(cases, 65).run(&support::arb::any_envelope(), |env| {
        let wire = encode_envelope(&env);
        prop_assert_eq!(decode_envelope(&wire).unwrap(), env.clone());
        seen.borrow_mut().insert(env.msg_type());
        Ok(())
    }).unwrap();
    assert_eq!(seen.borrow().len(), MsgType::ALL.len(), "codec suite missed a message type");
    within(started, Duration::from_secs(10), "property suites");
}

fn end_to_end_law() {
    runner(100, 0xE2E).run(&support::e2e::world(), support::e2e::check).unwrap();
}

fn forwarding_common_in_both() {
    for (a, b) in [(true, true), (true, false), (false, true), (false, false)] {
        let (entries, _) = forwarding(a, b);
        let to_user = of_type(&entries, MsgType::ServiceResult)
            .into_iter()
            .filter(|e| e.recipient == "u")
            .count();
        assert_eq!(to_user == 1, a && b, "origin {a}, next {b}");
    }
}

fn transport_equivalence() {
    let (_dir, ws) = workspace();
    let (path, scn) = scenario(&ws, "spig_happy.scn");
    let golden = cmms::files::load_trace(&scn.expected_path(&path).unwrap()).unwrap();
    let mut d = ws.loaded().deployment.clone();
    d.users = vec!["insp_rao".into()];
    let started = Instant::now();
    let net = replay_admin_script(d.build_nodes(), &BTreeMap::new(), &golden, Duration::from_secs(5)).unwrap();
    within(started, Duration::from_secs(5), "socket replay");
    assert_eq!(projection_mismatches(&golden, &net), vec![]);
}

fn main() {
    let criteria: [(&str, fn()); 9] = [
        ("worked example {5,6} maps to {2}", worked_example),
        ("filter and impose tables", filter_impose_tables),
        ("policy 7: 3,4 end to end", policy_seven),
        ("happy-path flow conformance and determinism", flow_conformance),
        ("monitor and revocation lifecycle", revocation_lifecycle),
        ("seeded property suites", property_suites),
        ("end-to-end authorization law", end_to_end_law),
        ("forwarding needs both nodes", forwarding_common_in_both),
        ("socket transport equivalence", transport_equivalence),
    ];
    let mut failed = 0;
    for (i, (desc, f)) in criteria.into_iter().enumerate() {
        let ok = catch_unwind(AssertUnwindSafe(f)).is_ok();
        println!("criterion {}: {} {desc}", i + 1, if ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
