//! The `cmms` command line. Exit codes: 0 success, 1 trace mismatch,
//! 2 operational error (the catalog code goes to stderr).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use cmms_core::canonical::to_canonical_vec;
use cmms_core::certs::{verify, CertStatus};
use cmms_core::deploy::CA;
use cmms_core::policy::{render_policy_table, ServiceId, StateId, StateSet};
use cmms_core::protocol::{encode_envelope, Message};
use cmms_core::session::AdminStep;
use cmms_core::signer::Scheme;
use cmms_core::sim::{diff_traces, Trace, TraceDiff, TraceEntry};
use cmms_core::ErrorCode;

use crate::deployment::DEFAULT_SEED;
use crate::error::{Error, Result};
use crate::files;
use crate::scenario::{scenario_files, Scenario, Verdict};
use crate::socket::{projection_mismatches, replay_admin_script};
use crate::workspace::{Workspace, SCENARIO_DIR};

const SOCKET_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Parser)]
#[command(name = "cmms", version, about = "Stateful multilevel grid authorization: the SPIG prototype")]
struct Cli {
    /// Deployment directory.
    #[arg(long, global = true, default_value = ".")]
    dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Signer {
    Ed25519,
    Digest,
}

impl From<Signer> for Scheme {
    fn from(s: Signer) -> Self {
        match s {
            Signer::Ed25519 => Scheme::Ed25519,
            Signer::Digest => Scheme::Digest,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a deployment, its policy files, CA key and bundled scenarios.
    Init {
        #[arg(long, default_value = "spig")]
        profile: String,
        #[arg(long)]
        out: PathBuf,
        /// Replace an existing deployment and clear its history.
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, value_enum, default_value = "ed25519")]
        signer: Signer,
    },
    /// Inspect service-node policy tables.
    Policy {
        #[command(subcommand)]
        command: PolicyCommand,
    },
    /// Register a user with the CA, optionally seeding its states first.
    Register {
        #[arg(long)]
        user: String,
        #[arg(long)]
        states: Option<String>,
    },
    /// Change a user's states through the monitor; the CA reissues.
    SetState {
        #[arg(long)]
        user: String,
        #[arg(long)]
        states: String,
    },
    /// Revoke a user's current certificate.
    Revoke {
        #[arg(long)]
        user: String,
    },
    /// Print a user's current certificate, its status and the CRL.
    ShowCert {
        #[arg(long)]
        user: String,
        /// Also write the certificate file here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the CRL file here.
        #[arg(long)]
        crl_out: Option<PathBuf>,
    },
    /// Check a certificate file against the CA key and the current CRL.
    VerifyCert { file: PathBuf },
    /// Run the access flow for a user and print the granted services.
    Request {
        #[arg(long)]
        user: String,
        #[arg(long)]
        invoke: Option<u64>,
        /// Write the envelopes of this flow as a trace file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run scenario files and compare against their expected traces.
    RunScenario {
        #[arg(required_unless_present = "all", conflicts_with = "all")]
        file: Option<PathBuf>,
        /// Every scenario in the deployment's scenarios directory.
        #[arg(long)]
        all: bool,
        /// Overwrite the expected traces instead of comparing.
        #[arg(long)]
        bless: bool,
        /// Also replay over loopback sockets and compare per-link traffic.
        #[arg(long)]
        socket: bool,
    },
    /// Compare two trace files.
    TraceDiff { left: PathBuf, right: PathBuf },
}

#[derive(Debug, Subcommand)]
enum PolicyCommand {
    Show {
        /// Only this service node.
        #[arg(long)]
        node: Option<String>,
    },
}

/// Parses `1,4`; the empty string is the empty set.
pub fn parse_state_list(text: &str) -> Result<StateSet> {
    let mut set = StateSet::empty();
    for token in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let n: u64 = token
            .parse()
            .map_err(|_| Error::new(ErrorCode::Parse, format!("bad state {token:?}")))?;
        let id = u8::try_from(n)
            .ok()
            .and_then(StateId::new)
            .ok_or_else(|| Error::new(ErrorCode::Range, format!("state {n} is out of range")))?;
        set.insert(id);
    }
    Ok(set)
}

fn service_id(n: u64) -> Result<ServiceId> {
    u8::try_from(n)
        .ok()
        .and_then(ServiceId::new)
        .ok_or_else(|| Error::new(ErrorCode::Range, format!("service {n} is out of range")))
}

fn render_entry(e: &TraceEntry) -> String {
    let line = encode_envelope(&e.envelope);
    format!("{} {}", e.tick, String::from_utf8_lossy(&line).trim_end())
}

fn json<T: serde::Serialize>(value: &T) -> String {
    String::from_utf8(to_canonical_vec(value).expect("serializable")).expect("UTF-8")
}

fn status_name(status: CertStatus) -> String {
    serde_json::to_value(status)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

struct Io<'a> {
    out: &'a mut dyn Write,
}

macro_rules! say {
    ($io:expr, $($arg:tt)*) => {
        writeln!($io.out, $($arg)*).map_err(|e| Error::new(ErrorCode::Io, e.to_string()))
    };
}

/// Runs the CLI and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let mut io = Io { out };
    match dispatch(cli, &mut io) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn dispatch(cli: Cli, io: &mut Io<'_>) -> Result<i32> {
    let dir = cli.dir;
    match cli.command {
        Command::Init {
            profile,
            out,
            force,
            seed,
            signer,
        } => {
            Workspace::init(&out, &profile, signer.into(), seed, force)?;
            say!(io, "initialized {profile} deployment in {}", out.display())?;
            Ok(0)
        }
        Command::Policy {
            command: PolicyCommand::Show { node },
        } => policy_show(&Workspace::open(&dir)?, node.as_deref(), io),
        Command::Register { user, states } => {
            let states = states.as_deref().map(parse_state_list).transpose()?;
            let ws = Workspace::open(&dir)?;
            let mut session = ws.session()?;
            ws.apply(&mut session, &AdminStep::Register { user: user.clone(), states })?;
            let (cert, _, _) = session.certificate(&user)?;
            say!(io, "registered {user} with serial {}", cert.serial)?;
            Ok(0)
        }
        Command::SetState { user, states } => {
            let states = parse_state_list(&states)?;
            let ws = Workspace::open(&dir)?;
            let mut session = ws.session()?;
            ws.apply(&mut session, &AdminStep::SetStates { user: user.clone(), states })?;
            let (cert, _, _) = session.certificate(&user)?;
            say!(io, "{user} now holds serial {} with states {}", cert.serial, cert.state_list)?;
            Ok(0)
        }
        Command::Revoke { user } => {
            let ws = Workspace::open(&dir)?;
            let mut session = ws.session()?;
            ws.apply(&mut session, &AdminStep::Revoke { user: user.clone() })?;
            say!(io, "revoked the current certificate of {user}")?;
            Ok(0)
        }
        Command::ShowCert { user, out, crl_out } => {
            let ws = Workspace::open(&dir)?;
            let session = ws.session()?;
            let (cert, status, crl) = session.certificate(&user)?;
            let deployment = session.deployment();
            say!(io, "{}", String::from_utf8_lossy(&cert.to_canonical_json()))?;
            say!(io, "status: {}", status_name(status))?;
            let states: Vec<String> = cert
                .state_list
                .iter()
                .map(|s| format!("{s} {}", deployment.state_name(s).unwrap_or("?")))
                .collect();
            say!(io, "states: {}", if states.is_empty() { "(none)".into() } else { states.join(", ") })?;
            let serials: Vec<String> = crl.revoked_serials.iter().map(u64::to_string).collect();
            say!(io, "crl: {}", if serials.is_empty() { "(empty)".into() } else { serials.join(",") })?;
            if let Some(path) = out {
                files::save_cert_file(&cert, &path)?;
            }
            if let Some(path) = crl_out {
                files::save_crl_file(&crl, &path)?;
            }
            Ok(0)
        }
        Command::VerifyCert { file } => {
            let cert = files::load_cert_file(&file)?;
            let ws = Workspace::open(&dir)?;
            let session = ws.session()?;
            let d = session.deployment();
            let (_, _, crl) = session.certificate(&cert.subject_name).or_else(|_| {
                // Subjects unknown to the repository still have a CRL to check.
                Ok::<_, Error>((cert.clone(), CertStatus::Ok, current_crl(&session)))
            })?;
            let status = verify(&cert, d.scheme, d.keypair(CA).public.as_slice(), session.now(), &crl);
            say!(io, "serial {}: {}", cert.serial, status_name(status))?;
            Ok(0)
        }
        Command::Request { user, invoke, trace } => request(&dir, &user, invoke, trace.as_deref(), io),
        Command::RunScenario {
            file,
            all,
            bless,
            socket,
        } => {
            let ws = Workspace::open(&dir)?;
            let files = match file {
                Some(f) => vec![f],
                None => scenario_files(&ws.dir().join(SCENARIO_DIR))?,
            };
            debug_assert!(all || files.len() == 1);
            let mut code = 0;
            for path in files {
                code = code.max(run_scenario(&ws, &path, bless, socket, io)?);
            }
            Ok(code)
        }
        Command::TraceDiff { left, right } => {
            let l = files::load_trace(&left)?;
            let r = files::load_trace(&right)?;
            let diffs = diff_traces(&l, &r);
            if diffs.is_empty() {
                say!(io, "identical")?;
                return Ok(0);
            }
            print_divergence(&diffs, io)?;
            Ok(1)
        }
    }
}

fn current_crl(session: &cmms_core::session::Session) -> cmms_core::certs::Crl {
    match session.simulator().node(cmms_core::deploy::REPOSITORY) {
        Some(cmms_core::nodes::Node::Repository(r)) => r.repository().get_crl().clone(),
        _ => Default::default(),
    }
}

fn policy_show(ws: &Workspace, only: Option<&str>, io: &mut Io<'_>) -> Result<i32> {
    let nodes = &ws.loaded().deployment.service_nodes;
    if let Some(name) = only {
        if !nodes.iter().any(|n| n.address == name) {
            return Err(Error::new(ErrorCode::NotFound, format!("no service node {name}")));
        }
    }
    for spec in nodes.iter().filter(|n| only.is_none_or(|o| o == n.address)) {
        say!(io, "# {}", spec.address)?;
        write!(io.out, "{}", render_policy_table(&spec.table))
            .map_err(|e| Error::new(ErrorCode::Io, e.to_string()))?;
    }
    Ok(0)
}

fn request(dir: &Path, user: &str, invoke: Option<u64>, trace: Option<&Path>, io: &mut Io<'_>) -> Result<i32> {
    let invoke = invoke.map(service_id).transpose()?;
    let ws = Workspace::open(dir)?;
    let mut session = ws.session()?;
    let step = AdminStep::Request {
        user: user.into(),
        invoke,
    };
    let entries = ws.apply(&mut session, &step)?;
    if let Some(path) = trace {
        let t = Trace {
            entries: entries.clone(),
            final_states: session.simulator().summaries(),
        };
        files::dump_trace(&t, path)?;
    }
    let outcome = session.access_outcome(user, &entries);
    let deployment = session.deployment();
    if let Some(list) = outcome.service_list {
        if list.is_empty() {
            say!(io, "(no services)")?;
        }
        for id in list.iter() {
            say!(io, "{id} {}", deployment.service_name(id).unwrap_or("?"))?;
        }
    }
    for (id, body) in &outcome.results {
        say!(io, "result {id}: {}", String::from_utf8_lossy(body))?;
    }
    if let Some(code) = outcome.error {
        let detail = entries
            .iter()
            .rev()
            .map(|e| &e.envelope)
            .filter(|e| e.recipient == user)
            .find_map(|e| match &e.message {
                Message::Error(err) if err.code == code => Some(err.detail.clone()),
                _ => None,
            })
            .unwrap_or_else(|| format!("refused by the user agent of {user}"));
        return Err(Error::new(code, detail));
    }
    if outcome.service_list.is_none() && outcome.results.is_empty() {
        return Err(Error::new(ErrorCode::Unexpected, "no SERVICE_LIST received"));
    }
    Ok(0)
}

fn print_divergence(diffs: &[TraceDiff], io: &mut Io<'_>) -> Result<()> {
    let side = |e: &Option<TraceEntry>| e.as_ref().map_or("(end of trace)".into(), render_entry);
    let state = |s: &Option<cmms_core::nodes::NodeSummary>| s.as_ref().map_or("(absent)".into(), json);
    match &diffs[0] {
        TraceDiff::Entry { index, left, right } => {
            say!(io, "first divergence at entry {index}")?;
            say!(io, "< {}", side(left))?;
            say!(io, "> {}", side(right))?;
        }
        TraceDiff::FinalState { address, left, right } => {
            say!(io, "first divergence in the final state of {address}")?;
            say!(io, "< {}", state(left))?;
            say!(io, "> {}", state(right))?;
        }
    }
    say!(io, "{} difference(s)", diffs.len())
}

fn run_scenario(ws: &Workspace, path: &Path, bless: bool, socket: bool, io: &mut Io<'_>) -> Result<i32> {
    let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into());
    let scenario = Scenario::load(path)?;
    let deployment = &ws.loaded().deployment;
    let run = scenario.run(deployment)?;
    for (i, e) in &run.failures {
        say!(io, "{name}: step {i} failed with {}", e.code())?;
    }
    if let Some(e) = &run.halted {
        say!(io, "{name}: halted: {}", Error::from(e.clone()))?;
    }
    let mut code = 0;
    if bless {
        let target = scenario
            .expected_path(path)
            .ok_or_else(|| Error::new(ErrorCode::Config, format!("{name} declares no expected trace")))?;
        files::dump_trace(&run.trace, &target)?;
        say!(io, "BLESSED {name}")?;
    } else {
        match scenario.check(path, &run)? {
            Verdict::Match => say!(io, "PASS {name}")?,
            Verdict::Unchecked => {
                if let Some(e) = run.halted {
                    return Err(e.into());
                }
                say!(io, "RAN {name} ({} envelopes, no expected trace)", run.trace.entries.len())?;
            }
            Verdict::Mismatch(diffs) => {
                say!(io, "FAIL {name}")?;
                print_divergence(&diffs, io)?;
                code = 1;
            }
        }
    }
    if socket {
        if !scenario.config.faults.is_empty() {
            say!(io, "SKIP {name} over sockets: faults are simulator-only")?;
            return Ok(code);
        }
        let mut d = deployment.clone();
        d.users = run.users.clone();
        let listen: BTreeMap<String, String> = ws.loaded().listen.clone();
        let over_sockets = replay_admin_script(d.build_nodes(), &listen, &run.trace, SOCKET_TIMEOUT)?;
        let bad = projection_mismatches(&run.trace, &over_sockets);
        if bad.is_empty() {
            say!(io, "PASS {name} over sockets ({} links)", run.trace.link_projection().len())?;
        } else {
            for (from, to) in &bad {
                say!(io, "FAIL {name} over sockets: link {from} -> {to} differs")?;
            }
            code = 1;
        }
    }
    Ok(code)
}
