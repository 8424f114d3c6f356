//! TCP transport. Each node runs on its own thread behind a listener; the
//! wire format is the envelope codec, one line per envelope.
//!
//! Every directed link uses a single connection, so per-link FIFO holds
//! regardless of thread scheduling. Nodes keep a Lamport clock: an
//! envelope stamped `sent_at` is processed at `max(last + 1, sent_at + 1)`,
//! which is the tick the simulator would pick for an uncontended node.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use cmms_core::deploy::ADMIN;
use cmms_core::nodes::{Mailbox, Node, NodeSummary};
use cmms_core::protocol::{decode_envelope, encode_envelope, Envelope};
use cmms_core::sim::{Trace, TraceEntry, NET};
use cmms_core::ErrorCode;

use crate::error::{Error, Result};

pub type Directory = BTreeMap<String, SocketAddr>;

fn conn_error(addr: impl std::fmt::Display, e: std::io::Error) -> Error {
    Error::new(ErrorCode::Conn, format!("{addr}: {e}"))
}

fn connect(addr: SocketAddr) -> Result<TcpStream> {
    let stream = TcpStream::connect_timeout(&addr, Duration::from_secs(2))
        .map_err(|e| conn_error(addr, e))?;
    stream.set_nodelay(true).map_err(|e| conn_error(addr, e))?;
    Ok(stream)
}

/// One-shot send: connect, write one envelope line, close.
pub fn socket_send(addr: impl ToSocketAddrs + std::fmt::Display, env: &Envelope) -> Result<()> {
    let resolved = addr
        .to_socket_addrs()
        .map_err(|e| conn_error(&addr, e))?
        .next()
        .ok_or_else(|| Error::new(ErrorCode::Conn, format!("{addr}: no address")))?;
    let mut stream = connect(resolved)?;
    stream
        .write_all(&encode_envelope(env))
        .map_err(|e| conn_error(&addr, e))
}

/// Counts envelopes written but not yet fully handled by their recipient.
#[derive(Debug, Default)]
struct InFlight {
    count: Mutex<usize>,
    idle: Condvar,
}

impl InFlight {
    fn add(&self) {
        *self.count.lock().unwrap() += 1;
    }

    fn done(&self) {
        let mut n = self.count.lock().unwrap();
        *n = n.saturating_sub(1);
        if *n == 0 {
            self.idle.notify_all();
        }
    }

    fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut n = self.count.lock().unwrap();
        while *n > 0 {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return false;
            }
            n = self.idle.wait_timeout(n, left).unwrap().0;
        }
        true
    }
}

#[derive(Debug, Clone)]
struct Shared {
    directory: Arc<Directory>,
    in_flight: Arc<InFlight>,
    trace: Arc<Mutex<Vec<TraceEntry>>>,
}

enum Control {
    Envelope(Envelope),
    Stop,
}

/// Outbound side of one node: a cached connection per peer.
struct Links {
    from: String,
    shared: Shared,
    streams: BTreeMap<String, TcpStream>,
    net: Mailbox,
}

impl Links {
    fn new(from: &str, shared: Shared) -> Self {
        Self {
            from: from.into(),
            shared,
            streams: BTreeMap::new(),
            net: Mailbox::new(NET),
        }
    }

    fn write(&mut self, env: &Envelope) -> Result<()> {
        let addr = *self
            .shared
            .directory
            .get(&env.recipient)
            .ok_or_else(|| Error::new(ErrorCode::Unreachable, env.recipient.clone()))?;
        if !self.streams.contains_key(&env.recipient) {
            self.streams.insert(env.recipient.clone(), connect(addr)?);
        }
        let stream = self.streams.get_mut(&env.recipient).expect("inserted above");
        stream
            .write_all(&encode_envelope(env))
            .map_err(|e| conn_error(addr, e))
    }

    /// Sends `env`; an undeliverable envelope comes back to `bounce` as an
    /// E_UNREACHABLE error from the network.
    fn send(&mut self, env: Envelope, bounce: Option<&Sender<Control>>) {
        self.shared.in_flight.add();
        if self.write(&env).is_ok() {
            return;
        }
        self.streams.remove(&env.recipient);
        match bounce {
            Some(tx) if env.sender == self.from => {
                let mut out = Vec::new();
                let detail = env.recipient.clone();
                self.net.error(&mut out, &self.from, Some(env.msg_id), env.sent_at, ErrorCode::Unreachable, detail);
                for e in out {
                    // Stays counted: the bounce replaces the lost envelope.
                    if tx.send(Control::Envelope(e)).is_err() {
                        self.shared.in_flight.done();
                    }
                }
            }
            _ => self.shared.in_flight.done(),
        }
    }
}

/// A node bound to its listener but not yet serving.
pub struct Endpoint {
    node: Node,
    listener: TcpListener,
}

impl Endpoint {
    pub fn bind(node: Node, bind_addr: &str) -> Result<Self> {
        let listener = TcpListener::bind(bind_addr).map_err(|e| conn_error(bind_addr, e))?;
        Ok(Self { node, listener })
    }

    pub fn address(&self) -> &str {
        self.node.address()
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        self.listener
            .local_addr()
            .map_err(|e| conn_error(self.address(), e))
    }
}

/// Accepts connections and feeds decoded envelopes into `tx`.
fn spawn_acceptor(
    listener: TcpListener,
    tx: Sender<Control>,
    stop: Arc<AtomicBool>,
    in_flight: Arc<InFlight>,
) -> JoinHandle<()> {
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let tx = tx.clone();
            let in_flight = Arc::clone(&in_flight);
            std::thread::spawn(move || {
                for line in BufReader::new(stream).split(b'\n') {
                    let Ok(mut line) = line else { break };
                    line.push(b'\n');
                    match decode_envelope(&line) {
                        Ok(env) => {
                            if tx.send(Control::Envelope(env)).is_err() {
                                in_flight.done();
                                break;
                            }
                        }
                        // Nobody will process it, so it no longer counts.
                        Err(_) => in_flight.done(),
                    }
                }
            });
        }
    })
}

/// A node serving on its own thread.
pub struct Server {
    address: String,
    local_addr: SocketAddr,
    control: Sender<Control>,
    worker: JoinHandle<Node>,
    acceptor: JoinHandle<()>,
    stop: Arc<AtomicBool>,
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Stops serving and hands the node back.
    fn stop(self) -> Node {
        let _ = self.control.send(Control::Stop);
        let node = self.worker.join().expect("node thread panicked");
        self.stop.store(true, Ordering::SeqCst);
        // Wake the acceptor so it sees the flag.
        let _ = TcpStream::connect(self.local_addr);
        let _ = self.acceptor.join();
        node
    }
}

fn socket_serve(endpoint: Endpoint, shared: Shared) -> Result<Server> {
    let Endpoint { mut node, listener } = endpoint;
    let local_addr = listener
        .local_addr()
        .map_err(|e| conn_error(node.address(), e))?;
    let address = node.address().to_string();
    let (tx, rx) = mpsc::channel();
    let stop = Arc::new(AtomicBool::new(false));
    let acceptor = spawn_acceptor(listener, tx.clone(), Arc::clone(&stop), Arc::clone(&shared.in_flight));
    let bounce = tx.clone();
    let worker = std::thread::spawn(move || {
        let mut links = Links::new(node.address(), shared.clone());
        let mut clock = 0u64;
        while let Ok(Control::Envelope(env)) = rx.recv() {
            let now = (clock + 1).max(env.sent_at + 1);
            clock = now;
            let mut out = Vec::new();
            if node.next_deadline().is_some_and(|d| d <= now) {
                out.extend(node.on_timer(now));
            }
            shared.trace.lock().unwrap().push(TraceEntry {
                tick: now,
                envelope: env.clone(),
            });
            out.extend(node.step(&env, now));
            for e in out {
                links.send(e, Some(&bounce));
            }
            shared.in_flight.done();
        }
        node
    });
    Ok(Server {
        address,
        local_addr,
        control: tx,
        worker,
        acceptor,
        stop,
    })
}

/// A whole topology on loopback, driven from the `admin` address.
pub struct SocketNetwork {
    servers: Vec<Server>,
    shared: Shared,
    admin: Links,
    admin_rx: Receiver<Control>,
    admin_acceptor: JoinHandle<()>,
    admin_stop: Arc<AtomicBool>,
    admin_addr: SocketAddr,
}

impl SocketNetwork {
    /// Binds every node (at `listen[address]`, else an ephemeral loopback
    /// port) plus the admin sink, then starts serving.
    pub fn start(nodes: Vec<Node>, listen: &BTreeMap<String, String>) -> Result<Self> {
        let mut endpoints = Vec::new();
        let mut directory = Directory::new();
        for node in nodes {
            let bind = listen
                .get(node.address())
                .map(String::as_str)
                .unwrap_or("127.0.0.1:0");
            let endpoint = Endpoint::bind(node, bind)?;
            let addr = endpoint.local_addr()?;
            if directory.insert(endpoint.address().to_string(), addr).is_some() {
                return Err(Error::new(ErrorCode::Config, format!("duplicate address {}", endpoint.address())));
            }
            endpoints.push(endpoint);
        }
        let admin_listener = TcpListener::bind("127.0.0.1:0").map_err(|e| conn_error(ADMIN, e))?;
        let admin_addr = admin_listener.local_addr().map_err(|e| conn_error(ADMIN, e))?;
        directory.insert(ADMIN.into(), admin_addr);

        let shared = Shared {
            directory: Arc::new(directory),
            in_flight: Arc::new(InFlight::default()),
            trace: Arc::new(Mutex::new(Vec::new())),
        };
        let (admin_tx, admin_rx) = mpsc::channel();
        let admin_stop = Arc::new(AtomicBool::new(false));
        let admin_acceptor = spawn_acceptor(
            admin_listener,
            admin_tx,
            Arc::clone(&admin_stop),
            Arc::clone(&shared.in_flight),
        );
        let servers = endpoints
            .into_iter()
            .map(|e| socket_serve(e, shared.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            servers,
            admin: Links::new(ADMIN, shared.clone()),
            shared,
            admin_rx,
            admin_acceptor,
            admin_stop,
            admin_addr,
        })
    }

    pub fn directory(&self) -> &Directory {
        &self.shared.directory
    }

    /// Sends an envelope from the admin address without waiting.
    pub fn send(&mut self, env: Envelope) -> Result<()> {
        self.drain_admin();
        self.shared.in_flight.add();
        let sent = self.admin.write(&env);
        if sent.is_err() {
            self.shared.in_flight.done();
        }
        sent
    }

    /// Records admin-bound envelopes. The sink takes each on arrival.
    fn drain_admin(&mut self) {
        while let Ok(Control::Envelope(env)) = self.admin_rx.try_recv() {
            self.shared.trace.lock().unwrap().push(TraceEntry {
                tick: env.sent_at + 1,
                envelope: env,
            });
            self.shared.in_flight.done();
        }
    }

    /// Blocks until nothing is in flight anywhere.
    pub fn wait_idle(&mut self, timeout: Duration) -> Result<()> {
        let deadline = Instant::now() + timeout;
        loop {
            self.drain_admin();
            let slice = Duration::from_millis(5).min(deadline.saturating_duration_since(Instant::now()));
            if self.shared.in_flight.wait_idle(slice) {
                self.drain_admin();
                if self.shared.in_flight.wait_idle(Duration::ZERO) {
                    return Ok(());
                }
            }
            if Instant::now() >= deadline {
                return Err(Error::new(ErrorCode::Conn, "network did not go quiet in time"));
            }
        }
    }

    /// Stops every node and returns what was delivered, ordered by tick
    /// (stable, so each link keeps its delivery order).
    pub fn shutdown(mut self) -> Trace {
        self.drain_admin();
        let mut final_states: BTreeMap<String, NodeSummary> = BTreeMap::new();
        // Dropping our own links lets the readers on the far side finish.
        self.admin.streams.clear();
        for server in self.servers {
            let address = server.address.clone();
            final_states.insert(address, server.stop().summary());
        }
        self.admin_stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.admin_addr);
        let _ = self.admin_acceptor.join();
        let mut entries = std::mem::take(&mut *self.shared.trace.lock().unwrap());
        entries.sort_by_key(|e| e.tick);
        Trace {
            entries,
            final_states,
        }
    }
}

/// Replays the admin envelopes of a simulated trace over loopback sockets,
/// each once the network is quiet, and returns the socket-side trace.
pub fn replay_admin_script(nodes: Vec<Node>, listen: &BTreeMap<String, String>, sim: &Trace, timeout: Duration) -> Result<Trace> {
    let mut net = SocketNetwork::start(nodes, listen)?;
    let script: Vec<Envelope> = sim
        .entries
        .iter()
        .map(|e| e.envelope.clone())
        .filter(|e| e.sender == ADMIN)
        .collect();
    let deadline = Instant::now() + timeout;
    for env in script {
        net.send(env)?;
        net.wait_idle(deadline.saturating_duration_since(Instant::now()))?;
    }
    Ok(net.shutdown())
}

/// Links whose envelope sequences differ between two traces.
pub fn projection_mismatches(left: &Trace, right: &Trace) -> Vec<(String, String)> {
    let l = left.link_projection();
    let r = right.link_projection();
    let mut links: Vec<&(String, String)> = l.keys().chain(r.keys()).collect();
    links.sort();
    links.dedup();
    links
        .into_iter()
        .filter(|k| l.get(*k) != r.get(*k))
        .cloned()
        .collect()
}
