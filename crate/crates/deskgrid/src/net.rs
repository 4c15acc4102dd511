//! Wire protocol over TCP: pooled client transport, controller and worker servers,
//! and the trainer-side cluster client.

use std::collections::HashMap;
use std::io::{self, ErrorKind};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use deskgrid_core::cluster::wire::{read_frame, write_frame, Envelope, ErrorCode, WireError};
use deskgrid_core::cluster::{
    Allocation, ClusterError, Controller, EnvCluster, StatusReport, StepReply, Transport, TransportError, WireMessage, WorkerHost,
};
use deskgrid_core::envsim::{ActionSpace, ApiTable, TaskSpec};
use deskgrid_core::grpo::UpdateMetrics;
use parking_lot::Mutex;

/// Idle connections that the peer has closed are detected and dropped before reuse.
fn still_open(s: &TcpStream) -> bool {
    let mut b = [0u8; 1];
    if s.set_nonblocking(true).is_err() {
        return false;
    }
    let open = matches!(s.peek(&mut b), Err(e) if e.kind() == ErrorKind::WouldBlock);
    s.set_nonblocking(false).is_ok() && open
}

/// Request/response client with one idle-connection pool per address.
pub struct TcpTransport {
    sender: String,
    timeout: Duration,
    pool: Mutex<HashMap<String, Vec<TcpStream>>>,
}

impl TcpTransport {
    pub fn new(sender: &str, timeout: Duration) -> Self {
        TcpTransport { sender: sender.into(), timeout, pool: Mutex::new(HashMap::new()) }
    }

    fn connect(&self, address: &str) -> io::Result<TcpStream> {
        let addr = address
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(ErrorKind::NotFound, format!("cannot resolve {address}")))?;
        let s = TcpStream::connect_timeout(&addr, self.timeout)?;
        s.set_nodelay(true)?;
        s.set_read_timeout(Some(self.timeout))?;
        s.set_write_timeout(Some(self.timeout))?;
        Ok(s)
    }

    fn checkout(&self, address: &str) -> io::Result<TcpStream> {
        let pooled = {
            let mut pool = self.pool.lock();
            let idle = pool.entry(address.to_string()).or_default();
            let mut found = None;
            while let Some(s) = idle.pop() {
                if still_open(&s) {
                    found = Some(s);
                    break;
                }
            }
            found
        };
        match pooled {
            Some(s) => Ok(s),
            None => self.connect(address),
        }
    }

    /// Drops pooled connections to `address`.
    pub fn forget(&self, address: &str) {
        self.pool.lock().remove(address);
    }

    pub fn request(&self, address: &str, correlation_id: u64, msg: WireMessage) -> Result<WireMessage, TransportError> {
        let mut s = self.checkout(address).map_err(|e| TransportError::Unreachable(format!("{address}: {e}")))?;
        let env = Envelope::new(correlation_id, &self.sender, msg);
        let reply = write_frame(&mut s, &env).and_then(|_| read_frame(&mut s));
        match reply {
            Ok(r) => {
                self.pool.lock().entry(address.to_string()).or_default().push(s);
                Ok(r.body)
            }
            Err(WireError::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => Err(TransportError::Timeout),
            Err(e) => Err(TransportError::Unreachable(format!("{address}: {e}"))),
        }
    }
}

impl Transport for TcpTransport {
    fn call(&self, address: &str, correlation_id: u64, msg: WireMessage) -> Result<WireMessage, TransportError> {
        self.request(address, correlation_id, msg)
    }
}

type Handler = Arc<dyn Fn(u64, WireMessage) -> WireMessage + Send + Sync>;

/// Accept loop serving framed requests, one thread per connection.
pub struct FrameServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<TcpStream>>>,
    accept: Option<JoinHandle<()>>,
}

impl FrameServer {
    pub fn bind(bind: &str, name: &str, handler: Handler) -> io::Result<Self> {
        let listener = TcpListener::bind(bind)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let conns: Arc<Mutex<Vec<TcpStream>>> = Arc::default();
        let (stop2, conns2, name) = (stop.clone(), conns.clone(), name.to_string());
        let accept = std::thread::spawn(move || {
            while !stop2.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((sock, _)) => {
                        if sock.set_nonblocking(false).is_err() || sock.set_nodelay(true).is_err() {
                            continue;
                        }
                        if let Ok(c) = sock.try_clone() {
                            conns2.lock().push(c);
                        }
                        let (h, name) = (handler.clone(), name.clone());
                        std::thread::spawn(move || serve_conn(sock, &name, h));
                    }
                    Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
                    Err(e) => {
                        tracing::warn!("{name}: accept failed: {e}");
                        std::thread::sleep(Duration::from_millis(50));
                    }
                }
            }
        });
        Ok(FrameServer { addr, stop, conns, accept: Some(accept) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting and cuts every open connection.
    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for c in self.conns.lock().drain(..) {
            let _ = c.shutdown(std::net::Shutdown::Both);
        }
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for FrameServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn serve_conn(mut sock: TcpStream, name: &str, handler: Handler) {
    loop {
        let req = match read_frame(&mut sock) {
            Ok(r) => r,
            Err(WireError::Io(_)) => return,
            Err(e) => {
                let reply = Envelope::new(0, name, WireMessage::error(ErrorCode::BadRequest, e.to_string()));
                let _ = write_frame(&mut sock, &reply);
                return;
            }
        };
        let body = handler(req.correlation_id, req.body.clone());
        if write_frame(&mut sock, &req.reply(name, body)).is_err() {
            return;
        }
    }
}

/// Controller wire server plus its liveness pump.
pub struct ControllerServer {
    pub controller: Arc<Controller<TcpTransport>>,
    server: FrameServer,
    stop: Arc<AtomicBool>,
    pump: Option<JoinHandle<()>>,
}

impl ControllerServer {
    pub fn start(bind: &str, controller: Arc<Controller<TcpTransport>>) -> io::Result<Self> {
        let c = controller.clone();
        let server = FrameServer::bind(bind, "controller", Arc::new(move |corr, msg| c.handle(corr, msg)))?;
        let stop = Arc::new(AtomicBool::new(false));
        let (c, stop2) = (controller.clone(), stop.clone());
        let every = Duration::from_millis((controller.timing().heartbeat_interval_ms / 2).max(5));
        let pump = std::thread::spawn(move || {
            while !stop2.load(Ordering::SeqCst) {
                for task in c.reap_and_reallocate() {
                    tracing::info!(task, "session lost; task is free for reallocation");
                }
                std::thread::sleep(every);
            }
        });
        Ok(ControllerServer { controller, server, stop, pump: Some(pump) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.server.local_addr()
    }

    /// Stops serving; every live session is marked lost.
    pub fn shutdown(&mut self) -> usize {
        self.server.shutdown();
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.pump.take() {
            let _ = h.join();
        }
        self.controller.shutdown()
    }
}

impl Drop for ControllerServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WorkerError {
    #[error("cannot bind {0}: {1}")]
    Bind(String, io::Error),
    #[error("controller {0} unreachable after {1} attempts")]
    ControllerUnreachable(String, u32),
    #[error("controller refused registration: {0}")]
    Refused(String),
}

/// Worker process: env host, wire server, and heartbeat loop.
pub struct WorkerServer {
    pub host: Arc<WorkerHost>,
    pub worker_id: String,
    server: FrameServer,
    stop: Arc<AtomicBool>,
    beat: Option<JoinHandle<()>>,
}

/// Outer error: controller not reached. Inner error: controller said no.
fn register(
    t: &TcpTransport,
    controller: &str,
    address: &str,
    capacity: u32,
    id: Option<String>,
) -> Result<Result<String, String>, TransportError> {
    Ok(match t.request(controller, 0, WireMessage::Register { address: address.into(), capacity, worker_id: id })? {
        WireMessage::Registered { worker_id } => Ok(worker_id),
        WireMessage::Error { message, .. } => Err(message),
        other => Err(format!("unexpected reply `{}`", other.kind())),
    })
}

impl WorkerServer {
    /// Binds, registers (retrying `attempts` times), then heartbeats every `interval`.
    pub fn start(
        bind: &str,
        controller: &str,
        capacity: u32,
        apis: Arc<ApiTable>,
        interval: Duration,
        attempts: u32,
    ) -> Result<Self, WorkerError> {
        let host = Arc::new(WorkerHost::new(capacity, apis));
        let h = host.clone();
        let server = FrameServer::bind(bind, "worker", Arc::new(move |corr, msg| h.handle(corr, msg)))
            .map_err(|e| WorkerError::Bind(bind.into(), e))?;
        let address = server.local_addr().to_string();
        let transport = TcpTransport::new("worker", Duration::from_secs(5));
        let mut worker_id = None;
        for attempt in 0..attempts {
            match register(&transport, controller, &address, capacity, None) {
                Ok(Ok(id)) => {
                    worker_id = Some(id);
                    break;
                }
                Ok(Err(m)) => return Err(WorkerError::Refused(m)),
                Err(e) => {
                    tracing::warn!(attempt, "controller {controller} not reachable: {e}");
                    std::thread::sleep(interval.min(Duration::from_millis(200)) * (attempt + 1));
                }
            }
        }
        let worker_id = worker_id.ok_or_else(|| WorkerError::ControllerUnreachable(controller.into(), attempts))?;
        let stop = Arc::new(AtomicBool::new(false));
        let (stop2, id, ctl, h) = (stop.clone(), worker_id.clone(), controller.to_string(), host.clone());
        let beat = std::thread::spawn(move || {
            while !stop2.load(Ordering::SeqCst) {
                std::thread::sleep(interval);
                if stop2.load(Ordering::SeqCst) {
                    break;
                }
                let msg = WireMessage::Heartbeat { worker_id: id.clone(), active: h.active() };
                match transport.request(&ctl, 0, msg) {
                    Ok(WireMessage::Ack) => {}
                    Ok(WireMessage::Error { code: ErrorCode::UnknownWorker, .. }) => {
                        // Declared dead: our envs are gone from the controller's view, so start clean.
                        h.clear();
                        match register(&transport, &ctl, &address, capacity, Some(id.clone())) {
                            Ok(Ok(_)) => tracing::info!("re-registered as {id}"),
                            Ok(Err(e)) => tracing::warn!("re-registration refused: {e}"),
                            Err(e) => tracing::warn!("re-registration failed: {e}"),
                        }
                    }
                    Ok(other) => tracing::warn!("unexpected heartbeat reply {other:?}"),
                    Err(e) => tracing::warn!("heartbeat failed: {e}"),
                }
            }
        });
        Ok(WorkerServer { host, worker_id, server, stop, beat: Some(beat) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.server.local_addr()
    }

    /// Abrupt stop: no more heartbeats or replies, hosted envs discarded.
    pub fn kill(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.server.shutdown();
        self.host.clear();
        if let Some(h) = self.beat.take() {
            let _ = h.join();
        }
    }
}

impl Drop for WorkerServer {
    fn drop(&mut self) {
        self.kill();
    }
}

/// Trainer-side view of a remote controller.
pub struct RemoteCluster {
    controller: String,
    transport: TcpTransport,
    next: AtomicU64,
}

impl RemoteCluster {
    pub fn new(controller: &str, timeout: Duration) -> Self {
        RemoteCluster { controller: controller.into(), transport: TcpTransport::new("trainer", timeout), next: AtomicU64::new(1) }
    }

    fn call(&self, correlation_id: Option<u64>, msg: WireMessage) -> Result<WireMessage, ClusterError> {
        let corr = correlation_id.unwrap_or_else(|| self.next.fetch_add(1, Ordering::Relaxed));
        match self.transport.request(&self.controller, corr, msg) {
            Ok(WireMessage::Error { code, message }) => Err(ClusterError::from_wire(code, message)),
            Ok(m) => Ok(m),
            Err(TransportError::Timeout) => Err(ClusterError::Timeout),
            Err(TransportError::Unreachable(m)) => Err(ClusterError::Unavailable(m)),
        }
    }

    pub fn status(&self) -> Result<StatusReport, ClusterError> {
        match self.call(None, WireMessage::StatusQuery)? {
            WireMessage::StatusReport { report } => Ok(report),
            other => Err(unexpected(&other)),
        }
    }
}

fn unexpected(m: &WireMessage) -> ClusterError {
    ClusterError::Protocol(format!("unexpected reply `{}`", m.kind()))
}

impl EnvCluster for RemoteCluster {
    fn allocate(&self, task: &TaskSpec, seed: u64, space: ActionSpace, realloc_of: Option<&str>) -> Result<Allocation, ClusterError> {
        let msg = WireMessage::Allocate { task: task.clone(), seed, space, realloc_of: realloc_of.map(String::from) };
        match self.call(None, msg)? {
            WireMessage::Allocated { session_id, slot_id, worker_id, observation } => {
                Ok(Allocation { session_id, slot_id, worker_id, observation })
            }
            other => Err(unexpected(&other)),
        }
    }

    fn step(&self, session: &str, correlation_id: u64, action: &str) -> Result<StepReply, ClusterError> {
        match self.call(Some(correlation_id), WireMessage::Step { session_id: session.into(), action: action.into() })? {
            WireMessage::StepResult { outcome, accuracy } => Ok(StepReply { outcome, accuracy }),
            other => Err(unexpected(&other)),
        }
    }

    fn release(&self, session: &str) -> Result<(), ClusterError> {
        self.call(None, WireMessage::Release { session_id: session.into() }).map(drop)
    }

    fn sync_training(&self, phase: &str, metrics: &[UpdateMetrics]) -> Result<bool, ClusterError> {
        match self.call(None, WireMessage::TrainerSync { phase: phase.into(), metrics: metrics.to_vec() })? {
            WireMessage::TrainerControl { paused } => Ok(paused),
            other => Err(unexpected(&other)),
        }
    }
}
