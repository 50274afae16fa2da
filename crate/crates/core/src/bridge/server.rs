//! Multi-client TCP server speaking the NDJSON protocol.
//!
//! Each connection is one session and gets a reader thread plus a pipeline
//! worker fed through a bounded queue. Malformed lines are answered with an
//! error and skipped; protocol violations are answered with an error and
//! close the connection.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{sync_channel, SyncSender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::clock::estimate_offset;
use super::protocol::{
    decode_line, Bye, ConfigEcho, DecisionPayload, EegPayload, ErrorCode, ErrorPayload, EventPayload, Hello,
    Message, SessionEvent, TimeResp,
};
use super::session::{BlockKind, Session, SessionConfig, SessionLog};
use super::BridgeError;
use crate::dsp::EegChunk;
use crate::sim::write_chunk;

/// Environment variable naming the directory for session logs.
pub const LOG_DIR_ENV: &str = "NEUROLOOP_LOG_DIR";
/// Longest accepted input line, in bytes.
pub const MAX_LINE_BYTES: usize = 16 << 20;
const ACCEPT_POLL: Duration = Duration::from_millis(10);

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub defaults: SessionConfig,
    /// Where `<session>.log.jsonl` and `<session>.chunks.jsonl` are written.
    pub log_dir: Option<PathBuf>,
    /// Chunks the pipeline queue holds before the reader blocks.
    pub queue_chunks: usize,
    /// Queued data above which a lag event is sent, in seconds.
    pub lag_seconds: f64,
    /// Artificial per-chunk processing delay, for load testing.
    pub process_delay: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            defaults: SessionConfig::default(),
            log_dir: None,
            queue_chunks: 64,
            lag_seconds: 10.0,
            process_delay: Duration::ZERO,
        }
    }
}

impl ServerConfig {
    /// Applies [`LOG_DIR_ENV`] when set.
    pub fn with_env(mut self) -> Self {
        if let Some(dir) = std::env::var_os(LOG_DIR_ENV) {
            self.log_dir = Some(PathBuf::from(dir));
        }
        self
    }
}

/// Merges a client's hello into the server defaults.
pub fn resolve_config(defaults: &SessionConfig, hello: &Hello) -> Result<SessionConfig, BridgeError> {
    let mut c = defaults.clone();
    if let Some(v) = hello.policy {
        c.policy = v;
    }
    if let Some(v) = hello.threshold {
        c.threshold = v;
    }
    if let Some(v) = hello.window_s {
        c.window_s = v;
    }
    if let Some(v) = hello.stream_initial {
        c.stream_initial = v;
    }
    if let Some(v) = hello.stream_floor {
        c.stream_floor = v;
    }
    if let Some(v) = hello.stream_ceiling {
        c.stream_ceiling = v;
    }
    if let Some(v) = hello.montage {
        c.montage = v;
    }
    if let Some(v) = hello.sample_rate {
        c.sample_rate = v;
    }
    if hello.bands.is_some() {
        c.bands = hello.bands;
    }
    c.block = match hello.block {
        Some(b) => {
            if hello.policy.is_some_and(|p| p != b.adapt_mode()) {
                return Err(BridgeError::Config(format!(
                    "policy {} conflicts with block {b:?}",
                    c.policy
                )));
            }
            c.policy = b.adapt_mode();
            b
        }
        None => BlockKind::for_mode(c.policy),
    };
    c.validate()?;
    Ok(c)
}

/// Microseconds since server start, on a monotonic clock.
#[derive(Debug, Clone, Copy)]
pub struct ServerClock {
    origin: Instant,
}

impl ServerClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }

    pub fn now_us(&self) -> i64 {
        self.origin.elapsed().as_micros() as i64
    }
}

impl Default for ServerClock {
    fn default() -> Self {
        Self::new()
    }
}

struct Shared {
    config: ServerConfig,
    clock: ServerClock,
    next_id: AtomicU64,
}

pub struct Server {
    listener: TcpListener,
    shared: Arc<Shared>,
    shutdown: Arc<AtomicBool>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, config: ServerConfig) -> std::io::Result<Self> {
        config
            .defaults
            .validate()
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        Ok(Self {
            listener,
            shared: Arc::new(Shared {
                config,
                clock: ServerClock::new(),
                next_id: AtomicU64::new(1),
            }),
            shutdown: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until shut down.
    pub fn run(self) -> std::io::Result<()> {
        while !self.shutdown.load(Ordering::Relaxed) {
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    stream.set_nonblocking(false)?;
                    let shared = Arc::clone(&self.shared);
                    std::thread::spawn(move || {
                        log::info!("connection from {peer}");
                        if let Err(e) = Connection::new(stream, shared).and_then(Connection::run) {
                            log::warn!("connection from {peer} ended: {e}");
                        }
                    });
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(ACCEPT_POLL),
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> std::io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let shutdown = Arc::clone(&self.shutdown);
        let thread = std::thread::spawn(move || self.run());
        Ok(ServerHandle {
            addr,
            shutdown,
            thread: Some(thread),
        })
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting connections. Open sessions run to completion.
    pub fn shutdown(mut self) -> std::io::Result<()> {
        self.stop()
    }

    fn stop(&mut self) -> std::io::Result<()> {
        self.shutdown.store(true, Ordering::Relaxed);
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop();
    }
}

/// Serialized writes of whole lines to the client.
#[derive(Clone)]
struct Outbox(Arc<Mutex<TcpStream>>);

impl Outbox {
    fn send(&self, msg: &Message) {
        let mut line = msg.to_line();
        line.push('\n');
        let mut s = self.0.lock().unwrap_or_else(|p| p.into_inner());
        if let Err(e) = s.write_all(line.as_bytes()) {
            log::debug!("client write failed: {e}");
        }
    }
}

type SharedLog = Arc<Mutex<Option<SessionLog<BufWriter<File>>>>>;

enum Work {
    Chunk(EegChunk),
    Event(SessionEvent),
    Finish,
}

struct Active {
    id: String,
    config: SessionConfig,
    channels: Vec<String>,
    offset_us: i64,
    queue: SyncSender<Work>,
    worker: JoinHandle<()>,
    queued_samples: Arc<AtomicUsize>,
    lagging: bool,
    log: SharedLog,
    chunk_log: Option<BufWriter<File>>,
}

enum Flow {
    Continue,
    Close,
}

struct Connection {
    reader: BufReader<TcpStream>,
    out: Outbox,
    shared: Arc<Shared>,
    active: Option<Active>,
    line_no: u64,
}

impl Connection {
    fn new(stream: TcpStream, shared: Arc<Shared>) -> std::io::Result<Self> {
        let out = Outbox(Arc::new(Mutex::new(stream.try_clone()?)));
        Ok(Self {
            reader: BufReader::new(stream),
            out,
            shared,
            active: None,
            line_no: 0,
        })
    }

    fn run(mut self) -> std::io::Result<()> {
        let mut buf = Vec::new();
        loop {
            buf.clear();
            let n = (&mut self.reader).take(MAX_LINE_BYTES as u64 + 1).read_until(b'\n', &mut buf)?;
            if n == 0 {
                break;
            }
            self.line_no += 1;
            if buf.len() > MAX_LINE_BYTES {
                self.fail(ErrorCode::Protocol, format!("line exceeds {MAX_LINE_BYTES} bytes"), None);
                break;
            }
            while matches!(buf.last(), Some(b'\n' | b'\r')) {
                buf.pop();
            }
            let text = match std::str::from_utf8(&buf) {
                Ok(t) => t,
                Err(e) => {
                    self.fail(ErrorCode::Malformed, "line is not valid UTF-8".into(), Some(e.valid_up_to()));
                    continue;
                }
            };
            if text.trim().is_empty() {
                continue;
            }
            let msg = match decode_line(text) {
                Ok(m) => m,
                Err(e) => {
                    self.fail(ErrorCode::Malformed, e.message, Some(e.offset));
                    continue;
                }
            };
            match self.handle(msg) {
                Ok(Flow::Continue) => {}
                Ok(Flow::Close) => break,
                Err(e) => {
                    let code = match e {
                        BridgeError::Config(_) => ErrorCode::Config,
                        BridgeError::Protocol(_) => ErrorCode::Protocol,
                        _ => ErrorCode::Internal,
                    };
                    self.fail(code, e.to_string(), None);
                    break;
                }
            }
        }
        self.finish();
        let _ = self.reader.get_ref().shutdown(std::net::Shutdown::Both);
        Ok(())
    }

    fn fail(&self, code: ErrorCode, message: String, offset: Option<usize>) {
        self.out.send(&Message::Error(ErrorPayload {
            session_id: self.active.as_ref().map(|a| a.id.clone()),
            code,
            message,
            line: Some(self.line_no),
            offset,
        }));
    }

    fn handle(&mut self, msg: Message) -> Result<Flow, BridgeError> {
        let Some(active) = &self.active else {
            return match msg {
                Message::Hello(h) => self.start(h).map(|_| Flow::Continue),
                Message::Bye(_) => {
                    self.out.send(&Message::Bye(Bye { session_id: None }));
                    Ok(Flow::Close)
                }
                other => Err(BridgeError::Protocol(format!("expected hello, got {}", other.kind()))),
            };
        };
        if let Message::Error(e) = &msg {
            log::warn!("client reported {:?}: {}", e.code, e.message);
            return Ok(Flow::Continue);
        }
        if msg.session_id() != Some(active.id.as_str()) {
            return Err(BridgeError::Protocol(format!(
                "{} message must carry session_id {:?}",
                msg.kind(),
                active.id
            )));
        }
        match msg {
            Message::Eeg(p) => self.ingest(p).map(|_| Flow::Continue),
            Message::TimeReq(r) => {
                let t2 = self.shared.clock.now_us();
                let t3 = self.shared.clock.now_us();
                self.out.send(&Message::TimeResp(TimeResp {
                    session_id: Some(active.id.clone()),
                    t1: r.t1,
                    t2,
                    t3,
                    t4: None,
                }));
                Ok(Flow::Continue)
            }
            Message::TimeResp(r) => {
                let Some(t4) = r.t4 else {
                    return Err(BridgeError::Protocol("time_resp from a client must carry t4".into()));
                };
                match estimate_offset(r.t1, r.t2, r.t3, t4) {
                    Ok(sync) => {
                        let active = self.active.as_mut().expect("session is active");
                        active.offset_us = sync.offset_us();
                        let event = SessionEvent::ClockOffset {
                            offset_us: active.offset_us,
                            round_trip_us: sync.round_trip,
                        };
                        self.out.send(&Message::Event(EventPayload {
                            session_id: active.id.clone(),
                            event: event.clone(),
                        }));
                        let _ = active.queue.send(Work::Event(event));
                    }
                    Err(e) => self.fail(ErrorCode::Data, e.to_string(), None),
                }
                Ok(Flow::Continue)
            }
            Message::Bye(_) => {
                let id = active.id.clone();
                self.finish();
                self.out.send(&Message::Bye(Bye { session_id: Some(id) }));
                Ok(Flow::Close)
            }
            Message::Hello(_) => Err(BridgeError::Protocol("session already started".into())),
            other => Err(BridgeError::Protocol(format!(
                "{} messages are sent by the server, not the client",
                other.kind()
            ))),
        }
    }

    fn start(&mut self, hello: Hello) -> Result<(), BridgeError> {
        let config = resolve_config(&self.shared.config.defaults, &hello)?;
        let id = match &hello.session_id {
            Some(id) if !id.is_empty() => id.clone(),
            _ => format!("session-{}", self.shared.next_id.fetch_add(1, Ordering::Relaxed)),
        };
        let mut session = Session::new(config.clone())?;
        let events = session.begin_block(config.block)?;

        let (log, chunk_log) = match &self.shared.config.log_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let stem: String = id
                    .chars()
                    .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
                    .collect();
                let log = BufWriter::new(File::create(dir.join(format!("{stem}.log.jsonl")))?);
                let chunks = BufWriter::new(File::create(dir.join(format!("{stem}.chunks.jsonl")))?);
                (Some(SessionLog::new(log)), Some(chunks))
            }
            None => (None, None),
        };
        let log: SharedLog = Arc::new(Mutex::new(log));

        let channels = config.channel_labels();
        self.out.send(&Message::Config(ConfigEcho {
            session_id: id.clone(),
            channels: channels.clone(),
            config: config.clone(),
        }));
        for e in &events {
            self.out.send(&Message::Event(EventPayload {
                session_id: id.clone(),
                event: e.clone(),
            }));
            write_log(&log, |l| l.event(e));
        }

        let (queue, rx) = sync_channel::<Work>(self.shared.config.queue_chunks.max(1));
        let queued_samples = Arc::new(AtomicUsize::new(0));
        let worker = {
            let out = self.out.clone();
            let id = id.clone();
            let log = Arc::clone(&log);
            let queued = Arc::clone(&queued_samples);
            let delay = self.shared.config.process_delay;
            std::thread::spawn(move || {
                for work in rx {
                    match work {
                        Work::Chunk(chunk) => {
                            if !delay.is_zero() {
                                std::thread::sleep(delay);
                            }
                            match session.push(&chunk) {
                                Ok(decisions) => {
                                    for d in decisions {
                                        write_log(&log, |l| l.decision(&d));
                                        out.send(&Message::Decision(DecisionPayload {
                                            session_id: id.clone(),
                                            decision: d,
                                        }));
                                    }
                                }
                                Err(e) => out.send(&Message::Error(ErrorPayload {
                                    session_id: Some(id.clone()),
                                    code: ErrorCode::Data,
                                    message: e.to_string(),
                                    line: None,
                                    offset: None,
                                })),
                            }
                            queued.fetch_sub(chunk.n_samples(), Ordering::Relaxed);
                        }
                        Work::Event(e) => write_log(&log, |l| l.event(&e)),
                        Work::Finish => break,
                    }
                }
                match session.end_block() {
                    Ok(events) => {
                        for e in events {
                            write_log(&log, |l| l.event(&e));
                            out.send(&Message::Event(EventPayload {
                                session_id: id.clone(),
                                event: e,
                            }));
                        }
                    }
                    Err(e) => log::warn!("session {id}: {e}"),
                }
                write_log(&log, |l| l.flush());
            })
        };

        log::info!("session {id} started: {:?} block, policy {}", config.block, config.policy);
        self.active = Some(Active {
            id,
            config,
            channels,
            offset_us: 0,
            queue,
            worker,
            queued_samples,
            lagging: false,
            log,
            chunk_log,
        });
        Ok(())
    }

    fn ingest(&mut self, payload: EegPayload) -> Result<(), BridgeError> {
        let active = self.active.as_mut().expect("session is active");
        if payload.channels != active.channels {
            return Err(BridgeError::Protocol(format!(
                "eeg carries {} channels, session {} expects the {}-channel {} montage in order",
                payload.channels.len(),
                active.id,
                active.channels.len(),
                active.config.montage
            )));
        }
        if payload.sample_rate != active.config.sample_rate {
            return Err(BridgeError::Protocol(format!(
                "eeg sampled at {} Hz, session configured for {} Hz",
                payload.sample_rate, active.config.sample_rate
            )));
        }
        let chunk = payload
            .to_chunk(active.offset_us)
            .map_err(|e| BridgeError::Protocol(format!("inconsistent eeg payload: {e}")))?;
        if let Some(w) = &mut active.chunk_log {
            write_chunk(w, Some(&active.id), &chunk)?;
        }
        let n = chunk.n_samples();
        let queued = active.queued_samples.fetch_add(n, Ordering::Relaxed) + n;
        let queued_seconds = queued as f64 / active.config.sample_rate;
        let lag = self.shared.config.lag_seconds;
        if queued_seconds > lag && !active.lagging {
            active.lagging = true;
            let event = SessionEvent::Lag {
                t: chunk.end_time(),
                queued_seconds,
            };
            log::warn!("session {}: {queued_seconds:.1} s queued for processing", active.id);
            self.out.send(&Message::Event(EventPayload {
                session_id: active.id.clone(),
                event: event.clone(),
            }));
            write_log(&active.log, |l| l.event(&event));
        } else if queued_seconds <= lag / 2.0 {
            active.lagging = false;
        }
        active
            .queue
            .send(Work::Chunk(chunk))
            .map_err(|_| BridgeError::Io("pipeline worker stopped".into()))
    }

    /// Drains the pipeline and closes the session's logs.
    fn finish(&mut self) {
        if let Some(mut active) = self.active.take() {
            let _ = active.queue.send(Work::Finish);
            drop(active.queue);
            if active.worker.join().is_err() {
                log::error!("session {} worker panicked", active.id);
            }
            if let Some(w) = &mut active.chunk_log {
                let _ = w.flush();
            }
            log::info!("session {} closed", active.id);
        }
    }
}

fn write_log(log: &SharedLog, f: impl FnOnce(&mut SessionLog<BufWriter<File>>) -> std::io::Result<()>) {
    let mut guard = log.lock().unwrap_or_else(|p| p.into_inner());
    if let Some(l) = guard.as_mut() {
        if let Err(e) = f(l) {
            log::warn!("session log write failed: {e}");
        }
    }
}
