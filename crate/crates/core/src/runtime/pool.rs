use std::ffi::OsString;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::protocol::{self, Handshake, Op, Request, Response, WireCycle, PROTOCOL_VERSION};
use super::{AstMetrics, CycleBatch, ExecOutcome, ExecStatus, Limits, Outcome, RuleExecutor};
use crate::value::Value;

const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(20);
/// Added to the wall-clock limit before the engine gives up on a worker that
/// did not enforce the limit itself.
const REPLY_SLACK: Duration = Duration::from_millis(500);
/// Requests without a rule body (ping, metrics) still get a bound.
const MIN_REPLY_WAIT: Duration = Duration::from_secs(5);

static NEXT_REQUEST_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("pool size must be at least 1")]
    EmptyPool,
    #[error("cannot launch worker `{program}`: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("worker handshake failed: {0}")]
    Handshake(String),
    #[error("worker speaks protocol version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
}

/// How to launch a worker process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunnerCommand {
    pub program: PathBuf,
    pub args: Vec<OsString>,
}

impl RunnerCommand {
    pub fn new(program: impl Into<PathBuf>, args: impl IntoIterator<Item = impl Into<OsString>>) -> Self {
        RunnerCommand {
            program: program.into(),
            args: args.into_iter().map(Into::into).collect(),
        }
    }

    pub fn reference_script() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("runner/reference_runner.py")
    }

    /// The bundled Python worker.
    pub fn reference() -> Self {
        RunnerCommand::new("python3", [Self::reference_script()])
    }

    /// `CYCLEBENCH_RUNNER` (whitespace-separated program and arguments) if
    /// set, otherwise the bundled worker.
    pub fn from_env() -> Self {
        match std::env::var("CYCLEBENCH_RUNNER") {
            Ok(spec) if !spec.trim().is_empty() => {
                let mut parts = spec.split_whitespace();
                let program = parts.next().unwrap_or_default().to_string();
                RunnerCommand::new(program, parts.map(String::from))
            }
            _ => RunnerCommand::reference(),
        }
    }
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
}

impl Worker {
    fn spawn(cmd: &RunnerCommand) -> Result<Worker, StartupError> {
        let path = std::env::var_os("PATH").unwrap_or_else(|| "/usr/local/bin:/usr/bin:/bin".into());
        let mut child = Command::new(&cmd.program)
            .args(&cmd.args)
            .env_clear()
            .env("PATH", path)
            .env("PYTHONHASHSEED", "0")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("PYTHONIOENCODING", "utf-8")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|source| StartupError::Spawn {
                program: cmd.program.display().to_string(),
                source,
            })?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut worker = Worker { child, stdin, lines };
        let first = match worker.lines.recv_timeout(HANDSHAKE_TIMEOUT) {
            Ok(line) => line,
            Err(RecvTimeoutError::Timeout) => {
                return Err(StartupError::Handshake("no handshake line within timeout".into()))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(StartupError::Handshake("worker exited before handshake".into()))
            }
        };
        let hs: Handshake = serde_json::from_str(&first)
            .map_err(|e| StartupError::Handshake(format!("bad handshake line {first:?}: {e}")))?;
        if hs.protocol_version != PROTOCOL_VERSION {
            worker.kill();
            return Err(StartupError::VersionMismatch {
                found: hs.protocol_version,
                expected: PROTOCOL_VERSION,
            });
        }
        Ok(worker)
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        self.kill();
    }
}

enum Reply {
    Response(Response, u64),
    Failed(ExecStatus, String, u64),
}

/// One worker process. Traffic through a handle is serialized: there is at
/// most one request in flight.
pub struct RunnerHandle {
    command: RunnerCommand,
    limits: Limits,
    worker: Mutex<Option<Worker>>,
    respawns: AtomicU64,
}

impl RunnerHandle {
    pub fn start(command: RunnerCommand, limits: Limits) -> Result<Self, StartupError> {
        let worker = Worker::spawn(&command)?;
        Ok(RunnerHandle {
            command,
            limits,
            worker: Mutex::new(Some(worker)),
            respawns: AtomicU64::new(0),
        })
    }

    pub fn limits(&self) -> Limits {
        self.limits
    }

    /// Number of times the worker process has been replaced.
    pub fn respawn_count(&self) -> u64 {
        self.respawns.load(Ordering::SeqCst)
    }

    /// OS process id of the current worker, if one is running.
    pub fn worker_pid(&self) -> Option<u32> {
        self.lock().as_ref().map(|w| w.child.id())
    }

    /// Kills the worker process without telling the handle. The next request
    /// observes the crash. Used for fault injection.
    pub fn kill_worker(&self) {
        if let Some(w) = self.lock().as_mut() {
            let _ = w.child.kill();
            let _ = w.child.wait();
        }
    }

    pub fn ping(&self) -> Outcome<()> {
        match self.send(Op::Ping, None, None, None) {
            Reply::Response(resp, ms) => match status_of(&resp) {
                Ok(()) => Outcome::ok((), ms),
                Err((status, text)) => Outcome::failed(status, text, ms),
            },
            Reply::Failed(status, text, ms) => Outcome::failed(status, text, ms),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Option<Worker>> {
        self.worker.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn replace(&self, slot: &mut Option<Worker>) {
        *slot = None;
        self.respawns.fetch_add(1, Ordering::SeqCst);
        // A failed respawn leaves the slot empty; the next request retries.
        *slot = Worker::spawn(&self.command).ok();
    }

    fn send(
        &self,
        op: Op,
        source: Option<&str>,
        input: Option<&Value>,
        inputs: Option<&[Value]>,
    ) -> Reply {
        let mut slot = self.lock();
        let start = Instant::now();
        let elapsed = |start: Instant| start.elapsed().as_millis() as u64;
        if slot.is_none() {
            match Worker::spawn(&self.command) {
                Ok(w) => *slot = Some(w),
                Err(e) => {
                    return Reply::Failed(
                        ExecStatus::RunnerCrashed,
                        format!("worker unavailable: {e}"),
                        elapsed(start),
                    )
                }
            }
        }
        let id = NEXT_REQUEST_ID.fetch_add(1, Ordering::Relaxed);
        let req = Request {
            id,
            op,
            source,
            input: input.map(Value::to_json),
            inputs: inputs.map(|xs| xs.iter().map(Value::to_json).collect()),
            limits: self.limits,
        };
        let mut line = serde_json::to_string(&req).expect("requests serialize");
        line.push('\n');
        let worker = slot.as_mut().expect("worker present");
        let written = worker
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| worker.stdin.flush());
        if let Err(e) = written {
            self.replace(&mut slot);
            return Reply::Failed(
                ExecStatus::RunnerCrashed,
                format!("worker stdin closed: {e}"),
                elapsed(start),
            );
        }
        let mut wait = Duration::from_millis(self.limits.wall_clock_ms) + REPLY_SLACK;
        if matches!(op, Op::Ping | Op::Metrics) {
            wait = wait.max(MIN_REPLY_WAIT);
        }
        match worker.lines.recv_timeout(wait) {
            Ok(text) => match serde_json::from_str::<Response>(&text) {
                Ok(resp) if resp.id == Some(id) => Reply::Response(resp, elapsed(start)),
                Ok(resp) => {
                    self.replace(&mut slot);
                    Reply::Failed(
                        ExecStatus::ProtocolError,
                        format!("response id {:?} does not match request {id}", resp.id),
                        elapsed(start),
                    )
                }
                Err(e) => {
                    self.replace(&mut slot);
                    Reply::Failed(
                        ExecStatus::ProtocolError,
                        format!("unreadable response line: {e}"),
                        elapsed(start),
                    )
                }
            },
            Err(RecvTimeoutError::Timeout) => {
                self.replace(&mut slot);
                Reply::Failed(
                    ExecStatus::Timeout,
                    format!("no reply within {} ms", wait.as_millis()),
                    elapsed(start),
                )
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.replace(&mut slot);
                Reply::Failed(
                    ExecStatus::RunnerCrashed,
                    "worker exited during request".into(),
                    elapsed(start),
                )
            }
        }
    }
}

fn status_of(resp: &Response) -> Result<(), (ExecStatus, String)> {
    match protocol::parse_status(&resp.status) {
        Some(ExecStatus::Ok) => Ok(()),
        Some(status) => Err((status, resp.error.clone().unwrap_or_default())),
        None => Err((
            ExecStatus::ProtocolError,
            format!("unknown status {:?}", resp.status),
        )),
    }
}

fn decode_value(json: &serde_json::Value) -> Result<Value, String> {
    Value::from_json(json).map_err(|e| format!("rule produced a value outside the task format: {e}"))
}

fn finish<T>(reply: Reply, decode: impl FnOnce(Response) -> Result<T, (ExecStatus, String)>) -> Outcome<T> {
    match reply {
        Reply::Failed(status, text, ms) => Outcome::failed(status, text, ms),
        Reply::Response(resp, ms) => {
            let ms = if resp.duration_ms > 0 { resp.duration_ms } else { ms };
            if let Err((status, text)) = status_of(&resp) {
                return Outcome::failed(status, text, ms);
            }
            match decode(resp) {
                Ok(v) => Outcome::ok(v, ms),
                Err((status, text)) => Outcome::failed(status, text, ms),
            }
        }
    }
}

fn decode_single(resp: Response) -> Result<Value, (ExecStatus, String)> {
    let json = resp
        .value
        .ok_or((ExecStatus::ProtocolError, "ok response without value".to_string()))?;
    decode_value(&json).map_err(|e| (ExecStatus::RaisedError, e))
}

fn decode_cycle(resp: Response) -> Result<CycleBatch, (ExecStatus, String)> {
    let json = resp
        .value
        .ok_or((ExecStatus::ProtocolError, "ok response without value".to_string()))?;
    let wire: WireCycle = serde_json::from_value(json)
        .map_err(|e| (ExecStatus::ProtocolError, format!("malformed cycle value: {e}")))?;
    let conv = |xs: Vec<serde_json::Value>| -> Result<Vec<Value>, (ExecStatus, String)> {
        xs.iter()
            .map(|x| decode_value(x).map_err(|e| (ExecStatus::RaisedError, e)))
            .collect()
    };
    let counterexample = match wire.counterexample {
        None => None,
        Some(triple) => {
            let mut vals = conv(triple)?;
            if vals.len() != 3 {
                return Err((ExecStatus::ProtocolError, "counterexample is not a triple".into()));
            }
            let gfx = vals.pop().unwrap();
            let fx = vals.pop().unwrap();
            let x = vals.pop().unwrap();
            Some((x, fx, gfx))
        }
    };
    let batch = CycleBatch {
        passes: wire.passes,
        forward: conv(wire.forward)?,
        roundtrip: conv(wire.roundtrip)?,
        counterexample,
    };
    if batch.forward.len() != batch.passes.len() || batch.roundtrip.len() != batch.passes.len() {
        return Err((ExecStatus::ProtocolError, "cycle arrays differ in length".into()));
    }
    Ok(batch)
}

impl RuleExecutor for RunnerHandle {
    fn apply_forward(&self, source: &str, input: &Value) -> ExecOutcome {
        finish(self.send(Op::Forward, Some(source), Some(input), None), decode_single)
    }

    fn apply_inverse(&self, source: &str, output: &Value) -> ExecOutcome {
        finish(self.send(Op::Inverse, Some(source), Some(output), None), decode_single)
    }

    fn cycle(&self, source: &str, inputs: &[Value]) -> Outcome<CycleBatch> {
        let outcome = finish(self.send(Op::Cycle, Some(source), None, Some(inputs)), decode_cycle);
        match outcome.value {
            Some(ref b) if b.passes.len() != inputs.len() => Outcome::failed(
                ExecStatus::ProtocolError,
                "cycle result count differs from inputs",
                outcome.duration_ms,
            ),
            _ => outcome,
        }
    }

    fn code_metrics(&self, source: &str) -> Outcome<AstMetrics> {
        finish(self.send(Op::Metrics, Some(source), None, None), |resp| {
            resp.metrics
                .ok_or((ExecStatus::ProtocolError, "ok response without metrics".to_string()))
        })
    }
}

/// A fixed set of workers shared by concurrent callers. Each call borrows an
/// idle worker for its duration.
pub struct RunnerPool {
    handles: Vec<RunnerHandle>,
    idle: Mutex<Vec<usize>>,
    freed: Condvar,
}

impl RunnerPool {
    pub fn start(size: usize, limits: Limits, command: RunnerCommand) -> Result<Self, StartupError> {
        if size == 0 {
            return Err(StartupError::EmptyPool);
        }
        let handles = (0..size)
            .map(|_| RunnerHandle::start(command.clone(), limits))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RunnerPool {
            handles,
            idle: Mutex::new((0..size).rev().collect()),
            freed: Condvar::new(),
        })
    }

    /// Pool of `size` workers launched from [`RunnerCommand::from_env`].
    pub fn start_default(size: usize, limits: Limits) -> Result<Self, StartupError> {
        Self::start(size, limits, RunnerCommand::from_env())
    }

    pub fn size(&self) -> usize {
        self.handles.len()
    }

    pub fn handle(&self, index: usize) -> &RunnerHandle {
        &self.handles[index]
    }

    pub fn handles(&self) -> &[RunnerHandle] {
        &self.handles
    }

    fn with_idle<R>(&self, f: impl FnOnce(&RunnerHandle) -> R) -> R {
        let index = {
            let mut idle = self.idle.lock().unwrap_or_else(|e| e.into_inner());
            loop {
                if let Some(i) = idle.pop() {
                    break i;
                }
                idle = self.freed.wait(idle).unwrap_or_else(|e| e.into_inner());
            }
        };
        struct Release<'a>(&'a RunnerPool, usize);
        impl Drop for Release<'_> {
            fn drop(&mut self) {
                self.0.idle.lock().unwrap_or_else(|e| e.into_inner()).push(self.1);
                self.0.freed.notify_one();
            }
        }
        let _release = Release(self, index);
        f(&self.handles[index])
    }
}

impl RuleExecutor for RunnerPool {
    fn apply_forward(&self, source: &str, input: &Value) -> ExecOutcome {
        self.with_idle(|h| h.apply_forward(source, input))
    }

    fn apply_inverse(&self, source: &str, output: &Value) -> ExecOutcome {
        self.with_idle(|h| h.apply_inverse(source, output))
    }

    fn cycle(&self, source: &str, inputs: &[Value]) -> Outcome<CycleBatch> {
        self.with_idle(|h| h.cycle(source, inputs))
    }

    fn code_metrics(&self, source: &str) -> Outcome<AstMetrics> {
        self.with_idle(|h| h.code_metrics(source))
    }
}
