//! A model evaluated by a child process over a line protocol.
//!
//! The client writes a batch of input points, one per line with coordinates
//! separated by commas, flushes, and reads one output value per line back in
//! the same order.

use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use shapley_core::InputModel;
use thiserror::Error;

pub const DEFAULT_BATCH_SIZE: usize = 256;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot start {command:?}: {source}")]
    Spawn {
        command: String,
        source: std::io::Error,
    },

    #[error("no reply {index} of {batch} within {timeout:?}")]
    Timeout {
        index: usize,
        batch: usize,
        timeout: Duration,
    },

    #[error("reply {index} of {batch} is not a finite number: {line:?}")]
    Malformed {
        index: usize,
        batch: usize,
        line: String,
    },

    #[error("model process exited before reply {index} of {batch}; stderr: {stderr}")]
    PrematureExit {
        index: usize,
        batch: usize,
        stderr: String,
    },

    #[error("model process I/O failed: {0}")]
    Io(#[from] std::io::Error),

    #[error("expected points of dimension {expected}, got {found} values")]
    Shape { expected: usize, found: usize },
}

impl From<ClientError> for shapley_core::Error {
    fn from(e: ClientError) -> Self {
        shapley_core::Error::Model(e.to_string())
    }
}

struct Session {
    child: Child,
    stdin: ChildStdin,
    replies: Receiver<std::io::Result<String>>,
    stderr: Arc<Mutex<String>>,
    /// Set after a protocol failure; the reply stream can no longer be trusted.
    broken: bool,
}

/// A child process behind [`InputModel`]. Evaluations are serialized.
pub struct ExternalModel {
    command: String,
    p: usize,
    batch_size: usize,
    timeout: Duration,
    session: Mutex<Session>,
    evaluations: AtomicU64,
}

impl ExternalModel {
    /// Starts `command` through `sh -c`.
    pub fn spawn(command: &str, p: usize) -> Result<Self, ClientError> {
        Ok(ExternalModel {
            command: command.to_string(),
            p,
            batch_size: DEFAULT_BATCH_SIZE,
            timeout: DEFAULT_TIMEOUT,
            session: Mutex::new(start(command)?),
            evaluations: AtomicU64::new(0),
        })
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    /// Points evaluated so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::SeqCst)
    }

    /// Evaluates row-major `points`, `batch_size` at a time.
    pub fn evaluate_points(&self, points: &[f64], out: &mut [f64]) -> Result<(), ClientError> {
        if points.len() != out.len() * self.p {
            return Err(ClientError::Shape {
                expected: self.p,
                found: points.len(),
            });
        }
        let mut session = self.session.lock().unwrap_or_else(|e| e.into_inner());
        if session.broken {
            *session = start(&self.command)?;
        }
        for (pts, ys) in points
            .chunks(self.batch_size * self.p)
            .zip(out.chunks_mut(self.batch_size))
        {
            if let Err(e) = self.exchange(&mut session, pts, ys) {
                session.broken = true;
                return Err(e);
            }
            self.evaluations.fetch_add(ys.len() as u64, Ordering::SeqCst);
        }
        Ok(())
    }

    fn exchange(&self, s: &mut Session, points: &[f64], out: &mut [f64]) -> Result<(), ClientError> {
        let batch = out.len();
        let mut msg = String::new();
        for x in points.chunks_exact(self.p) {
            for (i, v) in x.iter().enumerate() {
                if i > 0 {
                    msg.push(',');
                }
                msg.push_str(&v.to_string());
            }
            msg.push('\n');
        }
        let premature = |s: &mut Session, index: usize| {
            // Give the stderr reader a moment to drain before reporting.
            let _ = s.child.wait();
            thread::sleep(Duration::from_millis(20));
            ClientError::PrematureExit {
                index,
                batch,
                stderr: s.stderr.lock().map(|e| e.trim().to_string()).unwrap_or_default(),
            }
        };
        if let Err(e) = s.stdin.write_all(msg.as_bytes()).and_then(|_| s.stdin.flush()) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                return Err(premature(s, 1));
            }
            return Err(e.into());
        }
        for (k, y) in out.iter_mut().enumerate() {
            let index = k + 1;
            let line = match s.replies.recv_timeout(self.timeout) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return Err(e.into()),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(ClientError::Timeout {
                        index,
                        batch,
                        timeout: self.timeout,
                    })
                }
                Err(RecvTimeoutError::Disconnected) => return Err(premature(s, index)),
            };
            *y = line
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| ClientError::Malformed {
                    index,
                    batch,
                    line: line.clone(),
                })?;
        }
        Ok(())
    }
}

fn start(command: &str) -> Result<Session, ClientError> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| ClientError::Spawn {
            command: command.to_string(),
            source,
        })?;
    let stdin = child.stdin.take().expect("piped stdin");
    let stdout = child.stdout.take().expect("piped stdout");
    let mut err = child.stderr.take().expect("piped stderr");
    let (tx, replies) = mpsc::channel();
    thread::spawn(move || {
        for line in BufReader::new(stdout).lines() {
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    let stderr = Arc::new(Mutex::new(String::new()));
    let sink = Arc::clone(&stderr);
    thread::spawn(move || {
        let mut buf = [0u8; 4096];
        while let Ok(n) = err.read(&mut buf) {
            if n == 0 {
                break;
            }
            if let Ok(mut s) = sink.lock() {
                s.push_str(&String::from_utf8_lossy(&buf[..n]));
            }
        }
    });
    Ok(Session {
        child,
        stdin,
        replies,
        stderr,
        broken: false,
    })
}

impl Drop for ExternalModel {
    fn drop(&mut self) {
        let s = self.session.get_mut().unwrap_or_else(|e| e.into_inner());
        let _ = s.child.kill();
        let _ = s.child.wait();
    }
}

impl InputModel for ExternalModel {
    fn dim(&self) -> usize {
        self.p
    }

    fn evaluate(&self, x: &[f64]) -> shapley_core::Result<f64> {
        let mut y = [0.0];
        self.evaluate_points(x, &mut y)?;
        Ok(y[0])
    }

    fn evaluate_batch(&self, points: &[f64], out: &mut [f64]) -> shapley_core::Result<()> {
        Ok(self.evaluate_points(points, out)?)
    }

    fn concurrent(&self) -> bool {
        false
    }
}
