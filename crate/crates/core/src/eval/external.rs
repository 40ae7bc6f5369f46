use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use super::protocol::{Frame, PROTOCOL_VERSION};
use super::{EvalError, EvalRequest, EvalResponse, Evaluator};
use crate::genome::SpaceId;

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalConfig {
    /// Shell command launching one worker.
    pub command: String,
    pub space: SpaceId,
    pub workers: usize,
    pub timeout: Duration,
    pub handshake_timeout: Duration,
    /// Extra attempts after a transport failure; a dead worker is relaunched.
    pub retries: u32,
}

impl ExternalConfig {
    pub fn new(command: impl Into<String>, space: SpaceId) -> Self {
        ExternalConfig {
            command: command.into(),
            space,
            workers: 1,
            timeout: Duration::from_secs(600),
            handshake_timeout: Duration::from_secs(30),
            retries: 1,
        }
    }
}

type Pending = Arc<Mutex<HashMap<u64, Sender<Result<Frame, EvalError>>>>>;

struct Permits {
    free: Mutex<usize>,
    released: Condvar,
}

impl Permits {
    fn acquire(&self) {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.released.wait(free).unwrap();
        }
        *free -= 1;
    }

    fn release(&self) {
        *self.free.lock().unwrap() += 1;
        self.released.notify_one();
    }
}

/// One worker process. Frames to it are serialized through `stdin`; a reader
/// thread routes responses to waiting callers by request id.
struct Worker {
    child: Mutex<Child>,
    stdin: Mutex<ChildStdin>,
    pending: Pending,
    alive: Arc<AtomicBool>,
    permits: Permits,
    capacity: usize,
    evaluator_id: String,
}

impl Worker {
    fn spawn(config: &ExternalConfig) -> Result<Worker, EvalError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&config.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| EvalError::Transport(format!("cannot launch {:?}: {e}", config.command)))?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let mut stdin = child.stdin.take().expect("stdin is piped");

        let pending: Pending = Arc::default();
        let alive = Arc::new(AtomicBool::new(true));
        let (control_tx, control_rx) = mpsc::channel();
        {
            let pending = Arc::clone(&pending);
            let alive = Arc::clone(&alive);
            thread::spawn(move || {
                for line in BufReader::new(stdout).lines() {
                    let Ok(line) = line else { break };
                    if line.trim().is_empty() {
                        continue;
                    }
                    match Frame::parse(&line) {
                        Ok(frame) => {
                            let waiter = frame
                                .response_id()
                                .and_then(|id| pending.lock().unwrap().remove(&id));
                            match waiter {
                                Some(tx) => {
                                    let _ = tx.send(Ok(frame));
                                }
                                None => {
                                    let _ = control_tx.send(Ok(frame));
                                }
                            }
                        }
                        Err(e) => {
                            // cannot route a frame we cannot read: fail everyone waiting
                            for (_, tx) in pending.lock().unwrap().drain() {
                                let _ = tx.send(Err(e.clone()));
                            }
                            let _ = control_tx.send(Err(e));
                        }
                    }
                }
                alive.store(false, Ordering::SeqCst);
                pending.lock().unwrap().clear();
            });
        }

        let hello = Frame::Hello {
            protocol: PROTOCOL_VERSION,
            space: config.space,
        };
        let fail = |child: &mut Child, e: EvalError| {
            let _ = child.kill();
            let _ = child.wait();
            e
        };
        if let Err(e) = stdin.write_all(hello.to_line().as_bytes()).and_then(|_| stdin.flush()) {
            return Err(fail(&mut child, EvalError::Handshake(format!("cannot send hello: {e}"))));
        }
        let (capacity, evaluator_id) = match control_rx.recv_timeout(config.handshake_timeout) {
            Ok(Ok(Frame::Ready {
                protocol: Some(p), ..
            })) if p != PROTOCOL_VERSION => {
                let msg = format!("worker speaks protocol {p}, engine speaks {PROTOCOL_VERSION}");
                return Err(fail(&mut child, EvalError::Handshake(msg)));
            }
            Ok(Ok(Frame::Ready {
                capacity,
                evaluator_id,
                ..
            })) => (capacity.max(1), evaluator_id),
            Ok(Ok(Frame::Error { message, .. })) => {
                return Err(fail(&mut child, EvalError::Handshake(message)))
            }
            Ok(Ok(other)) => {
                let msg = format!("expected ready, got {other:?}");
                return Err(fail(&mut child, EvalError::Handshake(msg)));
            }
            Ok(Err(e)) => return Err(fail(&mut child, EvalError::Handshake(e.to_string()))),
            Err(RecvTimeoutError::Timeout) => {
                let msg = format!("no ready frame within {:?}", config.handshake_timeout);
                return Err(fail(&mut child, EvalError::Handshake(msg)));
            }
            Err(RecvTimeoutError::Disconnected) => {
                let msg = "worker exited during handshake".to_string();
                return Err(fail(&mut child, EvalError::Handshake(msg)));
            }
        };

        Ok(Worker {
            child: Mutex::new(child),
            stdin: Mutex::new(stdin),
            pending,
            alive,
            permits: Permits {
                free: Mutex::new(capacity),
                released: Condvar::new(),
            },
            capacity,
            evaluator_id,
        })
    }

    fn is_alive(&self) -> bool {
        self.alive.load(Ordering::SeqCst)
    }

    fn call(&self, id: u64, req: &EvalRequest, timeout: Duration) -> Result<EvalResponse, EvalError> {
        self.permits.acquire();
        let result = self.call_inner(id, req, timeout);
        self.permits.release();
        result
    }

    fn call_inner(&self, id: u64, req: &EvalRequest, timeout: Duration) -> Result<EvalResponse, EvalError> {
        let (tx, rx) = mpsc::channel();
        self.pending.lock().unwrap().insert(id, tx);
        if !self.is_alive() {
            self.pending.lock().unwrap().remove(&id);
            return Err(EvalError::Transport("worker has exited".into()));
        }
        let line = Frame::eval(id, req).to_line();
        let sent = {
            let mut stdin = self.stdin.lock().unwrap();
            stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush())
        };
        if let Err(e) = sent {
            self.pending.lock().unwrap().remove(&id);
            return Err(EvalError::Transport(format!("cannot write to worker: {e}")));
        }
        match rx.recv_timeout(timeout) {
            Ok(Ok(Frame::Result {
                miou_error_pct,
                latency_cycles,
                wall_time_ms,
                ..
            })) => Ok(EvalResponse {
                miou_error_pct,
                latency_cycles,
                evaluator_id: self.evaluator_id.clone(),
                wall_time_ms,
            }),
            Ok(Ok(Frame::Error { message, .. })) => Err(EvalError::Worker(message)),
            Ok(Ok(other)) => Err(EvalError::Protocol(format!("unexpected frame {other:?}"))),
            Ok(Err(e)) => Err(e),
            Err(RecvTimeoutError::Timeout) => {
                self.pending.lock().unwrap().remove(&id);
                Err(EvalError::Timeout { id, timeout })
            }
            Err(RecvTimeoutError::Disconnected) => {
                Err(EvalError::Transport("worker exited before answering".into()))
            }
        }
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        if let Ok(child) = self.child.get_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Evaluator backed by one or more worker subprocesses.
pub struct ExternalEvaluator {
    config: ExternalConfig,
    slots: Vec<Mutex<Arc<Worker>>>,
    next_id: AtomicU64,
    next_slot: AtomicUsize,
    id: String,
    capacity: usize,
}

impl ExternalEvaluator {
    /// Launches every worker and completes its handshake before returning.
    pub fn spawn(config: ExternalConfig) -> Result<Self, EvalError> {
        let workers = (0..config.workers.max(1))
            .map(|_| Worker::spawn(&config).map(Arc::new))
            .collect::<Result<Vec<_>, _>>()?;
        let id = workers[0].evaluator_id.clone();
        let capacity = workers.iter().map(|w| w.capacity).sum();
        Ok(ExternalEvaluator {
            config,
            slots: workers.into_iter().map(Mutex::new).collect(),
            next_id: AtomicU64::new(1),
            next_slot: AtomicUsize::new(0),
            id,
            capacity,
        })
    }

    fn worker(&self, slot: usize) -> Result<Arc<Worker>, EvalError> {
        let mut guard = self.slots[slot].lock().unwrap();
        if !guard.is_alive() {
            *guard = Arc::new(Worker::spawn(&self.config)?);
        }
        Ok(Arc::clone(&guard))
    }
}

impl Evaluator for ExternalEvaluator {
    fn id(&self) -> &str {
        &self.id
    }

    fn capacity(&self) -> usize {
        self.capacity
    }

    fn evaluate(&self, req: &EvalRequest) -> Result<EvalResponse, EvalError> {
        req.validate()?;
        let mut last = None;
        for _ in 0..=self.config.retries {
            let slot = self.next_slot.fetch_add(1, Ordering::Relaxed) % self.slots.len();
            let outcome = self.worker(slot).and_then(|w| {
                let id = self.next_id.fetch_add(1, Ordering::Relaxed);
                w.call(id, req, self.config.timeout)
            });
            match outcome {
                Ok(resp) => {
                    resp.check_against(req)?;
                    return Ok(resp);
                }
                Err(e) if e.is_transport() => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}
