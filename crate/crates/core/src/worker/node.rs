//! Networked worker loop.

use std::thread;
use std::time::Duration;

use log::{info, warn};

use super::{RealClock, Worker, WorkerConfig, WorkerError};
use crate::protocol::{Connection, Message, NodeRole, ProtocolError, WorkerCounters};
use crate::seedstore::{RemoteStore, StoreError};
use crate::target::TargetHandle;

const BACKOFF_START_MS: u64 = 50;
const BACKOFF_MAX_MS: u64 = 2000;
const QUARANTINE_MS: u64 = 500;

#[derive(Clone, Debug)]
pub struct NodeConfig {
    pub worker: WorkerConfig,
    pub scheduler_addr: String,
    pub store_addr: String,
    pub target: TargetHandle,
    pub initial_role: NodeRole,
    pub eval_batch: u32,
    pub max_reconnects: u32,
}

impl NodeConfig {
    pub fn new(worker: WorkerConfig, scheduler_addr: &str, store_addr: &str, target: TargetHandle) -> Self {
        NodeConfig {
            worker,
            scheduler_addr: scheduler_addr.to_string(),
            store_addr: store_addr.to_string(),
            target,
            initial_role: NodeRole::Fuzzing,
            eval_batch: crate::scheduler::DEFAULT_EVAL_BATCH,
            max_reconnects: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeExit {
    pub counters: WorkerCounters,
    pub abandoned_tasks: u64,
    pub reconnects: u64,
}

/// Scheduler connection that reconnects with exponential backoff and
/// re-registers with the latest StatusReport.
struct SchedulerLink {
    addr: String,
    worker_id: String,
    conn: Option<Connection>,
    last_report: WorkerCounters,
    max_reconnects: u32,
    reconnects: u64,
}

impl SchedulerLink {
    fn connect(&mut self) -> Result<&mut Connection, WorkerError> {
        if self.conn.is_none() {
            let mut delay = BACKOFF_START_MS;
            let mut attempt = 0;
            loop {
                match Connection::connect(&self.addr) {
                    Ok(mut c) => {
                        c.send(&self.report_msg())?;
                        self.conn = Some(c);
                        break;
                    }
                    Err(e) if attempt < self.max_reconnects => {
                        warn!("{}: scheduler at {} unreachable ({e}), retry in {delay} ms", self.worker_id, self.addr);
                        attempt += 1;
                        thread::sleep(Duration::from_millis(delay));
                        delay = (delay * 2).min(BACKOFF_MAX_MS);
                    }
                    Err(e) => return Err(ProtocolError::Io(e).into()),
                }
            }
        }
        Ok(self.conn.as_mut().unwrap())
    }

    fn report_msg(&self) -> Message {
        Message::StatusReport {
            worker_id: self.worker_id.clone(),
            counters: self.last_report,
        }
    }

    fn report(&mut self, counters: WorkerCounters) -> Result<(), WorkerError> {
        self.last_report = counters;
        let msg = self.report_msg();
        self.with_retry(|c| c.send(&msg))
    }

    fn call(&mut self, msg: &Message) -> Result<Message, WorkerError> {
        self.with_retry(|c| c.call(msg))
    }

    fn with_retry<T>(&mut self, mut f: impl FnMut(&mut Connection) -> Result<T, ProtocolError>) -> Result<T, WorkerError> {
        let mut failures = 0;
        loop {
            let conn = self.connect()?;
            match f(conn) {
                Ok(v) => return Ok(v),
                Err(ProtocolError::Io(e)) if failures < self.max_reconnects => {
                    warn!("{}: scheduler connection lost: {e}", self.worker_id);
                    self.conn = None;
                    self.reconnects += 1;
                    failures += 1;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

fn connect_store(addr: &str, attempts: u32) -> Result<RemoteStore, WorkerError> {
    let mut delay = BACKOFF_START_MS;
    for _ in 0..attempts {
        match RemoteStore::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) => {
                warn!("store at {addr} unreachable ({e}), retry in {delay} ms");
                thread::sleep(Duration::from_millis(delay));
                delay = (delay * 2).min(BACKOFF_MAX_MS);
            }
        }
    }
    Ok(RemoteStore::connect(addr)?)
}

/// Runs a worker until the scheduler sends Shutdown.
pub fn run_node(cfg: NodeConfig) -> Result<NodeExit, WorkerError> {
    let id = cfg.worker.id.clone();
    let store = connect_store(&cfg.store_addr, cfg.max_reconnects)?;
    let mut w = Worker::new(cfg.worker.clone(), cfg.target.clone(), store, RealClock::new());
    w.set_role(cfg.initial_role);
    let mut link = SchedulerLink {
        addr: cfg.scheduler_addr.clone(),
        worker_id: id.clone(),
        conn: None,
        last_report: WorkerCounters::default(),
        max_reconnects: cfg.max_reconnects,
        reconnects: 0,
    };
    link.connect()?;
    let n = w.bootstrap()?;
    info!("{id}: bootstrapped {n} active seeds");

    let mut abandoned = 0;
    let mut empty_polls = 0;
    loop {
        let reply = match w.role() {
            NodeRole::Fuzzing => {
                link.report(w.counters())?;
                let reply = link.call(&Message::RequestTask { worker_id: id.clone() })?;
                match reply {
                    Message::TaskAssignment { seed_id, energy } => {
                        match w.fuzz_one(seed_id, energy) {
                            Ok(_) => {}
                            Err(WorkerError::Store(e @ (StoreError::NotFound(_) | StoreError::HashMismatch(_)))) => {
                                warn!("{id}: task {} abandoned: {e}", seed_id.short());
                                abandoned += 1;
                            }
                            Err(WorkerError::Target(e)) => {
                                warn!("{id}: target failure, quarantined: {e}");
                                abandoned += 1;
                                thread::sleep(Duration::from_millis(QUARANTINE_MS));
                            }
                            Err(e) => return Err(e),
                        }
                        continue;
                    }
                    Message::NoTaskAvailable { retry_after_ms } => {
                        thread::sleep(Duration::from_millis(retry_after_ms as u64));
                        continue;
                    }
                    other => other,
                }
            }
            NodeRole::Evaluating => match w.store_mut().eval_batch(&id, cfg.eval_batch)? {
                Ok(ids) => {
                    empty_polls = 0;
                    let rep = w.evaluate_batch(&ids)?;
                    link.report(w.counters())?;
                    link.call(&Message::SeedsEvaluated {
                        worker_id: id.clone(),
                        accepted: rep.accepted,
                        discarded: rep.discarded,
                        work_us: rep.work_us,
                    })?
                }
                Err(retry_after_ms) => {
                    empty_polls += 1;
                    if empty_polls < 2 {
                        thread::sleep(Duration::from_millis(retry_after_ms as u64));
                        continue;
                    }
                    empty_polls = 0;
                    link.call(&Message::EvaluatorIdle { worker_id: id.clone() })?
                }
            },
        };
        match reply {
            Message::SetRole { role } => {
                if role != w.role() {
                    info!("{id}: role -> {role}");
                }
                w.set_role(role);
            }
            Message::Shutdown => break,
            other => {
                return Err(WorkerError::Scheduler(format!("unexpected reply {}", other.name())));
            }
        }
    }

    w.flush_time();
    let counters = w.counters();
    if let Err(e) = link.report(counters) {
        warn!("{id}: final report not delivered: {e}");
    }
    info!("{id}: shut down after {} execs", counters.execs);
    Ok(NodeExit {
        counters,
        abandoned_tasks: abandoned,
        reconnects: link.reconnects,
    })
}
