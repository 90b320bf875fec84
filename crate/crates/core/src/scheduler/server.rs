//! TCP front end for [`Scheduler`].
//!
//! One reader thread per worker connection feeds a channel; a single loop
//! thread owns the scheduler and writes replies. Store traffic happens on two
//! helper threads: one relays update signals from a store subscription, the
//! other (the assist) reconstructs accepted seeds, mirrors favored flags, and
//! runs the scheduler-local evaluator.

use std::collections::{BTreeMap, HashMap};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use log::{debug, error, info, warn};
use serde::{Deserialize, Serialize};

use super::{Action, DispatchRecord, EvalSummary, Input, QueueSnapshot, Scheduler, SchedulerConfig};
use crate::coverage::reconstruct;
use crate::protocol::{read_message, write_message, Message, WorkerCounters};
use crate::seedstore::{FuzzStatus, RemoteStore, SeedId, StatusDelta, StoreAccess, StoreError};
use crate::target::TargetHandle;
use crate::worker::Evaluator;

const TICK: Duration = Duration::from_millis(50);

enum Event {
    Opened(u64, TcpStream),
    Msg(u64, Message),
    Closed(u64),
    Signal(SeedId),
    Assist(Input),
    AssistFailed(String),
}

enum Job {
    Describe(SeedId, FuzzStatus),
    Evaluate(u32),
    SetFavored(SeedId, bool),
    Bootstrap,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ServerReport {
    pub duration_us: u64,
    pub dispatches: Vec<DispatchRecord>,
    pub workers: BTreeMap<String, WorkerCounters>,
    pub tasks: BTreeMap<String, u64>,
    pub snapshots: Vec<QueueSnapshot>,
    pub eval: EvalSummary,
    pub error: Option<String>,
}

pub struct SchedulerServer {
    addr: SocketAddr,
    handle: Option<JoinHandle<ServerReport>>,
}

impl SchedulerServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until every worker has been shut down.
    pub fn wait(mut self) -> ServerReport {
        self.handle
            .take()
            .and_then(|h| h.join().ok())
            .unwrap_or_else(|| ServerReport {
                error: Some("scheduler loop panicked".into()),
                ..Default::default()
            })
    }
}

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub scheduler: SchedulerConfig,
    pub store_addr: String,
    pub target: TargetHandle,
    /// Interval between queue snapshots.
    pub snapshot_every: Duration,
    /// Workers that must register before the campaign can end.
    pub expected_workers: usize,
}

/// Starts the scheduler on `listener`. The store must be reachable.
pub fn serve_scheduler(listener: TcpListener, cfg: ServerConfig) -> std::io::Result<SchedulerServer> {
    let addr = listener.local_addr()?;
    let (tx, rx) = unbounded();

    let signals = RemoteStore::connect(&cfg.store_addr)
        .and_then(RemoteStore::into_signal_stream)
        .map_err(to_io)?;
    let assist_store = RemoteStore::connect(&cfg.store_addr).map_err(to_io)?;

    {
        let tx = tx.clone();
        thread::Builder::new().name("sched-accept".into()).spawn(move || {
            let mut next = 0u64;
            for conn in listener.incoming() {
                let Ok(stream) = conn else { continue };
                let _ = stream.set_nodelay(true);
                let Ok(reader) = stream.try_clone() else { continue };
                let id = next;
                next += 1;
                if tx.send(Event::Opened(id, stream)).is_err() {
                    break;
                }
                let tx = tx.clone();
                thread::spawn(move || read_loop(id, reader, tx));
            }
        })?;
    }
    {
        let tx = tx.clone();
        let mut signals = signals;
        thread::Builder::new().name("sched-signals".into()).spawn(move || loop {
            match signals.recv_opt() {
                Ok(Some(Message::UpdateSignal { seed_id })) => {
                    if tx.send(Event::Signal(seed_id)).is_err() {
                        break;
                    }
                }
                Ok(Some(other)) => warn!("unexpected {} on signal stream", other.name()),
                Ok(None) | Err(_) => break,
            }
        })?;
    }
    let (job_tx, job_rx) = unbounded();
    {
        let tx = tx.clone();
        let target = cfg.target.clone();
        thread::Builder::new()
            .name("sched-assist".into())
            .spawn(move || run_assist(assist_store, target, job_rx, tx))?;
    }
    let _ = job_tx.send(Job::Bootstrap);

    let handle = thread::Builder::new()
        .name("sched-loop".into())
        .spawn(move || event_loop(cfg, rx, job_tx))?;
    Ok(SchedulerServer {
        addr,
        handle: Some(handle),
    })
}

fn to_io(e: StoreError) -> std::io::Error {
    match e {
        StoreError::Io(io) => io,
        other => std::io::Error::other(other.to_string()),
    }
}

fn read_loop(id: u64, mut stream: TcpStream, tx: Sender<Event>) {
    let mut reader = std::io::BufReader::new(&mut stream);
    loop {
        match read_message(&mut reader) {
            Ok(Some(m)) => {
                if tx.send(Event::Msg(id, m)).is_err() {
                    return;
                }
            }
            Ok(None) => break,
            Err(e) => {
                debug!("connection {id}: {e}");
                break;
            }
        }
    }
    let _ = tx.send(Event::Closed(id));
}

/// Store-side helper for the scheduler loop.
fn run_assist(mut store: RemoteStore, target: TargetHandle, jobs: Receiver<Job>, tx: Sender<Event>) {
    let mut evaluator = Evaluator::new(target.map_size, false);
    let origin = Instant::now();
    for job in jobs {
        let res: Result<Vec<Input>, String> = (|| match job {
            Job::Describe(id, status) => Ok(vec![describe(&mut store, &target, id, status)?]),
            Job::Bootstrap => {
                let ids = store.list_active(0).map_err(|e| e.to_string())?;
                let mut out = Vec::with_capacity(ids.len());
                for id in ids {
                    let status = store.get_status(id).map_err(|e| e.to_string())?;
                    out.push(describe(&mut store, &target, id, status)?);
                }
                info!("scheduler queue bootstrapped with {} seeds", out.len());
                Ok(out)
            }
            Job::SetFavored(id, favored) => {
                store
                    .update_status(id, StatusDelta::set_favored(favored))
                    .map_err(|e| e.to_string())?;
                Ok(vec![])
            }
            Job::Evaluate(max) => {
                let ids = store.pop_pending(max as usize).map_err(|e| e.to_string())?;
                let now = origin.elapsed().as_micros() as u64;
                let rep = if ids.is_empty() {
                    Default::default()
                } else {
                    evaluator
                        .evaluate_batch(&ids, &mut store, &target, now)
                        .map_err(|e| e.to_string())?
                };
                Ok(vec![Input::LocalEvaluated {
                    accepted: rep.accepted,
                    discarded: rep.discarded,
                    work_us: rep.work_us,
                }])
            }
        })();
        let events = match res {
            Ok(inputs) => inputs.into_iter().map(Event::Assist).collect(),
            Err(e) => vec![Event::AssistFailed(e)],
        };
        for ev in events {
            if tx.send(ev).is_err() {
                return;
            }
        }
    }
}

fn describe(store: &mut RemoteStore, target: &TargetHandle, id: SeedId, status: FuzzStatus) -> Result<Input, String> {
    let seed = store.get_seed(id).map_err(|e| e.to_string())?;
    let r = reconstruct(&seed.content, target).map_err(|e| e.to_string())?;
    Ok(Input::SeedReady {
        seed_id: id,
        status,
        discovered_at: seed.discovered_at,
        len: seed.content.len(),
        edges: r.coverage.edges(),
    })
}

fn event_loop(cfg: ServerConfig, rx: Receiver<Event>, jobs: Sender<Job>) -> ServerReport {
    let start = Instant::now();
    let now = || start.elapsed().as_micros() as u64;
    let mut sched = Scheduler::new(cfg.scheduler.clone());
    let mut streams: HashMap<u64, TcpStream> = HashMap::new();
    let mut conn_worker: HashMap<u64, String> = HashMap::new();
    let mut worker_conn: HashMap<String, u64> = HashMap::new();
    let mut snapshots = Vec::new();
    let mut next_snapshot = Duration::ZERO;
    let mut error = None;

    loop {
        let ev = match rx.recv_timeout(TICK) {
            Ok(ev) => Some(ev),
            Err(RecvTimeoutError::Timeout) => None,
            Err(RecvTimeoutError::Disconnected) => break,
        };
        if start.elapsed() >= next_snapshot {
            snapshots.push(sched.snapshot(now()));
            next_snapshot += cfg.snapshot_every;
        }
        let input = match ev {
            None => {
                if !sched.is_stopping() && sched.budget_reached(now()) {
                    sched.stop();
                }
                None
            }
            Some(Event::Opened(id, stream)) => {
                streams.insert(id, stream);
                None
            }
            Some(Event::Msg(id, msg)) => {
                let claimed = msg_worker(&msg);
                let from = match (conn_worker.get(&id), claimed) {
                    (Some(w), _) => w.clone(),
                    (None, Some(w)) => {
                        conn_worker.insert(id, w.clone());
                        worker_conn.insert(w.clone(), id);
                        w
                    }
                    (None, None) => {
                        warn!("connection {id} sent {} before identifying", msg.name());
                        continue;
                    }
                };
                Some(Input::Worker { from, msg })
            }
            Some(Event::Closed(id)) => {
                streams.remove(&id);
                match conn_worker.remove(&id) {
                    Some(w) if worker_conn.get(&w) == Some(&id) => {
                        worker_conn.remove(&w);
                        Some(Input::WorkerGone(w))
                    }
                    _ => None,
                }
            }
            Some(Event::Signal(id)) => Some(Input::UpdateSignal(id)),
            Some(Event::Assist(input)) => Some(input),
            Some(Event::AssistFailed(e)) => {
                error!("scheduler assist: {e}");
                error = Some(e);
                sched.stop();
                None
            }
        };
        if let Some(input) = input {
            match sched.handle(now(), input) {
                Ok(actions) => {
                    for a in actions {
                        match a {
                            Action::Send { to, msg } => {
                                let sent = worker_conn
                                    .get(&to)
                                    .and_then(|c| streams.get_mut(c))
                                    .map(|s| write_message(s, &msg));
                                if !matches!(sent, Some(Ok(()))) {
                                    warn!("could not deliver {} to {to}", msg.name());
                                }
                            }
                            Action::EvaluateLocally { max } => {
                                let _ = jobs.send(Job::Evaluate(max));
                            }
                            Action::Describe { seed_id, status } => {
                                let _ = jobs.send(Job::Describe(seed_id, status));
                            }
                            Action::SetFavored { seed_id, favored } => {
                                let _ = jobs.send(Job::SetFavored(seed_id, favored));
                            }
                        }
                    }
                }
                Err(e) => warn!("scheduler: {e}"),
            }
        }
        if sched.is_stopping()
            && sched.all_finished()
            && sched.workers().len() >= cfg.expected_workers
            && worker_conn.is_empty()
        {
            break;
        }
    }
    snapshots.push(sched.snapshot(now()));
    info!("scheduler loop done: {} dispatches", sched.dispatches().len());
    ServerReport {
        duration_us: now(),
        dispatches: sched.dispatches().to_vec(),
        workers: sched.workers().iter().map(|(k, w)| (k.clone(), w.counters)).collect(),
        tasks: sched.workers().iter().map(|(k, w)| (k.clone(), w.tasks)).collect(),
        snapshots,
        eval: sched.eval_summary(),
        error,
    }
}

fn msg_worker(msg: &Message) -> Option<String> {
    match msg {
        Message::RequestTask { worker_id }
        | Message::StatusReport { worker_id, .. }
        | Message::SeedsEvaluated { worker_id, .. }
        | Message::EvaluatorIdle { worker_id } => Some(worker_id.clone()),
        _ => None,
    }
}
