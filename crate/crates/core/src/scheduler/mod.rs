//! The main node: prioritized seed queue, FIFO task dispatch, energy
//! assignment, and evaluator-pool control.
//!
//! [`Scheduler`] is a pure state machine. It consumes [`Input`]s stamped with
//! campaign-clock time and returns [`Action`]s; the simulator and the TCP
//! server both drive it. It never talks to the store itself: seed metadata
//! arrives either in `SeedsEvaluated` reports or as [`Input::SeedReady`] from
//! the assist, which recomputes the covered edge list by dry-running the seed.

mod eval;
mod queue;
mod score;
mod server;

use std::collections::{BTreeMap, VecDeque};

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Message, NodeRole, WorkerCounters};
use crate::seedstore::{FuzzStatus, SeedId};

pub use eval::{eval_node_target, EvalControl, BOOTSTRAP_SPEED, SPEED_HALF_LIFE};
pub use queue::{Dispatch, FavoredChange, QueueError, SeedQueue, SeedQueueEntry};
pub use score::{
    coverage_factor_centi, depth_factor, handicap_factor, perform_score, speed_factor_milli,
    QueueAggregates, BASE_SCORE, MAX_ENERGY, MIN_ENERGY,
};
pub use server::{serve_scheduler, SchedulerServer, ServerConfig, ServerReport};

pub const DEFAULT_THRESHOLD: u64 = 1000;
pub const DEFAULT_MIN_EVAL_NODES: usize = 2;
pub const DEFAULT_EVAL_CAP_DIVISOR: u64 = 2;
pub const DEFAULT_EVAL_BATCH: u32 = 64;
pub const DEFAULT_RETRY_AFTER_MS: u32 = 100;

/// Campaign budget, checked before every dispatch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// Total executions summed over worker reports.
    Execs(u64),
    /// Campaign-clock seconds.
    Seconds(u64),
}

impl Budget {
    pub fn is_positive(&self) -> bool {
        match *self {
            Budget::Execs(n) | Budget::Seconds(n) => n > 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DispatchPolicy {
    /// Any worker gets the global queue head.
    RequestResponse,
    /// Each worker only fuzzes seeds whose highest covered edge falls in its
    /// fixed slice of the bitmap.
    StaticPartition { regions: usize, map_size: usize },
}

#[derive(Clone, Debug)]
pub struct SchedulerConfig {
    pub threshold: u64,
    pub min_eval_nodes: usize,
    pub eval_cap_divisor: u64,
    pub eval_batch: u32,
    pub retry_after_ms: u32,
    pub policy: DispatchPolicy,
    pub budget: Budget,
    /// Evaluate pending seeds on the scheduler when no worker is evaluating.
    pub local_evaluator: bool,
    /// Worker ids in configuration order; static-partition regions follow it.
    pub workers: Vec<String>,
}

impl SchedulerConfig {
    pub fn new(budget: Budget, workers: Vec<String>) -> Self {
        SchedulerConfig {
            threshold: DEFAULT_THRESHOLD,
            min_eval_nodes: DEFAULT_MIN_EVAL_NODES,
            eval_cap_divisor: DEFAULT_EVAL_CAP_DIVISOR,
            eval_batch: DEFAULT_EVAL_BATCH,
            retry_after_ms: DEFAULT_RETRY_AFTER_MS,
            policy: DispatchPolicy::RequestResponse,
            budget,
            local_evaluator: true,
            workers,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Input {
    Worker { from: String, msg: Message },
    UpdateSignal(SeedId),
    /// An accepted seed with its reconstructed edge list.
    SeedReady {
        seed_id: SeedId,
        status: FuzzStatus,
        discovered_at: u64,
        len: usize,
        edges: Vec<u32>,
    },
    /// Result of an [`Action::EvaluateLocally`] batch.
    LocalEvaluated {
        accepted: Vec<(SeedId, FuzzStatus)>,
        discarded: Vec<SeedId>,
        work_us: u64,
    },
    WorkerGone(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Send { to: String, msg: Message },
    /// Run one evaluation batch on the scheduler's own evaluator.
    EvaluateLocally { max: u32 },
    /// Reconstruct an accepted seed and answer with [`Input::SeedReady`].
    Describe { seed_id: SeedId, status: FuzzStatus },
    /// Mirror a favored-flag change into the store.
    SetFavored { seed_id: SeedId, favored: bool },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchedulerError {
    #[error("message from unregistered worker {0:?}")]
    UnknownWorker(String),
    #[error("worker {from:?} sent a message for {claimed:?}")]
    WorkerMismatch { from: String, claimed: String },
    #[error("unexpected message {0} at the scheduler")]
    Unexpected(&'static str),
    #[error("queue: {0}")]
    Queue(#[from] QueueError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchRecord {
    pub time_us: u64,
    pub worker: String,
    pub seed_id: SeedId,
    pub energy: u32,
    pub fuzz_count: u64,
}

/// Scheduler-side view of campaign progress at one instant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueSnapshot {
    pub time_us: u64,
    /// Active seeds in the queue.
    pub paths: u64,
    pub favored: u64,
    pub pending: u64,
    pub eval_nodes: u64,
    pub total_execs: u64,
    pub cycles: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub signals: u64,
    pub total_evaluated: u64,
    pub unique_count: u64,
    pub evaluate_speed: f64,
    pub adjustments: u64,
    pub saturated_adjustments: u64,
}

#[derive(Clone, Debug, Default)]
pub struct WorkerInfo {
    pub role: Option<NodeRole>,
    pub counters: WorkerCounters,
    /// Energy of the task currently held, 0 when idle.
    pub outstanding_energy: u32,
    pub pending_role: Option<NodeRole>,
    pub tasks: u64,
    pub shut_down: bool,
    pub gone: bool,
}

impl WorkerInfo {
    fn is_fuzzing(&self) -> bool {
        self.role != Some(NodeRole::Evaluating)
    }
}

pub struct Scheduler {
    cfg: SchedulerConfig,
    queue: SeedQueue,
    requests: VecDeque<String>,
    workers: BTreeMap<String, WorkerInfo>,
    eval: EvalControl,
    local_busy: bool,
    stopping: bool,
    dispatches: Vec<DispatchRecord>,
}

impl Scheduler {
    pub fn new(cfg: SchedulerConfig) -> Self {
        Scheduler {
            cfg,
            queue: SeedQueue::new(),
            requests: VecDeque::new(),
            workers: BTreeMap::new(),
            eval: EvalControl::default(),
            local_busy: false,
            stopping: false,
            dispatches: Vec::new(),
        }
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.cfg
    }

    pub fn queue(&self) -> &SeedQueue {
        &self.queue
    }

    pub fn eval_control(&self) -> &EvalControl {
        &self.eval
    }

    pub fn workers(&self) -> &BTreeMap<String, WorkerInfo> {
        &self.workers
    }

    pub fn dispatches(&self) -> &[DispatchRecord] {
        &self.dispatches
    }

    pub fn total_execs(&self) -> u64 {
        self.workers.values().map(|w| w.counters.execs).sum()
    }

    pub fn budget_reached(&self, now_us: u64) -> bool {
        match self.cfg.budget {
            Budget::Execs(n) => self.total_execs() >= n,
            Budget::Seconds(s) => now_us >= s.saturating_mul(1_000_000),
        }
    }

    pub fn is_stopping(&self) -> bool {
        self.stopping
    }

    /// Stop dispatching; every worker gets Shutdown at its next request.
    pub fn stop(&mut self) {
        if !self.stopping {
            info!("scheduler stopping after {} dispatches", self.dispatches.len());
        }
        self.stopping = true;
    }

    /// Every registered worker has been shut down or disconnected.
    pub fn all_finished(&self) -> bool {
        !self.workers.is_empty() && self.workers.values().all(|w| w.shut_down || w.gone)
    }

    pub fn snapshot(&self, now_us: u64) -> QueueSnapshot {
        QueueSnapshot {
            time_us: now_us,
            paths: self.queue.len() as u64,
            favored: self.queue.favored_count() as u64,
            pending: self.eval.pending(),
            eval_nodes: self.eval.current_eval_nodes.len() as u64,
            total_execs: self.total_execs(),
            cycles: self.queue.cycles(),
        }
    }

    pub fn eval_summary(&self) -> EvalSummary {
        EvalSummary {
            signals: self.eval.signals,
            total_evaluated: self.eval.total_evaluated,
            unique_count: self.eval.unique_count,
            evaluate_speed: self.eval.evaluate_speed,
            adjustments: self.eval.adjustments,
            saturated_adjustments: self.eval.saturated_adjustments,
        }
    }

    pub fn local_evaluator_busy(&self) -> bool {
        self.local_busy
    }

    pub fn handle(&mut self, now_us: u64, input: Input) -> Result<Vec<Action>, SchedulerError> {
        if !self.stopping && self.budget_reached(now_us) {
            self.stop();
        }
        let mut out = Vec::new();
        match input {
            Input::Worker { from, msg } => self.on_message(now_us, from, msg, &mut out)?,
            Input::UpdateSignal(_) => self.on_update_signal(&mut out),
            Input::SeedReady {
                seed_id,
                status,
                discovered_at,
                len,
                edges,
            } => {
                for ch in self.queue.update_queue(seed_id, status, discovered_at, len, edges)? {
                    out.push(Action::SetFavored {
                        seed_id: ch.seed_id,
                        favored: ch.favored,
                    });
                }
            }
            Input::LocalEvaluated {
                accepted,
                discarded,
                work_us,
            } => {
                self.local_busy = false;
                let n = (accepted.len() + discarded.len()) as u64;
                self.record_evaluated(accepted, discarded.len(), work_us, &mut out);
                if n > 0 {
                    self.maybe_evaluate_locally(&mut out);
                }
            }
            Input::WorkerGone(id) => {
                if let Some(w) = self.workers.get_mut(&id) {
                    w.gone = true;
                    w.outstanding_energy = 0;
                }
                self.requests.retain(|r| *r != id);
                self.eval.current_eval_nodes.remove(&id);
                self.maybe_evaluate_locally(&mut out);
            }
        }
        self.drain_requests(now_us, &mut out);
        Ok(out)
    }

    fn worker_mut(&mut self, id: &str) -> Result<&mut WorkerInfo, SchedulerError> {
        self.workers
            .get_mut(id)
            .ok_or_else(|| SchedulerError::UnknownWorker(id.to_string()))
    }

    fn check_sender(from: &str, claimed: &str) -> Result<(), SchedulerError> {
        if from != claimed {
            return Err(SchedulerError::WorkerMismatch {
                from: from.to_string(),
                claimed: claimed.to_string(),
            });
        }
        Ok(())
    }

    fn send(out: &mut Vec<Action>, to: &str, msg: Message) {
        out.push(Action::Send { to: to.to_string(), msg });
    }

    fn on_message(
        &mut self,
        _now_us: u64,
        from: String,
        msg: Message,
        out: &mut Vec<Action>,
    ) -> Result<(), SchedulerError> {
        match msg {
            Message::StatusReport { worker_id, counters } => {
                Self::check_sender(&from, &worker_id)?;
                let w = self.workers.entry(worker_id).or_default();
                w.counters = counters;
                w.gone = false;
            }
            Message::RequestTask { worker_id } => {
                Self::check_sender(&from, &worker_id)?;
                let w = self.worker_mut(&worker_id)?;
                w.outstanding_energy = 0;
                w.role = Some(NodeRole::Fuzzing);
                self.eval.current_eval_nodes.remove(&worker_id);
                if !self.requests.contains(&worker_id) {
                    self.requests.push_back(worker_id);
                }
            }
            Message::SeedsEvaluated {
                worker_id,
                accepted,
                discarded,
                work_us,
            } => {
                Self::check_sender(&from, &worker_id)?;
                let stopping = self.stopping;
                let w = self.worker_mut(&worker_id)?;
                w.role = Some(NodeRole::Evaluating);
                let reply = if stopping {
                    w.shut_down = true;
                    Message::Shutdown
                } else if w.pending_role.take() == Some(NodeRole::Fuzzing) {
                    w.role = Some(NodeRole::Fuzzing);
                    Message::SetRole { role: NodeRole::Fuzzing }
                } else {
                    Message::SetRole { role: NodeRole::Evaluating }
                };
                match reply {
                    Message::SetRole { role: NodeRole::Evaluating } => {
                        self.eval.current_eval_nodes.insert(worker_id.clone());
                    }
                    _ => {
                        self.eval.current_eval_nodes.remove(&worker_id);
                    }
                }
                self.record_evaluated(accepted, discarded.len(), work_us, out);
                Self::send(out, &worker_id, reply);
                self.maybe_evaluate_locally(out);
            }
            Message::EvaluatorIdle { worker_id } => {
                Self::check_sender(&from, &worker_id)?;
                let stopping = self.stopping;
                let w = self.worker_mut(&worker_id)?;
                w.pending_role = None;
                let reply = if stopping {
                    w.shut_down = true;
                    Message::Shutdown
                } else {
                    w.role = Some(NodeRole::Fuzzing);
                    Message::SetRole { role: NodeRole::Fuzzing }
                };
                self.eval.current_eval_nodes.remove(&worker_id);
                debug!("{worker_id} idle as evaluator, back to fuzzing");
                Self::send(out, &worker_id, reply);
                self.maybe_evaluate_locally(out);
            }
            Message::UpdateSignal { .. } => self.on_update_signal(out),
            other => return Err(SchedulerError::Unexpected(other.name())),
        }
        Ok(())
    }

    fn record_evaluated(
        &mut self,
        accepted: Vec<(SeedId, FuzzStatus)>,
        discarded: usize,
        work_us: u64,
        out: &mut Vec<Action>,
    ) {
        let n = (accepted.len() + discarded) as u64;
        self.eval.record_batch(n, accepted.len() as u64, work_us);
        for (seed_id, status) in accepted {
            out.push(Action::Describe { seed_id, status });
        }
    }

    fn on_update_signal(&mut self, out: &mut Vec<Action>) {
        self.eval.signals += 1;
        self.eval.updates_since_adjust += 1;
        if self.eval.updates_since_adjust >= self.cfg.threshold {
            self.adjust_eval_nodes();
        }
        self.maybe_evaluate_locally(out);
    }

    fn maybe_evaluate_locally(&mut self, out: &mut Vec<Action>) {
        if self.cfg.local_evaluator
            && !self.local_busy
            && self.eval.current_eval_nodes.is_empty()
            && self.eval.pending() > 0
        {
            self.local_busy = true;
            out.push(Action::EvaluateLocally {
                max: self.cfg.eval_batch,
            });
        }
    }

    /// Evaluators after all outstanding role changes land.
    fn effective_evaluators(&self) -> Vec<String> {
        self.workers
            .iter()
            .filter(|(_, w)| !w.gone && !w.shut_down)
            .filter(|(_, w)| match w.pending_role {
                Some(r) => r == NodeRole::Evaluating,
                None => w.role == Some(NodeRole::Evaluating),
            })
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Recomputes the evaluator target and schedules role changes. Changes
    /// take effect at each worker's next task boundary.
    pub fn adjust_eval_nodes(&mut self) -> usize {
        self.eval.updates_since_adjust = 0;
        self.eval.adjustments += 1;
        let target = eval_node_target(
            self.eval.pending(),
            self.eval.evaluate_speed,
            self.eval.total_evaluated,
            self.eval.unique_count,
            self.cfg.min_eval_nodes,
            self.cfg.eval_cap_divisor,
        );
        let live = self.workers.values().filter(|w| !w.gone && !w.shut_down).count();
        let cap = live / 2;
        let n = if target > cap {
            self.eval.saturated_adjustments += 1;
            warn!("evaluator target {target} saturated at {cap} of {live} workers");
            cap
        } else {
            target
        };
        let current = self.effective_evaluators();
        if n > current.len() {
            let mut fuzzers: Vec<(u32, String)> = self
                .workers
                .iter()
                .filter(|(_, w)| !w.gone && !w.shut_down && w.is_fuzzing() && w.pending_role.is_none())
                .map(|(id, w)| (w.outstanding_energy, id.clone()))
                .collect();
            fuzzers.sort();
            for (_, id) in fuzzers.into_iter().take(n - current.len()) {
                self.workers.get_mut(&id).unwrap().pending_role = Some(NodeRole::Evaluating);
            }
        } else {
            for id in current.iter().rev().take(current.len() - n) {
                let w = self.workers.get_mut(id).unwrap();
                if w.pending_role == Some(NodeRole::Evaluating) {
                    // never started evaluating
                    w.pending_role = None;
                } else {
                    w.pending_role = Some(NodeRole::Fuzzing);
                }
            }
        }
        info!(
            "evaluator pool: target {n} (formula {target}), pending {}, speed {:.1}/s",
            self.eval.pending(),
            self.eval.evaluate_speed
        );
        n
    }

    fn region_of(&self, worker: &str) -> usize {
        match self.cfg.workers.iter().position(|w| w == worker) {
            Some(i) => i,
            None => {
                self.cfg.workers.len() + self.workers.keys().position(|w| w == worker).unwrap_or(0)
            }
        }
    }

    fn pick_for(&self, worker: &str) -> Option<SeedId> {
        match self.cfg.policy {
            DispatchPolicy::RequestResponse => self.queue.peek_eligible(|_| true),
            DispatchPolicy::StaticPartition { regions, map_size } => {
                let regions = regions.max(1);
                let mine = self.region_of(worker) % regions;
                self.queue.peek_eligible(|e| {
                    let edge = e.dominant_edge().unwrap_or(0) as usize;
                    edge * regions / map_size.max(1) == mine
                })
            }
        }
    }

    fn drain_requests(&mut self, now_us: u64, out: &mut Vec<Action>) {
        while let Some(id) = self.requests.pop_front() {
            let w = self.workers.get_mut(&id).expect("registered");
            if self.stopping {
                w.shut_down = true;
                Self::send(out, &id, Message::Shutdown);
                continue;
            }
            if w.pending_role == Some(NodeRole::Evaluating) {
                w.pending_role = None;
                w.role = Some(NodeRole::Evaluating);
                self.eval.current_eval_nodes.insert(id.clone());
                Self::send(out, &id, Message::SetRole { role: NodeRole::Evaluating });
                continue;
            }
            w.pending_role = None;
            match self.pick_for(&id) {
                Some(seed_id) => {
                    let d = self.queue.dispatch(seed_id).expect("picked from queue");
                    let w = self.workers.get_mut(&id).unwrap();
                    w.outstanding_energy = d.energy;
                    w.tasks += 1;
                    self.dispatches.push(DispatchRecord {
                        time_us: now_us,
                        worker: id.clone(),
                        seed_id,
                        energy: d.energy,
                        fuzz_count: d.fuzz_count,
                    });
                    Self::send(
                        out,
                        &id,
                        Message::TaskAssignment {
                            seed_id,
                            energy: d.energy,
                        },
                    );
                }
                None => {
                    Self::send(
                        out,
                        &id,
                        Message::NoTaskAvailable {
                            retry_after_ms: self.cfg.retry_after_ms,
                        },
                    );
                }
            }
        }
    }
}
