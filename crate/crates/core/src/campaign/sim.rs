//! Discrete-event simulation of a campaign on one thread.
//!
//! Every node keeps its own [`VirtualClock`]. A store call costs one round
//! trip (two one-way latencies) on the caller's clock. Uploads made during a
//! task are applied to the store when they would arrive, so other nodes never
//! observe a seed before its discovery time plus one latency. The store and
//! the scheduler are co-located: update signals reach the scheduler as soon
//! as the upload is applied, and scheduler-side store work is free.

use std::cell::RefCell;
use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::rc::Rc;
use std::sync::{Arc, Mutex};

use crossbeam_channel::Receiver;
use log::{debug, warn};

use super::report::{CampaignReport, CampaignTotals, TaskRecord, WorkerSummary};
use super::{describe, seed_corpus, summarize_worker, CampaignConfig, CampaignError};
use crate::protocol::{Message, NodeRole};
use crate::scheduler::{Action, Input, Scheduler};
use crate::seedstore::{
    ActivateOutcome, CrashRecord, FuzzStatus, InProcessStore, PutOutcome, Seed, SeedId, SeedStore, StatusDelta,
    StoreAccess, StoreConfig, StoreError,
};
use crate::target::TargetHandle;
use crate::worker::{Clock, Evaluator, VirtualClock, Worker, WorkerConfig, WorkerError};

/// Cap on how many pending seeds the end-of-campaign drain evaluates per batch.
const DRAIN_BATCH: usize = 1024;

enum Upload {
    Seed(Seed, FuzzStatus),
    Crash(CrashRecord),
}

/// Store client for a simulated worker.
pub(crate) struct SimStore {
    inner: InProcessStore,
    clock: VirtualClock,
    latency_us: u64,
    outbox: Rc<RefCell<Vec<(u64, Upload)>>>,
}

impl SimStore {
    fn charge(&self) {
        self.clock.advance(2 * self.latency_us);
    }

    fn defer(&self, up: Upload) {
        let arrival = self.clock.now_us() + self.latency_us;
        self.outbox.borrow_mut().push((arrival, up));
        self.charge();
    }
}

impl StoreAccess for SimStore {
    fn put_seed(&mut self, seed: Seed, status: FuzzStatus) -> Result<PutOutcome, StoreError> {
        let id = seed.id;
        self.defer(Upload::Seed(seed, status));
        Ok(PutOutcome { id, fresh: true })
    }
    fn get_seed(&mut self, id: SeedId) -> Result<Seed, StoreError> {
        self.charge();
        self.inner.get_seed(id)
    }
    fn get_status(&mut self, id: SeedId) -> Result<FuzzStatus, StoreError> {
        self.charge();
        self.inner.get_status(id)
    }
    fn update_status(&mut self, id: SeedId, delta: StatusDelta) -> Result<FuzzStatus, StoreError> {
        self.charge();
        self.inner.update_status(id, delta)
    }
    fn pop_pending(&mut self, max: usize) -> Result<Vec<SeedId>, StoreError> {
        self.charge();
        self.inner.pop_pending(max)
    }
    fn activate(&mut self, id: SeedId, coverage_digest: [u8; 32]) -> Result<ActivateOutcome, StoreError> {
        self.charge();
        self.inner.activate(id, coverage_digest)
    }
    fn discard_seed(&mut self, id: SeedId) -> Result<(), StoreError> {
        self.charge();
        self.inner.discard_seed(id)
    }
    fn put_crash(&mut self, rec: CrashRecord) -> Result<bool, StoreError> {
        self.defer(Upload::Crash(rec));
        Ok(true)
    }
    fn list_active(&mut self, since: usize) -> Result<Vec<SeedId>, StoreError> {
        self.charge();
        self.inner.list_active(since)
    }
}

/// Write sink shared with the caller, used to capture the store log.
#[derive(Clone, Default)]
pub struct SharedLog(pub Arc<Mutex<Vec<u8>>>);

impl Write for SharedLog {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().expect("log lock").extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SimOptions {
    /// Keep the store's record log in [`SimRun::store_log`].
    pub capture_log: bool,
    /// Record fuzzing/non-fuzzing segments on every worker.
    pub record_segments: bool,
}

pub struct SimRun {
    pub report: CampaignReport,
    pub store: Arc<SeedStore>,
    pub store_log: Vec<u8>,
    /// Per-worker segment lists when requested, in worker order.
    pub segments: Vec<Vec<crate::worker::Segment>>,
}

enum Ev {
    ToScheduler(Input),
    ToWorker(usize, Message),
    EvalRetry(usize),
    Apply(Upload),
    Snapshot,
}

struct SimWorker {
    w: Worker<SimStore, VirtualClock>,
    clock: VirtualClock,
    outbox: Rc<RefCell<Vec<(u64, Upload)>>>,
    speed: f64,
    empty_polls: u32,
    done: bool,
}

struct Sim<'a> {
    cfg: &'a CampaignConfig,
    target: TargetHandle,
    latency_us: u64,
    eval_batch: usize,
    retry_us: u64,
    store: Arc<SeedStore>,
    local: InProcessStore,
    evaluator: Evaluator,
    signals: Receiver<SeedId>,
    sched: Scheduler,
    workers: Vec<SimWorker>,
    index: BTreeMap<String, usize>,
    events: BTreeMap<(u64, u64), Ev>,
    seq: u64,
    now: u64,
    tasks: Vec<TaskRecord>,
    snapshots: Vec<crate::scheduler::QueueSnapshot>,
    snapshot_every_us: u64,
}

/// Runs a simulated campaign to completion.
pub fn simulate(cfg: &CampaignConfig) -> Result<CampaignReport, CampaignError> {
    Ok(simulate_with(cfg, SimOptions::default())?.report)
}

pub fn simulate_with(cfg: &CampaignConfig, opts: SimOptions) -> Result<SimRun, CampaignError> {
    cfg.validate()?;
    let target = cfg.target_handle()?;
    let log = SharedLog::default();
    let mut store = SeedStore::new(StoreConfig::default());
    if opts.capture_log {
        store = store.with_log(Box::new(log.clone()));
    }
    let store = Arc::new(store);
    let signals = store.subscribe();
    let mut local = InProcessStore(store.clone());
    let mut sched_cfg = cfg.scheduler_config()?;
    sched_cfg.local_evaluator = true;
    let eval_batch = sched_cfg.eval_batch as usize;
    let retry_us = sched_cfg.retry_after_ms as u64 * 1000;

    let corpus = seed_corpus(&mut local, &target, &cfg.corpus_inputs(&target)?)?;

    let mut workers = Vec::with_capacity(cfg.workers);
    let mut index = BTreeMap::new();
    for (i, id) in cfg.worker_ids().into_iter().enumerate() {
        let speed = cfg.speed(i);
        let clock = VirtualClock::new(speed);
        let outbox = Rc::new(RefCell::new(Vec::new()));
        let store = SimStore {
            inner: InProcessStore(store.clone()),
            clock: clock.clone(),
            latency_us: cfg.latency_us,
            outbox: outbox.clone(),
        };
        let mut wc = WorkerConfig::new(&id, i as u64, cfg.seed);
        wc.accept_new_bucket = cfg.accept_new_bucket;
        wc.record_segments = opts.record_segments;
        index.insert(id, i);
        workers.push(SimWorker {
            w: Worker::new(wc, target.clone(), store, clock.clone()),
            clock,
            outbox,
            speed,
            empty_polls: 0,
            done: false,
        });
    }

    let mut sim = Sim {
        cfg,
        latency_us: cfg.latency_us,
        eval_batch,
        retry_us,
        evaluator: Evaluator::new(target.map_size, cfg.accept_new_bucket),
        target,
        store: store.clone(),
        local,
        signals,
        sched: Scheduler::new(sched_cfg),
        workers,
        index,
        events: BTreeMap::new(),
        seq: 0,
        now: 0,
        tasks: Vec::new(),
        snapshots: Vec::new(),
        snapshot_every_us: cfg.snapshot_every_ms.max(1) * 1000,
    };
    // corpus seeds are already Active; their signals are not uploads
    while sim.signals.try_recv().is_ok() {}
    for input in corpus {
        sim.scheduler(input)?;
    }
    for i in 0..sim.workers.len() {
        let sw = &mut sim.workers[i];
        sw.w.bootstrap()?;
        let t = sw.clock.now_us();
        sim.flush_outbox(i);
        sim.report_and(i, t, Message::RequestTask {
            worker_id: sim.worker_id(i),
        });
    }
    sim.push(0, Ev::Snapshot);
    sim.run()?;
    sim.drain()?;

    let mut segments = Vec::new();
    if opts.record_segments {
        for sw in &sim.workers {
            segments.push(sw.w.time().segments().map(|s| s.to_vec()).unwrap_or_default());
        }
    }
    let report = sim.finish();
    let store_log = std::mem::take(&mut *log.0.lock().expect("log lock"));
    Ok(SimRun {
        report,
        store,
        store_log,
        segments,
    })
}

impl Sim<'_> {
    fn push(&mut self, t: u64, ev: Ev) {
        self.events.insert((t, self.seq), ev);
        self.seq += 1;
    }

    fn worker_id(&self, i: usize) -> String {
        self.workers[i].w.id().to_string()
    }

    fn send_to_scheduler(&mut self, i: usize, sent_at: u64, msg: Message) {
        let from = self.worker_id(i);
        self.push(sent_at + self.latency_us, Ev::ToScheduler(Input::Worker { from, msg }));
    }

    /// StatusReport followed by `msg`, both sent at `t`.
    fn report_and(&mut self, i: usize, t: u64, msg: Message) {
        let report = Message::StatusReport {
            worker_id: self.worker_id(i),
            counters: self.workers[i].w.counters(),
        };
        self.send_to_scheduler(i, t, report);
        self.send_to_scheduler(i, t, msg);
    }

    fn flush_outbox(&mut self, i: usize) {
        let ups: Vec<_> = self.workers[i].outbox.borrow_mut().drain(..).collect();
        for (t, up) in ups {
            self.push(t, Ev::Apply(up));
        }
    }

    fn run(&mut self) -> Result<(), CampaignError> {
        while let Some(((t, _), ev)) = self.events.pop_first() {
            self.now = t;
            match ev {
                Ev::ToScheduler(input) => self.scheduler(input)?,
                Ev::ToWorker(i, msg) => self.on_worker_msg(i, msg)?,
                Ev::EvalRetry(i) => {
                    self.workers[i].clock.set(t.max(self.workers[i].clock.now_us()));
                    self.evaluate(i)?;
                }
                Ev::Apply(up) => {
                    match up {
                        Upload::Seed(seed, status) => {
                            if let Err(e) = self.store.put_seed(seed, status) {
                                warn!("simulated upload rejected: {e}");
                            }
                        }
                        Upload::Crash(rec) => {
                            self.store.put_crash(rec)?;
                        }
                    }
                    let ids: Vec<SeedId> = self.signals.try_iter().collect();
                    for id in ids {
                        self.scheduler(Input::UpdateSignal(id))?;
                    }
                }
                Ev::Snapshot => {
                    self.snapshots.push(self.sched.snapshot(t));
                    if !self.workers.iter().all(|w| w.done) {
                        self.push(t + self.snapshot_every_us, Ev::Snapshot);
                    }
                }
            }
        }
        Ok(())
    }

    /// Feeds `input` to the scheduler and carries out the resulting actions.
    fn scheduler(&mut self, input: Input) -> Result<(), CampaignError> {
        let mut work = VecDeque::from([input]);
        while let Some(input) = work.pop_front() {
            let actions = match self.sched.handle(self.now, input) {
                Ok(a) => a,
                Err(e) => {
                    warn!("scheduler: {e}");
                    continue;
                }
            };
            for a in actions {
                match a {
                    Action::Send { to, msg } => match self.index.get(&to) {
                        Some(&i) => self.push(self.now + self.latency_us, Ev::ToWorker(i, msg)),
                        None => warn!("no simulated worker {to}"),
                    },
                    Action::EvaluateLocally { max } => {
                        let ids = self.local.pop_pending(max as usize)?;
                        let rep = if ids.is_empty() {
                            Default::default()
                        } else {
                            self.evaluator
                                .evaluate_batch(&ids, &mut self.local, &self.target, self.now)?
                        };
                        work.push_back(Input::LocalEvaluated {
                            accepted: rep.accepted,
                            discarded: rep.discarded,
                            work_us: rep.work_us,
                        });
                    }
                    Action::Describe { seed_id, status } => {
                        work.push_back(describe(&mut self.local, &self.target, seed_id, status)?);
                    }
                    Action::SetFavored { seed_id, favored } => {
                        self.local.update_status(seed_id, StatusDelta::set_favored(favored))?;
                    }
                }
            }
        }
        Ok(())
    }

    fn on_worker_msg(&mut self, i: usize, msg: Message) -> Result<(), CampaignError> {
        let sw = &mut self.workers[i];
        if sw.done {
            return Ok(());
        }
        sw.clock.set(self.now.max(sw.clock.now_us()));
        let id = sw.w.id().to_string();
        match msg {
            Message::TaskAssignment { seed_id, energy } => {
                let start = sw.clock.now_us();
                match sw.w.fuzz_one(seed_id, energy) {
                    Ok(rep) => {
                        let end = sw.clock.now_us();
                        self.tasks.push(TaskRecord {
                            worker: id.clone(),
                            start_us: start,
                            end_us: end,
                            seed_id,
                            energy,
                            execs: rep.execs,
                            discoveries: rep.discoveries,
                            doublings: rep.doublings,
                            crashes: (rep.crashes.len() + rep.hangs.len()) as u64,
                        });
                    }
                    Err(WorkerError::Store(e @ (StoreError::NotFound(_) | StoreError::HashMismatch(_)))) => {
                        warn!("{id}: task {} abandoned: {e}", seed_id.short());
                    }
                    Err(e) => return Err(e.into()),
                }
                let t = self.workers[i].clock.now_us();
                self.flush_outbox(i);
                self.report_and(i, t, Message::RequestTask { worker_id: id });
            }
            Message::NoTaskAvailable { retry_after_ms } => {
                let t = sw.clock.now_us() + retry_after_ms as u64 * 1000;
                sw.clock.set(t);
                self.report_and(i, t, Message::RequestTask { worker_id: id });
            }
            Message::SetRole { role } => {
                sw.w.set_role(role);
                match role {
                    NodeRole::Evaluating => {
                        sw.empty_polls = 0;
                        self.evaluate(i)?;
                    }
                    NodeRole::Fuzzing => {
                        let t = sw.clock.now_us();
                        self.report_and(i, t, Message::RequestTask { worker_id: id });
                    }
                }
            }
            Message::Shutdown => {
                sw.w.flush_time();
                sw.done = true;
                let t = sw.clock.now_us();
                let report = Message::StatusReport {
                    worker_id: id,
                    counters: sw.w.counters(),
                };
                self.send_to_scheduler(i, t, report);
            }
            other => warn!("{id}: unexpected {}", other.name()),
        }
        Ok(())
    }

    fn evaluate(&mut self, i: usize) -> Result<(), CampaignError> {
        let id = self.worker_id(i);
        let batch = self.eval_batch;
        let sw = &mut self.workers[i];
        let (ids, rep) = sw.w.evaluate_pending(batch)?;
        let t = sw.clock.now_us();
        if !ids.is_empty() {
            sw.empty_polls = 0;
            self.flush_outbox(i);
            self.report_and(i, t, Message::SeedsEvaluated {
                worker_id: id,
                accepted: rep.accepted,
                discarded: rep.discarded,
                work_us: rep.work_us,
            });
            return Ok(());
        }
        sw.empty_polls += 1;
        if sw.empty_polls < 2 {
            self.push(t + self.retry_us, Ev::EvalRetry(i));
        } else {
            sw.empty_polls = 0;
            self.send_to_scheduler(i, t, Message::EvaluatorIdle { worker_id: id });
        }
        Ok(())
    }

    /// Evaluates whatever is still pending once every worker has stopped.
    fn drain(&mut self) -> Result<(), CampaignError> {
        loop {
            let ids = self.local.pop_pending(DRAIN_BATCH)?;
            if ids.is_empty() {
                break;
            }
            let rep = self
                .evaluator
                .evaluate_batch(&ids, &mut self.local, &self.target, self.now)?;
            debug!("final drain: {} accepted of {}", rep.accepted.len(), ids.len());
            for (id, status) in rep.accepted {
                let input = describe(&mut self.local, &self.target, id, status)?;
                self.sched.handle(self.now, input).ok();
            }
        }
        Ok(())
    }

    fn finish(mut self) -> CampaignReport {
        let end = self
            .workers
            .iter()
            .map(|w| w.clock.now_us())
            .max()
            .unwrap_or(0)
            .max(self.now);
        self.snapshots.push(self.sched.snapshot(end));
        let workers: Vec<WorkerSummary> = self
            .workers
            .iter()
            .map(|sw| summarize_worker(sw.w.id(), sw.speed, &sw.w.counters()))
            .collect();
        let totals = CampaignTotals {
            mode: "simulated".into(),
            target: self.target.spec(),
            workers: workers.len(),
            seed: self.cfg.seed,
            duration_us: end,
            total_execs: workers.iter().map(|w| w.execs).sum(),
            paths: self.sched.queue().len() as u64,
            new_seeds: workers.iter().map(|w| w.new_seeds).sum(),
            doubling_events: workers.iter().map(|w| w.doubling_events).sum(),
            crashes: self.store.crash_count(),
            hangs: self.store.hang_count(),
            overhead: super::compute_overhead(&workers).ok(),
            store: self.store.stats(),
            eval: self.sched.eval_summary(),
        };
        CampaignReport {
            config: self.cfg.clone(),
            totals,
            workers,
            tasks: self.tasks,
            snapshots: self.snapshots,
            crashes: self.store.crashes(),
        }
    }
}
