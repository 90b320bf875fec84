//! Worker nodes: fuzz dispatched seeds with energy doubling, or deduplicate
//! pending seeds when switched to the evaluating role.
//!
//! [`Worker`] holds the per-node state and is driven either by the simulator
//! or by the networked loop in [`run_node`].

mod clock;
mod evaluator;
mod node;

use std::collections::HashSet;
use std::sync::Arc;

use log::debug;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::{CoverageError, CoverageMap, NoveltyResult};
use crate::mutation::{deterministic_mutants, havoc_stage_input, Stage, DEFAULT_MAX_INPUT_LEN};
use crate::protocol::{NodeRole, ProtocolError, WorkerCounters};
use crate::rng::{derive_seed, FuzzRng};
use crate::seedstore::{CrashRecord, FuzzStatus, LocalCache, Seed, SeedId, StatusDelta, StoreAccess, StoreError};
use crate::target::{ExecOutcome, TargetError, TargetHandle};

pub use clock::{Clock, RealClock, Segment, SegmentKind, TimeAccounting, VirtualClock};
pub use evaluator::{EvalReport, Evaluator};
pub use node::{run_node, NodeConfig, NodeExit};

/// A task's execution budget never grows past this multiple of its energy.
pub const MAX_ENERGY_MULTIPLIER: u64 = 100;

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("target: {0}")]
    Target(#[from] TargetError),
    #[error("coverage: {0}")]
    Coverage(#[from] CoverageError),
    #[error("protocol: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("scheduler: {0}")]
    Scheduler(String),
}

#[derive(Clone, Debug)]
pub struct WorkerConfig {
    pub id: String,
    /// Position among the campaign's workers; selects the rng stream.
    pub index: u64,
    pub master_seed: u64,
    pub max_input_len: usize,
    /// Keep inputs whose only novelty is a new hit-count bucket.
    pub accept_new_bucket: bool,
    pub record_segments: bool,
}

impl WorkerConfig {
    pub fn new(id: &str, index: u64, master_seed: u64) -> Self {
        WorkerConfig {
            id: id.to_string(),
            index,
            master_seed,
            max_input_len: DEFAULT_MAX_INPUT_LEN,
            accept_new_bucket: false,
            record_segments: false,
        }
    }
}

/// A new seed found during a task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discovery {
    pub seed_id: SeedId,
    /// 1-based execution index within the task.
    pub at_exec: u64,
    pub edges: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskReport {
    pub seed_id: Option<SeedId>,
    pub energy: u32,
    pub execs: u64,
    pub dry_runs: u64,
    pub discoveries: Vec<Discovery>,
    /// Execution indices after which the budget doubled.
    pub doublings: Vec<u64>,
    pub crashes: Vec<SeedId>,
    pub hangs: Vec<SeedId>,
    pub deterministic: bool,
}

impl TaskReport {
    pub fn doubling_events(&self) -> u64 {
        self.doublings.len() as u64
    }
}

pub struct Worker<S, C> {
    cfg: WorkerConfig,
    target: TargetHandle,
    store: S,
    clock: C,
    time: TimeAccounting,
    role: NodeRole,
    cache: LocalCache,
    known: HashSet<SeedId>,
    local_map: CoverageMap,
    scratch: CoverageMap,
    rng: FuzzRng,
    counters: WorkerCounters,
    evaluator: Option<Evaluator>,
}

impl<S: StoreAccess, C: Clock> Worker<S, C> {
    pub fn new(cfg: WorkerConfig, target: TargetHandle, store: S, clock: C) -> Self {
        let time = TimeAccounting::new(clock.now_us(), cfg.record_segments);
        let rng = FuzzRng::new(derive_seed(cfg.master_seed, cfg.index));
        Worker {
            local_map: CoverageMap::new(target.map_size),
            scratch: CoverageMap::new(target.map_size),
            cfg,
            target,
            store,
            clock,
            time,
            role: NodeRole::Fuzzing,
            cache: LocalCache::new(),
            known: HashSet::new(),
            rng,
            counters: WorkerCounters::default(),
            evaluator: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.cfg.id
    }

    pub fn config(&self) -> &WorkerConfig {
        &self.cfg
    }

    pub fn role(&self) -> NodeRole {
        self.role
    }

    pub fn set_role(&mut self, role: NodeRole) {
        self.role = role;
    }

    pub fn clock(&self) -> &C {
        &self.clock
    }

    pub fn store_mut(&mut self) -> &mut S {
        &mut self.store
    }

    pub fn cache(&self) -> &LocalCache {
        &self.cache
    }

    pub fn local_map(&self) -> &CoverageMap {
        &self.local_map
    }

    pub fn time(&self) -> &TimeAccounting {
        &self.time
    }

    /// Counters with time totals as of now.
    pub fn counters(&self) -> WorkerCounters {
        let (f, n) = self.time.totals(self.clock.now_us());
        WorkerCounters {
            fuzzing_us: f,
            non_fuzzing_us: n,
            ..self.counters
        }
    }

    pub fn flush_time(&mut self) {
        self.time.flush(self.clock.now_us());
    }

    fn enter(&mut self, kind: SegmentKind) {
        self.time.switch(self.clock.now_us(), kind);
    }

    /// Dry-runs every Active seed in the store into the local map.
    pub fn bootstrap(&mut self) -> Result<usize, WorkerError> {
        self.enter(SegmentKind::NonFuzzing);
        let ids = self.store.list_active(0)?;
        let mut n = 0;
        for id in ids {
            if self.known.contains(&id) {
                continue;
            }
            let seed = self.cache.get_or_fetch(id, &mut self.store)?;
            self.dry_run(&seed)?;
            n += 1;
        }
        Ok(n)
    }

    fn dry_run(&mut self, seed: &Seed) -> Result<(), WorkerError> {
        let s = self.target.execute_into(&seed.content, &mut self.scratch)?;
        self.clock.advance_exec(s.exec_time_us);
        self.local_map.merge_from(&self.scratch)?;
        self.known.insert(seed.id);
        self.counters.dry_runs += 1;
        Ok(())
    }

    /// Fuzzes one dispatched seed for `energy` executions, doubling the
    /// remaining budget whenever an execution reaches a new edge.
    pub fn fuzz_one(&mut self, seed_id: SeedId, energy: u32) -> Result<TaskReport, WorkerError> {
        let energy = energy.max(1);
        let mut report = TaskReport {
            seed_id: Some(seed_id),
            energy,
            ..Default::default()
        };
        self.counters.tasks += 1;
        self.enter(SegmentKind::NonFuzzing);
        let parent = self.store.update_status(seed_id, StatusDelta::fuzzed())?;
        let seed = self.cache.get_or_fetch(seed_id, &mut self.store)?;

        self.enter(SegmentKind::Fuzzing);
        if !self.known.contains(&seed_id) {
            self.dry_run(&seed)?;
            report.dry_runs += 1;
        }

        let mut plan_rng = FuzzRng::new(self.rng.next_u64());
        let stage = if parent.fuzz_count == 1 {
            Stage::Deterministic
        } else {
            Stage::Havoc
        };
        report.deterministic = stage == Stage::Deterministic;
        let partners: Vec<Arc<Seed>> = (0..self.cache.len())
            .map(|i| self.cache.nth(i))
            .filter(|s| s.id != seed_id)
            .cloned()
            .collect();
        let partners: Vec<&[u8]> = partners.iter().map(|s| s.content.as_slice()).collect();
        let mut det = (stage == Stage::Deterministic).then(|| deterministic_mutants(&seed.content));

        let cap = energy as u64 * MAX_ENERGY_MULTIPLIER;
        let mut budget = energy as u64;
        let mut done = 0u64;
        while done < budget {
            let input = match det.as_mut().and_then(|d| d.next()) {
                Some(m) => m,
                None => havoc_stage_input(&seed.content, &partners, &mut plan_rng, self.cfg.max_input_len),
            };
            let s = self.target.execute_into(&input, &mut self.scratch)?;
            self.clock.advance_exec(s.exec_time_us);
            done += 1;
            match s.outcome {
                ExecOutcome::Crash | ExecOutcome::Hang => {
                    let rec = CrashRecord::new(input, Some(seed_id), s.outcome, self.clock.now_us());
                    let id = rec.id;
                    self.enter(SegmentKind::NonFuzzing);
                    self.store.put_crash(rec)?;
                    self.enter(SegmentKind::Fuzzing);
                    if s.outcome == ExecOutcome::Crash {
                        report.crashes.push(id);
                    } else {
                        report.hangs.push(id);
                    }
                }
                ExecOutcome::Ok => {
                    if self.scratch.novelty_against(&self.local_map)? != NoveltyResult::NewEdge {
                        continue;
                    }
                    self.local_map.merge_from(&self.scratch)?;
                    let edges = self.scratch.count_edges() as u32;
                    let status = FuzzStatus::discovered(parent.depth + 1, edges, s.exec_time_us);
                    let new = Seed::new(input, Some(seed_id), self.clock.now_us(), &self.cfg.id);
                    let id = new.id;
                    self.enter(SegmentKind::NonFuzzing);
                    self.store.put_seed(new.clone(), status)?;
                    self.enter(SegmentKind::Fuzzing);
                    self.cache.insert(new);
                    self.known.insert(id);
                    report.discoveries.push(Discovery {
                        seed_id: id,
                        at_exec: done,
                        edges,
                    });
                    let doubled = (done + 2 * (budget - done)).min(cap);
                    if doubled > budget {
                        budget = doubled;
                        report.doublings.push(done);
                    }
                }
            }
        }
        self.enter(SegmentKind::NonFuzzing);

        report.execs = done;
        self.counters.execs += done;
        self.counters.new_seeds += report.discoveries.len() as u64;
        self.counters.doubling_events += report.doublings.len() as u64;
        self.counters.crashes += report.crashes.len() as u64;
        self.counters.hangs += report.hangs.len() as u64;
        debug!(
            "{}: {} x{} -> {} execs, {} new, {} doublings",
            self.cfg.id,
            seed_id.short(),
            energy,
            done,
            report.discoveries.len(),
            report.doublings.len()
        );
        Ok(report)
    }

    /// Pops up to `max` pending seeds and evaluates them.
    pub fn evaluate_pending(&mut self, max: usize) -> Result<(Vec<SeedId>, EvalReport), WorkerError> {
        self.enter(SegmentKind::NonFuzzing);
        let ids = self.store.pop_pending(max)?;
        if ids.is_empty() {
            return Ok((ids, EvalReport::default()));
        }
        let report = self.evaluate_batch(&ids)?;
        Ok((ids, report))
    }

    pub fn evaluate_batch(&mut self, ids: &[SeedId]) -> Result<EvalReport, WorkerError> {
        self.enter(SegmentKind::NonFuzzing);
        let accept_new_bucket = self.cfg.accept_new_bucket;
        let map_size = self.target.map_size;
        let ev = self
            .evaluator
            .get_or_insert_with(|| Evaluator::new(map_size, accept_new_bucket));
        let now = self.clock.now_us();
        let report = ev.evaluate_batch(ids, &mut self.store, &self.target, now)?;
        self.clock.advance_exec(report.work_us);
        self.counters.evaluated += (report.accepted.len() + report.discarded.len()) as u64;
        self.counters.accepted += report.accepted.len() as u64;
        Ok(report)
    }
}
