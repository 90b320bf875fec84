//! Campaign orchestration: configuration, the simulated and distributed
//! runners, the serial and static-partition baselines, and reports.

mod config;
mod distributed;
mod report;
mod serial;
mod sim;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::WorkerCounters;
use crate::scheduler::Input;
use crate::seedstore::{FuzzStatus, Seed, SeedId, StoreAccess, StoreError};
use crate::target::{ExecOutcome, TargetError, TargetHandle};
use crate::worker::WorkerError;

pub use config::{CampaignConfig, ConfigError, Mode, Policy};
pub use distributed::{
    run_distributed, run_node_command, Launcher, NodeCommand, NodeKind, DistributedOutcome,
};
pub use report::{
    compute_overhead, overhead_fraction, CampaignReport, CampaignTotals, LogRecord, ReportError, TaskRecord,
    WorkerSummary,
};
pub use serial::run_serial;
pub use sim::{simulate, simulate_with, SharedLog, SimOptions, SimRun};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("worker: {0}")]
    Worker(#[from] WorkerError),
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("target: {0}")]
    Target(#[from] TargetError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("no usable corpus input")]
    EmptyCorpus,
    #[error("node {node}: {msg}")]
    Node { node: String, msg: String },
}

/// Runs a campaign in the configured mode.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignReport, CampaignError> {
    match cfg.mode {
        Mode::Simulated => simulate(cfg),
        Mode::Distributed => Ok(run_distributed(cfg, &Launcher::Threads)?.report),
    }
}

/// Runs the serial single-instance baseline under the same budget.
pub fn run_baseline_serial(cfg: &CampaignConfig) -> Result<CampaignReport, CampaignError> {
    run_serial(cfg)
}

/// Simulated campaign where each worker only receives seeds whose dominant
/// edge lies in its own slice of the coverage map.
pub fn run_baseline_static_partition(cfg: &CampaignConfig) -> Result<CampaignReport, CampaignError> {
    let cfg = CampaignConfig {
        policy: Policy::StaticPartition,
        mode: Mode::Simulated,
        ..cfg.clone()
    };
    simulate(&cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperLinearRow {
    pub seed: u64,
    pub parallel_doublings: u64,
    pub serial_doublings: u64,
    pub parallel_execs: u64,
    pub serial_execs: u64,
    pub parallel_paths: u64,
    pub serial_paths: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperLinearResult {
    pub workers: usize,
    pub budget_execs: Option<u64>,
    pub rows: Vec<SuperLinearRow>,
    pub median_parallel: f64,
    pub median_serial: f64,
    /// `median_parallel / median_serial`; infinite when the serial median is 0.
    pub ratio: f64,
}

/// Doubling events of a `cfg.workers`-worker simulated campaign against the
/// serial baseline at the same budget, once per rng seed.
pub fn experiment_super_linear(cfg: &CampaignConfig, seeds: &[u64]) -> Result<SuperLinearResult, CampaignError> {
    if seeds.is_empty() {
        return Err(ConfigError::Invalid("at least one rng seed is required".into()).into());
    }
    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let c = CampaignConfig {
            seed,
            mode: Mode::Simulated,
            ..cfg.clone()
        };
        let par = simulate(&c)?;
        let ser = run_serial(&c)?;
        rows.push(SuperLinearRow {
            seed,
            parallel_doublings: par.totals.doubling_events,
            serial_doublings: ser.totals.doubling_events,
            parallel_execs: par.totals.total_execs,
            serial_execs: ser.totals.total_execs,
            parallel_paths: par.totals.paths,
            serial_paths: ser.totals.paths,
        });
    }
    let median_parallel = median(rows.iter().map(|r| r.parallel_doublings).collect());
    let median_serial = median(rows.iter().map(|r| r.serial_doublings).collect());
    let ratio = if median_serial == 0.0 {
        f64::INFINITY
    } else {
        median_parallel / median_serial
    };
    Ok(SuperLinearResult {
        workers: cfg.workers,
        budget_execs: cfg.budget_execs,
        rows,
        median_parallel,
        median_serial,
        ratio,
    })
}

pub fn median(mut v: Vec<u64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_unstable();
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m] as f64
    } else {
        (v[m - 1] as f64 + v[m] as f64) / 2.0
    }
}

/// Stores each input as an Active corpus seed with its dry-run status.
/// Returns one [`Input::SeedReady`] per newly stored seed, in input order.
pub fn seed_corpus(
    store: &mut dyn StoreAccess,
    target: &TargetHandle,
    inputs: &[Vec<u8>],
) -> Result<Vec<Input>, CampaignError> {
    let mut out = Vec::new();
    for content in inputs {
        let r = target.execute(content)?;
        if r.outcome != ExecOutcome::Ok {
            warn!("corpus input {} skipped: {:?}", SeedId::of(content).short(), r.outcome);
            continue;
        }
        let status = FuzzStatus::initial(r.coverage.count_edges() as u32, r.exec_time_us);
        let put = store.put_seed(Seed::new(content.clone(), None, 0, "corpus"), status)?;
        if put.fresh {
            out.push(Input::SeedReady {
                seed_id: put.id,
                status,
                discovered_at: 0,
                len: content.len(),
                edges: r.coverage.edges(),
            });
        }
    }
    if out.is_empty() {
        return Err(CampaignError::EmptyCorpus);
    }
    Ok(out)
}

/// Reconstructs an accepted seed into the scheduler's queue input.
pub(crate) fn describe(
    store: &mut dyn StoreAccess,
    target: &TargetHandle,
    seed_id: SeedId,
    status: FuzzStatus,
) -> Result<Input, CampaignError> {
    let seed = store.get_seed(seed_id)?;
    let r = crate::coverage::reconstruct(&seed.content, target)?;
    Ok(Input::SeedReady {
        seed_id,
        status,
        discovered_at: seed.discovered_at,
        len: seed.content.len(),
        edges: r.coverage.edges(),
    })
}

pub(crate) fn summarize_worker(id: &str, speed: f64, c: &WorkerCounters) -> WorkerSummary {
    WorkerSummary {
        id: id.to_string(),
        speed,
        tasks: c.tasks,
        execs: c.execs,
        dry_runs: c.dry_runs,
        new_seeds: c.new_seeds,
        doubling_events: c.doubling_events,
        crashes: c.crashes,
        hangs: c.hangs,
        evaluated: c.evaluated,
        accepted: c.accepted,
        fuzzing_us: c.fuzzing_us,
        non_fuzzing_us: c.non_fuzzing_us,
    }
}
