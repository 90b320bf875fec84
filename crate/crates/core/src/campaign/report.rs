//! Campaign reports: a line-delimited JSON log plus a plain-text summary.
//!
//! Log records, one JSON object per line, discriminated by `"type"`:
//!
//! | type | fields |
//! |---|---|
//! | `config` | the campaign configuration |
//! | `task` | `worker`, `start_us`, `end_us`, `seed_id`, `energy`, `execs`, `discoveries`, `doublings`, `crashes` |
//! | `snapshot` | `time_us`, `paths`, `favored`, `pending`, `eval_nodes`, `total_execs`, `cycles` |
//! | `worker` | per-worker totals and time split |
//! | `crash` | `id`, `outcome`, `discovered_at` |
//! | `report` | campaign totals |

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::CampaignConfig;
use crate::scheduler::{EvalSummary, QueueSnapshot};
use crate::seedstore::{CrashInfo, SeedId, StoreStats};
use crate::worker::Discovery;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkerSummary {
    pub id: String,
    pub speed: f64,
    pub tasks: u64,
    pub execs: u64,
    pub dry_runs: u64,
    pub new_seeds: u64,
    pub doubling_events: u64,
    pub crashes: u64,
    pub hangs: u64,
    pub evaluated: u64,
    pub accepted: u64,
    pub fuzzing_us: u64,
    pub non_fuzzing_us: u64,
}

impl WorkerSummary {
    pub fn total_us(&self) -> u64 {
        self.fuzzing_us + self.non_fuzzing_us
    }

    pub fn busy_fraction(&self) -> f64 {
        if self.total_us() == 0 {
            0.0
        } else {
            self.fuzzing_us as f64 / self.total_us() as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub worker: String,
    pub start_us: u64,
    pub end_us: u64,
    pub seed_id: SeedId,
    pub energy: u32,
    pub execs: u64,
    pub discoveries: Vec<Discovery>,
    pub doublings: Vec<u64>,
    pub crashes: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignTotals {
    pub mode: String,
    pub target: String,
    pub workers: usize,
    pub seed: u64,
    pub duration_us: u64,
    pub total_execs: u64,
    pub paths: u64,
    pub new_seeds: u64,
    pub doubling_events: u64,
    pub crashes: u64,
    pub hangs: u64,
    pub overhead: Option<f64>,
    pub store: StoreStats,
    pub eval: EvalSummary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CampaignReport {
    pub config: CampaignConfig,
    pub totals: CampaignTotals,
    pub workers: Vec<WorkerSummary>,
    pub tasks: Vec<TaskRecord>,
    pub snapshots: Vec<QueueSnapshot>,
    pub crashes: Vec<CrashInfo>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Config(CampaignConfig),
    Task(TaskRecord),
    Snapshot(QueueSnapshot),
    Worker(WorkerSummary),
    Crash(CrashInfo),
    Report(CampaignTotals),
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("total worker time is zero; overhead is undefined")]
    ZeroTime,
    #[error("log line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("log is missing its {0} record")]
    Missing(&'static str),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Non-fuzzing share of worker time, as a fraction in `[0, 1]`.
pub fn overhead_fraction(non_fuzzing: f64, total: f64) -> Result<f64, ReportError> {
    if total <= 0.0 {
        return Err(ReportError::ZeroTime);
    }
    Ok(non_fuzzing / total)
}

/// Σ non-fuzzing / Σ (fuzzing + non-fuzzing) over the worker nodes only.
pub fn compute_overhead(workers: &[WorkerSummary]) -> Result<f64, ReportError> {
    let non: u128 = workers.iter().map(|w| w.non_fuzzing_us as u128).sum();
    let total: u128 = workers.iter().map(|w| w.total_us() as u128).sum();
    if total == 0 {
        return Err(ReportError::ZeroTime);
    }
    Ok(non as f64 / total as f64)
}

impl CampaignReport {
    pub fn overhead(&self) -> Result<f64, ReportError> {
        compute_overhead(&self.workers)
    }

    pub fn records(&self) -> Vec<LogRecord> {
        let mut out = vec![LogRecord::Config(self.config.clone())];
        out.extend(self.tasks.iter().cloned().map(LogRecord::Task));
        out.extend(self.snapshots.iter().copied().map(LogRecord::Snapshot));
        out.extend(self.workers.iter().cloned().map(LogRecord::Worker));
        out.extend(self.crashes.iter().copied().map(LogRecord::Crash));
        out.push(LogRecord::Report(self.totals.clone()));
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in self.records() {
            serde_json::to_writer(&mut w, &r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, ReportError> {
        let mut config = None;
        let mut totals = None;
        let mut workers = Vec::new();
        let mut tasks = Vec::new();
        let mut snapshots = Vec::new();
        let mut crashes = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LogRecord =
                serde_json::from_str(&line).map_err(|source| ReportError::Parse { line: i + 1, source })?;
            match rec {
                LogRecord::Config(c) => config = Some(c),
                LogRecord::Task(t) => tasks.push(t),
                LogRecord::Snapshot(s) => snapshots.push(s),
                LogRecord::Worker(w) => workers.push(w),
                LogRecord::Crash(c) => crashes.push(c),
                LogRecord::Report(t) => totals = Some(t),
            }
        }
        Ok(CampaignReport {
            config: config.ok_or(ReportError::Missing("config"))?,
            totals: totals.ok_or(ReportError::Missing("report"))?,
            workers,
            tasks,
            snapshots,
            crashes,
        })
    }

    /// Plain-text summary table.
    pub fn summary(&self) -> String {
        let t = &self.totals;
        let mut s = String::new();
        let _ = writeln!(s, "mode        {}", t.mode);
        let _ = writeln!(s, "target      {}", t.target);
        let _ = writeln!(s, "workers     {}", t.workers);
        let _ = writeln!(s, "seed        {}", t.seed);
        let _ = writeln!(s, "duration    {:.3} s", t.duration_us as f64 / 1e6);
        let _ = writeln!(s, "execs       {}", t.total_execs);
        let _ = writeln!(s, "paths       {}", t.paths);
        let _ = writeln!(s, "new seeds   {}", t.new_seeds);
        let _ = writeln!(s, "doublings   {}", t.doubling_events);
        let _ = writeln!(s, "crashes     {} (+{} hangs)", t.crashes, t.hangs);
        let _ = writeln!(
            s,
            "store       {} seeds, {} active, {} pending, {} discarded",
            t.store.seeds, t.store.active, t.store.pending, t.store.discarded
        );
        let _ = writeln!(
            s,
            "evaluation  {} evaluated, {} unique, {} adjustments",
            t.eval.total_evaluated, t.eval.unique_count, t.eval.adjustments
        );
        match t.overhead {
            Some(o) => {
                let _ = writeln!(s, "overhead    {:.2}%", o * 100.0);
            }
            None => {
                let _ = writeln!(s, "overhead    n/a");
            }
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<8} {:>6} {:>8} {:>10} {:>8} {:>9} {:>7} {:>9} {:>6}",
            "worker", "speed", "tasks", "execs", "new", "doublings", "crashes", "evaluated", "busy"
        );
        for w in &self.workers {
            let _ = writeln!(
                s,
                "{:<8} {:>6.2} {:>8} {:>10} {:>8} {:>9} {:>7} {:>9} {:>5.1}%",
                w.id,
                w.speed,
                w.tasks,
                w.execs,
                w.new_seeds,
                w.doubling_events,
                w.crashes,
                w.evaluated,
                w.busy_fraction() * 100.0
            );
        }
        s
    }
}
