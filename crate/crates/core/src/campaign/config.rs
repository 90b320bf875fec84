use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::DEFAULT_MAP_SIZE;
use crate::scheduler::{
    Budget, DispatchPolicy, SchedulerConfig, DEFAULT_EVAL_BATCH, DEFAULT_EVAL_CAP_DIVISOR, DEFAULT_MIN_EVAL_NODES,
    DEFAULT_RETRY_AFTER_MS, DEFAULT_THRESHOLD,
};
use crate::target::{TargetError, TargetHandle, DEFAULT_EXEC_COST_US, DEFAULT_TIMEOUT_MS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulated,
    Distributed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    RequestResponse,
    StaticPartition,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("target: {0}")]
    Target(#[from] TargetError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Campaign settings, read from a TOML file whose keys match the field names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    /// Target spec, e.g. `byte-ladder:16` or `exec:./prog @@`.
    pub target: String,
    /// Files or directories of starting inputs; empty uses the target's
    /// built-in corpus.
    pub corpus: Vec<PathBuf>,
    pub workers: usize,
    pub mode: Mode,
    /// Total-execution budget. Takes precedence over `budget_secs`.
    pub budget_execs: Option<u64>,
    pub budget_secs: Option<u64>,
    pub seed: u64,
    pub threshold: u64,
    pub min_eval_nodes: usize,
    pub eval_cap_divisor: u64,
    pub eval_batch: u32,
    pub accept_new_bucket: bool,
    pub policy: Policy,
    /// One-way message latency in simulated mode.
    pub latency_us: u64,
    /// Per-worker speed multipliers in simulated mode; missing entries are 1.
    pub speeds: Vec<f64>,
    /// Modeled cost of one synthetic execution.
    pub exec_cost_us: u64,
    /// Sleep for the modeled cost in distributed mode.
    pub emulate_cost: bool,
    pub timeout_ms: u64,
    pub map_size: usize,
    /// 0 picks a free port.
    pub store_port: u16,
    pub scheduler_port: u16,
    pub snapshot_every_ms: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            target: "byte-ladder:16".into(),
            corpus: Vec::new(),
            workers: 4,
            mode: Mode::Simulated,
            budget_execs: Some(200_000),
            budget_secs: None,
            seed: 1,
            threshold: DEFAULT_THRESHOLD,
            min_eval_nodes: DEFAULT_MIN_EVAL_NODES,
            eval_cap_divisor: DEFAULT_EVAL_CAP_DIVISOR,
            eval_batch: DEFAULT_EVAL_BATCH,
            accept_new_bucket: false,
            policy: Policy::RequestResponse,
            latency_us: 1000,
            speeds: Vec::new(),
            exec_cost_us: DEFAULT_EXEC_COST_US,
            emulate_cost: false,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            map_size: DEFAULT_MAP_SIZE,
            store_port: 0,
            scheduler_port: 0,
            snapshot_every_ms: 1000,
        }
    }
}

impl CampaignConfig {
    /// A file that sets `budget_secs` without `budget_execs` runs on time
    /// alone instead of inheriting the default exec budget.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = toml::from_str(text)?;
        let time_only = table.contains_key("budget_secs") && !table.contains_key("budget_execs");
        let mut cfg: CampaignConfig = table.try_into()?;
        if time_only {
            cfg.budget_execs = None;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn budget(&self) -> Result<Budget, ConfigError> {
        match (self.budget_execs, self.budget_secs) {
            (Some(n), _) => Ok(Budget::Execs(n)),
            (None, Some(s)) => Ok(Budget::Seconds(s)),
            (None, None) => Err(ConfigError::Invalid("no budget set".into())),
        }
    }

    pub fn target_handle(&self) -> Result<TargetHandle, ConfigError> {
        let t: TargetHandle = self.target.parse()?;
        let t = t
            .with_map_size(self.map_size)
            .with_timeout_ms(self.timeout_ms)
            .with_exec_cost_us(self.exec_cost_us)
            .with_emulated_cost(self.emulate_cost);
        t.validate()?;
        Ok(t)
    }

    pub fn speed(&self, worker: usize) -> f64 {
        self.speeds.get(worker).copied().unwrap_or(1.0)
    }

    pub fn worker_ids(&self) -> Vec<String> {
        (0..self.workers).map(|i| format!("w{i}")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workers == 0 {
            return Err(ConfigError::Invalid("worker count must be at least 1".into()));
        }
        if !self.budget()?.is_positive() {
            return Err(ConfigError::Invalid("budget must be positive".into()));
        }
        if self.speeds.iter().any(|s| !(*s > 0.0)) {
            return Err(ConfigError::Invalid("speeds must be positive".into()));
        }
        if self.eval_batch == 0 || self.eval_cap_divisor == 0 {
            return Err(ConfigError::Invalid("eval_batch and eval_cap_divisor must be positive".into()));
        }
        for p in &self.corpus {
            if !p.exists() {
                return Err(ConfigError::Invalid(format!("corpus path {} does not exist", p.display())));
            }
        }
        self.target_handle()?;
        Ok(())
    }

    pub fn scheduler_config(&self) -> Result<SchedulerConfig, ConfigError> {
        let mut c = SchedulerConfig::new(self.budget()?, self.worker_ids());
        c.threshold = self.threshold;
        c.min_eval_nodes = self.min_eval_nodes;
        c.eval_cap_divisor = self.eval_cap_divisor;
        c.eval_batch = self.eval_batch;
        c.retry_after_ms = DEFAULT_RETRY_AFTER_MS;
        c.policy = match self.policy {
            Policy::RequestResponse => DispatchPolicy::RequestResponse,
            Policy::StaticPartition => DispatchPolicy::StaticPartition {
                regions: self.workers,
                map_size: self.map_size,
            },
        };
        Ok(c)
    }

    /// Starting inputs: every regular file under the corpus paths, in sorted
    /// path order, or the target's built-in corpus.
    pub fn corpus_inputs(&self, target: &TargetHandle) -> Result<Vec<Vec<u8>>, ConfigError> {
        if self.corpus.is_empty() {
            return Ok(target.default_corpus());
        }
        let mut files = Vec::new();
        for p in &self.corpus {
            collect_files(p, &mut files).map_err(|source| ConfigError::Read {
                path: p.clone(),
                source,
            })?;
        }
        files.sort();
        files
            .into_iter()
            .map(|f| {
                fs::read(&f).map_err(|source| ConfigError::Read { path: f, source })
            })
            .collect()
    }
}

fn collect_files(p: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    if p.is_dir() {
        for e in fs::read_dir(p)? {
            collect_files(&e?.path(), out)?;
        }
    } else if p.is_file() {
        out.push(p.to_path_buf());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let c = CampaignConfig {
            workers: 8,
            speeds: vec![1.0, 2.0],
            ..Default::default()
        };
        assert_eq!(CampaignConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn time_budget_survives_round_trip() {
        let c = CampaignConfig {
            budget_execs: None,
            budget_secs: Some(60),
            ..Default::default()
        };
        let back = CampaignConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back.budget().unwrap(), Budget::Seconds(60));
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = CampaignConfig::from_toml("workers = 2\nbudget_execs = 10\ntarget = \"wide-fanout:64\"").unwrap();
        assert_eq!(c.workers, 2);
        assert_eq!(c.threshold, 1000);
        assert_eq!(c.budget().unwrap(), Budget::Execs(10));
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        assert!(CampaignConfig::from_toml("wokers = 2").is_err());
        let c = CampaignConfig {
            workers: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = CampaignConfig {
            target: "no-such-target".into(),
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
