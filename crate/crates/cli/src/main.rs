use std::fs::File;
use std::io::{self, BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dispatchfuzz::campaign::{
    experiment_super_linear, run_baseline_serial, run_baseline_static_partition, run_distributed, run_node_command,
    simulate, CampaignConfig, CampaignReport, Launcher, Mode, NodeCommand, NodeKind, Policy,
};

#[derive(Parser)]
#[command(name = "campaign", version, about = "Run and analyze distributed fuzzing campaigns")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a campaign in the configured mode.
    Run(RunArgs),
    /// Run the single-instance baseline under the same budget.
    BaselineSerial(RunArgs),
    /// Run the static map-partition baseline in simulation.
    BaselineStatic(RunArgs),
    /// Comparative experiments.
    Experiment {
        #[command(subcommand)]
        which: Experiment,
    },
    /// Print the summary of a campaign log.
    Stats { log: PathBuf },
    /// Internal: one node of a process-launched campaign.
    #[command(hide = true)]
    Node(NodeArgs),
}

#[derive(Subcommand)]
enum Experiment {
    /// Doubling events of a parallel campaign against the serial baseline.
    SuperLinear {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated rng seeds.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        /// Print the result as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LauncherArg {
    Threads,
    Processes,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Write the JSON-lines campaign log here.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    corpus: Vec<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long)]
    budget_execs: Option<u64>,
    /// Wall-clock (or simulated) seconds; clears any exec budget.
    #[arg(long)]
    budget_secs: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated per-worker speed multipliers (simulated mode).
    #[arg(long, value_delimiter = ',')]
    speeds: Option<Vec<f64>>,
    #[arg(long)]
    latency_us: Option<u64>,
    #[arg(long, value_parser = parse_policy)]
    policy: Option<Policy>,
    #[arg(long)]
    threshold: Option<u64>,
    #[arg(long)]
    exec_cost_us: Option<u64>,
    /// Sleep for the modeled cost of each synthetic execution.
    #[arg(long)]
    emulate_cost: bool,
    #[arg(long)]
    accept_new_bucket: bool,
    /// How distributed-mode nodes are started.
    #[arg(long, value_enum, default_value = "threads")]
    launcher: LauncherArg,
}

#[derive(Args)]
struct NodeArgs {
    #[arg(value_parser = parse_kind)]
    kind: NodeKind,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    store: Option<String>,
    #[arg(long)]
    scheduler: Option<String>,
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value_t = 0)]
    port: u16,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "simulated" | "sim" => Ok(Mode::Simulated),
        "distributed" => Ok(Mode::Distributed),
        _ => Err(format!("unknown mode {s:?} (simulated, distributed)")),
    }
}

fn parse_policy(s: &str) -> Result<Policy, String> {
    match s {
        "request-response" => Ok(Policy::RequestResponse),
        "static-partition" => Ok(Policy::StaticPartition),
        _ => Err(format!("unknown policy {s:?} (request-response, static-partition)")),
    }
}

fn parse_kind(s: &str) -> Result<NodeKind, String> {
    match s {
        "store" => Ok(NodeKind::Store),
        "scheduler" => Ok(NodeKind::Scheduler),
        "worker" => Ok(NodeKind::Worker),
        _ => Err(format!("unknown node kind {s:?} (store, scheduler, worker)")),
    }
}

impl RunArgs {
    fn config(&self) -> Result<CampaignConfig> {
        let mut c = match &self.config {
            Some(p) => CampaignConfig::load(p)?,
            None => CampaignConfig::default(),
        };
        if let Some(v) = &self.target {
            c.target = v.clone();
        }
        if !self.corpus.is_empty() {
            c.corpus = self.corpus.clone();
        }
        if let Some(v) = self.workers {
            c.workers = v;
        }
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if let Some(v) = self.budget_secs {
            c.budget_secs = Some(v);
            c.budget_execs = None;
        }
        if let Some(v) = self.budget_execs {
            c.budget_execs = Some(v);
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.speeds {
            c.speeds = v.clone();
        }
        if let Some(v) = self.latency_us {
            c.latency_us = v;
        }
        if let Some(v) = self.policy {
            c.policy = v;
        }
        if let Some(v) = self.threshold {
            c.threshold = v;
        }
        if let Some(v) = self.exec_cost_us {
            c.exec_cost_us = v;
        }
        c.emulate_cost |= self.emulate_cost;
        c.accept_new_bucket |= self.accept_new_bucket;
        c.validate()?;
        Ok(c)
    }

    fn launcher(&self) -> Result<Launcher> {
        Ok(match self.launcher {
            LauncherArg::Threads => Launcher::Threads,
            LauncherArg::Processes => Launcher::Processes {
                exe: std::env::current_exe().context("locating the campaign executable")?,
            },
        })
    }
}

fn finish(report: &CampaignReport, log: Option<&Path>) -> Result<()> {
    print!("{}", report.summary());
    if let Some(p) = log {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        report.write_jsonl(BufWriter::new(f))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run(args) => {
            let cfg = args.config()?;
            let report = match cfg.mode {
                Mode::Simulated => simulate(&cfg)?,
                Mode::Distributed => {
                    let out = run_distributed(&cfg, &args.launcher()?)?;
                    for e in &out.worker_errors {
                        eprintln!("warning: {e}");
                    }
                    out.report
                }
            };
            finish(&report, args.log.as_deref())
        }
        Cmd::BaselineSerial(args) => finish(&run_baseline_serial(&args.config()?)?, args.log.as_deref()),
        Cmd::BaselineStatic(args) => finish(&run_baseline_static_partition(&args.config()?)?, args.log.as_deref()),
        Cmd::Experiment {
            which: Experiment::SuperLinear { run, seeds, json },
        } => {
            let r = experiment_super_linear(&run.config()?, &seeds)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&r)?);
                return Ok(());
            }
            println!("{:>6} {:>10} {:>10} {:>10} {:>10}", "seed", "parallel", "serial", "par-execs", "ser-execs");
            for row in &r.rows {
                println!(
                    "{:>6} {:>10} {:>10} {:>10} {:>10}",
                    row.seed, row.parallel_doublings, row.serial_doublings, row.parallel_execs, row.serial_execs
                );
            }
            println!(
                "median doubling events: {} workers {:.1}, serial {:.1}, ratio {:.2}",
                r.workers, r.median_parallel, r.median_serial, r.ratio
            );
            Ok(())
        }
        Cmd::Stats { log } => {
            let f = File::open(&log).with_context(|| format!("opening {}", log.display()))?;
            let report = CampaignReport::read_jsonl(BufReader::new(f))?;
            print!("{}", report.summary());
            Ok(())
        }
        Cmd::Node(n) => {
            let config = CampaignConfig::load(&n.config)?;
            if n.kind == NodeKind::Worker && n.scheduler.is_none() {
                bail!("worker nodes need --scheduler");
            }
            let cmd = NodeCommand {
                kind: n.kind,
                config,
                store_addr: n.store,
                scheduler_addr: n.scheduler,
                index: n.index,
                port: n.port,
            };
            run_node_command(&cmd, &mut io::stdout().lock())?;
            Ok(())
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
