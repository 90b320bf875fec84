//! Networked campaigns on localhost: a store node, a scheduler node and one
//! node per worker, run either as threads of this process or as child
//! processes of a `campaign` executable.
//!
//! A child node announces its listening address as `LISTENING <addr>` on
//! stdout. The scheduler node prints `REPORT <json>` when the campaign ends
//! and the store node exits when its stdin closes.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::{Child, ChildStdout, Command, Stdio};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use log::{info, warn};

use super::report::{CampaignReport, CampaignTotals, TaskRecord, WorkerSummary};
use super::{seed_corpus, summarize_worker, CampaignConfig, CampaignError};
use crate::scheduler::{serve_scheduler, ServerConfig, ServerReport};
use crate::seedstore::{serve_store, CrashInfo, RemoteStore, SeedStore, StoreConfig, StoreStats};
use crate::worker::{run_node, NodeConfig, NodeExit, WorkerConfig};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Launcher {
    Threads,
    /// Spawn `exe node ...` for every node.
    Processes { exe: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Store,
    Scheduler,
    Worker,
}

/// One node of a process-launched campaign.
#[derive(Clone, Debug)]
pub struct NodeCommand {
    pub kind: NodeKind,
    pub config: CampaignConfig,
    pub store_addr: Option<String>,
    pub scheduler_addr: Option<String>,
    pub index: usize,
    pub port: u16,
}

#[derive(Clone, Debug)]
pub struct DistributedOutcome {
    pub report: CampaignReport,
    pub server: ServerReport,
    /// Worker nodes that exited with an error.
    pub worker_errors: Vec<String>,
}

fn node_err(node: &str, msg: impl ToString) -> CampaignError {
    CampaignError::Node {
        node: node.to_string(),
        msg: msg.to_string(),
    }
}

fn bind(port: u16) -> Result<TcpListener, CampaignError> {
    TcpListener::bind(("127.0.0.1", port)).map_err(|e| node_err("bind", format!("127.0.0.1:{port}: {e}")))
}

/// Fails early when a fixed port is already taken.
fn preflight(port: u16) -> Result<(), CampaignError> {
    if port != 0 {
        drop(bind(port)?);
    }
    Ok(())
}

fn server_config(cfg: &CampaignConfig, store_addr: &str) -> Result<ServerConfig, CampaignError> {
    let mut scheduler = cfg.scheduler_config()?;
    scheduler.local_evaluator = true;
    Ok(ServerConfig {
        scheduler,
        store_addr: store_addr.to_string(),
        target: cfg.target_handle()?,
        snapshot_every: Duration::from_millis(cfg.snapshot_every_ms.max(1)),
        expected_workers: cfg.workers,
    })
}

fn node_config(cfg: &CampaignConfig, index: usize, scheduler: &str, store: &str) -> Result<NodeConfig, CampaignError> {
    let id = cfg.worker_ids()[index].clone();
    let mut wc = WorkerConfig::new(&id, index as u64, cfg.seed);
    wc.accept_new_bucket = cfg.accept_new_bucket;
    let mut nc = NodeConfig::new(wc, scheduler, store, cfg.target_handle()?);
    nc.eval_batch = cfg.eval_batch;
    Ok(nc)
}

/// Stores the corpus through a client connection.
fn put_corpus(cfg: &CampaignConfig, store_addr: &str) -> Result<usize, CampaignError> {
    let target = cfg.target_handle()?;
    let mut client = RemoteStore::connect(store_addr)?;
    let n = seed_corpus(&mut client, &target, &cfg.corpus_inputs(&target)?)?.len();
    info!("stored {n} corpus seeds at {store_addr}");
    Ok(n)
}

fn store_summary(store_addr: &str) -> Result<(StoreStats, Vec<CrashInfo>), CampaignError> {
    let mut client = RemoteStore::connect(store_addr)?;
    Ok((client.stats()?, client.crashes()?))
}

/// Runs a networked campaign and assembles its report.
pub fn run_distributed(cfg: &CampaignConfig, launcher: &Launcher) -> Result<DistributedOutcome, CampaignError> {
    cfg.validate()?;
    preflight(cfg.store_port)?;
    preflight(cfg.scheduler_port)?;
    let (server, stats, crashes, worker_errors) = match launcher {
        Launcher::Threads => run_threads(cfg)?,
        Launcher::Processes { exe } => run_processes(cfg, exe)?,
    };
    if let Some(e) = &server.error {
        return Err(node_err("scheduler", e));
    }
    let report = assemble(cfg, &server, stats, crashes)?;
    Ok(DistributedOutcome {
        report,
        server,
        worker_errors,
    })
}

type Collected = (ServerReport, StoreStats, Vec<CrashInfo>, Vec<String>);

fn run_threads(cfg: &CampaignConfig) -> Result<Collected, CampaignError> {
    let store = Arc::new(SeedStore::new(StoreConfig::default()));
    let mut store_server = serve_store(bind(cfg.store_port)?, store)?;
    let store_addr = store_server.addr().to_string();
    put_corpus(cfg, &store_addr)?;

    let sched = serve_scheduler(bind(cfg.scheduler_port)?, server_config(cfg, &store_addr)?)?;
    let sched_addr = sched.addr().to_string();
    let mut handles = Vec::new();
    for i in 0..cfg.workers {
        let nc = node_config(cfg, i, &sched_addr, &store_addr)?;
        let name = nc.worker.id.clone();
        handles.push((
            name.clone(),
            thread::Builder::new().name(name).spawn(move || run_node(nc))?,
        ));
    }
    let server = sched.wait();
    let mut errors = Vec::new();
    for (name, h) in handles {
        match h.join() {
            Ok(Ok(NodeExit { .. })) => {}
            Ok(Err(e)) => errors.push(format!("{name}: {e}")),
            Err(_) => errors.push(format!("{name}: panicked")),
        }
    }
    let (stats, crashes) = store_summary(&store_addr)?;
    store_server.shutdown();
    Ok((server, stats, crashes, errors))
}

/// Kills every child still running when dropped.
struct Children(Vec<(String, Child)>);

impl Drop for Children {
    fn drop(&mut self) {
        for (_, c) in &mut self.0 {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

fn spawn(exe: &PathBuf, args: &[String]) -> Result<Child, CampaignError> {
    Command::new(exe)
        .arg("node")
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| node_err("spawn", format!("{}: {e}", exe.display())))
}

/// Reads lines until one starts with `prefix` and returns the rest.
fn expect_line(node: &str, out: &mut BufReader<ChildStdout>, prefix: &str) -> Result<String, CampaignError> {
    let mut line = String::new();
    loop {
        line.clear();
        if out.read_line(&mut line)? == 0 {
            return Err(node_err(node, format!("exited before printing {prefix}")));
        }
        if let Some(rest) = line.trim_end().strip_prefix(prefix) {
            return Ok(rest.trim().to_string());
        }
    }
}

fn run_processes(cfg: &CampaignConfig, exe: &PathBuf) -> Result<Collected, CampaignError> {
    let mut file = tempfile::NamedTempFile::new()?;
    file.write_all(cfg.to_toml().as_bytes())?;
    file.flush()?;
    let config = file.path().display().to_string();
    let mut kids = Children(Vec::new());

    let mut store = spawn(exe, &["store".into(), "--config".into(), config.clone(), "--port".into(), cfg.store_port.to_string()])?;
    let mut store_out = BufReader::new(store.stdout.take().expect("piped"));
    kids.0.push(("store".into(), store));
    let store_addr = expect_line("store", &mut store_out, "LISTENING")?;
    put_corpus(cfg, &store_addr)?;

    let mut sched = spawn(
        exe,
        &[
            "scheduler".into(),
            "--config".into(),
            config.clone(),
            "--store".into(),
            store_addr.clone(),
            "--port".into(),
            cfg.scheduler_port.to_string(),
        ],
    )?;
    let mut sched_out = BufReader::new(sched.stdout.take().expect("piped"));
    kids.0.push(("scheduler".into(), sched));
    let sched_addr = expect_line("scheduler", &mut sched_out, "LISTENING")?;

    for (i, id) in cfg.worker_ids().into_iter().enumerate() {
        let mut w = spawn(
            exe,
            &[
                "worker".into(),
                "--config".into(),
                config.clone(),
                "--store".into(),
                store_addr.clone(),
                "--scheduler".into(),
                sched_addr.clone(),
                "--index".into(),
                i.to_string(),
            ],
        )?;
        drop(w.stdout.take());
        kids.0.push((id, w));
    }

    let json = expect_line("scheduler", &mut sched_out, "REPORT")?;
    let server: ServerReport = serde_json::from_str(&json).map_err(|e| node_err("scheduler", e))?;
    let mut errors = Vec::new();
    for (name, c) in kids.0.iter_mut().skip(2) {
        let status = c.wait()?;
        if !status.success() {
            errors.push(format!("{name}: exited with {status}"));
        }
    }
    let (stats, crashes) = store_summary(&store_addr)?;
    // closing stdin stops the store node
    for (_, c) in kids.0.iter_mut().take(2) {
        drop(c.stdin.take());
    }
    for (name, c) in kids.0.iter_mut().take(2) {
        let status = c.wait()?;
        if !status.success() {
            warn!("{name} node exited with {status}");
        }
    }
    kids.0.clear();
    Ok((server, stats, crashes, errors))
}

fn assemble(
    cfg: &CampaignConfig,
    server: &ServerReport,
    store: StoreStats,
    crashes: Vec<CrashInfo>,
) -> Result<CampaignReport, CampaignError> {
    let workers: Vec<WorkerSummary> = cfg
        .worker_ids()
        .iter()
        .map(|id| summarize_worker(id, 1.0, &server.workers.get(id).copied().unwrap_or_default()))
        .collect();
    let tasks = server
        .dispatches
        .iter()
        .map(|d| TaskRecord {
            worker: d.worker.clone(),
            start_us: d.time_us,
            end_us: d.time_us,
            seed_id: d.seed_id,
            energy: d.energy,
            ..Default::default()
        })
        .collect();
    let target = cfg.target_handle()?;
    let paths = server.snapshots.last().map(|s| s.paths).unwrap_or(0);
    let totals = CampaignTotals {
        mode: "distributed".into(),
        target: target.spec(),
        workers: workers.len(),
        seed: cfg.seed,
        duration_us: server.duration_us,
        total_execs: workers.iter().map(|w| w.execs).sum(),
        paths,
        new_seeds: workers.iter().map(|w| w.new_seeds).sum(),
        doubling_events: workers.iter().map(|w| w.doubling_events).sum(),
        crashes: store.crashes,
        hangs: store.hangs,
        overhead: super::compute_overhead(&workers).ok(),
        store,
        eval: server.eval.clone(),
    };
    Ok(CampaignReport {
        config: cfg.clone(),
        totals,
        workers,
        tasks,
        snapshots: server.snapshots.clone(),
        crashes,
    })
}

/// Entry point of a child node. Blocks until the node's work is done.
pub fn run_node_command(cmd: &NodeCommand, stdout: &mut dyn Write) -> Result<(), CampaignError> {
    let cfg = &cmd.config;
    match cmd.kind {
        NodeKind::Store => {
            let store = Arc::new(SeedStore::new(StoreConfig::default()));
            let mut server = serve_store(bind(cmd.port)?, store)?;
            writeln!(stdout, "LISTENING {}", server.addr())?;
            stdout.flush()?;
            let mut sink = Vec::new();
            let _ = std::io::stdin().read_to_end(&mut sink);
            server.shutdown();
        }
        NodeKind::Scheduler => {
            let store = cmd.store_addr.as_deref().ok_or_else(|| node_err("scheduler", "--store is required"))?;
            let server = serve_scheduler(bind(cmd.port)?, server_config(cfg, store)?)?;
            writeln!(stdout, "LISTENING {}", server.addr())?;
            stdout.flush()?;
            let report = server.wait();
            let json = serde_json::to_string(&report).map_err(|e| node_err("scheduler", e))?;
            writeln!(stdout, "REPORT {json}")?;
            stdout.flush()?;
        }
        NodeKind::Worker => {
            let store = cmd.store_addr.as_deref().ok_or_else(|| node_err("worker", "--store is required"))?;
            let sched = cmd
                .scheduler_addr
                .as_deref()
                .ok_or_else(|| node_err("worker", "--scheduler is required"))?;
            if cmd.index >= cfg.workers {
                return Err(node_err("worker", format!("index {} out of range", cmd.index)));
            }
            let exit = run_node(node_config(cfg, cmd.index, sched, store)?)?;
            info!(
                "worker {} done: {} execs, {} abandoned tasks, {} reconnects",
                cmd.index, exit.counters.execs, exit.abandoned_tasks, exit.reconnects
            );
        }
    }
    Ok(())
}
