//! Acceptance checks, one PASS/FAIL line each. Exits non-zero if any fails.

#[path = "../../core/tests/support/messages.rs"]
mod messages;

use std::collections::{HashMap, HashSet};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use proptest::collection::vec;
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::{Config, TestRunner};

use dispatchfuzz::campaign::{
    compute_overhead, experiment_super_linear, run_baseline_static_partition, run_distributed, simulate,
    simulate_with, CampaignReport, Launcher, SimOptions, WorkerSummary,
};
use dispatchfuzz::mutation::{deterministic_mutants, havoc_stage_input, DEFAULT_MAX_INPUT_LEN};
use dispatchfuzz::protocol::{decode, encode, FrameReader, Message};
use dispatchfuzz::scheduler::{eval_node_target, DEFAULT_RETRY_AFTER_MS};
use dispatchfuzz::seedstore::{read_log, serve_store, LogRecord, RemoteStore, StoreConfig};
use dispatchfuzz::worker::Discovery;
use dispatchfuzz::{
    derive_seed, CampaignConfig, ExecOutcome, FuzzRng, FuzzStatus, Mode, Seed, SeedId, SeedStore, StoreAccess,
    TargetHandle,
};

type Outcome = Result<(bool, String), String>;

fn main() {
    let checks: Vec<(u32, &str, fn() -> Outcome)> = vec![
        (1, "dedup soundness and completeness", c1_dedup),
        (2, "evaluator-pool formula", c2_eval_pool),
        (3, "request-response balance", c3_balance),
        (4, "synchronization overhead", c4_overhead),
        (5, "super-linear doubling", c5_super_linear),
        (6, "serial-oracle equivalence", c6_serial_oracle),
        (7, "protocol round-trip", c7_protocol),
        (8, "instant synchronization", c8_instant_sync),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (n, name, f) in checks {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = start.elapsed().as_secs_f64();
        println!("{} [{n}] {name}: {detail} ({secs:.1} s)", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

fn c1_dedup() -> Outcome {
    let cfg = CampaignConfig {
        target: "wide-fanout".into(),
        workers: 4,
        budget_execs: Some(200_000),
        seed: 1,
        ..Default::default()
    };
    let started = Instant::now();
    let run = simulate_with(
        &cfg,
        SimOptions {
            capture_log: true,
            ..Default::default()
        },
    )
    .map_err(err)?;
    let target = cfg.target_handle().map_err(err)?;
    let records = read_log(&run.store_log).map_err(err)?;

    let bitmap = |content: &[u8]| -> Result<Vec<u8>, String> {
        Ok(target.execute(content).map_err(err)?.coverage.as_bytes().to_vec())
    };
    let mut content: HashMap<SeedId, Vec<u8>> = HashMap::new();
    let mut pending: HashSet<SeedId> = HashSet::new();
    let mut active: Vec<(SeedId, Vec<u8>)> = Vec::new();
    let mut union = vec![false; target.map_size];
    let mut identical = 0;
    let mut missed = 0;
    let mut unsound = 0;
    let mut discarded = 0;

    let mut admit = |id: SeedId, bm: Vec<u8>, active: &mut Vec<(SeedId, Vec<u8>)>, union: &mut Vec<bool>| {
        identical += active.iter().filter(|(_, b)| *b == bm).count();
        for (i, &b) in bm.iter().enumerate() {
            if b != 0 {
                union[i] = true;
            }
        }
        active.push((id, bm));
    };
    let novel = |bm: &[u8], union: &[bool]| bm.iter().zip(union).any(|(&b, &u)| b != 0 && !u);

    for rec in records {
        match rec {
            LogRecord::PutSeed { seed, status } => {
                let id = seed.id;
                content.insert(id, seed.content);
                if status.state == dispatchfuzz::SeedState::Active {
                    let bm = bitmap(&content[&id])?;
                    admit(id, bm, &mut active, &mut union);
                } else {
                    pending.insert(id);
                }
            }
            LogRecord::Activated { id, .. } => {
                pending.remove(&id);
                let bm = bitmap(&content[&id])?;
                if !novel(&bm, &union) {
                    unsound += 1;
                }
                admit(id, bm, &mut active, &mut union);
            }
            LogRecord::Discarded { id } => {
                pending.remove(&id);
                discarded += 1;
                let bm = bitmap(&content[&id])?;
                if novel(&bm, &union) {
                    missed += 1;
                }
            }
            LogRecord::Status { .. } | LogRecord::Popped { .. } | LogRecord::Crash { .. } => {}
        }
    }
    // pairwise over the final Active set as well, independent of log order
    let final_ids: HashSet<SeedId> = run.store.list_active(0).into_iter().collect();
    let log_ids: HashSet<SeedId> = active.iter().map(|(id, _)| *id).collect();
    let mut pairs = 0;
    for i in 0..active.len() {
        for j in i + 1..active.len() {
            if active[i].1 == active[j].1 {
                pairs += 1;
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let pass =
        identical == 0 && pairs == 0 && missed == 0 && pending.is_empty() && final_ids == log_ids && secs < 120.0;
    Ok((
        pass,
        format!(
            "{} active, {discarded} discarded, identical pairs {pairs}, novel-but-discarded {missed}, \
             left pending {}, log/store active sets {}, accepted without a new edge {unsound}",
            active.len(),
            pending.len(),
            if final_ids == log_ids { "agree" } else { "DIFFER" }
        ),
    ))
}

// ---------------------------------------------------------------- 2

/// Evaluator target in integers: `ceil(pending / speed)`, lowered to
/// `floor(rate / 2)` when it exceeds `rate / 2`, then raised to the floor of 2.
fn eval_pool_oracle(pending: u64, speed: u64, rate: u64) -> u64 {
    let mut n = pending.div_ceil(speed);
    if 2 * n > rate {
        n = rate / 2;
    }
    n.max(2)
}

fn c2_eval_pool() -> Outcome {
    let mut checked = 0u64;
    let mut wrong = 0u64;
    let mut mismatches = Vec::new();
    for pending in (0..=10_000u64).step_by(37) {
        for speed in 1..=100u64 {
            for rate in 1..=50u64 {
                for unique in [1u64, 7] {
                    let got = eval_node_target(pending, speed as f64, rate * unique, unique, 2, 2) as u64;
                    let want = eval_pool_oracle(pending, speed, rate);
                    checked += 1;
                    if got != want {
                        wrong += 1;
                    }
                    if got != want && mismatches.len() < 5 {
                        mismatches.push(format!("p={pending} s={speed} r={rate}: {got} != {want}"));
                    }
                }
            }
        }
    }
    let anchor = eval_node_target(400, 50.0, 3000, 300, 2, 2);
    let floor = eval_node_target(10, 50.0, 3000, 300, 2, 2);
    let pass = wrong == 0 && anchor == 5 && floor == 2;
    Ok((
        pass,
        format!(
            "{checked} grid points, {wrong} mismatches{}; anchor 400/50/10 -> {anchor}, floor case -> {floor}",
            if mismatches.is_empty() { String::new() } else { format!(" ({})", mismatches.join("; ")) }
        ),
    ))
}

// ---------------------------------------------------------------- 3

fn busy(w: &WorkerSummary) -> f64 {
    w.fuzzing_us as f64 / w.total_us().max(1) as f64
}

fn c3_balance() -> Outcome {
    let speeds = vec![1.0, 1.0, 2.0, 2.0, 4.0, 4.0, 8.0, 8.0];
    let cfg = CampaignConfig {
        target: "byte-ladder:16".into(),
        workers: 8,
        speeds: speeds.clone(),
        budget_execs: Some(10_000_000),
        seed: 1,
        ..Default::default()
    };
    let r = simulate(&cfg).map_err(err)?;
    let total_tasks: u64 = r.workers.iter().map(|w| w.tasks).sum();
    let speed_sum: f64 = speeds.iter().sum();
    let mut min_busy = f64::MAX;
    let mut worst_dev: f64 = 0.0;
    let mut devs = Vec::new();
    for (w, s) in r.workers.iter().zip(&speeds) {
        min_busy = min_busy.min(busy(w));
        let expect = total_tasks as f64 * s / speed_sum;
        let dev = w.tasks as f64 / expect - 1.0;
        worst_dev = worst_dev.max(dev.abs());
        devs.push(format!("{:+.1}%", dev * 100.0));
    }

    let base = run_baseline_static_partition(&CampaignConfig {
        budget_execs: Some(1_000_000),
        ..cfg.clone()
    })
    .map_err(err)?;
    let base_min = base.workers.iter().map(busy).fold(f64::MAX, f64::min);

    let pass = min_busy >= 0.9 && worst_dev <= 0.15 && base_min < 0.2;
    Ok((
        pass,
        format!(
            "min busy {:.3}, task deviation from speed share [{}] (worst {:.1}%); \
             static partition min busy {:.3}",
            min_busy,
            devs.join(" "),
            worst_dev * 100.0,
            base_min
        ),
    ))
}

// ---------------------------------------------------------------- 4

fn c4_overhead() -> Outcome {
    // recorded totals: 9,268 non-fuzzing seconds over 128 units for one hour
    let units = 128u64;
    let per_unit_non_us = 9268 * 1_000_000 / units;
    let recorded: Vec<WorkerSummary> = (0..units)
        .map(|i| WorkerSummary {
            id: format!("u{i}"),
            speed: 1.0,
            tasks: 0,
            execs: 0,
            dry_runs: 0,
            new_seeds: 0,
            doubling_events: 0,
            crashes: 0,
            hangs: 0,
            evaluated: 0,
            accepted: 0,
            fuzzing_us: 3600 * 1_000_000 - per_unit_non_us,
            non_fuzzing_us: per_unit_non_us,
        })
        .collect();
    let table = compute_overhead(&recorded).map_err(err)?;
    let table_ok = format!("{:.2}", table * 100.0) == "2.01";

    let cfg = CampaignConfig {
        target: "byte-ladder:16".into(),
        workers: 8,
        mode: Mode::Distributed,
        budget_execs: None,
        budget_secs: Some(60),
        emulate_cost: true,
        seed: 1,
        ..Default::default()
    };
    let exe = PathBuf::from(env!("CARGO_BIN_EXE_campaign"));
    let out = run_distributed(&cfg, &Launcher::Processes { exe }).map_err(err)?;
    let overhead = out.report.overhead().map_err(err)?;
    let pass = table_ok && overhead <= 0.05 && out.worker_errors.is_empty() && out.report.workers.len() == 8;
    Ok((
        pass,
        format!(
            "recorded totals -> {:.2}%; localhost 8 workers {:.1} s: overhead {:.2}% over {} tasks, {} execs{}",
            table * 100.0,
            out.report.totals.duration_us as f64 / 1e6,
            overhead * 100.0,
            out.report.tasks.len(),
            out.report.totals.total_execs,
            if out.worker_errors.is_empty() {
                String::new()
            } else {
                format!(", worker errors: {}", out.worker_errors.join("; "))
            }
        ),
    ))
}

// ---------------------------------------------------------------- 5

fn c5_super_linear() -> Outcome {
    let cfg = CampaignConfig {
        target: "ladder-branches".into(),
        workers: 8,
        budget_execs: Some(500_000),
        ..Default::default()
    };
    let r = experiment_super_linear(&cfg, &[1, 2, 3]).map_err(err)?;
    let rows: Vec<String> = r
        .rows
        .iter()
        .map(|row| format!("seed {} {}/{}", row.seed, row.parallel_doublings, row.serial_doublings))
        .collect();
    Ok((
        r.ratio > 1.0,
        format!(
            "median doublings parallel {:.0} / serial {:.0} = {:.2} ({})",
            r.median_parallel,
            r.median_serial,
            r.ratio,
            rows.join(", ")
        ),
    ))
}

// ---------------------------------------------------------------- 6

/// A plain single-instance fuzzing loop: pick the best queue entry, assign
/// energy, mutate and execute that many times, keep inputs reaching a new
/// edge, and double the remaining budget on each keep.
mod direct {
    use super::*;

    pub struct Task {
        pub seed_id: SeedId,
        pub energy: u32,
        pub execs: u64,
        pub discoveries: Vec<Discovery>,
        pub doublings: Vec<u64>,
        pub crashes: u64,
    }

    struct Entry {
        id: SeedId,
        content: Vec<u8>,
        depth: u32,
        exec_time_us: u64,
        bitmap_size: u32,
        handicap: u32,
        edges: Vec<u32>,
        order: usize,
        discovered: u64,
        score: u32,
        favored: bool,
        last_pick: u64,
        picks: u64,
    }

    impl Entry {
        fn cost(&self) -> u128 {
            self.exec_time_us as u128 * self.content.len().max(1) as u128
        }
    }

    pub struct Fuzzer {
        target: TargetHandle,
        queue: Vec<Entry>,
        // seeds in the order the fuzzer learned them, for splicing
        known: Vec<(SeedId, Vec<u8>)>,
        virgin: Vec<bool>,
        rng: FuzzRng,
        picks: u64,
        cycles: u32,
        this_pass: HashSet<SeedId>,
        discoveries: u64,
    }

    /// `a / avg <= num / den`, with `avg = total / count`.
    fn at_most(a: u64, count: u64, total: u128, num: u128, den: u128) -> bool {
        a as u128 * count as u128 * den <= total * num
    }

    impl Fuzzer {
        pub fn new(target: TargetHandle, corpus: &[Vec<u8>], master_seed: u64) -> Result<Self, String> {
            let mut f = Fuzzer {
                virgin: vec![false; target.map_size],
                target,
                queue: Vec::new(),
                known: Vec::new(),
                rng: FuzzRng::new(derive_seed(master_seed, 0)),
                picks: 0,
                cycles: 0,
                this_pass: HashSet::new(),
                discoveries: 0,
            };
            for c in corpus {
                let r = f.target.execute(c).map_err(err)?;
                if r.outcome != ExecOutcome::Ok || f.known.iter().any(|(id, _)| *id == SeedId::of(c)) {
                    continue;
                }
                let edges = r.coverage.edges();
                for &e in &edges {
                    f.virgin[e as usize] = true;
                }
                f.known.push((SeedId::of(c), c.clone()));
                f.insert(c.clone(), 0, edges, r.exec_time_us, 0);
            }
            Ok(f)
        }

        fn energy(&self, e: &Entry) -> u32 {
            let count = self.queue.len() as u64;
            let total_t: u128 = self.queue.iter().map(|q| q.exec_time_us as u128).sum();
            let total_b: u128 = self.queue.iter().map(|q| q.bitmap_size as u128).sum();
            // speed factor in thousandths, coverage factor in hundredths
            let t: u128 = if total_t == 0 {
                1000
            } else {
                let le = |n, d| at_most(e.exec_time_us, count, total_t, n, d);
                if le(1, 4) {
                    3000
                } else if le(1, 2) {
                    2000
                } else if le(1, 1) {
                    1000
                } else if le(2, 1) {
                    500
                } else if le(4, 1) {
                    250
                } else {
                    100
                }
            };
            let b: u128 = if total_b == 0 {
                100
            } else {
                let le = |n, d| at_most(e.bitmap_size as u64, count, total_b, n, d);
                if le(1, 4) {
                    25
                } else if le(1, 2) {
                    50
                } else if le(1, 1) {
                    100
                } else if le(2, 1) {
                    200
                } else {
                    300
                }
            };
            let h: u128 = if e.handicap >= 4 {
                4
            } else if e.handicap >= 2 {
                2
            } else {
                1
            };
            let d: u128 = match e.depth {
                0..=3 => 1,
                4..=7 => 2,
                8..=13 => 3,
                14..=25 => 4,
                _ => 5,
            };
            // 100 * (t / 1000) * (b / 100) * h * d, rounded half up
            let num = 100 * t * b * h * d;
            let den = 1000 * 100;
            let v = (2 * num + den) / (2 * den);
            v.clamp(16, 25_600) as u32
        }

        fn insert(&mut self, content: Vec<u8>, depth: u32, edges: Vec<u32>, exec_time_us: u64, discovered: u64) {
            let mut edges = edges;
            edges.sort_unstable();
            edges.dedup();
            let entry = Entry {
                id: SeedId::of(&content),
                bitmap_size: edges.len() as u32,
                content,
                depth,
                exec_time_us,
                handicap: self.cycles,
                edges,
                order: self.queue.len(),
                discovered,
                score: 0,
                favored: false,
                last_pick: 0,
                picks: 0,
            };
            self.queue.push(entry);
            let last = self.queue.len() - 1;
            self.queue[last].score = self.energy(&self.queue[last]);
            self.refavor();
        }

        /// Favored: cheapest (then earliest) holder of at least one edge.
        fn refavor(&mut self) {
            let mut best: HashMap<u32, usize> = HashMap::new();
            for (i, e) in self.queue.iter().enumerate() {
                for &edge in &e.edges {
                    let slot = best.entry(edge).or_insert(i);
                    let cur = &self.queue[*slot];
                    if (e.cost(), e.order) < (cur.cost(), cur.order) {
                        *slot = i;
                    }
                }
            }
            let holders: HashSet<usize> = best.into_values().collect();
            for (i, e) in self.queue.iter_mut().enumerate() {
                e.favored = holders.contains(&i);
            }
        }

        fn pick(&self) -> usize {
            (0..self.queue.len())
                .min_by_key(|&i| {
                    let e = &self.queue[i];
                    (!e.favored, e.last_pick, std::cmp::Reverse(e.score), e.discovered, e.id)
                })
                .expect("non-empty queue")
        }

        pub fn run(&mut self, budget_execs: u64) -> Result<Vec<Task>, String> {
            let mut tasks = Vec::new();
            let mut total = 0u64;
            while total < budget_execs {
                let i = self.pick();
                let id = self.queue[i].id;
                if self.this_pass.contains(&id) {
                    self.cycles += 1;
                    self.this_pass.clear();
                }
                self.this_pass.insert(id);
                let energy = self.energy(&self.queue[i]);
                self.picks += 1;
                let e = &mut self.queue[i];
                e.last_pick = self.picks;
                e.score = energy;
                e.picks += 1;
                let first = e.picks == 1;
                let content = e.content.clone();
                let depth = e.depth;

                let task = self.fuzz(id, &content, depth, energy, first)?;
                total += task.execs;
                tasks.push(task);
            }
            Ok(tasks)
        }

        fn fuzz(&mut self, id: SeedId, content: &[u8], depth: u32, energy: u32, first: bool) -> Result<Task, String> {
            let mut rng = FuzzRng::new(self.rng.next_u64());
            let partners: Vec<Vec<u8>> =
                self.known.iter().filter(|(k, _)| *k != id).map(|(_, c)| c.clone()).collect();
            let mut det = first.then(|| deterministic_mutants(content));
            let cap = energy as u64 * 100;
            let mut budget = energy as u64;
            let mut done = 0u64;
            let mut task = Task {
                seed_id: id,
                energy,
                execs: 0,
                discoveries: Vec::new(),
                doublings: Vec::new(),
                crashes: 0,
            };
            let mut found = Vec::new();
            while done < budget {
                let input = match det.as_mut().and_then(|d| d.next()) {
                    Some(m) => m,
                    None => havoc_stage_input(content, &partners, &mut rng, DEFAULT_MAX_INPUT_LEN),
                };
                let r = self.target.execute(&input).map_err(err)?;
                done += 1;
                if r.outcome != ExecOutcome::Ok {
                    task.crashes += 1;
                    continue;
                }
                let edges = r.coverage.edges();
                if !edges.iter().any(|&e| !self.virgin[e as usize]) {
                    continue;
                }
                for &e in &edges {
                    self.virgin[e as usize] = true;
                }
                let new_id = SeedId::of(&input);
                task.discoveries.push(Discovery {
                    seed_id: new_id,
                    at_exec: done,
                    edges: edges.len() as u32,
                });
                self.known.push((new_id, input.clone()));
                found.push((input, edges, r.exec_time_us));
                let doubled = (done + 2 * (budget - done)).min(cap);
                if doubled > budget {
                    budget = doubled;
                    task.doublings.push(done);
                }
            }
            task.execs = done;
            for (input, edges, t) in found {
                self.discoveries += 1;
                self.insert(input, depth + 1, edges, t, self.discoveries);
            }
            Ok(task)
        }
    }
}

fn c6_serial_oracle() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for (target, budget) in [("byte-ladder:16", 300_000u64), ("ladder-branches:16", 300_000)] {
        let cfg = CampaignConfig {
            target: target.into(),
            workers: 1,
            budget_execs: Some(budget),
            seed: 7,
            ..Default::default()
        };
        let report: CampaignReport = simulate(&cfg).map_err(err)?;
        let handle = cfg.target_handle().map_err(err)?;
        let corpus = cfg.corpus_inputs(&handle).map_err(err)?;
        let mut oracle = direct::Fuzzer::new(handle, &corpus, cfg.seed)?;
        let expect = oracle.run(budget)?;

        let mut first_diff = None;
        for (i, (a, b)) in report.tasks.iter().zip(&expect).enumerate() {
            let same = a.seed_id == b.seed_id
                && a.energy == b.energy
                && a.execs == b.execs
                && a.discoveries == b.discoveries
                && a.doublings == b.doublings
                && a.crashes == b.crashes;
            if !same {
                first_diff = Some(format!(
                    "task {i}: sim {} e{} x{} d{} b{} vs direct {} e{} x{} d{} b{}",
                    a.seed_id.short(),
                    a.energy,
                    a.execs,
                    a.discoveries.len(),
                    a.doublings.len(),
                    b.seed_id.short(),
                    b.energy,
                    b.execs,
                    b.discoveries.len(),
                    b.doublings.len()
                ));
                break;
            }
        }
        if first_diff.is_none() && report.tasks.len() != expect.len() {
            first_diff = Some(format!("{} tasks vs {}", report.tasks.len(), expect.len()));
        }
        let execs: u64 = expect.iter().map(|t| t.execs).sum();
        let found: usize = expect.iter().map(|t| t.discoveries.len()).sum();
        let doublings: usize = expect.iter().map(|t| t.doublings.len()).sum();
        match first_diff {
            None => details.push(format!(
                "{target}: {} tasks, {execs} execs, {found} discoveries, {doublings} doublings identical",
                expect.len()
            )),
            Some(d) => {
                pass = false;
                details.push(format!("{target}: diverged at {d}"));
            }
        }
    }
    Ok((pass, details.join("; ")))
}

// ---------------------------------------------------------------- 7

fn c7_protocol() -> Outcome {
    let mut runner = TestRunner::new(Config::default());
    let strategy = messages::message();
    let mut failures = 0u64;
    let n = 100_000u64;
    for _ in 0..n {
        let msg = strategy.new_tree(&mut runner).map_err(err)?.current();
        let ok = match encode(&msg) {
            Ok(bytes) => matches!(decode(&bytes), Ok((back, used)) if back == msg && used == bytes.len()),
            Err(_) => false,
        };
        if !ok {
            failures += 1;
        }
    }

    let streams = 2_000u64;
    let batch = vec(messages::message(), 1..16);
    let cuts = vec(1usize..64, 1..32);
    let mut stream_failures = 0u64;
    for _ in 0..streams {
        let msgs = batch.new_tree(&mut runner).map_err(err)?.current();
        let cuts = cuts.new_tree(&mut runner).map_err(err)?.current();
        let bytes: Vec<u8> = msgs.iter().flat_map(|m| encode(m).unwrap_or_default()).collect();
        let mut reader = FrameReader::new();
        let mut out = Vec::new();
        let (mut pos, mut k) = (0, 0);
        let mut broken = false;
        while pos < bytes.len() && !broken {
            let step = cuts[k % cuts.len()].min(bytes.len() - pos);
            reader.push(&bytes[pos..pos + step]);
            pos += step;
            k += 1;
            loop {
                match reader.next_message() {
                    Ok(Some(m)) => out.push(m),
                    Ok(None) => break,
                    Err(_) => {
                        broken = true;
                        break;
                    }
                }
            }
        }
        if broken || out != msgs || reader.buffered() != 0 {
            stream_failures += 1;
        }
    }
    Ok((
        failures == 0 && stream_failures == 0,
        format!(
            "{n} random messages, {failures} failures; {streams} chunked streams, {stream_failures} failures"
        ),
    ))
}

// ---------------------------------------------------------------- 8

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort_unstable();
    v[v.len() / 2]
}

fn c8_instant_sync() -> Outcome {
    let store = Arc::new(SeedStore::new(StoreConfig::default()));
    let server = serve_store(TcpListener::bind("127.0.0.1:0").map_err(err)?, store).map_err(err)?;
    let addr = server.addr();
    let mut a = RemoteStore::connect(addr).map_err(err)?;
    let mut b = RemoteStore::connect(addr).map_err(err)?;
    let mut signals = RemoteStore::connect(addr).map_err(err)?.into_signal_stream().map_err(err)?;

    let (tx, rx) = mpsc::channel::<(SeedId, Instant)>();
    let listener = thread::spawn(move || {
        while let Ok(Message::UpdateSignal { seed_id }) = signals.recv() {
            if tx.send((seed_id, Instant::now())).is_err() {
                break;
            }
        }
    });

    let trials = 500;
    let mut rtts = Vec::new();
    let mut fetch_lags = Vec::new();
    let mut signal_lags = Vec::new();
    let mut retries = 0u64;
    for i in 0..trials {
        // round trip baseline on B's connection
        let t = Instant::now();
        b.stats().map_err(err)?;
        rtts.push(t.elapsed());

        let seed = Seed::new(format!("seed-{i}").into_bytes(), None, i, "worker-a");
        let id = seed.id;
        a.put_seed(seed, FuzzStatus::discovered(1, 1, 1)).map_err(err)?;
        let acked = Instant::now();
        let mut attempts = 0;
        loop {
            attempts += 1;
            if b.get_seed(id).is_ok() {
                break;
            }
            if attempts > 1000 {
                return Ok((false, format!("seed {i} never became fetchable")));
            }
        }
        retries += attempts - 1;
        fetch_lags.push(acked.elapsed());
        let (sid, at) = rx.recv_timeout(Duration::from_secs(5)).map_err(err)?;
        if sid != id {
            return Ok((false, format!("signal for wrong seed at trial {i}")));
        }
        // lag from the end of A's put; zero if the signal beat the reply
        signal_lags.push(at.saturating_duration_since(acked));
    }
    drop(rx);
    let rtt = median(rtts);
    let fetch = median(fetch_lags.clone());
    let sig = median(signal_lags.clone());
    let worst_sig = *signal_lags.iter().max().unwrap_or(&Duration::ZERO);
    drop(server);
    let _ = listener.join();
    // a first-try fetch issued right after A's reply bounds availability by
    // that one request's round trip; the push signal must beat any poll
    let poll = Duration::from_millis(DEFAULT_RETRY_AFTER_MS as u64);
    let pass = retries == 0 && worst_sig < poll;
    Ok((
        pass,
        format!(
            "{trials} puts by A: B fetched every one on the first request (retries {retries}); \
             median store RTT {:.0} us, B fetch {:.0} us; update signal lag median {:.0} us, max {:.0} us \
             against a {} ms poll interval",
            rtt.as_secs_f64() * 1e6,
            fetch.as_secs_f64() * 1e6,
            sig.as_secs_f64() * 1e6,
            worst_sig.as_secs_f64() * 1e6,
            DEFAULT_RETRY_AFTER_MS
        ),
    ))
}
