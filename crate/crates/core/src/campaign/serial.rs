//! Single-instance baseline: one worker, no network, evaluation inline after
//! every task.

use std::sync::Arc;

use super::report::{CampaignReport, CampaignTotals, TaskRecord};
use super::{describe, seed_corpus, summarize_worker, CampaignConfig, CampaignError};
use crate::scheduler::{Budget, Input, QueueSnapshot, SeedQueue};
use crate::seedstore::{InProcessStore, SeedStore, StatusDelta, StoreAccess, StoreConfig};
use crate::worker::{Clock, Evaluator, VirtualClock, Worker, WorkerConfig};

fn enqueue(queue: &mut SeedQueue, store: &mut InProcessStore, input: Input) -> Result<(), CampaignError> {
    if let Input::SeedReady {
        seed_id,
        status,
        discovered_at,
        len,
        edges,
    } = input
    {
        let changes = queue
            .update_queue(seed_id, status, discovered_at, len, edges)
            .map_err(|e| CampaignError::Node {
                node: "serial".into(),
                msg: e.to_string(),
            })?;
        for ch in changes {
            store.update_status(ch.seed_id, StatusDelta::set_favored(ch.favored))?;
        }
    }
    Ok(())
}

pub fn run_serial(cfg: &CampaignConfig) -> Result<CampaignReport, CampaignError> {
    let budget = cfg.budget()?;
    let target = cfg.target_handle()?;
    let store = Arc::new(SeedStore::new(StoreConfig::default()));
    let mut local = InProcessStore(store.clone());
    let mut queue = SeedQueue::new();
    for input in seed_corpus(&mut local, &target, &cfg.corpus_inputs(&target)?)? {
        enqueue(&mut queue, &mut local, input)?;
    }

    let clock = VirtualClock::new(1.0);
    let mut wc = WorkerConfig::new("w0", 0, cfg.seed);
    wc.accept_new_bucket = cfg.accept_new_bucket;
    let mut w = Worker::new(wc, target.clone(), InProcessStore(store.clone()), clock.clone());
    let mut evaluator = Evaluator::new(target.map_size, cfg.accept_new_bucket);
    w.bootstrap()?;

    let mut tasks = Vec::new();
    loop {
        let done = match budget {
            Budget::Execs(n) => w.counters().execs >= n,
            Budget::Seconds(s) => clock.now_us() >= s.saturating_mul(1_000_000),
        };
        if done {
            break;
        }
        let Some(d) = queue.dispatch_head() else { break };
        let start = clock.now_us();
        let rep = w.fuzz_one(d.seed_id, d.energy)?;
        tasks.push(TaskRecord {
            worker: "w0".into(),
            start_us: start,
            end_us: clock.now_us(),
            seed_id: d.seed_id,
            energy: d.energy,
            execs: rep.execs,
            discoveries: rep.discoveries,
            doublings: rep.doublings,
            crashes: (rep.crashes.len() + rep.hangs.len()) as u64,
        });
        let ids = local.pop_pending(usize::MAX)?;
        if ids.is_empty() {
            continue;
        }
        let er = evaluator.evaluate_batch(&ids, &mut local, &target, clock.now_us())?;
        for (id, status) in er.accepted {
            let input = describe(&mut local, &target, id, status)?;
            enqueue(&mut queue, &mut local, input)?;
        }
    }
    w.flush_time();

    let end = clock.now_us();
    let summary = summarize_worker("w0", 1.0, &w.counters());
    let snapshot = QueueSnapshot {
        time_us: end,
        paths: queue.len() as u64,
        favored: queue.favored_count() as u64,
        pending: 0,
        eval_nodes: 0,
        total_execs: summary.execs,
        cycles: queue.cycles(),
    };
    let totals = CampaignTotals {
        mode: "serial".into(),
        target: target.spec(),
        workers: 1,
        seed: cfg.seed,
        duration_us: end,
        total_execs: summary.execs,
        paths: queue.len() as u64,
        new_seeds: summary.new_seeds,
        doubling_events: summary.doubling_events,
        crashes: store.crash_count(),
        hangs: store.hang_count(),
        overhead: super::compute_overhead(std::slice::from_ref(&summary)).ok(),
        store: store.stats(),
        eval: Default::default(),
    };
    Ok(CampaignReport {
        config: CampaignConfig {
            workers: 1,
            ..cfg.clone()
        },
        totals,
        workers: vec![summary],
        tasks,
        snapshots: vec![snapshot],
        crashes: store.crashes(),
    })
}
