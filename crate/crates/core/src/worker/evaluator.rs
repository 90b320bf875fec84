//! Two-stage deduplication of pending seeds.
//!
//! Content addressing already rules out byte-identical duplicates, so the
//! first stage only checks that fetched content hashes to its id. The second
//! stage reconstructs coverage and tests it against the evaluator's cumulative
//! map, which is the union of every Active seed it knows about.

use std::collections::HashSet;

use log::debug;

use crate::coverage::{reconstruct, CoverageMap, NoveltyResult};
use crate::seedstore::{ActivateOutcome, CrashRecord, FuzzStatus, SeedId, StoreAccess, StoreError};
use crate::target::{ExecOutcome, TargetHandle};

use super::WorkerError;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EvalReport {
    pub accepted: Vec<(SeedId, FuzzStatus)>,
    pub discarded: Vec<SeedId>,
    pub crashes: Vec<SeedId>,
    /// Summed execution time of the batch's reconstructions.
    pub work_us: u64,
    /// Active seeds reconstructed while syncing before the batch.
    pub synced: usize,
}

#[derive(Debug)]
pub struct Evaluator {
    map: CoverageMap,
    known: HashSet<SeedId>,
    active_seen: usize,
    accept_new_bucket: bool,
    sync_work_us: u64,
}

impl Evaluator {
    pub fn new(map_size: usize, accept_new_bucket: bool) -> Self {
        Evaluator {
            map: CoverageMap::new(map_size),
            known: HashSet::new(),
            active_seen: 0,
            accept_new_bucket,
            sync_work_us: 0,
        }
    }

    pub fn map(&self) -> &CoverageMap {
        &self.map
    }

    /// Folds Active seeds activated since the last sync into the map.
    pub fn sync(&mut self, store: &mut dyn StoreAccess, target: &TargetHandle) -> Result<usize, WorkerError> {
        let ids = store.list_active(self.active_seen)?;
        self.active_seen += ids.len();
        let mut n = 0;
        for id in ids {
            if !self.known.insert(id) {
                continue;
            }
            let seed = match store.get_seed(id) {
                Ok(s) => s,
                Err(StoreError::NotFound(_)) => continue,
                Err(e) => return Err(e.into()),
            };
            let r = reconstruct(&seed.content, target)?;
            self.sync_work_us += r.exec_time_us;
            self.map.merge_from(&r.coverage)?;
            n += 1;
        }
        Ok(n)
    }

    /// Evaluates popped pending seeds. Every id ends Active or Discarded.
    pub fn evaluate_batch(
        &mut self,
        ids: &[SeedId],
        store: &mut dyn StoreAccess,
        target: &TargetHandle,
        now_us: u64,
    ) -> Result<EvalReport, WorkerError> {
        self.sync_work_us = 0;
        let mut report = EvalReport {
            synced: self.sync(store, target)?,
            ..Default::default()
        };
        report.work_us += self.sync_work_us;
        for &id in ids {
            let seed = match store.get_seed(id) {
                Ok(s) => s,
                Err(StoreError::NotFound(_)) => continue,
                Err(e) => return Err(e.into()),
            };
            if !seed.verify() {
                return Err(StoreError::HashMismatch(id).into());
            }
            let r = reconstruct(&seed.content, target)?;
            report.work_us += r.exec_time_us;
            if r.outcome != ExecOutcome::Ok {
                let rec = CrashRecord::new(seed.content, seed.parent, r.outcome, now_us);
                store.put_crash(rec)?;
                store.discard_seed(id)?;
                report.crashes.push(id);
                report.discarded.push(id);
                continue;
            }
            let keep = match r.coverage.novelty_against(&self.map)? {
                NoveltyResult::NewEdge => true,
                NoveltyResult::NewBucket => self.accept_new_bucket,
                NoveltyResult::NoNovelty => false,
            };
            if !keep {
                store.discard_seed(id)?;
                report.discarded.push(id);
                continue;
            }
            match store.activate(id, r.coverage.digest())? {
                ActivateOutcome::Activated(status) => {
                    self.map.merge_from(&r.coverage)?;
                    self.known.insert(id);
                    report.accepted.push((id, status));
                }
                ActivateOutcome::DuplicateCoverage => report.discarded.push(id),
            }
        }
        debug!(
            "evaluated {} seeds: {} accepted, {} discarded",
            ids.len(),
            report.accepted.len(),
            report.discarded.len()
        );
        Ok(report)
    }
}
