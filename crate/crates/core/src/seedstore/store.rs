use std::collections::{HashMap, VecDeque};
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crossbeam_channel::{Receiver, Sender};
use dashmap::mapref::entry::Entry as MapEntry;
use dashmap::DashMap;
use parking_lot::{Mutex, RwLock};

use super::log::{encode_record, read_log, LogRecord};
use super::{
    ActivateOutcome, CrashInfo, CrashRecord, FuzzStatus, PutOutcome, Seed, SeedId, SeedState,
    StatusDelta, StoreAccess, StoreError, StoreStats,
};
use crate::mutation::DEFAULT_MAX_INPUT_LEN;
use crate::target::ExecOutcome;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StoreConfig {
    pub max_input_len: usize,
    /// Keep the content of discarded seeds for later inspection.
    pub audit: bool,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            max_input_len: DEFAULT_MAX_INPUT_LEN,
            audit: false,
        }
    }
}

struct Entry {
    seed: Option<Arc<Seed>>,
    status: FuzzStatus,
}

/// In-memory seed store with an optional append-only record log.
pub struct SeedStore {
    cfg: StoreConfig,
    seeds: DashMap<SeedId, Entry>,
    pending: Mutex<VecDeque<SeedId>>,
    active_order: RwLock<Vec<SeedId>>,
    digests: Mutex<HashMap<[u8; 32], SeedId>>,
    crashes: DashMap<SeedId, CrashInfo>,
    crash_order: Mutex<Vec<CrashInfo>>,
    discarded: AtomicU64,
    hangs: AtomicU64,
    subscribers: Mutex<Vec<Sender<SeedId>>>,
    log: Mutex<Option<Box<dyn Write + Send>>>,
}

impl SeedStore {
    pub fn new(cfg: StoreConfig) -> Self {
        SeedStore {
            cfg,
            seeds: DashMap::new(),
            pending: Mutex::new(VecDeque::new()),
            active_order: RwLock::new(Vec::new()),
            digests: Mutex::new(HashMap::new()),
            crashes: DashMap::new(),
            crash_order: Mutex::new(Vec::new()),
            discarded: AtomicU64::new(0),
            hangs: AtomicU64::new(0),
            subscribers: Mutex::new(Vec::new()),
            log: Mutex::new(None),
        }
    }

    /// Appends every subsequent mutation to `sink`.
    pub fn with_log(self, sink: Box<dyn Write + Send>) -> Self {
        *self.log.lock() = Some(sink);
        self
    }

    pub fn config(&self) -> StoreConfig {
        self.cfg
    }

    /// Rebuilds a store from a record log. Seeds that were popped for
    /// evaluation but never resolved go back on the pending queue.
    pub fn replay(cfg: StoreConfig, bytes: &[u8]) -> Result<Self, StoreError> {
        let store = SeedStore::new(cfg);
        let records = read_log(bytes).map_err(|e| StoreError::Log(e.to_string()))?;
        let mut popped: Vec<SeedId> = Vec::new();
        for rec in records {
            match rec {
                LogRecord::PutSeed { seed, status } => {
                    store.put_seed(seed, status)?;
                }
                LogRecord::Status { id, status } => {
                    if let Some(mut e) = store.seeds.get_mut(&id) {
                        e.status = status;
                    }
                }
                LogRecord::Popped { ids } => {
                    let mut q = store.pending.lock();
                    for id in ids {
                        if let Some(pos) = q.iter().position(|p| *p == id) {
                            q.remove(pos);
                            popped.push(id);
                        }
                    }
                }
                LogRecord::Activated { id, digest, .. } => {
                    store.activate(id, digest)?;
                }
                LogRecord::Discarded { id } => {
                    store.discard_seed(id)?;
                }
                LogRecord::Crash { record } => {
                    store.put_crash(record)?;
                }
            }
        }
        let mut q = store.pending.lock();
        for id in popped {
            let still_pending = store
                .seeds
                .get(&id)
                .map(|e| e.status.state == SeedState::PendingEvaluation)
                .unwrap_or(false);
            if still_pending {
                q.push_back(id);
            }
        }
        drop(q);
        Ok(store)
    }

    fn append(&self, rec: &LogRecord) {
        let mut guard = self.log.lock();
        if let Some(sink) = guard.as_mut() {
            let bytes = encode_record(rec);
            if let Err(e) = sink.write_all(&bytes).and_then(|_| sink.flush()) {
                log::error!("store log write failed, disabling log: {e}");
                *guard = None;
            }
        }
    }

    /// Receives the id of every freshly stored pending seed.
    pub fn subscribe(&self) -> Receiver<SeedId> {
        let (tx, rx) = crossbeam_channel::unbounded();
        self.subscribers.lock().push(tx);
        rx
    }

    pub fn put_seed(&self, seed: Seed, status: FuzzStatus) -> Result<PutOutcome, StoreError> {
        if seed.content.len() > self.cfg.max_input_len {
            return Err(StoreError::TooLarge {
                len: seed.content.len(),
                max: self.cfg.max_input_len,
            });
        }
        if !seed.verify() {
            return Err(StoreError::HashMismatch(seed.id));
        }
        let id = seed.id;
        match self.seeds.entry(id) {
            MapEntry::Occupied(_) => Ok(PutOutcome { id, fresh: false }),
            MapEntry::Vacant(slot) => {
                if status.state == SeedState::Discarded {
                    return Err(StoreError::InvalidTransition {
                        id,
                        from: SeedState::PendingEvaluation,
                        to: SeedState::Discarded,
                    });
                }
                self.append(&LogRecord::PutSeed {
                    seed: seed.clone(),
                    status,
                });
                slot.insert(Entry {
                    seed: Some(Arc::new(seed)),
                    status,
                });
                match status.state {
                    SeedState::Active => self.active_order.write().push(id),
                    _ => {
                        self.pending.lock().push_back(id);
                        self.subscribers.lock().retain(|tx| tx.send(id).is_ok());
                    }
                }
                Ok(PutOutcome { id, fresh: true })
            }
        }
    }

    /// Returns the seed unless it is unknown or was discarded.
    pub fn get_seed(&self, id: SeedId) -> Result<Seed, StoreError> {
        let e = self.seeds.get(&id).ok_or(StoreError::NotFound(id))?;
        if e.status.state == SeedState::Discarded {
            return Err(StoreError::NotFound(id));
        }
        e.seed
            .as_deref()
            .cloned()
            .ok_or(StoreError::NotFound(id))
    }

    /// Content of any stored seed, including discarded ones when the store
    /// runs in audit mode.
    pub fn audit_get(&self, id: SeedId) -> Option<Seed> {
        self.seeds.get(&id).and_then(|e| e.seed.as_deref().cloned())
    }

    pub fn get_status(&self, id: SeedId) -> Result<FuzzStatus, StoreError> {
        self.seeds
            .get(&id)
            .map(|e| e.status)
            .ok_or(StoreError::NotFound(id))
    }

    pub fn update_status(&self, id: SeedId, delta: StatusDelta) -> Result<FuzzStatus, StoreError> {
        let mut e = self.seeds.get_mut(&id).ok_or(StoreError::NotFound(id))?;
        let mut next = e.status;
        if let Some(to) = delta.state {
            if to != next.state && !next.state.can_become(to) {
                return Err(StoreError::InvalidTransition {
                    id,
                    from: next.state,
                    to,
                });
            }
            if to != next.state {
                return Err(StoreError::Protocol(
                    "state changes go through activate or discard".into(),
                ));
            }
        }
        next.fuzz_count += delta.fuzz_count_inc as u64;
        if let Some(f) = delta.favored {
            next.favored = f;
        }
        if let Some(h) = delta.handicap {
            next.handicap = h;
        }
        e.status = next;
        self.append(&LogRecord::Status { id, status: next });
        Ok(next)
    }

    /// Removes up to `max` ids from the front of the pending queue.
    pub fn pop_pending(&self, max: usize) -> Vec<SeedId> {
        let mut q = self.pending.lock();
        let n = max.min(q.len());
        let ids: Vec<SeedId> = q.drain(..n).collect();
        if !ids.is_empty() {
            self.append(&LogRecord::Popped { ids: ids.clone() });
        }
        ids
    }

    pub fn pending_len(&self) -> usize {
        self.pending.lock().len()
    }

    /// Marks a pending seed Active unless an Active seed already has the same
    /// coverage digest, in which case the seed is discarded.
    pub fn activate(&self, id: SeedId, digest: [u8; 32]) -> Result<ActivateOutcome, StoreError> {
        let mut e = self.seeds.get_mut(&id).ok_or(StoreError::NotFound(id))?;
        if !e.status.state.can_become(SeedState::Active) {
            return Err(StoreError::InvalidTransition {
                id,
                from: e.status.state,
                to: SeedState::Active,
            });
        }
        let mut digests = self.digests.lock();
        if digests.contains_key(&digest) {
            drop(digests);
            self.discard_locked(id, &mut e);
            return Ok(ActivateOutcome::DuplicateCoverage);
        }
        digests.insert(digest, id);
        e.status.state = SeedState::Active;
        let status = e.status;
        self.active_order.write().push(id);
        self.append(&LogRecord::Activated { id, digest, status });
        Ok(ActivateOutcome::Activated(status))
    }

    fn discard_locked(&self, id: SeedId, e: &mut Entry) {
        e.status.state = SeedState::Discarded;
        if !self.cfg.audit {
            e.seed = None;
        }
        self.discarded.fetch_add(1, Ordering::Relaxed);
        self.append(&LogRecord::Discarded { id });
    }

    pub fn discard_seed(&self, id: SeedId) -> Result<(), StoreError> {
        let mut e = self.seeds.get_mut(&id).ok_or(StoreError::NotFound(id))?;
        match e.status.state {
            SeedState::Discarded => Ok(()),
            SeedState::Active => Err(StoreError::InvalidTransition {
                id,
                from: SeedState::Active,
                to: SeedState::Discarded,
            }),
            SeedState::PendingEvaluation => {
                self.discard_locked(id, &mut e);
                Ok(())
            }
        }
    }

    pub fn put_crash(&self, rec: CrashRecord) -> Result<bool, StoreError> {
        if rec.outcome == ExecOutcome::Ok {
            return Err(StoreError::NotACrash(rec.id));
        }
        if SeedId::of(&rec.content) != rec.id {
            return Err(StoreError::HashMismatch(rec.id));
        }
        let info = CrashInfo {
            id: rec.id,
            outcome: rec.outcome,
            discovered_at: rec.discovered_at,
        };
        match self.crashes.entry(rec.id) {
            MapEntry::Occupied(_) => Ok(false),
            MapEntry::Vacant(slot) => {
                self.append(&LogRecord::Crash { record: rec });
                slot.insert(info);
                if info.outcome == ExecOutcome::Hang {
                    self.hangs.fetch_add(1, Ordering::Relaxed);
                }
                self.crash_order.lock().push(info);
                Ok(true)
            }
        }
    }

    /// Crash and hang records in insertion order.
    pub fn crashes(&self) -> Vec<CrashInfo> {
        self.crash_order.lock().clone()
    }

    pub fn crash_count(&self) -> u64 {
        self.crashes.len() as u64 - self.hangs.load(Ordering::Relaxed)
    }

    pub fn hang_count(&self) -> u64 {
        self.hangs.load(Ordering::Relaxed)
    }

    pub fn list_active(&self, since: usize) -> Vec<SeedId> {
        let order = self.active_order.read();
        order.get(since..).map(<[SeedId]>::to_vec).unwrap_or_default()
    }

    pub fn active_count(&self) -> usize {
        self.active_order.read().len()
    }

    pub fn stats(&self) -> StoreStats {
        let seeds = self.seeds.len() as u64;
        let active = self.active_count() as u64;
        let discarded = self.discarded.load(Ordering::Relaxed);
        StoreStats {
            seeds,
            active,
            pending: seeds - active - discarded,
            discarded,
            crashes: self.crash_count(),
            hangs: self.hang_count(),
        }
    }
}

/// [`StoreAccess`] over a store in the same process.
#[derive(Clone)]
pub struct InProcessStore(pub Arc<SeedStore>);

impl std::ops::Deref for InProcessStore {
    type Target = SeedStore;
    fn deref(&self) -> &SeedStore {
        &self.0
    }
}

impl StoreAccess for InProcessStore {
    fn put_seed(&mut self, seed: Seed, status: FuzzStatus) -> Result<PutOutcome, StoreError> {
        SeedStore::put_seed(self, seed, status)
    }
    fn get_seed(&mut self, id: SeedId) -> Result<Seed, StoreError> {
        SeedStore::get_seed(self, id)
    }
    fn get_status(&mut self, id: SeedId) -> Result<FuzzStatus, StoreError> {
        SeedStore::get_status(self, id)
    }
    fn update_status(&mut self, id: SeedId, delta: StatusDelta) -> Result<FuzzStatus, StoreError> {
        SeedStore::update_status(self, id, delta)
    }
    fn pop_pending(&mut self, max: usize) -> Result<Vec<SeedId>, StoreError> {
        Ok(SeedStore::pop_pending(self, max))
    }
    fn activate(&mut self, id: SeedId, digest: [u8; 32]) -> Result<ActivateOutcome, StoreError> {
        SeedStore::activate(self, id, digest)
    }
    fn discard_seed(&mut self, id: SeedId) -> Result<(), StoreError> {
        SeedStore::discard_seed(self, id)
    }
    fn put_crash(&mut self, rec: CrashRecord) -> Result<bool, StoreError> {
        SeedStore::put_crash(self, rec)
    }
    fn list_active(&mut self, since: usize) -> Result<Vec<SeedId>, StoreError> {
        Ok(SeedStore::list_active(self, since))
    }
}
