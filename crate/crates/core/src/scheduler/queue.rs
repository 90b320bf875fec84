//! Prioritized seed queue with top-rated favoring and rotation.
//!
//! Ordering key: favored first, then least recently dispatched (never
//! dispatched sorts first), then higher score, earlier `discovered_at`, and
//! finally `SeedId`. Dispatching a seed stamps it with a fresh sequence
//! number, which rotates it to the tail of its class.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use super::score::{perform_score, QueueAggregates};
use crate::seedstore::{FuzzStatus, SeedId, SeedState};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedQueueEntry {
    pub seed_id: SeedId,
    /// perform_score at the time the entry was last (re)positioned.
    pub score: u32,
    pub favored: bool,
    /// Dispatch sequence number; 0 means never dispatched.
    pub last_dispatched: u64,
    pub fuzz_count: u64,
    pub discovered_at: u64,
    pub status: FuzzStatus,
    /// Content length, for the top-rated cost.
    pub len: usize,
    /// Edges this seed covers.
    pub edges: Vec<u32>,
    /// Number of edges for which this seed is the top-rated holder.
    pub edges_held: u32,
}

impl SeedQueueEntry {
    fn cost(&self) -> u128 {
        self.status.exec_time_us as u128 * self.len.max(1) as u128
    }

    /// Highest covered edge index, used by the static-partition baseline.
    pub fn dominant_edge(&self) -> Option<u32> {
        self.edges.iter().copied().max()
    }
}

type Key = (bool, u64, Reverse<u32>, u64, SeedId);

fn key_of(e: &SeedQueueEntry) -> Key {
    (!e.favored, e.last_dispatched, Reverse(e.score), e.discovered_at, e.seed_id)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueueError {
    #[error("seed {0} is not Active")]
    NotActive(SeedId),
    #[error("seed {0} is not queued")]
    Unknown(SeedId),
}

/// A favored flag that changed during an update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FavoredChange {
    pub seed_id: SeedId,
    pub favored: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dispatch {
    pub seed_id: SeedId,
    pub energy: u32,
    pub fuzz_count: u64,
}

#[derive(Debug, Default)]
pub struct SeedQueue {
    entries: HashMap<SeedId, SeedQueueEntry>,
    order: BTreeSet<Key>,
    top_rated: BTreeMap<u32, SeedId>,
    aggregates: QueueAggregates,
    dispatch_seq: u64,
    cycles: u32,
    pass_start: u64,
}

impl SeedQueue {
    pub fn new() -> Self {
        SeedQueue::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &SeedId) -> Option<&SeedQueueEntry> {
        self.entries.get(id)
    }

    pub fn contains(&self, id: &SeedId) -> bool {
        self.entries.contains_key(id)
    }

    pub fn aggregates(&self) -> &QueueAggregates {
        &self.aggregates
    }

    /// Completed passes over the whole queue.
    pub fn cycles(&self) -> u32 {
        self.cycles
    }

    /// Entries in dispatch order.
    pub fn iter(&self) -> impl Iterator<Item = &SeedQueueEntry> + '_ {
        self.order.iter().map(|k| &self.entries[&k.4])
    }

    pub fn favored_count(&self) -> usize {
        self.entries.values().filter(|e| e.favored).count()
    }

    fn reposition(&mut self, id: SeedId, f: impl FnOnce(&mut SeedQueueEntry)) {
        let e = self.entries.get_mut(&id).expect("queued entry");
        self.order.remove(&key_of(e));
        f(e);
        self.order.insert(key_of(e));
    }

    /// Inserts a newly Active seed or refreshes the status of a queued one.
    /// New entries get `handicap` set to the current cycle count.
    pub fn update_queue(
        &mut self,
        seed_id: SeedId,
        mut status: FuzzStatus,
        discovered_at: u64,
        len: usize,
        edges: Vec<u32>,
    ) -> Result<Vec<FavoredChange>, QueueError> {
        if status.state != SeedState::Active {
            return Err(QueueError::NotActive(seed_id));
        }
        if let Some(old) = self.entries.get(&seed_id) {
            let old_status = old.status;
            status.handicap = old_status.handicap;
            status.fuzz_count = status.fuzz_count.max(old.fuzz_count);
            self.aggregates.remove(&old_status);
            self.aggregates.add(&status);
            let score = perform_score(&status, &self.aggregates);
            self.reposition(seed_id, |e| {
                e.status = status;
                e.fuzz_count = status.fuzz_count;
                e.score = score;
            });
            return Ok(Vec::new());
        }

        status.handicap = self.cycles;
        self.aggregates.add(&status);
        let mut edges = edges;
        edges.sort_unstable();
        edges.dedup();
        let entry = SeedQueueEntry {
            seed_id,
            score: perform_score(&status, &self.aggregates),
            favored: false,
            last_dispatched: 0,
            fuzz_count: status.fuzz_count,
            discovered_at,
            status,
            len,
            edges,
            edges_held: 0,
        };
        let cost = entry.cost();
        self.order.insert(key_of(&entry));
        let edges = entry.edges.clone();
        self.entries.insert(seed_id, entry);

        // (seed, delta in held edges)
        let mut held: BTreeMap<SeedId, i64> = BTreeMap::new();
        for edge in edges {
            match self.top_rated.get(&edge) {
                Some(holder) if self.entries[holder].cost() <= cost => {}
                Some(holder) => {
                    *held.entry(*holder).or_default() -= 1;
                    *held.entry(seed_id).or_default() += 1;
                    self.top_rated.insert(edge, seed_id);
                }
                None => {
                    *held.entry(seed_id).or_default() += 1;
                    self.top_rated.insert(edge, seed_id);
                }
            }
        }

        let mut changes = Vec::new();
        for (id, delta) in held {
            let e = &self.entries[&id];
            let now_held = (e.edges_held as i64 + delta) as u32;
            let favored = now_held > 0;
            let was = e.favored;
            self.reposition(id, |e| {
                e.edges_held = now_held;
                e.favored = favored;
            });
            if favored != was {
                changes.push(FavoredChange { seed_id: id, favored });
            }
        }
        Ok(changes)
    }

    /// Highest-priority entry accepted by `eligible`, without dispatching it.
    pub fn peek_eligible(&self, mut eligible: impl FnMut(&SeedQueueEntry) -> bool) -> Option<SeedId> {
        self.order
            .iter()
            .map(|k| &self.entries[&k.4])
            .find(|e| eligible(e))
            .map(|e| e.seed_id)
    }

    /// Dispatches `id`: computes energy against the current aggregates,
    /// increments fuzz_count, and rotates it to the tail of its class.
    pub fn dispatch(&mut self, id: SeedId) -> Result<Dispatch, QueueError> {
        let e = self.entries.get(&id).ok_or(QueueError::Unknown(id))?;
        // a seed that has already been dispatched in the current pass means
        // every seed ahead of it has been too: a full cycle has elapsed
        if e.last_dispatched > self.pass_start {
            self.cycles += 1;
            self.pass_start = self.dispatch_seq;
        }
        let energy = perform_score(&e.status, &self.aggregates);
        self.dispatch_seq += 1;
        let seq = self.dispatch_seq;
        self.reposition(id, |e| {
            e.last_dispatched = seq;
            e.fuzz_count += 1;
            e.status.fuzz_count = e.fuzz_count;
            e.score = energy;
        });
        let e = &self.entries[&id];
        Ok(Dispatch {
            seed_id: id,
            energy,
            fuzz_count: e.fuzz_count,
        })
    }

    /// Dispatches the queue head.
    pub fn dispatch_head(&mut self) -> Option<Dispatch> {
        let id = self.peek_eligible(|_| true)?;
        self.dispatch(id).ok()
    }

    /// Current top-rated holder of `edge`.
    pub fn top_rated(&self, edge: u32) -> Option<SeedId> {
        self.top_rated.get(&edge).copied()
    }
}
