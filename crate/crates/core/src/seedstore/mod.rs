//! Seeds, fuzzing status, and crash records, plus the store that holds them.
//!
//! Every seed is addressed by the SHA-256 digest of its bytes. The store keeps
//! per-seed status, a FIFO of seeds waiting for evaluation, and the crash list.
//! Worker-side access goes through [`StoreAccess`], implemented both by the
//! in-process [`SeedStore`] and by the TCP client [`RemoteStore`].

mod cache;
mod log;
mod net;
mod store;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::target::ExecOutcome;

pub use cache::{CacheStats, LocalCache};
pub use log::{read_log, LogError, LogRecord};
pub use net::{serve_store, RemoteStore, StoreServer};
pub use store::{InProcessStore, SeedStore, StoreConfig};

/// Content hash identifying a seed.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SeedId(pub [u8; 32]);

impl SeedId {
    pub fn of(content: &[u8]) -> Self {
        SeedId(Sha256::digest(content).into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// First 12 hex digits, for logs.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..6])
    }
}

impl fmt::Display for SeedId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for SeedId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SeedId({})", self.short())
    }
}

impl FromStr for SeedId {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(SeedId(out))
    }
}

impl Serialize for SeedId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for SeedId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct Seed {
    pub id: SeedId,
    pub content: Vec<u8>,
    pub parent: Option<SeedId>,
    /// Campaign-clock microseconds.
    pub discovered_at: u64,
    /// Id of the worker that found it, or `"corpus"`.
    pub origin: String,
}

impl Seed {
    pub fn new(content: Vec<u8>, parent: Option<SeedId>, discovered_at: u64, origin: &str) -> Self {
        Seed {
            id: SeedId::of(&content),
            content,
            parent,
            discovered_at,
            origin: origin.to_string(),
        }
    }

    pub fn verify(&self) -> bool {
        SeedId::of(&self.content) == self.id
    }
}

impl fmt::Debug for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Seed")
            .field("id", &self.id)
            .field("len", &self.content.len())
            .field("parent", &self.parent)
            .field("discovered_at", &self.discovered_at)
            .field("origin", &self.origin)
            .finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedState {
    PendingEvaluation,
    Active,
    Discarded,
}

impl SeedState {
    /// Pending seeds resolve exactly once; nothing else changes state.
    pub fn can_become(self, next: SeedState) -> bool {
        matches!(
            (self, next),
            (SeedState::PendingEvaluation, SeedState::Active)
                | (SeedState::PendingEvaluation, SeedState::Discarded)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzStatus {
    pub depth: u32,
    pub handicap: u32,
    pub bitmap_size: u32,
    pub exec_time_us: u64,
    pub fuzz_count: u64,
    pub favored: bool,
    pub state: SeedState,
}

impl FuzzStatus {
    pub fn initial(bitmap_size: u32, exec_time_us: u64) -> Self {
        FuzzStatus {
            depth: 0,
            handicap: 0,
            bitmap_size,
            exec_time_us,
            fuzz_count: 0,
            favored: false,
            state: SeedState::Active,
        }
    }

    pub fn discovered(depth: u32, bitmap_size: u32, exec_time_us: u64) -> Self {
        FuzzStatus {
            depth,
            handicap: 0,
            bitmap_size,
            exec_time_us,
            fuzz_count: 0,
            favored: false,
            state: SeedState::PendingEvaluation,
        }
    }
}

/// A status mutation applied atomically by the store.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StatusDelta {
    pub fuzz_count_inc: u32,
    pub favored: Option<bool>,
    pub handicap: Option<u32>,
    pub state: Option<SeedState>,
}

impl StatusDelta {
    /// The update a worker applies when it starts fuzzing a seed.
    pub fn fuzzed() -> Self {
        StatusDelta {
            fuzz_count_inc: 1,
            ..Default::default()
        }
    }

    pub fn set_favored(favored: bool) -> Self {
        StatusDelta {
            favored: Some(favored),
            ..Default::default()
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct CrashRecord {
    pub id: SeedId,
    pub content: Vec<u8>,
    pub parent: Option<SeedId>,
    pub outcome: ExecOutcome,
    pub discovered_at: u64,
}

impl CrashRecord {
    pub fn new(content: Vec<u8>, parent: Option<SeedId>, outcome: ExecOutcome, discovered_at: u64) -> Self {
        CrashRecord {
            id: SeedId::of(&content),
            content,
            parent,
            outcome,
            discovered_at,
        }
    }
}

impl fmt::Debug for CrashRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CrashRecord")
            .field("id", &self.id)
            .field("len", &self.content.len())
            .field("outcome", &self.outcome)
            .field("discovered_at", &self.discovered_at)
            .finish()
    }
}

/// Crash list entry without content.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashInfo {
    pub id: SeedId,
    pub outcome: ExecOutcome,
    pub discovered_at: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreStats {
    pub seeds: u64,
    pub active: u64,
    pub pending: u64,
    pub discarded: u64,
    pub crashes: u64,
    pub hangs: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PutOutcome {
    pub id: SeedId,
    /// False when the id was already stored and the put was a no-op.
    pub fresh: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActivateOutcome {
    Activated(FuzzStatus),
    /// Another Active seed already has this exact coverage; the seed was
    /// discarded instead.
    DuplicateCoverage,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("seed {0} not found")]
    NotFound(SeedId),
    #[error("seed content of {len} bytes exceeds the {max}-byte limit")]
    TooLarge { len: usize, max: usize },
    #[error("seed {id}: transition {from:?} -> {to:?} not allowed")]
    InvalidTransition {
        id: SeedId,
        from: SeedState,
        to: SeedState,
    },
    #[error("seed {0}: content does not match its id")]
    HashMismatch(SeedId),
    #[error("crash record {0} has outcome Ok")]
    NotACrash(SeedId),
    #[error("store log: {0}")]
    Log(String),
    #[error("store connection: {0}")]
    Io(#[from] std::io::Error),
    #[error("store protocol: {0}")]
    Protocol(String),
}

impl StoreError {
    /// Wire code used in `StoreError` replies.
    pub fn code(&self) -> u8 {
        match self {
            StoreError::NotFound(_) => 1,
            StoreError::TooLarge { .. } => 2,
            StoreError::InvalidTransition { .. } => 3,
            StoreError::HashMismatch(_) => 4,
            StoreError::NotACrash(_) => 5,
            StoreError::Log(_) => 6,
            StoreError::Io(_) => 7,
            StoreError::Protocol(_) => 8,
        }
    }
}

/// Store operations needed by workers and evaluators.
pub trait StoreAccess {
    fn put_seed(&mut self, seed: Seed, status: FuzzStatus) -> Result<PutOutcome, StoreError>;
    fn get_seed(&mut self, id: SeedId) -> Result<Seed, StoreError>;
    fn get_status(&mut self, id: SeedId) -> Result<FuzzStatus, StoreError>;
    fn update_status(&mut self, id: SeedId, delta: StatusDelta) -> Result<FuzzStatus, StoreError>;
    fn pop_pending(&mut self, max: usize) -> Result<Vec<SeedId>, StoreError>;
    fn activate(&mut self, id: SeedId, coverage_digest: [u8; 32]) -> Result<ActivateOutcome, StoreError>;
    fn discard_seed(&mut self, id: SeedId) -> Result<(), StoreError>;
    /// Returns true when the record was new.
    fn put_crash(&mut self, rec: CrashRecord) -> Result<bool, StoreError>;
    /// Active seeds in activation order, starting at position `since`.
    fn list_active(&mut self, since: usize) -> Result<Vec<SeedId>, StoreError>;
}
