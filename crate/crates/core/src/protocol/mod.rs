//! Wire vocabulary and framing between workers, the scheduler, and the store.
//!
//! A frame is a 4-byte big-endian length, a tag byte, and the payload; the
//! length counts the tag plus the payload. Payload fields follow the order in
//! which they are declared on [`Message`] and use the encoding described in
//! the `wire` module: big-endian integers, `u32`-prefixed strings and byte
//! strings, `u32`-counted sequences, and 32 raw bytes per seed id.
//!
//! | tag  | message            | tag  | message            |
//! |------|--------------------|------|--------------------|
//! | 0x01 | RequestTask        | 0x20 | PutSeed            |
//! | 0x02 | TaskAssignment     | 0x21 | PutSeedOk          |
//! | 0x03 | NoTaskAvailable    | 0x22 | GetSeed            |
//! | 0x04 | UpdateSignal       | 0x23 | SeedData           |
//! | 0x05 | SetRole            | 0x24 | UpdateStatus       |
//! | 0x06 | EvalBatchRequest   | 0x25 | StatusValue        |
//! | 0x07 | EvalBatch          | 0x26 | DiscardSeed        |
//! | 0x08 | StatusReport       | 0x27 | PutCrash           |
//! | 0x09 | Shutdown           | 0x28 | Ack                |
//! | 0x10 | SeedsEvaluated     | 0x29 | StoreError         |
//! | 0x11 | EvaluatorIdle      | 0x2A | ListActive         |
//! |      |                    | 0x2B | SeedIds            |
//! |      |                    | 0x2C | Subscribe          |
//! |      |                    | 0x2D | GetStatus          |
//! |      |                    | 0x2E | GetStats           |
//! |      |                    | 0x2F | Stats              |
//! |      |                    | 0x30 | ActivateSeed       |
//! |      |                    | 0x31 | DuplicateCoverage  |
//! |      |                    | 0x32 | PutCrashOk         |
//! |      |                    | 0x33 | ListCrashes        |
//! |      |                    | 0x34 | Crashes            |
//!
//! Handshake: a worker's first message on its scheduler connection is a
//! `StatusReport`, which registers it.

mod io;
pub(crate) mod wire;

use std::fmt;

use bytes::{Buf, BufMut, BytesMut};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seedstore::{CrashInfo, CrashRecord, FuzzStatus, Seed, SeedId, StatusDelta, StoreStats};
use wire::{Reader, Writer};

pub use io::{read_message, write_message, Connection};

/// Largest accepted frame length (tag plus payload).
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;
pub const HEADER_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("frame needs at least {needed} more bytes")]
    Incomplete { needed: usize },
    #[error("unknown message tag {0:#04x}")]
    UnknownTag(u8),
    #[error("frame length {0} exceeds the {MAX_FRAME_LEN}-byte limit")]
    FrameTooLarge(usize),
    #[error("frame length 0 has no tag")]
    EmptyFrame,
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("field out of range: {0}")]
    InvalidField(&'static str),
    #[error("connection: {0}")]
    Io(#[from] std::io::Error),
    #[error("unexpected message {0}")]
    Unexpected(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Fuzzing,
    Evaluating,
}

impl fmt::Display for NodeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeRole::Fuzzing => "fuzzing",
            NodeRole::Evaluating => "evaluating",
        })
    }
}

impl std::str::FromStr for NodeRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fuzzing" => Ok(NodeRole::Fuzzing),
            "evaluating" => Ok(NodeRole::Evaluating),
            _ => Err(format!("unknown role `{s}` (expected fuzzing or evaluating)")),
        }
    }
}

/// Cumulative per-worker counters carried by `StatusReport`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerCounters {
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

impl WorkerCounters {
    pub const FIELDS: usize = 11;

    pub fn as_array(&self) -> [u64; Self::FIELDS] {
        [
            self.tasks,
            self.execs,
            self.dry_runs,
            self.new_seeds,
            self.doubling_events,
            self.crashes,
            self.hangs,
            self.evaluated,
            self.accepted,
            self.fuzzing_us,
            self.non_fuzzing_us,
        ]
    }

    pub fn from_array(v: [u64; Self::FIELDS]) -> Self {
        WorkerCounters {
            tasks: v[0],
            execs: v[1],
            dry_runs: v[2],
            new_seeds: v[3],
            doubling_events: v[4],
            crashes: v[5],
            hangs: v[6],
            evaluated: v[7],
            accepted: v[8],
            fuzzing_us: v[9],
            non_fuzzing_us: v[10],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    RequestTask { worker_id: String },
    TaskAssignment { seed_id: SeedId, energy: u32 },
    NoTaskAvailable { retry_after_ms: u32 },
    UpdateSignal { seed_id: SeedId },
    SetRole { role: NodeRole },
    EvalBatchRequest { worker_id: String, max: u32 },
    EvalBatch { seed_ids: Vec<SeedId> },
    StatusReport { worker_id: String, counters: WorkerCounters },
    Shutdown,
    /// Evaluator verdicts for one batch; evaluation time is in `work_us`.
    SeedsEvaluated {
        worker_id: String,
        accepted: Vec<(SeedId, FuzzStatus)>,
        discarded: Vec<SeedId>,
        work_us: u64,
    },
    /// An evaluator found the pending queue empty twice in a row.
    EvaluatorIdle { worker_id: String },

    PutSeed { seed: Seed, status: FuzzStatus },
    PutSeedOk { seed_id: SeedId, fresh: bool },
    GetSeed { seed_id: SeedId },
    SeedData { seed: Seed },
    UpdateStatus { seed_id: SeedId, delta: StatusDelta },
    StatusValue { seed_id: SeedId, status: FuzzStatus },
    DiscardSeed { seed_id: SeedId },
    PutCrash { record: CrashRecord },
    Ack,
    StoreError { code: u8, message: String },
    ListActive { since: u64 },
    SeedIds { seed_ids: Vec<SeedId> },
    /// Turns the connection into a stream of `UpdateSignal`s.
    Subscribe,
    GetStatus { seed_id: SeedId },
    GetStats,
    Stats { stats: StoreStats },
    ActivateSeed { seed_id: SeedId, coverage_digest: [u8; 32] },
    DuplicateCoverage { seed_id: SeedId },
    PutCrashOk { fresh: bool },
    ListCrashes,
    Crashes { crashes: Vec<CrashInfo> },
}

impl Message {
    pub fn tag(&self) -> u8 {
        use Message::*;
        match self {
            RequestTask { .. } => 0x01,
            TaskAssignment { .. } => 0x02,
            NoTaskAvailable { .. } => 0x03,
            UpdateSignal { .. } => 0x04,
            SetRole { .. } => 0x05,
            EvalBatchRequest { .. } => 0x06,
            EvalBatch { .. } => 0x07,
            StatusReport { .. } => 0x08,
            Shutdown => 0x09,
            SeedsEvaluated { .. } => 0x10,
            EvaluatorIdle { .. } => 0x11,
            PutSeed { .. } => 0x20,
            PutSeedOk { .. } => 0x21,
            GetSeed { .. } => 0x22,
            SeedData { .. } => 0x23,
            UpdateStatus { .. } => 0x24,
            StatusValue { .. } => 0x25,
            DiscardSeed { .. } => 0x26,
            PutCrash { .. } => 0x27,
            Ack => 0x28,
            StoreError { .. } => 0x29,
            ListActive { .. } => 0x2A,
            SeedIds { .. } => 0x2B,
            Subscribe => 0x2C,
            GetStatus { .. } => 0x2D,
            GetStats => 0x2E,
            Stats { .. } => 0x2F,
            ActivateSeed { .. } => 0x30,
            DuplicateCoverage { .. } => 0x31,
            PutCrashOk { .. } => 0x32,
            ListCrashes => 0x33,
            Crashes { .. } => 0x34,
        }
    }

    pub fn name(&self) -> &'static str {
        use Message::*;
        match self {
            RequestTask { .. } => "RequestTask",
            TaskAssignment { .. } => "TaskAssignment",
            NoTaskAvailable { .. } => "NoTaskAvailable",
            UpdateSignal { .. } => "UpdateSignal",
            SetRole { .. } => "SetRole",
            EvalBatchRequest { .. } => "EvalBatchRequest",
            EvalBatch { .. } => "EvalBatch",
            StatusReport { .. } => "StatusReport",
            Shutdown => "Shutdown",
            SeedsEvaluated { .. } => "SeedsEvaluated",
            EvaluatorIdle { .. } => "EvaluatorIdle",
            PutSeed { .. } => "PutSeed",
            PutSeedOk { .. } => "PutSeedOk",
            GetSeed { .. } => "GetSeed",
            SeedData { .. } => "SeedData",
            UpdateStatus { .. } => "UpdateStatus",
            StatusValue { .. } => "StatusValue",
            DiscardSeed { .. } => "DiscardSeed",
            PutCrash { .. } => "PutCrash",
            Ack => "Ack",
            StoreError { .. } => "StoreError",
            ListActive { .. } => "ListActive",
            SeedIds { .. } => "SeedIds",
            Subscribe => "Subscribe",
            GetStatus { .. } => "GetStatus",
            GetStats => "GetStats",
            Stats { .. } => "Stats",
            ActivateSeed { .. } => "ActivateSeed",
            DuplicateCoverage { .. } => "DuplicateCoverage",
            PutCrashOk { .. } => "PutCrashOk",
            ListCrashes => "ListCrashes",
            Crashes { .. } => "Crashes",
        }
    }

    fn validate(&self) -> Result<(), ProtocolError> {
        use Message::*;
        match self {
            RequestTask { worker_id }
            | EvalBatchRequest { worker_id, .. }
            | StatusReport { worker_id, .. }
            | SeedsEvaluated { worker_id, .. }
            | EvaluatorIdle { worker_id }
                if worker_id.is_empty() =>
            {
                Err(ProtocolError::InvalidField("worker_id must be non-empty"))
            }
            TaskAssignment { energy: 0, .. } => {
                Err(ProtocolError::InvalidField("energy must be at least 1"))
            }
            EvalBatchRequest { max: 0, .. } => {
                Err(ProtocolError::InvalidField("batch max must be at least 1"))
            }
            EvalBatch { seed_ids } if seed_ids.is_empty() => {
                Err(ProtocolError::InvalidField("EvalBatch must carry at least one id"))
            }
            _ => Ok(()),
        }
    }

    fn write_payload<B: BufMut>(&self, w: &mut Writer<'_, B>) {
        use Message::*;
        match self {
            RequestTask { worker_id } | EvaluatorIdle { worker_id } => w.str(worker_id),
            TaskAssignment { seed_id, energy } => {
                w.id(seed_id);
                w.u32(*energy);
            }
            NoTaskAvailable { retry_after_ms } => w.u32(*retry_after_ms),
            UpdateSignal { seed_id }
            | GetSeed { seed_id }
            | DiscardSeed { seed_id }
            | GetStatus { seed_id }
            | DuplicateCoverage { seed_id } => w.id(seed_id),
            SetRole { role } => w.u8(match role {
                NodeRole::Fuzzing => 0,
                NodeRole::Evaluating => 1,
            }),
            EvalBatchRequest { worker_id, max } => {
                w.str(worker_id);
                w.u32(*max);
            }
            EvalBatch { seed_ids } | SeedIds { seed_ids } => w.ids(seed_ids),
            StatusReport { worker_id, counters } => {
                w.str(worker_id);
                w.counters(counters);
            }
            Shutdown | Ack | Subscribe | GetStats | ListCrashes => {}
            SeedsEvaluated {
                worker_id,
                accepted,
                discarded,
                work_us,
            } => {
                w.str(worker_id);
                w.u32(accepted.len() as u32);
                for (id, st) in accepted {
                    w.id(id);
                    w.status(st);
                }
                w.ids(discarded);
                w.u64(*work_us);
            }
            PutSeed { seed, status } => {
                w.seed(seed);
                w.status(status);
            }
            PutSeedOk { seed_id, fresh } => {
                w.id(seed_id);
                w.bool(*fresh);
            }
            SeedData { seed } => w.seed(seed),
            UpdateStatus { seed_id, delta } => {
                w.id(seed_id);
                w.delta(delta);
            }
            StatusValue { seed_id, status } => {
                w.id(seed_id);
                w.status(status);
            }
            PutCrash { record } => w.crash(record),
            StoreError { code, message } => {
                w.u8(*code);
                w.str(message);
            }
            ListActive { since } => w.u64(*since),
            Stats { stats } => w.stats(stats),
            ActivateSeed {
                seed_id,
                coverage_digest,
            } => {
                w.id(seed_id);
                w.digest(coverage_digest);
            }
            PutCrashOk { fresh } => w.bool(*fresh),
            Crashes { crashes } => {
                w.u32(crashes.len() as u32);
                for c in crashes {
                    w.crash_info(c);
                }
            }
        }
    }

    fn read_payload(tag: u8, r: &mut Reader<'_>) -> Result<Message, ProtocolError> {
        use Message::*;
        let msg = match tag {
            0x01 => RequestTask { worker_id: r.str()? },
            0x02 => TaskAssignment {
                seed_id: r.id()?,
                energy: r.u32()?,
            },
            0x03 => NoTaskAvailable {
                retry_after_ms: r.u32()?,
            },
            0x04 => UpdateSignal { seed_id: r.id()? },
            0x05 => SetRole {
                role: match r.u8()? {
                    0 => NodeRole::Fuzzing,
                    1 => NodeRole::Evaluating,
                    _ => return Err(ProtocolError::Malformed("unknown role".into())),
                },
            },
            0x06 => EvalBatchRequest {
                worker_id: r.str()?,
                max: r.u32()?,
            },
            0x07 => EvalBatch { seed_ids: r.ids()? },
            0x08 => StatusReport {
                worker_id: r.str()?,
                counters: r.counters()?,
            },
            0x09 => Shutdown,
            0x10 => {
                let worker_id = r.str()?;
                let n = r.count(32)?;
                let mut accepted = Vec::with_capacity(n);
                for _ in 0..n {
                    accepted.push((r.id()?, r.status()?));
                }
                SeedsEvaluated {
                    worker_id,
                    accepted,
                    discarded: r.ids()?,
                    work_us: r.u64()?,
                }
            }
            0x11 => EvaluatorIdle { worker_id: r.str()? },
            0x20 => PutSeed {
                seed: r.seed()?,
                status: r.status()?,
            },
            0x21 => PutSeedOk {
                seed_id: r.id()?,
                fresh: r.bool()?,
            },
            0x22 => GetSeed { seed_id: r.id()? },
            0x23 => SeedData { seed: r.seed()? },
            0x24 => UpdateStatus {
                seed_id: r.id()?,
                delta: r.delta()?,
            },
            0x25 => StatusValue {
                seed_id: r.id()?,
                status: r.status()?,
            },
            0x26 => DiscardSeed { seed_id: r.id()? },
            0x27 => PutCrash { record: r.crash()? },
            0x28 => Ack,
            0x29 => StoreError {
                code: r.u8()?,
                message: r.str()?,
            },
            0x2A => ListActive { since: r.u64()? },
            0x2B => SeedIds { seed_ids: r.ids()? },
            0x2C => Subscribe,
            0x2D => GetStatus { seed_id: r.id()? },
            0x2E => GetStats,
            0x2F => Stats { stats: r.stats()? },
            0x30 => ActivateSeed {
                seed_id: r.id()?,
                coverage_digest: r.digest()?,
            },
            0x31 => DuplicateCoverage { seed_id: r.id()? },
            0x32 => PutCrashOk { fresh: r.bool()? },
            0x33 => ListCrashes,
            0x34 => {
                let n = r.count(41)?;
                let mut crashes = Vec::with_capacity(n);
                for _ in 0..n {
                    crashes.push(r.crash_info()?);
                }
                Crashes { crashes }
            }
            other => return Err(ProtocolError::UnknownTag(other)),
        };
        r.finish()?;
        msg.validate()?;
        Ok(msg)
    }
}

/// Appends the frame for `msg` to `buf`.
pub fn encode_into(msg: &Message, buf: &mut BytesMut) -> Result<(), ProtocolError> {
    msg.validate()?;
    let start = buf.len();
    buf.put_u32(0);
    buf.put_u8(msg.tag());
    msg.write_payload(&mut Writer::new(buf));
    let len = buf.len() - start - HEADER_LEN;
    if len > MAX_FRAME_LEN {
        buf.truncate(start);
        return Err(ProtocolError::FrameTooLarge(len));
    }
    buf[start..start + HEADER_LEN].copy_from_slice(&(len as u32).to_be_bytes());
    Ok(())
}

pub fn encode(msg: &Message) -> Result<Vec<u8>, ProtocolError> {
    let mut buf = BytesMut::new();
    encode_into(msg, &mut buf)?;
    Ok(buf.to_vec())
}

/// Decodes one frame from the front of `bytes`, returning the message and
/// the number of bytes consumed. Bytes after the frame are left alone.
pub fn decode(bytes: &[u8]) -> Result<(Message, usize), ProtocolError> {
    if bytes.len() < HEADER_LEN {
        return Err(ProtocolError::Incomplete {
            needed: HEADER_LEN - bytes.len(),
        });
    }
    let len = u32::from_be_bytes(bytes[..HEADER_LEN].try_into().unwrap()) as usize;
    if len > MAX_FRAME_LEN {
        return Err(ProtocolError::FrameTooLarge(len));
    }
    if len == 0 {
        return Err(ProtocolError::EmptyFrame);
    }
    let total = HEADER_LEN + len;
    if bytes.len() < total {
        return Err(ProtocolError::Incomplete {
            needed: total - bytes.len(),
        });
    }
    let tag = bytes[HEADER_LEN];
    let mut r = Reader::new(&bytes[HEADER_LEN + 1..total]);
    let msg = Message::read_payload(tag, &mut r)?;
    Ok((msg, total))
}

/// Reassembles frames from arbitrarily chunked input.
#[derive(Debug, Default)]
pub struct FrameReader {
    buf: BytesMut,
}

impl FrameReader {
    pub fn new() -> Self {
        FrameReader::default()
    }

    pub fn push(&mut self, chunk: &[u8]) {
        self.buf.extend_from_slice(chunk);
    }

    /// Next complete message, or `None` if only a partial frame is buffered.
    pub fn next_message(&mut self) -> Result<Option<Message>, ProtocolError> {
        match decode(&self.buf) {
            Ok((msg, used)) => {
                self.buf.advance(used);
                Ok(Some(msg))
            }
            Err(ProtocolError::Incomplete { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}
