//! Append-only store record log.
//!
//! Each record is a 4-byte big-endian length (tag plus payload), a tag byte,
//! and a payload in the wire field encoding:
//!
//! | tag | record    | payload                               |
//! |-----|-----------|---------------------------------------|
//! | 1   | PutSeed   | seed, status                          |
//! | 2   | Status    | id, status after the update           |
//! | 3   | Popped    | id list handed to an evaluator        |
//! | 4   | Activated | id, coverage digest, status           |
//! | 5   | Discarded | id                                    |
//! | 6   | Crash     | crash record                          |

use bytes::{BufMut, BytesMut};
use thiserror::Error;

use super::{CrashRecord, FuzzStatus, Seed, SeedId};
use crate::protocol::wire::{Reader, Writer};
use crate::protocol::ProtocolError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LogRecord {
    PutSeed { seed: Seed, status: FuzzStatus },
    Status { id: SeedId, status: FuzzStatus },
    Popped { ids: Vec<SeedId> },
    Activated { id: SeedId, digest: [u8; 32], status: FuzzStatus },
    Discarded { id: SeedId },
    Crash { record: CrashRecord },
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("truncated record at offset {0}")]
    Truncated(usize),
    #[error("unknown record tag {tag} at offset {offset}")]
    UnknownTag { tag: u8, offset: usize },
    #[error("bad record at offset {offset}: {source}")]
    Bad {
        offset: usize,
        #[source]
        source: ProtocolError,
    },
}

pub(crate) fn encode_record(rec: &LogRecord) -> Vec<u8> {
    let mut buf = BytesMut::new();
    buf.put_u32(0);
    let mut w = Writer::new(&mut buf);
    match rec {
        LogRecord::PutSeed { seed, status } => {
            w.u8(1);
            w.seed(seed);
            w.status(status);
        }
        LogRecord::Status { id, status } => {
            w.u8(2);
            w.id(id);
            w.status(status);
        }
        LogRecord::Popped { ids } => {
            w.u8(3);
            w.ids(ids);
        }
        LogRecord::Activated { id, digest, status } => {
            w.u8(4);
            w.id(id);
            w.digest(digest);
            w.status(status);
        }
        LogRecord::Discarded { id } => {
            w.u8(5);
            w.id(id);
        }
        LogRecord::Crash { record } => {
            w.u8(6);
            w.crash(record);
        }
    }
    let len = (buf.len() - 4) as u32;
    buf[..4].copy_from_slice(&len.to_be_bytes());
    buf.to_vec()
}

/// Parses a complete log. A torn final record (from a crash mid-write) is an
/// error so callers notice it.
pub fn read_log(bytes: &[u8]) -> Result<Vec<LogRecord>, LogError> {
    let mut out = Vec::new();
    let mut off = 0;
    while off < bytes.len() {
        if bytes.len() - off < 5 {
            return Err(LogError::Truncated(off));
        }
        let len = u32::from_be_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        if len == 0 || bytes.len() - off - 4 < len {
            return Err(LogError::Truncated(off));
        }
        let tag = bytes[off + 4];
        let mut r = Reader::new(&bytes[off + 5..off + 4 + len]);
        let bad = |source| LogError::Bad { offset: off, source };
        let rec = match tag {
            1 => LogRecord::PutSeed {
                seed: r.seed().map_err(bad)?,
                status: r.status().map_err(bad)?,
            },
            2 => LogRecord::Status {
                id: r.id().map_err(bad)?,
                status: r.status().map_err(bad)?,
            },
            3 => LogRecord::Popped {
                ids: r.ids().map_err(bad)?,
            },
            4 => LogRecord::Activated {
                id: r.id().map_err(bad)?,
                digest: r.digest().map_err(bad)?,
                status: r.status().map_err(bad)?,
            },
            5 => LogRecord::Discarded {
                id: r.id().map_err(bad)?,
            },
            6 => LogRecord::Crash {
                record: r.crash().map_err(bad)?,
            },
            tag => return Err(LogError::UnknownTag { tag, offset: off }),
        };
        r.finish().map_err(bad)?;
        out.push(rec);
        off += 4 + len;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip() {
        let seed = Seed::new(b"hello".to_vec(), None, 3, "w1");
        let recs = vec![
            LogRecord::PutSeed {
                seed: seed.clone(),
                status: FuzzStatus::discovered(1, 2, 3),
            },
            LogRecord::Popped { ids: vec![seed.id] },
            LogRecord::Discarded { id: seed.id },
        ];
        let bytes: Vec<u8> = recs.iter().flat_map(encode_record).collect();
        assert_eq!(read_log(&bytes).unwrap(), recs);
        assert!(matches!(
            read_log(&bytes[..bytes.len() - 1]),
            Err(LogError::Truncated(_))
        ));
    }
}
