//! Canonical binary field encoding shared by wire frames and the store log.
//!
//! Integers are big-endian. Byte strings and UTF-8 strings carry a `u32`
//! length prefix, sequences a `u32` element count. Options are a `0`/`1` flag
//! byte followed by the value; booleans are a single `0`/`1` byte.

use bytes::BufMut;

use super::ProtocolError;
use crate::protocol::WorkerCounters;
use crate::seedstore::{
    CrashInfo, CrashRecord, FuzzStatus, Seed, SeedId, SeedState, StatusDelta, StoreStats,
};
use crate::target::ExecOutcome;

pub(crate) struct Writer<'a, B: BufMut> {
    pub buf: &'a mut B,
}

impl<'a, B: BufMut> Writer<'a, B> {
    pub fn new(buf: &'a mut B) -> Self {
        Writer { buf }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.put_u8(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.put_u32(v);
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.put_u64(v);
    }

    pub fn bool(&mut self, v: bool) {
        self.buf.put_u8(v as u8);
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.buf.put_u32(v.len() as u32);
        self.buf.put_slice(v);
    }

    pub fn str(&mut self, v: &str) {
        self.bytes(v.as_bytes());
    }

    pub fn id(&mut self, id: &SeedId) {
        self.buf.put_slice(&id.0);
    }

    pub fn digest(&mut self, d: &[u8; 32]) {
        self.buf.put_slice(d);
    }

    pub fn opt_id(&mut self, id: &Option<SeedId>) {
        match id {
            Some(id) => {
                self.u8(1);
                self.id(id);
            }
            None => self.u8(0),
        }
    }

    pub fn ids(&mut self, ids: &[SeedId]) {
        self.u32(ids.len() as u32);
        for id in ids {
            self.id(id);
        }
    }

    pub fn seed(&mut self, s: &Seed) {
        self.id(&s.id);
        self.bytes(&s.content);
        self.opt_id(&s.parent);
        self.u64(s.discovered_at);
        self.str(&s.origin);
    }

    pub fn state(&mut self, s: SeedState) {
        self.u8(state_code(s));
    }

    pub fn status(&mut self, s: &FuzzStatus) {
        self.u32(s.depth);
        self.u32(s.handicap);
        self.u32(s.bitmap_size);
        self.u64(s.exec_time_us);
        self.u64(s.fuzz_count);
        self.bool(s.favored);
        self.state(s.state);
    }

    pub fn delta(&mut self, d: &StatusDelta) {
        self.u32(d.fuzz_count_inc);
        match d.favored {
            Some(f) => {
                self.u8(1);
                self.bool(f);
            }
            None => self.u8(0),
        }
        match d.handicap {
            Some(h) => {
                self.u8(1);
                self.u32(h);
            }
            None => self.u8(0),
        }
        match d.state {
            Some(s) => {
                self.u8(1);
                self.state(s);
            }
            None => self.u8(0),
        }
    }

    pub fn outcome(&mut self, o: ExecOutcome) {
        self.u8(match o {
            ExecOutcome::Ok => 0,
            ExecOutcome::Crash => 1,
            ExecOutcome::Hang => 2,
        });
    }

    pub fn crash(&mut self, c: &CrashRecord) {
        self.id(&c.id);
        self.bytes(&c.content);
        self.opt_id(&c.parent);
        self.outcome(c.outcome);
        self.u64(c.discovered_at);
    }

    pub fn crash_info(&mut self, c: &CrashInfo) {
        self.id(&c.id);
        self.outcome(c.outcome);
        self.u64(c.discovered_at);
    }

    pub fn counters(&mut self, c: &WorkerCounters) {
        for v in c.as_array() {
            self.u64(v);
        }
    }

    pub fn stats(&mut self, s: &StoreStats) {
        self.u64(s.seeds);
        self.u64(s.active);
        self.u64(s.pending);
        self.u64(s.discarded);
        self.u64(s.crashes);
        self.u64(s.hangs);
    }
}

fn state_code(s: SeedState) -> u8 {
    match s {
        SeedState::PendingEvaluation => 0,
        SeedState::Active => 1,
        SeedState::Discarded => 2,
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn malformed(what: &str) -> ProtocolError {
    ProtocolError::Malformed(what.to_string())
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn finish(&self) -> Result<(), ProtocolError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(malformed("trailing bytes in payload"))
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        if self.buf.len() - self.pos < n {
            return Err(malformed("payload shorter than its fields"));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn bool(&mut self) -> Result<bool, ProtocolError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(malformed("boolean byte not 0 or 1")),
        }
    }

    fn flag(&mut self) -> Result<bool, ProtocolError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(malformed("option flag not 0 or 1")),
        }
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, ProtocolError> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }

    pub fn str(&mut self) -> Result<String, ProtocolError> {
        String::from_utf8(self.bytes()?).map_err(|_| malformed("string is not UTF-8"))
    }

    pub fn id(&mut self) -> Result<SeedId, ProtocolError> {
        Ok(SeedId(self.take(32)?.try_into().unwrap()))
    }

    pub fn digest(&mut self) -> Result<[u8; 32], ProtocolError> {
        Ok(self.take(32)?.try_into().unwrap())
    }

    pub fn opt_id(&mut self) -> Result<Option<SeedId>, ProtocolError> {
        if self.flag()? {
            Ok(Some(self.id()?))
        } else {
            Ok(None)
        }
    }

    pub fn ids(&mut self) -> Result<Vec<SeedId>, ProtocolError> {
        let n = self.u32()? as usize;
        if n > (self.buf.len() - self.pos) / 32 {
            return Err(malformed("id count exceeds payload"));
        }
        (0..n).map(|_| self.id()).collect()
    }

    pub fn count(&mut self, min_elem: usize) -> Result<usize, ProtocolError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_elem) > self.buf.len() - self.pos {
            return Err(malformed("element count exceeds payload"));
        }
        Ok(n)
    }

    pub fn seed(&mut self) -> Result<Seed, ProtocolError> {
        Ok(Seed {
            id: self.id()?,
            content: self.bytes()?,
            parent: self.opt_id()?,
            discovered_at: self.u64()?,
            origin: self.str()?,
        })
    }

    pub fn state(&mut self) -> Result<SeedState, ProtocolError> {
        match self.u8()? {
            0 => Ok(SeedState::PendingEvaluation),
            1 => Ok(SeedState::Active),
            2 => Ok(SeedState::Discarded),
            _ => Err(malformed("unknown seed state")),
        }
    }

    pub fn status(&mut self) -> Result<FuzzStatus, ProtocolError> {
        Ok(FuzzStatus {
            depth: self.u32()?,
            handicap: self.u32()?,
            bitmap_size: self.u32()?,
            exec_time_us: self.u64()?,
            fuzz_count: self.u64()?,
            favored: self.bool()?,
            state: self.state()?,
        })
    }

    pub fn delta(&mut self) -> Result<StatusDelta, ProtocolError> {
        let fuzz_count_inc = self.u32()?;
        let favored = if self.flag()? { Some(self.bool()?) } else { None };
        let handicap = if self.flag()? { Some(self.u32()?) } else { None };
        let state = if self.flag()? { Some(self.state()?) } else { None };
        Ok(StatusDelta {
            fuzz_count_inc,
            favored,
            handicap,
            state,
        })
    }

    pub fn outcome(&mut self) -> Result<ExecOutcome, ProtocolError> {
        match self.u8()? {
            0 => Ok(ExecOutcome::Ok),
            1 => Ok(ExecOutcome::Crash),
            2 => Ok(ExecOutcome::Hang),
            _ => Err(malformed("unknown execution outcome")),
        }
    }

    pub fn crash(&mut self) -> Result<CrashRecord, ProtocolError> {
        Ok(CrashRecord {
            id: self.id()?,
            content: self.bytes()?,
            parent: self.opt_id()?,
            outcome: self.outcome()?,
            discovered_at: self.u64()?,
        })
    }

    pub fn crash_info(&mut self) -> Result<CrashInfo, ProtocolError> {
        Ok(CrashInfo {
            id: self.id()?,
            outcome: self.outcome()?,
            discovered_at: self.u64()?,
        })
    }

    pub fn counters(&mut self) -> Result<WorkerCounters, ProtocolError> {
        let mut vals = [0u64; WorkerCounters::FIELDS];
        for v in vals.iter_mut() {
            *v = self.u64()?;
        }
        Ok(WorkerCounters::from_array(vals))
    }

    pub fn stats(&mut self) -> Result<StoreStats, ProtocolError> {
        Ok(StoreStats {
            seeds: self.u64()?,
            active: self.u64()?,
            pending: self.u64()?,
            discarded: self.u64()?,
            crashes: self.u64()?,
            hangs: self.u64()?,
        })
    }
}
