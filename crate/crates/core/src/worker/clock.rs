use std::cell::Cell;
use std::rc::Rc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

/// Time source for a worker. `advance_exec` is called after every target
/// execution with its measured or modeled duration.
pub trait Clock {
    fn now_us(&self) -> u64;
    fn advance_exec(&self, exec_time_us: u64);
}

/// Wall clock; executions take real time, so `advance_exec` is a no-op.
#[derive(Clone, Debug)]
pub struct RealClock {
    origin: Instant,
    offset_us: u64,
}

impl RealClock {
    pub fn new() -> Self {
        RealClock {
            origin: Instant::now(),
            offset_us: 0,
        }
    }

    /// A clock reading `offset_us` now, for joining a campaign in progress.
    pub fn starting_at(offset_us: u64) -> Self {
        RealClock {
            origin: Instant::now(),
            offset_us,
        }
    }
}

impl Default for RealClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for RealClock {
    fn now_us(&self) -> u64 {
        self.offset_us + self.origin.elapsed().as_micros() as u64
    }

    fn advance_exec(&self, _: u64) {}
}

/// Simulated clock. Executions advance it by their modeled cost divided by
/// the node's speed; the simulator also sets it directly.
#[derive(Clone, Debug)]
pub struct VirtualClock {
    now: Rc<Cell<u64>>,
    speed_permille: u64,
}

impl VirtualClock {
    pub fn new(speed: f64) -> Self {
        VirtualClock {
            now: Rc::new(Cell::new(0)),
            speed_permille: ((speed * 1000.0).round() as u64).max(1),
        }
    }

    pub fn set(&self, t: u64) {
        self.now.set(t);
    }

    pub fn advance(&self, us: u64) {
        self.now.set(self.now.get() + us);
    }

    pub fn speed(&self) -> f64 {
        self.speed_permille as f64 / 1000.0
    }
}

impl Clock for VirtualClock {
    fn now_us(&self) -> u64 {
        self.now.get()
    }

    fn advance_exec(&self, exec_time_us: u64) {
        self.advance(exec_time_us * 1000 / self.speed_permille);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Fuzzing,
    NonFuzzing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub start_us: u64,
    pub end_us: u64,
}

/// Splits a worker's lifetime into contiguous fuzzing and non-fuzzing
/// segments. Totals are always kept; individual segments only on request.
#[derive(Clone, Debug)]
pub struct TimeAccounting {
    kind: SegmentKind,
    start_us: u64,
    seg_start_us: u64,
    fuzzing_us: u64,
    non_fuzzing_us: u64,
    segments: Option<Vec<Segment>>,
}

impl TimeAccounting {
    pub fn new(now_us: u64, record_segments: bool) -> Self {
        TimeAccounting {
            kind: SegmentKind::NonFuzzing,
            start_us: now_us,
            seg_start_us: now_us,
            fuzzing_us: 0,
            non_fuzzing_us: 0,
            segments: record_segments.then(Vec::new),
        }
    }

    pub fn kind(&self) -> SegmentKind {
        self.kind
    }

    /// Closes the open segment at `now_us` and opens one of `kind`.
    pub fn switch(&mut self, now_us: u64, kind: SegmentKind) {
        if kind == self.kind {
            return;
        }
        self.close(now_us);
        self.kind = kind;
    }

    fn close(&mut self, now_us: u64) {
        let now_us = now_us.max(self.seg_start_us);
        let d = now_us - self.seg_start_us;
        match self.kind {
            SegmentKind::Fuzzing => self.fuzzing_us += d,
            SegmentKind::NonFuzzing => self.non_fuzzing_us += d,
        }
        if let Some(segs) = &mut self.segments {
            if d > 0 {
                segs.push(Segment {
                    kind: self.kind,
                    start_us: self.seg_start_us,
                    end_us: now_us,
                });
            }
        }
        self.seg_start_us = now_us;
    }

    /// Totals as of `now_us`, counting the open segment.
    pub fn totals(&self, now_us: u64) -> (u64, u64) {
        let open = now_us.saturating_sub(self.seg_start_us);
        match self.kind {
            SegmentKind::Fuzzing => (self.fuzzing_us + open, self.non_fuzzing_us),
            SegmentKind::NonFuzzing => (self.fuzzing_us, self.non_fuzzing_us + open),
        }
    }

    pub fn elapsed(&self, now_us: u64) -> u64 {
        now_us.saturating_sub(self.start_us)
    }

    /// Closed segments, if recording was enabled.
    pub fn segments(&self) -> Option<&[Segment]> {
        self.segments.as_deref()
    }

    /// Closes the open segment so that `segments` covers up to `now_us`.
    pub fn flush(&mut self, now_us: u64) {
        self.close(now_us);
    }
}
