//! Energy assignment.
//!
//! `energy = round(100 * T * B * H * D)` clamped to `[16, 25600]`:
//!
//! | factor | value | condition |
//! |---|---|---|
//! | T (speed) | 3, 2, 1, 0.5, 0.25, 0.1 | exec time ≤ 0.25×, ≤ 0.5×, ≤ 1×, ≤ 2×, ≤ 4× average, else |
//! | B (coverage) | 0.25, 0.5, 1, 2, 3 | bitmap size ≤ 0.25×, ≤ 0.5×, ≤ 1×, ≤ 2× average, else |
//! | H (handicap) | 4, 2, 1 | handicap ≥ 4, ≥ 2, else |
//! | D (depth) | 1, 2, 3, 4, 5 | depth 0–3, 4–7, 8–13, 14–25, > 25 |
//!
//! With no aggregates (empty queue) T and B are 1. All comparisons are done
//! in exact integer arithmetic, so scaling every exec time by a common factor
//! never changes a factor.

use crate::seedstore::FuzzStatus;

pub const BASE_SCORE: u64 = 100;
pub const MIN_ENERGY: u32 = 16;
pub const MAX_ENERGY: u32 = 25_600;

/// Sums over the seeds in the queue, for averages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QueueAggregates {
    pub count: u64,
    pub total_exec_time_us: u128,
    pub total_bitmap_size: u128,
}

impl QueueAggregates {
    pub fn add(&mut self, s: &FuzzStatus) {
        self.count += 1;
        self.total_exec_time_us += s.exec_time_us as u128;
        self.total_bitmap_size += s.bitmap_size as u128;
    }

    pub fn remove(&mut self, s: &FuzzStatus) {
        self.count -= 1;
        self.total_exec_time_us -= s.exec_time_us as u128;
        self.total_bitmap_size -= s.bitmap_size as u128;
    }

    pub fn avg_exec_time_us(&self) -> Option<f64> {
        (self.count > 0).then(|| self.total_exec_time_us as f64 / self.count as f64)
    }

    pub fn avg_bitmap_size(&self) -> Option<f64> {
        (self.count > 0).then(|| self.total_bitmap_size as f64 / self.count as f64)
    }
}

/// `value / (total / count) <= num / den`, exactly.
fn ratio_le(value: u128, count: u64, total: u128, num: u128, den: u128) -> bool {
    value * count as u128 * den <= total * num
}

/// Speed factor in thousandths.
pub fn speed_factor_milli(exec_time_us: u64, agg: &QueueAggregates) -> u64 {
    if agg.count == 0 || agg.total_exec_time_us == 0 {
        return 1000;
    }
    let le = |num, den| ratio_le(exec_time_us as u128, agg.count, agg.total_exec_time_us, num, den);
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
}

/// Coverage factor in hundredths.
pub fn coverage_factor_centi(bitmap_size: u32, agg: &QueueAggregates) -> u64 {
    if agg.count == 0 || agg.total_bitmap_size == 0 {
        return 100;
    }
    let le = |num, den| ratio_le(bitmap_size as u128, agg.count, agg.total_bitmap_size, num, den);
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
}

pub fn handicap_factor(handicap: u32) -> u64 {
    match handicap {
        h if h >= 4 => 4,
        h if h >= 2 => 2,
        _ => 1,
    }
}

pub fn depth_factor(depth: u32) -> u64 {
    match depth {
        0..=3 => 1,
        4..=7 => 2,
        8..=13 => 3,
        14..=25 => 4,
        _ => 5,
    }
}

pub fn perform_score(status: &FuzzStatus, agg: &QueueAggregates) -> u32 {
    // 100 * (t/1000) * (b/100) * h * d == t * b * h * d / 1000
    let scaled = speed_factor_milli(status.exec_time_us, agg)
        * coverage_factor_centi(status.bitmap_size, agg)
        * handicap_factor(status.handicap)
        * depth_factor(status.depth)
        * BASE_SCORE
        / 100;
    let energy = (scaled + 500) / 1000;
    energy.clamp(MIN_ENERGY as u64, MAX_ENERGY as u64) as u32
}
