//! Evaluator-pool sizing.

use std::collections::BTreeSet;

/// Evaluated seeds over which the speed average loses half its weight.
pub const SPEED_HALF_LIFE: f64 = 30.0;
pub const BOOTSTRAP_SPEED: f64 = 1.0;

/// Target number of evaluating nodes.
///
/// `n = ceil(pending / speed)`; with `unique_rate = total / max(unique, 1)`,
/// `n` is lowered to `floor(unique_rate / divisor)` when it exceeds
/// `unique_rate / divisor`; any result at or below `min_nodes` becomes
/// `min_nodes`.
pub fn eval_node_target(
    pending: u64,
    evaluate_speed: f64,
    total_evaluated: u64,
    unique_count: u64,
    min_nodes: usize,
    cap_divisor: u64,
) -> usize {
    let speed = if evaluate_speed > 0.0 { evaluate_speed } else { BOOTSTRAP_SPEED };
    let mut n = (pending as f64 / speed).ceil();
    let unique_rate = total_evaluated as f64 / unique_count.max(1) as f64;
    let cap = unique_rate / cap_divisor.max(1) as f64;
    if n > cap {
        n = cap.floor();
    }
    let n = n as usize;
    if n <= min_nodes {
        min_nodes
    } else {
        n
    }
}

#[derive(Clone, Debug)]
pub struct EvalControl {
    pub updates_since_adjust: u64,
    /// Seeds per second, exponentially averaged per evaluated seed.
    pub evaluate_speed: f64,
    pub total_evaluated: u64,
    pub unique_count: u64,
    pub current_eval_nodes: BTreeSet<String>,
    /// Update signals received.
    pub signals: u64,
    /// Pending seeds resolved (accepted or discarded).
    pub resolved: u64,
    pub adjustments: u64,
    pub saturated_adjustments: u64,
}

impl Default for EvalControl {
    fn default() -> Self {
        EvalControl {
            updates_since_adjust: 0,
            evaluate_speed: BOOTSTRAP_SPEED,
            total_evaluated: 0,
            unique_count: 0,
            current_eval_nodes: BTreeSet::new(),
            signals: 0,
            resolved: 0,
            adjustments: 0,
            saturated_adjustments: 0,
        }
    }
}

impl EvalControl {
    pub fn pending(&self) -> u64 {
        self.signals.saturating_sub(self.resolved)
    }

    /// Folds one evaluated batch into the counters and the speed average.
    pub fn record_batch(&mut self, evaluated: u64, accepted: u64, work_us: u64) {
        self.total_evaluated += evaluated;
        self.unique_count += accepted;
        self.resolved += evaluated;
        if evaluated == 0 {
            return;
        }
        let rate = evaluated as f64 * 1e6 / work_us.max(1) as f64;
        let keep = 0.5f64.powf(evaluated as f64 / SPEED_HALF_LIFE);
        self.evaluate_speed = keep * self.evaluate_speed + (1.0 - keep) * rate;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_cases() {
        assert_eq!(eval_node_target(400, 50.0, 3000, 300, 2, 2), 5);
        assert_eq!(eval_node_target(10, 50.0, 3000, 300, 2, 2), 2);
        assert_eq!(eval_node_target(0, 50.0, 3000, 300, 2, 2), 2);
    }

    #[test]
    fn cap_below_floor_still_floor() {
        // unique_rate 1 -> cap 0 -> floor rule
        assert_eq!(eval_node_target(5000, 1.0, 10, 10, 2, 2), 2);
    }

    #[test]
    fn speed_average_moves_toward_rate() {
        let mut c = EvalControl::default();
        c.record_batch(30, 3, 300_000); // 100 seeds/s
        assert!((c.evaluate_speed - 50.5).abs() < 1e-9);
        assert_eq!(c.pending(), 0);
        c.signals = 40;
        assert_eq!(c.pending(), 10);
    }
}
