//! Proptest strategies covering every wire message.

use proptest::collection::vec;
use proptest::prelude::*;

use dispatchfuzz::protocol::Message;
use dispatchfuzz::seedstore::{CrashInfo, CrashRecord, StoreStats};
use dispatchfuzz::{ExecOutcome, FuzzStatus, NodeRole, Seed, SeedId, SeedState, StatusDelta, WorkerCounters};

pub fn seed_id() -> impl Strategy<Value = SeedId> {
    any::<[u8; 32]>().prop_map(SeedId)
}

fn worker_id() -> impl Strategy<Value = String> {
    "[a-z0-9-]{1,12}"
}

fn text() -> impl Strategy<Value = String> {
    ".{0,24}"
}

fn state() -> impl Strategy<Value = SeedState> {
    prop_oneof![
        Just(SeedState::PendingEvaluation),
        Just(SeedState::Active),
        Just(SeedState::Discarded)
    ]
}

fn outcome() -> impl Strategy<Value = ExecOutcome> {
    prop_oneof![Just(ExecOutcome::Ok), Just(ExecOutcome::Crash), Just(ExecOutcome::Hang)]
}

fn role() -> impl Strategy<Value = NodeRole> {
    prop_oneof![Just(NodeRole::Fuzzing), Just(NodeRole::Evaluating)]
}

fn status() -> impl Strategy<Value = FuzzStatus> {
    (any::<u32>(), any::<u32>(), any::<u32>(), any::<u64>(), any::<u64>(), any::<bool>(), state()).prop_map(
        |(depth, handicap, bitmap_size, exec_time_us, fuzz_count, favored, state)| FuzzStatus {
            depth,
            handicap,
            bitmap_size,
            exec_time_us,
            fuzz_count,
            favored,
            state,
        },
    )
}

fn delta() -> impl Strategy<Value = StatusDelta> {
    (any::<u32>(), any::<Option<bool>>(), any::<Option<u32>>(), proptest::option::of(state())).prop_map(
        |(fuzz_count_inc, favored, handicap, state)| StatusDelta {
            fuzz_count_inc,
            favored,
            handicap,
            state,
        },
    )
}

fn seed() -> impl Strategy<Value = Seed> {
    (seed_id(), vec(any::<u8>(), 0..64), proptest::option::of(seed_id()), any::<u64>(), text()).prop_map(
        |(id, content, parent, discovered_at, origin)| Seed {
            id,
            content,
            parent,
            discovered_at,
            origin,
        },
    )
}

fn crash() -> impl Strategy<Value = CrashRecord> {
    (seed_id(), vec(any::<u8>(), 0..64), proptest::option::of(seed_id()), outcome(), any::<u64>()).prop_map(
        |(id, content, parent, outcome, discovered_at)| CrashRecord {
            id,
            content,
            parent,
            outcome,
            discovered_at,
        },
    )
}

fn counters() -> impl Strategy<Value = WorkerCounters> {
    any::<[u64; WorkerCounters::FIELDS]>().prop_map(WorkerCounters::from_array)
}

fn stats() -> impl Strategy<Value = StoreStats> {
    any::<[u64; 6]>().prop_map(|v| StoreStats {
        seeds: v[0],
        active: v[1],
        pending: v[2],
        discarded: v[3],
        crashes: v[4],
        hangs: v[5],
    })
}

fn crash_info() -> impl Strategy<Value = CrashInfo> {
    (seed_id(), outcome(), any::<u64>()).prop_map(|(id, outcome, discovered_at)| CrashInfo {
        id,
        outcome,
        discovered_at,
    })
}

/// Any valid message, every variant reachable.
pub fn message() -> impl Strategy<Value = Message> {
    use Message::*;
    let scheduling = prop_oneof![
        worker_id().prop_map(|worker_id| RequestTask { worker_id }),
        (seed_id(), 1..=u32::MAX).prop_map(|(seed_id, energy)| TaskAssignment { seed_id, energy }),
        any::<u32>().prop_map(|retry_after_ms| NoTaskAvailable { retry_after_ms }),
        seed_id().prop_map(|seed_id| UpdateSignal { seed_id }),
        role().prop_map(|role| SetRole { role }),
        (worker_id(), 1..=u32::MAX).prop_map(|(worker_id, max)| EvalBatchRequest { worker_id, max }),
        vec(seed_id(), 1..8).prop_map(|seed_ids| EvalBatch { seed_ids }),
        (worker_id(), counters()).prop_map(|(worker_id, counters)| StatusReport { worker_id, counters }),
        Just(Shutdown),
    ];
    let store_a = prop_oneof![
        (seed(), status()).prop_map(|(seed, status)| PutSeed { seed, status }),
        (seed_id(), any::<bool>()).prop_map(|(seed_id, fresh)| PutSeedOk { seed_id, fresh }),
        seed_id().prop_map(|seed_id| GetSeed { seed_id }),
        seed().prop_map(|seed| SeedData { seed }),
        (seed_id(), delta()).prop_map(|(seed_id, delta)| UpdateStatus { seed_id, delta }),
        (seed_id(), status()).prop_map(|(seed_id, status)| StatusValue { seed_id, status }),
        seed_id().prop_map(|seed_id| DiscardSeed { seed_id }),
        crash().prop_map(|record| PutCrash { record }),
        Just(Ack),
        (any::<u8>(), text()).prop_map(|(code, message)| StoreError { code, message }),
    ];
    let store_b = prop_oneof![
        vec(seed_id(), 0..8).prop_map(|seed_ids| SeedIds { seed_ids }),
        Just(Subscribe),
        seed_id().prop_map(|seed_id| GetStatus { seed_id }),
        Just(GetStats),
        stats().prop_map(|stats| Stats { stats }),
        (seed_id(), any::<[u8; 32]>()).prop_map(|(seed_id, coverage_digest)| ActivateSeed {
            seed_id,
            coverage_digest
        }),
        seed_id().prop_map(|seed_id| DuplicateCoverage { seed_id }),
        any::<bool>().prop_map(|fresh| PutCrashOk { fresh }),
        Just(ListCrashes),
        vec(crash_info(), 0..5).prop_map(|crashes| Crashes { crashes }),
    ];
    let rest = prop_oneof![
        (worker_id(), vec((seed_id(), status()), 0..5), vec(seed_id(), 0..5), any::<u64>()).prop_map(
            |(worker_id, accepted, discarded, work_us)| SeedsEvaluated {
                worker_id,
                accepted,
                discarded,
                work_us,
            }
        ),
        worker_id().prop_map(|worker_id| EvaluatorIdle { worker_id }),
        any::<u64>().prop_map(|since| ListActive { since }),
    ];
    prop_oneof![9 => scheduling, 10 => store_a, 10 => store_b, 3 => rest]
}
