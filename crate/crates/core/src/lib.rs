//! Distributed coverage-guided fuzzing: a central request-response scheduler,
//! a networked seed store, and workers that switch between fuzzing and
//! evaluating pending seeds.

pub mod campaign;
pub mod coverage;
pub mod mutation;
pub mod protocol;
pub mod rng;
pub mod scheduler;
pub mod seedstore;
pub mod target;
pub mod worker;

pub use campaign::{CampaignConfig, CampaignError, CampaignReport, Mode, Policy};
pub use coverage::{CoverageMap, NoveltyResult};
pub use protocol::{Message, NodeRole, WorkerCounters};
pub use rng::{derive_seed, FuzzRng};
pub use scheduler::{Budget, Scheduler, SchedulerConfig, SeedQueue};
pub use seedstore::{FuzzStatus, Seed, SeedId, SeedState, SeedStore, StatusDelta, StoreAccess};
pub use target::{ExecOutcome, SyntheticKind, TargetHandle};
pub use worker::{Evaluator, Worker, WorkerConfig};
