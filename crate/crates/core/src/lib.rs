//! Core algorithms for an ensemble-fuzzing orchestrator.
//!
//! This crate is the pure, deterministic half of the system: it knows nothing
//! about processes, files, or clocks. It provides
//!
//! * [`callgraph`] — call-graph ingestion, shortest-path function depths, and
//!   the deep-function predicate,
//! * [`record`] — the global fuzzing record: edge hit counts, execution-path
//!   identity, and crash identity,
//! * [`seedeval`] — the five-metric seed-pool evaluation and weight tuning,
//! * [`scheduler`] — the per-round bandit resource scheduler with soft-max
//!   selection, priming, feedback, and retargeting,
//! * [`seedpool`] — global/local seed pools and round-boundary synchronization.
//!
//! The crate is `no_std`-compatible (with `alloc`); disable default features
//! to drop the `std` dependency.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod callgraph;
pub mod hash;
pub mod ids;
pub mod record;
pub mod scheduler;
pub mod seedeval;
pub mod seedpool;

mod math;

pub use ids::{EdgeId, FuzzerId, SeedId, UnitId};
