//! Ensemble fuzzing orchestrator: campaign coordination, fuzzer adapters,
//! deterministic simulation, and reporting on top of [`ensemble_core`].
//!
//! The orchestrator runs in two modes sharing one campaign loop:
//!
//! * **process mode** (`ensemble run`) supervises real fuzzer processes on
//!   CPU cores against an instrumented target,
//! * **simulation mode** (`ensemble simulate`) drives the same scheduling,
//!   evaluation, and synchronization code over a synthetic target on a
//!   virtual clock, bit-reproducibly.

pub mod adapter;
pub mod campaign;
pub mod cli;
pub mod config;
pub mod policy;
pub mod process;
pub mod report;
pub mod scenario;
pub mod simworld;

pub use campaign::{run_campaign, CampaignSetup, Runtime};
pub use policy::Policy;
pub use report::CampaignReport;
pub use scenario::Scenario;
