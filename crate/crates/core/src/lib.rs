//! Deterministic layered-Ising Monte Carlo with pluggable execution backends
//! and a phase-timing benchmark harness.
//!
//! The crate is organized around the benchmark's data flow:
//!
//! - [`model`] — problem instances, annealing schedules, and the construction
//!   of layered classical replica systems.
//! - [`rng`] — a parallel Mersenne-Twister whose lanes live in one flat,
//!   strided state buffer.
//! - [`kernel`] — the Metropolis sweep engine with a conflict-free colored
//!   update schedule.
//! - [`backend`] — reference and parallel execution over explicitly staged
//!   device-style buffers, with exact transfer byte accounting.
//! - [`harness`] — six-phase timing, repeated-run statistics, and report
//!   emission.
//! - [`verify`] — self-contained verification suites backed by independent
//!   oracles.

pub mod backend;
pub mod harness;
pub mod kernel;
pub mod model;
pub mod rng;
pub mod verify;

pub use backend::{BackendKind, ExecutionPlan, StagedBuffers};
pub use harness::{BenchConfig, PhaseRecord, ReportFormat, RunStats};
pub use kernel::{PointResult, SweepStats, UpdateSchedule};
pub use model::{AnnealSchedule, LayeredSystem, ProblemInstance, SimulationPoint};
pub use rng::RngState;
