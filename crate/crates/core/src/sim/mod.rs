//! Deterministic discrete-event kernel.
//!
//! Events are ordered by `(fire_at, seq)`; `seq` is a per-scheduler insertion
//! counter, so events sharing a timestamp fire in FIFO order. All randomness
//! is drawn from labeled streams derived from the run seed (see [`rng`]).

pub mod queue;
pub mod rng;
pub mod time;

pub use queue::{EventHandle, Labeled, RunSummary, Scheduler, TraceEntry};
pub use rng::{RngStreams, StreamRng};
pub use time::SimTime;
