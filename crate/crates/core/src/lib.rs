//! Core library for a self-healing SIMO receiver swarm: baseband channel
//! simulation with a jammer, a QPSK frame pipeline with Zadoff-Chu
//! synchronization, three diversity-combining algorithms (MRC, LMMSE, SC),
//! the BER-driven algorithm-selection state machine, payload codecs, and the
//! deterministic cycle engine that drives them end to end.
//!
//! Everything here is seeded and deterministic: a fixed master seed produces
//! bit-identical runs. Per-receiver work inside a cycle is independent and is
//! processed in parallel when the `parallel` feature (default) is enabled;
//! disabling it yields a sequential build with identical output.

pub mod channel;
pub mod combining;
pub mod engine;
pub mod iq;
pub mod par;
pub mod payload;
pub mod phy;
pub mod scenario;
pub mod seeds;
pub mod selfheal;
pub mod trace;

pub use iq::{Complex64, IQBuffer};
