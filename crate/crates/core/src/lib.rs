//! Traffic signal control lab.
//!
//! A point-queue intersection simulator, a structured abstraction of its
//! state, a small policy language, post-hoc defect analysis of decision logs,
//! baseline controllers, and an evolutionary loop that searches the policy
//! language with a pluggable mutation engine.

pub mod dsl;
pub mod events;
pub mod metrics;
pub mod network;
pub mod scenario;
pub mod sim;
pub mod ssa;
pub mod baselines;
pub mod caf;
pub mod episode;
pub mod evolution;
