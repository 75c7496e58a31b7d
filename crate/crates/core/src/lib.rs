//! Online learning in recurrent networks.
//!
//! Recurrent cells with exact state Jacobians and immediate parameter
//! derivatives, online credit assignment (full RTRL, eligibility traces and
//! ring-masked sparse RTRL), first-order optimizers, streaming tasks with a
//! mid-stream distribution shift, diagnostics, and an experiment harness.

pub mod cells;
pub mod credit;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod optim;
pub mod tasks;

pub use error::{Error, Result};

#[cfg(test)]
mod testutil;
