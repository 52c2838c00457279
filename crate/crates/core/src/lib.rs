//! Selective state-space model with a spiking readout, trained online by a
//! mix of exact forward-mode recurrent gradients and pair-based STDP, with
//! adaptive synaptic pruning.
//!
//! Module map:
//! - [`ssm`]: input-conditioned diagonal state-space layer.
//! - [`spiking`]: leaky integrate-and-fire layer, PSP traces, surrogate derivative.
//! - [`learning`]: sensitivities, STDP, the hybrid update and the online step.
//! - [`pruning`]: stochastic magnitude pruning with a sparsity controller.
//! - [`oracles`]: BPTT and finite-difference reference gradients.
//! - [`harness`]: tasks, training loop, metrics, probes, checkpoints, verification.

#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod exec;
pub mod harness;
pub mod learning;
pub mod matrix;
pub mod oracles;
pub mod pruning;
pub mod spiking;
pub mod ssm;

pub use error::{BimError, Result};
pub use exec::Execution;
