//! Risk-aware actor-critic laboratory.
//!
//! Implements a dual actor-critic agent (a pessimistic actor for temporal
//! difference learning and evaluation, an optimistic actor for exploration)
//! and a soft actor-critic baseline on top of a small reverse-mode autodiff
//! core, together with the exponential-utility certainty-equivalent algebra
//! that motivates the pessimistic bounds.

// Validation uses `!(x > 0.0)` so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod critic;
pub mod envs;
pub mod error;
pub mod harness;
pub mod policy;
pub mod replay;
pub mod risk;
pub mod tensor;

pub use error::{Error, Result};
