//! Merger analysis for variance-preserving diffusion.
//!
//! The crate simulates the empirical forward process on labeled data,
//! estimates conditional fluctuation tensors per class event, detects when
//! pairs of events become indistinguishable (mergers), and exports merge
//! cascades, guidance windows and weight schedules.
//!
//! Row-parallel kernels run on rayon with the default `parallel` feature.
//! Disable it for a strictly sequential build; results are bit-identical
//! either way.

pub mod cli;
pub mod convergence;
pub mod data;
pub mod error;
pub mod fluctuation;
pub mod forward;
pub mod merger;
mod par;
pub mod probe;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
