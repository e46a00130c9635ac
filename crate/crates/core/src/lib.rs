//! Streaming machine-part interaction classification.
//!
//! A sliding-window front end ([`stream`]) packages a single sensor channel
//! into sequences of windows. A two-stage CNN ([`model`]) encodes each window
//! into per-state scores and classifies the score trajectory into either an
//! interactive state or a transition event. A finite state machine
//! ([`coordinator`]) accepts, holds, or rejects each decision so that the
//! reported state trajectory only ever follows permitted transitions.
//!
//! [`synthgen`] produces labeled milling-like trials, and [`evalsim`]
//! measures classification quality and detection delay in replayed
//! deployments.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod coordinator;
pub mod dataset;
pub mod error;
pub mod evalsim;
pub mod model;
pub mod nn;
pub mod stream;
pub mod synthgen;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
