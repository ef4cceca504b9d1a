//! Realization of discrete-time switched linear systems from doubly-indexed
//! Markov parameters.
//!
//! The pipeline runs in four stages: a time-varying realization from sliding
//! Hankel matrices ([`ltv`]), discrete-state recovery by clustering the
//! realization on stationary stretches ([`cluster`]), switch detection
//! ([`switch`]), and alignment of the recovered submodels to a common state
//! basis ([`basis`]). [`pipeline`] chains them and computes evaluation metrics.

// Negated float comparisons are used on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod basis;
pub mod cluster;
pub mod exec;
pub mod hankel;
pub mod io;
pub mod linalg;
pub mod ltv;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod serde_mat;
pub mod switch;

pub use error::{Error, Result};
pub use exec::Execution;
