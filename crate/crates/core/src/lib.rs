//! Incremental few-shot meta-learning with episodic replay distillation.
//!
//! A model meets a stream of disjoint class groups (tasks) one at a time and
//! must stay a good few-shot learner on every class seen so far. Training
//! mixes current-task episodes with episodes built from a small exemplar
//! memory, and distils the previous model's episode predictions into the
//! current one.

pub mod autodiff;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod exec;
pub mod experiment;
pub mod learners;
pub mod memory;
pub mod rng;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};
