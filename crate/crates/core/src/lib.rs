//! Workbench for black-box rerouting attacks on cost-aware LLM routers.
//!
//! The pipeline trains a hybrid ensemble surrogate of an unknown target
//! router under a hard query budget, optimizes a universal adversarial
//! suffix against the surrogate with aggregated token gradients, and
//! evaluates attack success rate, cost impact, a whitespace defense, and a
//! response-style fingerprint classifier. Everything is seeded and
//! reproducible at desk scale.

pub mod attack;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fingerprint;
pub mod matrix;
pub mod pipeline;
pub mod pool;
pub mod rng;
pub mod synth;
pub mod surrogate;
pub mod target;
pub mod tokens;
pub mod vocab;

pub use error::{Error, Result};
