//! Continual learning on a synthetic scene-graph VQA world.
//!
//! The crate is organized around a small set of subsystems:
//!
//! - [`worldgen`] — deterministic synthetic corpus generation and the
//!   scene-/function-incremental benchmark splits.
//! - [`sgcodec`] — token vocabulary, special tokens, and the exact sequence
//!   formats used by the replay model, with lossless parsing of generations.
//! - [`srm`] — the symbolic replay model: a decoder-only transformer trained
//!   on scene-graph continuation and QA generation, plus the per-task
//!   SG-prompt database and the replay-set generator.
//! - [`univqa`] — the unified VQA answerer: multimodal fusion under a causal
//!   decoding mask with a dynamic pointer network over OCR tokens.
//! - [`cl_engine`] — sequential training over a benchmark under a strategy
//!   (finetune, online EWC, MAS, real-sample memories, symbolic replay).
//! - [`evalkit`] — answer accuracy and the continual-learning metrics
//!   (average accuracy, forgetting, backward transfer), reports and figures.
//! - [`nn`] — a compact reverse-mode autodiff tape over `f64` matrices that
//!   both models are built on.
//!
//! Most entry points are exercised by the runnable examples in `examples/`;
//! the `sgreplay` binary wraps the same APIs behind subcommands.

pub mod cl_engine;
pub mod cli;
pub mod error;
pub mod evalkit;
pub mod nn;
pub mod rng;
pub mod sgcodec;
pub mod srm;
pub mod univqa;
pub mod worldgen;

pub use error::{Error, Result};
