//! Reverse-mode autodiff over `f64` matrices, plus the transformer building
//! blocks and optimizers shared by the replay model and the VQA answerer.
//!
//! Everything is computed in 64-bit precision so analytic gradients can be
//! validated against central finite differences at tight tolerances.

pub(crate) mod io;
mod layers;
mod optim;
pub(crate) mod tape;

pub use layers::{causal_mask, AttentionParams, BlockParams, LayerNormParams, TransformerStack, MASK_OFF};
pub use optim::{Adam, AdamConfig};
pub use tape::{merge_grads, NodeId, ParamSet, Tape};
