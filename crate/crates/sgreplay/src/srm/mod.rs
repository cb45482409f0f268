//! The symbolic replay model: a small decoder-only transformer trained
//! jointly on scene-graph continuation and QA generation, the per-task
//! prompt database it samples from, and the replay-set generator that turns
//! frequency statistics back into full (scene graph, question, answer)
//! triplets for rehearsal.

mod db;
mod model;
mod replay;
mod train;

pub use db::{build_prompt_db, sample_sg_prompt, PromptEntry, PromptMode, SgPromptDB};
pub use model::{DecodeMode, SrmConfig, SrmModel};
pub use replay::{generate_qa_pair, generate_replay_set, replay_scene_graph, ReplayOutcome};
pub(crate) use replay::plan_shares;
pub use train::{train_srm, BatchLoss};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::AdamConfig;
use crate::worldgen::SceneGraph;

/// Training schedule for one task visit.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SrmTrainConfig {
    /// Weight on the scene-graph continuation loss; the joint objective is
    /// `qa_loss + lambda * sg_loss`.
    pub lambda: f64,
    /// Pseudo samples per mixing period.
    pub mix_pseudo: usize,
    /// Real samples per mixing period. The default 1:4 pseudo:real ratio
    /// interleaves one replayed item after every four real ones.
    pub mix_real: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: AdamConfig,
    /// Decode budget for generated continuations, in tokens past the prefix.
    pub max_gen_len: usize,
    /// Retry budget for malformed generations before giving up on an item.
    pub resample_attempts: usize,
}

impl Default for SrmTrainConfig {
    fn default() -> Self {
        SrmTrainConfig {
            lambda: 0.25,
            mix_pseudo: 1,
            mix_real: 4,
            epochs: 15,
            batch_size: 16,
            optim: AdamConfig::default(),
            max_gen_len: 48,
            resample_attempts: 5,
        }
    }
}

impl SrmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::config("lambda must be finite and >= 0"));
        }
        if self.mix_pseudo == 0 || self.mix_real == 0 {
            return Err(Error::config("mix ratio components must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if self.max_gen_len == 0 {
            return Err(Error::config("max_gen_len must be positive"));
        }
        if self.resample_attempts == 0 {
            return Err(Error::config("resample_attempts must be positive"));
        }
        Ok(())
    }
}

/// One rehearsal item: a completed pseudo scene graph plus the QA pair
/// generated from the same prompt fragment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayTriplet {
    pub sg_srm: SceneGraph,
    pub question: String,
    pub answer: String,
    pub prompt_used: SceneGraph,
    pub source_task: String,
}
