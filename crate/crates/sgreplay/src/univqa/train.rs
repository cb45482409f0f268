//! Mixed-batch training for the answerer.
//!
//! Each optimizer step minimizes the sum of up to four terms: the mean
//! answer loss over a current-task batch, the mean over a generated-replay
//! batch, the mean over an episodic-memory batch (when a strategy keeps
//! one), and a parameter penalty (when a strategy regularizes). Absent terms
//! are skipped outright, never added as zeros, so plain finetuning and a
//! strategy with nothing to add produce bitwise-identical batches.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{merge_grads, Adam, AdamConfig, NodeId, Tape};
use crate::rng;
use crate::sgcodec::Vocab;
use crate::srm::ReplayTriplet;
use crate::worldgen::{Sample, TaskDataset};

use super::features::{bundle_from_replay, bundle_from_sample};
use super::{InputBundle, UniVqaModel};

/// Answer-loss training schedule. The default step size matches the scale
/// the answerer trains at; staircase drops go through `optim.lr_drops`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct VqaTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: AdamConfig,
}

impl Default for VqaTrainConfig {
    fn default() -> Self {
        VqaTrainConfig {
            epochs: 8,
            batch_size: 16,
            optim: AdamConfig { lr: 1e-4, ..AdamConfig::default() },
        }
    }
}

impl VqaTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// One training example: the input view plus the gold answer words.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub bundle: InputBundle,
    pub answer_words: Vec<String>,
}

impl TrainItem {
    pub fn from_sample(sample: &Sample, vocab: &Vocab) -> Result<TrainItem> {
        Ok(TrainItem {
            bundle: bundle_from_sample(sample, vocab)?,
            answer_words: sample.answer().split_whitespace().map(String::from).collect(),
        })
    }

    pub fn from_replay(triplet: &ReplayTriplet, vocab: &Vocab, id: impl Into<String>) -> Result<TrainItem> {
        Ok(TrainItem {
            bundle: bundle_from_replay(triplet, vocab, id)?,
            answer_words: triplet.answer.split_whitespace().map(String::from).collect(),
        })
    }
}

/// What a continual-learning strategy may add to each training batch. The
/// default implementations add nothing, leaving the batch graph identical to
/// plain finetuning.
pub trait StrategyHooks {
    /// A parameter-penalty node built on the batch tape (the tape is bound
    /// to the model being trained). `None` adds no term at all.
    fn penalty(&self, tape: &mut Tape<'_>) -> Option<NodeId> {
        let _ = tape;
        None
    }

    /// Items to mix into batch `batch_index` as their own mean-loss term
    /// (episodic memory). An empty list adds no term.
    fn memory_batch(&mut self, batch_index: usize) -> Vec<TrainItem> {
        let _ = batch_index;
        Vec::new()
    }
}

/// The finetuning strategy: no hooks.
pub struct NoHooks;

impl StrategyHooks for NoHooks {}

/// Loss record for one optimizer step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VqaBatchLoss {
    /// Sum of the answer-loss means (current + replay + memory terms).
    pub answer: f64,
    pub penalty: f64,
    pub total: f64,
}

/// Trains the answerer on the mix of current-task samples and generated
/// replay triplets, with optional strategy hooks. Only task 0 may train
/// without replay; passing replay to task 0 is a configuration error.
/// Returns the per-batch loss curve and the optimizer (whose moments callers
/// may checkpoint).
#[allow(clippy::too_many_arguments)]
pub fn train_univqa(
    model: &mut UniVqaModel,
    current: &TaskDataset,
    replay: &[ReplayTriplet],
    hooks: &mut dyn StrategyHooks,
    cfg: &VqaTrainConfig,
    vocab: &Vocab,
    task_index: usize,
    seed: u64,
) -> Result<(Vec<VqaBatchLoss>, Adam)> {
    cfg.validate()?;
    model.cfg.validate()?;
    if task_index == 0 && !replay.is_empty() {
        return Err(Error::config("the first task has no earlier tasks to replay"));
    }
    if current.train.is_empty() {
        return Err(Error::data(format!("task {}: no training samples", current.task_tag)));
    }

    let current_items: Vec<TrainItem> = current
        .train
        .iter()
        .map(|s| TrainItem::from_sample(s, vocab))
        .collect::<Result<_>>()?;
    let replay_items: Vec<TrainItem> = replay
        .iter()
        .enumerate()
        .map(|(j, t)| TrainItem::from_replay(t, vocab, format!("replay-{}-{j}", t.source_task)))
        .collect::<Result<_>>()?;

    let mut optimizer = Adam::new(cfg.optim.clone(), &model.params);
    let mut curve = Vec::new();
    let mut batch_index = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..current_items.len()).collect();
        let mut replay_order: Vec<usize> = (0..replay_items.len()).collect();
        {
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng::stream(seed, "vqa-epoch", epoch as u64));
            replay_order.shuffle(&mut rng::stream(seed, "vqa-replay", epoch as u64));
        }
        let mut replay_cursor = 0usize;

        for chunk in order.chunks(cfg.batch_size) {
            let mut batch: Vec<(&TrainItem, f64)> = Vec::new();
            let cur_scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                batch.push((&current_items[i], cur_scale));
            }
            if !replay_items.is_empty() {
                let take = cfg.batch_size.min(replay_items.len());
                let rep_scale = 1.0 / take as f64;
                for _ in 0..take {
                    let idx = replay_order[replay_cursor % replay_order.len()];
                    replay_cursor += 1;
                    batch.push((&replay_items[idx], rep_scale));
                }
            }
            let memory = hooks.memory_batch(batch_index);
            if !memory.is_empty() {
                let mem_scale = 1.0 / memory.len() as f64;
                for item in &memory {
                    batch.push((item, mem_scale));
                }
            }

            let loss = train_batch(model, &batch, hooks, &mut optimizer)?;
            if !loss.total.is_finite() {
                return Err(Error::divergence(format!(
                    "task {}: non-finite loss {} at batch {batch_index}",
                    current.task_tag, loss.total
                )));
            }
            curve.push(loss);
            batch_index += 1;
        }
    }
    Ok((curve, optimizer))
}

/// One optimizer step over pre-scaled items: per-item gradients in parallel,
/// merged in slot order so worker count never changes the result.
fn train_batch(
    model: &mut UniVqaModel,
    batch: &[(&TrainItem, f64)],
    hooks: &dyn StrategyHooks,
    optimizer: &mut Adam,
) -> Result<VqaBatchLoss> {
    let per_item: Vec<(f64, Vec<Option<Array2<f64>>>)> = batch
        .par_iter()
        .map(|(item, scale)| {
            let mut tape = Tape::new(&model.params);
            let node = model.answer_loss_on_tape(&mut tape, &item.bundle, &item.answer_words, *scale)?;
            let mut grads: Vec<Option<Array2<f64>>> = vec![None; model.params.len()];
            tape.backward(node, 1.0, &mut grads);
            Ok((tape.scalar(node), grads))
        })
        .collect::<Result<_>>()?;

    let mut grads: Vec<Option<Array2<f64>>> = vec![None; model.params.len()];
    let mut answer = 0.0;
    for (value, g) in per_item {
        answer += value;
        merge_grads(&mut grads, g);
    }

    let mut penalty = 0.0;
    {
        let mut tape = Tape::new(&model.params);
        if let Some(node) = hooks.penalty(&mut tape) {
            penalty = tape.scalar(node);
            let mut pg: Vec<Option<Array2<f64>>> = vec![None; model.params.len()];
            tape.backward(node, 1.0, &mut pg);
            merge_grads(&mut grads, pg);
        }
    }

    optimizer.step(&mut model.params, &grads);
    Ok(VqaBatchLoss { answer, penalty, total: answer + penalty })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldgen::{ConceptBank, FunctionalProgram, OcrEntry, Relationship, SceneGraph};

    use super::super::{AnswerVocab, ModelConfig};

    fn sample(id: &str, q: &str, answer: &str, rows: Vec<Relationship>, ocr: Option<&str>) -> Sample {
        Sample {
            id: id.into(),
            scene: 'a',
            evidence_graph: SceneGraph::new(vec![rows[0].clone()]),
            scene_graph: SceneGraph::new(rows),
            question: q.into(),
            annotations: vec![answer.to_string(); 10],
            program: FunctionalProgram::new(&[("locate_object", "table"), ("query_name", "")]),
            task_tag: "o".into(),
            ocr_tokens: ocr.map(|t| vec![OcrEntry { text: t.into(), bbox: [0.2, 0.2, 0.2, 0.1] }]),
            knowledge: None,
        }
    }

    fn toy_task() -> TaskDataset {
        let rel = |s: &str, p: &str, o: &str| Relationship::relation(s, p, o);
        TaskDataset {
            task_tag: "o".into(),
            train: vec![
                sample("t0", "what is near the table", "chair", vec![rel("chair", "near", "table")], None),
                sample("t1", "what is on the table", "lamp", vec![rel("lamp", "on", "table")], None),
                sample("t2", "what does the sign say", "exit", vec![rel("sign", "says", "exit")], Some("exit")),
                sample("t3", "what is near the sofa", "bench", vec![rel("bench", "near", "sofa")], None),
            ],
            val: vec![],
            test: vec![],
        }
    }

    fn toy_setup() -> (UniVqaModel, Vocab, TaskDataset) {
        let bank = ConceptBank::default_world();
        let vocab = Vocab::build(&bank);
        let cfg = ModelConfig {
            d: 16,
            fusion_layers: 1,
            heads: 2,
            text_blocks: 1,
            max_decode_steps: 12,
            max_text_len: 64,
            answer_vocab: AnswerVocab::from_bank(&bank),
        };
        let model = UniVqaModel::new(cfg, &vocab, 21).unwrap();
        (model, vocab, toy_task())
    }

    #[test]
    fn replay_is_rejected_on_the_first_task_only() {
        let (mut model, vocab, task) = toy_setup();
        let triplet = ReplayTriplet {
            sg_srm: SceneGraph::new(vec![Relationship::relation("chair", "near", "table")]),
            question: "what is near the table".into(),
            answer: "chair".into(),
            prompt_used: SceneGraph::default(),
            source_task: "o".into(),
        };
        let cfg = VqaTrainConfig { epochs: 1, batch_size: 4, ..VqaTrainConfig::default() };

        let err = train_univqa(
            &mut model, &task, std::slice::from_ref(&triplet), &mut NoHooks, &cfg, &vocab, 0, 7,
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);

        train_univqa(&mut model, &task, &[triplet], &mut NoHooks, &cfg, &vocab, 1, 7).unwrap();
    }

    #[test]
    fn without_replay_the_batch_loss_is_the_plain_current_mean() {
        let (mut model, vocab, task) = toy_setup();
        let frozen = model.clone();
        let cfg = VqaTrainConfig { epochs: 1, batch_size: 8, ..VqaTrainConfig::default() };
        let (curve, _) = train_univqa(&mut model, &task, &[], &mut NoHooks, &cfg, &vocab, 0, 7).unwrap();
        assert_eq!(curve.len(), 1, "4 samples fit one batch of 8");

        let mut want = 0.0;
        for s in &task.train {
            let item = TrainItem::from_sample(s, &vocab).unwrap();
            let mut tape = Tape::new(&frozen.params);
            let node = frozen
                .answer_loss_on_tape(&mut tape, &item.bundle, &item.answer_words, 1.0)
                .unwrap();
            want += tape.scalar(node) / task.train.len() as f64;
        }
        assert!((curve[0].answer - want).abs() < 1e-12);
        assert_eq!(curve[0].penalty, 0.0);
        assert_eq!(curve[0].total.to_bits(), curve[0].answer.to_bits());
    }

    #[test]
    fn memory_and_penalty_terms_stack_on_top_of_the_current_mean() {
        struct FixedExtras {
            memory: Vec<TrainItem>,
        }
        impl StrategyHooks for FixedExtras {
            fn penalty(&self, tape: &mut Tape<'_>) -> Option<NodeId> {
                // A constant is enough to verify the term is added.
                let c = tape.input(Array2::from_elem((1, 1), 0.125));
                Some(tape.sum_squares(c))
            }
            fn memory_batch(&mut self, _batch_index: usize) -> Vec<TrainItem> {
                self.memory.clone()
            }
        }

        let (mut model, vocab, task) = toy_setup();
        let frozen = model.clone();
        let memory_sample = sample(
            "m0",
            "what is on the sofa",
            "lamp",
            vec![Relationship::relation("lamp", "on", "sofa")],
            None,
        );
        let memory = vec![TrainItem::from_sample(&memory_sample, &vocab).unwrap()];
        let mut hooks = FixedExtras { memory: memory.clone() };
        let cfg = VqaTrainConfig { epochs: 1, batch_size: 8, ..VqaTrainConfig::default() };
        let (curve, _) = train_univqa(&mut model, &task, &[], &mut hooks, &cfg, &vocab, 0, 7).unwrap();

        let mut want = 0.0;
        for s in &task.train {
            let item = TrainItem::from_sample(s, &vocab).unwrap();
            let mut tape = Tape::new(&frozen.params);
            let node = frozen
                .answer_loss_on_tape(&mut tape, &item.bundle, &item.answer_words, 1.0)
                .unwrap();
            want += tape.scalar(node) / task.train.len() as f64;
        }
        {
            let mut tape = Tape::new(&frozen.params);
            let node = frozen
                .answer_loss_on_tape(&mut tape, &memory[0].bundle, &memory[0].answer_words, 1.0)
                .unwrap();
            want += tape.scalar(node);
        }
        assert!((curve[0].answer - want).abs() < 1e-12);
        assert!((curve[0].penalty - 0.125 * 0.125).abs() < 1e-15);
        assert!((curve[0].total - curve[0].answer - curve[0].penalty).abs() < 1e-15);
    }

    #[test]
    fn the_loss_curve_falls_on_a_memorizable_task() {
        let (mut model, vocab, task) = toy_setup();
        let cfg = VqaTrainConfig {
            epochs: 30,
            batch_size: 4,
            optim: AdamConfig { lr: 3e-3, ..AdamConfig::default() },
        };
        let (curve, _) = train_univqa(&mut model, &task, &[], &mut NoHooks, &cfg, &vocab, 0, 7).unwrap();
        let first = curve.first().unwrap().total;
        let last = curve.last().unwrap().total;
        assert!(
            last < first * 0.5,
            "loss should at least halve: first {first}, last {last}"
        );
    }

    #[test]
    fn poisoned_parameters_surface_as_divergence() {
        let (mut model, vocab, task) = toy_setup();
        let flat = vec![1e200; model.params.num_scalars()];
        model.params.load_flat(&flat);
        let cfg = VqaTrainConfig { epochs: 1, batch_size: 4, ..VqaTrainConfig::default() };
        let err = train_univqa(&mut model, &task, &[], &mut NoHooks, &cfg, &vocab, 0, 7).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }
}
