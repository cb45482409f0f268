//! Parameter-importance tracking for the quadratic-penalty strategies.
//!
//! Both regularizers keep one importance value per parameter entry plus the
//! anchor parameters recorded after the last task; training then pays
//! `strength * sum(importance * (theta - anchor)^2)` on every batch. They
//! differ only in how importance is estimated and accumulated: squared
//! gradients of the answer loss with exponential decay (online EWC), or
//! absolute gradients of the output energy summed across tasks (MAS).

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{NodeId, Tape};
use crate::rng;
use crate::sgcodec::Vocab;
use crate::univqa::{StrategyHooks, TrainItem, UniVqaModel};
use crate::worldgen::TaskDataset;

/// Retention of the previous tasks' importance when EWC folds in a new
/// estimate.
pub const EWC_DECAY: f64 = 0.9;

/// Importance is estimated on at most this many samples per task.
pub const IMPORTANCE_SUBSET: usize = 256;

/// Per-parameter gradients are accumulated over chunks of this many samples
/// per worker; chunk partials merge in a fixed order so the result never
/// depends on the thread count.
const GRAD_CHUNK: usize = 16;

/// Running importance table plus the anchor parameters it protects.
#[derive(Debug, Clone)]
pub struct ImportanceState {
    importance: Vec<Array2<f64>>,
    anchor: Option<Vec<Array2<f64>>>,
    tasks_seen: usize,
}

impl ImportanceState {
    /// Zero importance, no anchor: the state before any task finished.
    pub fn zeros(model: &UniVqaModel) -> ImportanceState {
        let importance = (0..model.params.len())
            .map(|i| Array2::zeros(model.params.get(i).raw_dim()))
            .collect();
        ImportanceState { importance, anchor: None, tasks_seen: 0 }
    }

    pub fn importance(&self) -> &[Array2<f64>] {
        &self.importance
    }

    pub fn anchor(&self) -> Option<&[Array2<f64>]> {
        self.anchor.as_deref()
    }

    pub fn tasks_seen(&self) -> usize {
        self.tasks_seen
    }

    /// Re-anchors the penalty at the model's current parameters.
    pub fn anchor_now(&mut self, model: &UniVqaModel) -> Result<()> {
        self.check_shapes(model)?;
        let snapshot = (0..model.params.len())
            .map(|i| model.params.get(i).clone())
            .collect();
        self.anchor = Some(snapshot);
        Ok(())
    }

    fn check_shapes(&self, model: &UniVqaModel) -> Result<()> {
        if self.importance.len() != model.params.len() {
            return Err(Error::data(format!(
                "importance tracks {} parameter blocks, model has {}",
                self.importance.len(),
                model.params.len()
            )));
        }
        for (i, imp) in self.importance.iter().enumerate() {
            if imp.dim() != model.params.get(i).dim() {
                return Err(Error::data(format!(
                    "importance block {i} is {:?}, parameter is {:?}",
                    imp.dim(),
                    model.params.get(i).dim()
                )));
            }
        }
        Ok(())
    }
}

/// Batch hooks that charge the quadratic penalty. Weight arrays are
/// precomputed once per task visit; parameter blocks with zero importance
/// contribute nothing and are skipped outright.
pub struct PenaltyHooks {
    /// `(slot, sqrt(strength * importance), -anchor)` per contributing block.
    terms: Vec<(usize, Array2<f64>, Array2<f64>)>,
}

impl PenaltyHooks {
    pub fn new(state: &ImportanceState, strength: f64, model: &UniVqaModel) -> Result<PenaltyHooks> {
        state.check_shapes(model)?;
        let mut terms = Vec::new();
        if strength > 0.0 {
            if let Some(anchor) = &state.anchor {
                for (i, (imp, anc)) in state.importance.iter().zip(anchor).enumerate() {
                    if imp.iter().any(|v| *v != 0.0) {
                        terms.push((i, imp.mapv(|v| (strength * v).sqrt()), anc.mapv(|v| -v)));
                    }
                }
            }
        }
        Ok(PenaltyHooks { terms })
    }
}

impl StrategyHooks for PenaltyHooks {
    fn penalty(&self, tape: &mut Tape<'_>) -> Option<NodeId> {
        let mut total: Option<NodeId> = None;
        for (slot, weight, neg_anchor) in &self.terms {
            let theta = tape.param(*slot);
            let shift = tape.input(neg_anchor.clone());
            let diff = tape.add(theta, shift);
            let w = tape.input(weight.clone());
            let weighted = tape.mul(w, diff);
            let sq = tape.sum_squares(weighted);
            total = Some(match total {
                Some(t) => tape.add(t, sq),
                None => sq,
            });
        }
        total
    }
}

/// What each per-sample gradient feeds the importance estimate through.
#[derive(Clone, Copy)]
enum Probe {
    /// Gradient of the answer-prediction loss, squared.
    SquaredLoss,
    /// Gradient magnitude of the squared norm of the step-0 output.
    OutputSensitivity,
}

/// Folds a fresh squared-gradient estimate of the answer loss into the
/// running table (`I <- decay * I + mean(g^2)`) and re-anchors at the
/// current parameters.
pub fn update_importance_ewc(
    state: &mut ImportanceState,
    model: &UniVqaModel,
    task: &TaskDataset,
    vocab: &Vocab,
    seed: u64,
) -> Result<()> {
    state.check_shapes(model)?;
    let mean = mean_grad_stat(model, &subset_items(task, vocab, seed)?, Probe::SquaredLoss)?;
    for (acc, add) in state.importance.iter_mut().zip(&mean) {
        acc.mapv_inplace(|v| v * EWC_DECAY);
        *acc += add;
    }
    state.anchor_now(model)?;
    state.tasks_seen += 1;
    Ok(())
}

/// Adds the mean output-sensitivity magnitudes (`I <- I + mean(|g|)` of the
/// squared L2 norm of the pre-softmax step-0 scores) and re-anchors.
pub fn update_importance_mas(
    state: &mut ImportanceState,
    model: &UniVqaModel,
    task: &TaskDataset,
    vocab: &Vocab,
    seed: u64,
) -> Result<()> {
    state.check_shapes(model)?;
    let mean = mean_grad_stat(model, &subset_items(task, vocab, seed)?, Probe::OutputSensitivity)?;
    for (acc, add) in state.importance.iter_mut().zip(&mean) {
        *acc += add;
    }
    state.anchor_now(model)?;
    state.tasks_seen += 1;
    Ok(())
}

/// A uniform subsample of the train split, capped at [`IMPORTANCE_SUBSET`],
/// in ascending index order so accumulation order is reproducible.
fn subset_items(task: &TaskDataset, vocab: &Vocab, seed: u64) -> Result<Vec<TrainItem>> {
    if task.train.is_empty() {
        return Err(Error::data(format!(
            "task '{}' has no training samples to estimate importance on",
            task.task_tag
        )));
    }
    let mut idx: Vec<usize> = (0..task.train.len()).collect();
    if idx.len() > IMPORTANCE_SUBSET {
        use rand::seq::SliceRandom;
        idx.shuffle(&mut rng::stream(seed, "importance-subset", 0));
        idx.truncate(IMPORTANCE_SUBSET);
        idx.sort_unstable();
    }
    idx.iter().map(|&i| TrainItem::from_sample(&task.train[i], vocab)).collect()
}

/// Mean of a per-sample gradient statistic over `items`. Chunks run on
/// parallel workers but each chunk accumulates sequentially and partials
/// merge in chunk order, so the sum is independent of the worker count.
fn mean_grad_stat(
    model: &UniVqaModel,
    items: &[TrainItem],
    probe: Probe,
) -> Result<Vec<Array2<f64>>> {
    let zero_like = || -> Vec<Array2<f64>> {
        (0..model.params.len())
            .map(|i| Array2::zeros(model.params.get(i).raw_dim()))
            .collect()
    };
    let partials: Vec<Vec<Array2<f64>>> = items
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut acc = zero_like();
            for item in chunk {
                let mut tape = Tape::new(&model.params);
                let node = match probe {
                    Probe::SquaredLoss => {
                        model.answer_loss_on_tape(&mut tape, &item.bundle, &item.answer_words, 1.0)?
                    }
                    Probe::OutputSensitivity => {
                        model.first_step_energy_on_tape(&mut tape, &item.bundle)?
                    }
                };
                let mut grads: Vec<Option<Array2<f64>>> = vec![None; model.params.len()];
                tape.backward(node, 1.0, &mut grads);
                for (a, g) in acc.iter_mut().zip(&grads) {
                    if let Some(g) = g {
                        match probe {
                            Probe::SquaredLoss => a.zip_mut_with(g, |v, g| *v += g * g),
                            Probe::OutputSensitivity => a.zip_mut_with(g, |v, g| *v += g.abs()),
                        }
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    let mut total = zero_like();
    for part in partials {
        for (t, p) in total.iter_mut().zip(&part) {
            *t += p;
        }
    }
    let n = items.len() as f64;
    for t in &mut total {
        t.mapv_inplace(|v| v / n);
    }
    Ok(total)
}
