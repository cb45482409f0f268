//! Joint training of the replay model on one task: scene-graph continuation
//! plus QA generation, with replayed pseudo items interleaved into the
//! stream at a fixed pseudo:real ratio.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{merge_grads, Adam, Tape};
use crate::rng;
use crate::sgcodec::{encode_qa_gen, encode_sg_lm, Vocab};
use crate::srm::{ReplayTriplet, SrmModel, SrmTrainConfig};
use crate::worldgen::TaskDataset;
use rand::seq::SliceRandom;

/// Per-batch loss record. `total = qa + lambda * sg`; both components are
/// per-token means averaged over the batch.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct BatchLoss {
    pub qa: f64,
    pub sg: f64,
    pub total: f64,
}

/// One pre-encoded training item (either a real sample or a replay triplet).
struct EncodedItem {
    sg_in: Vec<usize>,
    sg_tgt: Vec<usize>,
    sg_w: Vec<f64>,
    qa_in: Vec<usize>,
    qa_tgt: Vec<usize>,
    qa_w: Vec<f64>,
}

fn encode_item(
    vocab: &Vocab,
    sg: &crate::worldgen::SceneGraph,
    evidence: &crate::worldgen::SceneGraph,
    question: &str,
    answer: &str,
) -> Result<EncodedItem> {
    let (sg_in, sg_tgt) = encode_sg_lm(sg, vocab)?;
    let sg_w = vec![1.0; sg_tgt.len()];
    let (qa_in, qa_tgt, qa_w) = encode_qa_gen(evidence, question, answer, vocab)?;
    Ok(EncodedItem {
        sg_in: sg_in.ids,
        sg_tgt: sg_tgt.ids,
        sg_w,
        qa_in: qa_in.ids,
        qa_tgt: qa_tgt.ids,
        qa_w,
    })
}

/// Slot in the mixed training stream, holding an index into the real or
/// pseudo item lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum StreamSlot {
    Real(usize),
    Pseudo(usize),
}

/// Builds one epoch's stream: shuffled real items walked in chunks of
/// `mix_real`, with `mix_pseudo` pseudo items appended after every full
/// chunk (cycling through the shuffled pseudo list). With the default 1:4
/// ratio the pattern is R R R R P repeated, so every window of five
/// consecutive slots holds exactly one pseudo item.
pub(crate) fn build_stream(
    n_real: usize,
    n_pseudo: usize,
    mix_real: usize,
    mix_pseudo: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<StreamSlot> {
    let mut real_order: Vec<usize> = (0..n_real).collect();
    real_order.shuffle(rng);
    let mut pseudo_order: Vec<usize> = (0..n_pseudo).collect();
    pseudo_order.shuffle(rng);

    let mut stream = Vec::with_capacity(n_real + n_real / mix_real * mix_pseudo + 1);
    let mut next_pseudo = 0usize;
    for chunk in real_order.chunks(mix_real) {
        stream.extend(chunk.iter().map(|&i| StreamSlot::Real(i)));
        if chunk.len() == mix_real && n_pseudo > 0 {
            for _ in 0..mix_pseudo {
                stream.push(StreamSlot::Pseudo(pseudo_order[next_pseudo % n_pseudo]));
                next_pseudo += 1;
            }
        }
    }
    stream
}

/// Trains the model in place on one task, mixing in replayed items, and
/// returns the per-batch loss curve together with the optimizer (fresh at
/// the start of each task; model parameters carry over untouched).
///
/// `task_index` is zero-based position in the task sequence: replay on the
/// first task is a contract violation.
pub fn train_srm(
    model: &mut SrmModel,
    task: &TaskDataset,
    replay: &[ReplayTriplet],
    cfg: &SrmTrainConfig,
    vocab: &Vocab,
    task_index: usize,
    seed: u64,
) -> Result<(Vec<BatchLoss>, Adam)> {
    cfg.validate()?;
    if task_index == 0 && !replay.is_empty() {
        return Err(Error::config(
            "replay items supplied on the first task — nothing precedes it",
        ));
    }
    if task.train.is_empty() {
        return Err(Error::data(format!(
            "task '{}' has an empty train split",
            task.task_tag
        )));
    }

    let real: Vec<EncodedItem> = task
        .train
        .iter()
        .map(|s| encode_item(vocab, &s.scene_graph, &s.evidence_graph, &s.question, s.answer()))
        .collect::<Result<_>>()?;
    let pseudo: Vec<EncodedItem> = replay
        .iter()
        .map(|t| encode_item(vocab, &t.sg_srm, &t.prompt_used, &t.question, &t.answer))
        .collect::<Result<_>>()?;

    let mut optimizer = Adam::new(cfg.optim.clone(), &model.params);
    let mut curve = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut r = rng::stream(seed, "srm-epoch", epoch as u64);
        let stream = build_stream(real.len(), pseudo.len(), cfg.mix_real, cfg.mix_pseudo, &mut r);
        for batch in stream.chunks(cfg.batch_size) {
            let loss = train_batch(model, &mut optimizer, &real, &pseudo, batch, cfg.lambda)?;
            if !loss.total.is_finite() {
                return Err(Error::divergence(format!(
                    "non-finite loss {} on task '{}' epoch {epoch}",
                    loss.total, task.task_tag
                )));
            }
            curve.push(loss);
        }
    }
    Ok((curve, optimizer))
}

/// One optimizer step over a batch: items are processed in parallel, each
/// on its own tape; gradients merge in slot order so the result does not
/// depend on thread scheduling.
fn train_batch(
    model: &mut SrmModel,
    optimizer: &mut Adam,
    real: &[EncodedItem],
    pseudo: &[EncodedItem],
    batch: &[StreamSlot],
    lambda: f64,
) -> Result<BatchLoss> {
    let b = batch.len() as f64;
    let per_item: Vec<(f64, f64, Vec<Option<Array2<f64>>>)> = batch
        .par_iter()
        .map(|slot| {
            let item = match slot {
                StreamSlot::Real(i) => &real[*i],
                StreamSlot::Pseudo(i) => &pseudo[*i],
            };
            item_loss_and_grads(model, item, lambda, 1.0 / b)
        })
        .collect::<Result<_>>()?;

    let mut grads: Vec<Option<Array2<f64>>> = vec![None; model.params.len()];
    let (mut qa_sum, mut sg_sum) = (0.0, 0.0);
    for (qa, sg, g) in per_item {
        qa_sum += qa;
        sg_sum += sg;
        merge_grads(&mut grads, g);
    }
    optimizer.step(&mut model.params, &grads);
    let qa = qa_sum / b;
    let sg = sg_sum / b;
    Ok(BatchLoss { qa, sg, total: qa + lambda * sg })
}

/// Loss and gradients for one item. With `lambda == 0` the scene-graph
/// branch is skipped entirely, so the total is bitwise equal to the QA loss.
fn item_loss_and_grads(
    model: &SrmModel,
    item: &EncodedItem,
    lambda: f64,
    grad_seed: f64,
) -> Result<(f64, f64, Vec<Option<Array2<f64>>>)> {
    let mut tape = Tape::new(&model.params);
    let qa = model.sequence_loss_on_tape(&mut tape, &item.qa_in, &item.qa_tgt, &item.qa_w)?;
    let (root, sg_val) = if lambda == 0.0 {
        (qa, 0.0)
    } else {
        let sg = model.sequence_loss_on_tape(&mut tape, &item.sg_in, &item.sg_tgt, &item.sg_w)?;
        let weighted = tape.scale(sg, lambda);
        (tape.add(qa, weighted), tape.scalar(sg))
    };
    let mut grads: Vec<Option<Array2<f64>>> = vec![None; model.params.len()];
    tape.backward(root, grad_seed, &mut grads);
    Ok((tape.scalar(qa), sg_val, grads))
}
