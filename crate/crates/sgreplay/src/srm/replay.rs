//! Turning a frozen model plus prompt statistics back into training data:
//! scene-graph completion, QA generation, and the equal-share replay set
//! builder used between tasks.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;
use crate::sgcodec::{
    make_inference_prefix, parse_generation, GenMode, Malformed, Parsed, SeqRole, TokenSeq, Vocab,
};
use crate::srm::{sample_sg_prompt, DecodeMode, ReplayTriplet, SgPromptDB, SrmModel, SrmTrainConfig};
use crate::worldgen::{Lexicon, SceneGraph};

/// Completes a scene graph from a `[g] prompt [s]` prefix. Malformed
/// generations are resampled up to `attempts` times; the final failure is
/// returned as a skip-and-log signal rather than a hard error.
pub fn replay_scene_graph(
    model: &SrmModel,
    prefix: &TokenSeq,
    vocab: &Vocab,
    lexicon: &Lexicon,
    mode: DecodeMode,
    max_gen_len: usize,
    attempts: usize,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<SceneGraph, Malformed> {
    assert_eq!(
        prefix.role,
        SeqRole::SgInferencePrefix,
        "prefix must come from make_inference_prefix(.., sg)"
    );
    let mut last = Malformed("no decode attempts made".into());
    for _ in 0..attempts.max(1) {
        let seq = match model.decode(&prefix.ids, mode, max_gen_len, rng) {
            Ok(s) => s,
            Err(e) => return Err(Malformed(format!("decode failed: {e}"))),
        };
        match parse_generation(&seq, GenMode::Sg, vocab, lexicon) {
            Ok(Parsed::Sg(sg)) => return Ok(sg),
            Ok(_) => unreachable!("sg mode parses to sg"),
            Err(m) => last = m,
        }
    }
    Err(last)
}

/// Generates a (question, answer) pair from a `[g] prompt [q]` prefix, with
/// the same resampling contract as [`replay_scene_graph`].
pub fn generate_qa_pair(
    model: &SrmModel,
    prefix: &TokenSeq,
    vocab: &Vocab,
    lexicon: &Lexicon,
    mode: DecodeMode,
    max_gen_len: usize,
    attempts: usize,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<(String, String), Malformed> {
    assert_eq!(
        prefix.role,
        SeqRole::QaInferencePrefix,
        "prefix must come from make_inference_prefix(.., qa)"
    );
    let mut last = Malformed("no decode attempts made".into());
    for _ in 0..attempts.max(1) {
        let seq = match model.decode(&prefix.ids, mode, max_gen_len, rng) {
            Ok(s) => s,
            Err(e) => return Err(Malformed(format!("decode failed: {e}"))),
        };
        match parse_generation(&seq, GenMode::Qa, vocab, lexicon) {
            Ok(Parsed::Qa { question, answer }) => return Ok((question, answer)),
            Ok(_) => unreachable!("qa mode parses to qa"),
            Err(m) => last = m,
        }
    }
    Err(last)
}

/// A generated replay set plus the per-task shortfall for items that stayed
/// malformed through every retry. An empty `shortfall` means the set is
/// complete.
#[derive(Debug, Clone, Default)]
pub struct ReplayOutcome {
    pub triplets: Vec<ReplayTriplet>,
    pub shortfall: BTreeMap<String, usize>,
}

impl ReplayOutcome {
    pub fn is_complete(&self) -> bool {
        self.shortfall.is_empty()
    }
}

/// Equal shares with a round-robin remainder: earlier tasks in the given
/// order absorb one extra item each until the remainder is spent.
pub(crate) fn plan_shares(total: usize, n_tasks: usize) -> Vec<usize> {
    let base = total / n_tasks;
    let rem = total % n_tasks;
    (0..n_tasks).map(|i| base + usize::from(i < rem)).collect()
}

/// Extra per-task draw rounds that refill items whose every decode stayed
/// malformed, before the miss is reported as shortfall.
const REFILL_ROUNDS: usize = 4;

/// Generates `total` replay triplets across the previous tasks, each task
/// receiving an equal share (±1 by round-robin). Every triplet pairs one
/// scene-graph completion and one QA generation from the same sampled
/// prompt. Items are generated on parallel workers with per-item rng
/// substreams keyed by (task, index), so results are deterministic in
/// `seed` regardless of worker count. Items that stay malformed through
/// their retry budget are refilled with replacement draws on fresh
/// substreams; only misses surviving every refill round count as
/// shortfall.
#[allow(clippy::too_many_arguments)]
pub fn generate_replay_set(
    model: &SrmModel,
    db: &SgPromptDB,
    prev_tasks: &[String],
    total: usize,
    cfg: &SrmTrainConfig,
    vocab: &Vocab,
    lexicon: &Lexicon,
    mode: DecodeMode,
    seed: u64,
) -> Result<ReplayOutcome> {
    if total == 0 {
        return Ok(ReplayOutcome::default());
    }
    if prev_tasks.is_empty() {
        return Err(Error::config("replay requested but no previous tasks exist"));
    }
    for tag in prev_tasks {
        if db.entry(tag).is_none() {
            return Err(Error::config(format!("no prompt statistics for task '{tag}'")));
        }
    }
    let shares = plan_shares(total, prev_tasks.len());
    // (tag, missing count, next unused substream index) per previous task.
    let mut wanted: Vec<(&str, usize, u64)> = prev_tasks
        .iter()
        .zip(&shares)
        .map(|(tag, &n)| (tag.as_str(), n, n as u64))
        .collect();

    let mut outcome = ReplayOutcome::default();
    for _ in 0..=REFILL_ROUNDS {
        let jobs: Vec<(&str, u64)> = wanted
            .iter()
            .flat_map(|&(tag, missing, next)| {
                (0..missing as u64).map(move |j| (tag, next - missing as u64 + j))
            })
            .collect();
        if jobs.is_empty() {
            break;
        }
        let results: Vec<(&str, Option<ReplayTriplet>)> = jobs
            .par_iter()
            .map(|&(tag, j)| {
                let mut r = rng::stream(seed, &format!("replay:{tag}"), j);
                let triplet = generate_one(model, db, tag, cfg, vocab, lexicon, mode, &mut r);
                (tag, triplet)
            })
            .collect();
        let mut landed: BTreeMap<&str, usize> = BTreeMap::new();
        for (tag, item) in results {
            if let Some(t) = item {
                outcome.triplets.push(t);
                *landed.entry(tag).or_insert(0) += 1;
            }
        }
        for entry in &mut wanted {
            entry.1 -= landed.get(entry.0).copied().unwrap_or(0);
            entry.2 += entry.1 as u64;
        }
        wanted.retain(|&(_, missing, _)| missing > 0);
    }
    for (tag, missing, _) in wanted {
        outcome.shortfall.insert(tag.to_string(), missing);
    }
    Ok(outcome)
}

/// One replay item: resample the prompt itself when either decode stays
/// malformed, up to the configured retry budget.
fn generate_one(
    model: &SrmModel,
    db: &SgPromptDB,
    tag: &str,
    cfg: &SrmTrainConfig,
    vocab: &Vocab,
    lexicon: &Lexicon,
    mode: DecodeMode,
    rng: &mut ChaCha8Rng,
) -> Option<ReplayTriplet> {
    for _ in 0..cfg.resample_attempts.max(1) {
        let prompt = sample_sg_prompt(db, tag, rng).expect("tags validated upfront");
        let Ok(sg_prefix) = make_inference_prefix(&prompt, GenMode::Sg, vocab) else {
            continue;
        };
        let Ok(sg_srm) = replay_scene_graph(
            model,
            &sg_prefix,
            vocab,
            lexicon,
            mode,
            cfg.max_gen_len,
            cfg.resample_attempts,
            rng,
        ) else {
            continue;
        };
        let Ok(qa_prefix) = make_inference_prefix(&prompt, GenMode::Qa, vocab) else {
            continue;
        };
        let Ok((question, answer)) = generate_qa_pair(
            model,
            &qa_prefix,
            vocab,
            lexicon,
            mode,
            cfg.max_gen_len,
            cfg.resample_attempts,
            rng,
        ) else {
            continue;
        };
        return Some(ReplayTriplet {
            sg_srm,
            question,
            answer,
            prompt_used: prompt,
            source_task: tag.to_string(),
        });
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::AdamConfig;
    use crate::sgcodec::Vocab;
    use crate::srm::{build_prompt_db, train_srm, PromptMode, SrmConfig};
    use crate::worldgen::{
        ConceptBank, FunctionalProgram, Relationship, Sample, TaskDataset,
    };

    fn memorization_task() -> (Vocab, Lexicon, TaskDataset, SceneGraph) {
        let bank = ConceptBank::default_world();
        let vocab = Vocab::build(&bank);
        let lexicon = Lexicon::from_bank(&bank);
        let graph = SceneGraph::new(vec![
            Relationship::relation("chair", "near", "table"),
            Relationship::relation("lamp", "on", "table"),
        ]);
        let sample = Sample {
            id: "xx-00000".into(),
            scene: 'c',
            scene_graph: graph.clone(),
            evidence_graph: graph.clone(),
            question: "what is near the table".into(),
            annotations: vec!["chair".into(); 10],
            program: FunctionalProgram::new(&[("Select", "table"), ("Query", "name")]),
            task_tag: "o".into(),
            ocr_tokens: None,
            knowledge: None,
        };
        let task = TaskDataset {
            task_tag: "o".into(),
            train: vec![sample; 4],
            val: Vec::new(),
            test: Vec::new(),
        };
        (vocab, lexicon, task, graph)
    }

    fn memorize(vocab: &Vocab, task: &TaskDataset) -> SrmModel {
        let cfg = SrmConfig {
            blocks: 1,
            width: 32,
            heads: 2,
            max_seq_len: 96,
            tied_output: false,
        };
        let mut r = crate::rng::stream(41, "replay-test", 0);
        let mut model = SrmModel::new(cfg, vocab, &mut r).unwrap();
        let train_cfg = SrmTrainConfig {
            epochs: 1,
            batch_size: 4,
            optim: AdamConfig { lr: 1e-2, ..Default::default() },
            ..SrmTrainConfig::default()
        };
        for round in 0..80 {
            let (curve, _) =
                train_srm(&mut model, task, &[], &train_cfg, vocab, 0, round).unwrap();
            if curve.last().unwrap().total < 0.02 {
                break;
            }
        }
        model
    }

    #[test]
    fn shares_are_equal_with_round_robin_remainder() {
        assert_eq!(plan_shares(450, 3), vec![150, 150, 150]);
        assert_eq!(plan_shares(10, 3), vec![4, 3, 3]);
        assert_eq!(plan_shares(2, 3), vec![1, 1, 0]);
        assert_eq!(plan_shares(0, 2), vec![0, 0]);
    }

    #[test]
    fn memorized_continuations_replay_the_training_graph() {
        let (vocab, lexicon, task, graph) = memorization_task();
        let model = memorize(&vocab, &task);

        // Prompt with the first relationship; the completion must start
        // with it and reproduce the memorized remainder.
        let prompt = SceneGraph::new(vec![graph.relationships[0].clone()]);
        let prefix = make_inference_prefix(&prompt, GenMode::Sg, &vocab).unwrap();
        let mut r = crate::rng::stream(42, "replay-test", 1);
        let sg = replay_scene_graph(
            &model, &prefix, &vocab, &lexicon, DecodeMode::Greedy, 48, 3, &mut r,
        )
        .unwrap();
        assert!(sg.relationships.starts_with(&prompt.relationships));
        assert_eq!(sg, graph);

        let qa_prefix = make_inference_prefix(&graph, GenMode::Qa, &vocab).unwrap();
        let (q, a) = generate_qa_pair(
            &model, &qa_prefix, &vocab, &lexicon, DecodeMode::Greedy, 48, 3, &mut r,
        )
        .unwrap();
        assert_eq!(q, "what is near the table");
        assert_eq!(a, "chair");
    }

    #[test]
    fn tiny_generation_budget_yields_a_malformed_signal() {
        let (vocab, lexicon, task, graph) = memorization_task();
        let model = memorize(&vocab, &task);
        let prompt = SceneGraph::new(vec![graph.relationships[0].clone()]);
        let prefix = make_inference_prefix(&prompt, GenMode::Sg, &vocab).unwrap();
        let mut r = crate::rng::stream(43, "replay-test", 2);
        let out = replay_scene_graph(
            &model, &prefix, &vocab, &lexicon, DecodeMode::Greedy, 1, 2, &mut r,
        );
        assert!(out.is_err(), "one-token budget cannot finish a graph");
    }

    #[test]
    fn replay_set_bookkeeping_adds_up() {
        let (vocab, lexicon, task, _) = memorization_task();
        let model = memorize(&vocab, &task);
        let mut db = SgPromptDB::default();
        db.insert("o", build_prompt_db(&task, PromptMode::AtomRecompose).unwrap());

        let cfg = SrmTrainConfig { resample_attempts: 6, ..SrmTrainConfig::default() };
        let total = 6;
        let out = generate_replay_set(
            &model,
            &db,
            &["o".to_string()],
            total,
            &cfg,
            &vocab,
            &lexicon,
            DecodeMode::TopK { k: 40, temperature: 1.0 },
            99,
        )
        .unwrap();
        let missing: usize = out.shortfall.values().sum();
        assert_eq!(out.triplets.len() + missing, total);
        for t in &out.triplets {
            assert_eq!(t.source_task, "o");
            assert!(!t.answer.is_empty());
            assert!(!t.question.is_empty());
            assert!(t.sg_srm.relationships.starts_with(&t.prompt_used.relationships));
        }
        // Determinism: the same seed regenerates the same set.
        let again = generate_replay_set(
            &model,
            &db,
            &["o".to_string()],
            total,
            &cfg,
            &vocab,
            &lexicon,
            DecodeMode::TopK { k: 40, temperature: 1.0 },
            99,
        )
        .unwrap();
        assert_eq!(out.triplets.len(), again.triplets.len());
        for (a, b) in out.triplets.iter().zip(&again.triplets) {
            assert_eq!(a.sg_srm, b.sg_srm);
            assert_eq!(a.question, b.question);
            assert_eq!(a.answer, b.answer);
        }

        // Zero total needs no tasks; nonzero total with no tasks is a
        // configuration error.
        let empty = generate_replay_set(
            &model, &db, &[], 0, &cfg, &vocab, &lexicon, DecodeMode::Greedy, 1,
        )
        .unwrap();
        assert!(empty.triplets.is_empty());
        let err = generate_replay_set(
            &model, &db, &[], 3, &cfg, &vocab, &lexicon, DecodeMode::Greedy, 1,
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
