//! Shared fixtures for the engine tests: a tiny handmade two-task world
//! that the models can memorize in seconds, plus small model builders.

use std::collections::{BTreeMap, BTreeSet};

use crate::nn::AdamConfig;
use crate::sgcodec::Vocab;
use crate::srm::{SrmConfig, SrmTrainConfig};
use crate::univqa::{AnswerVocab, ModelConfig, UniVqaModel, VqaTrainConfig};
use crate::worldgen::{
    ConceptBank, ContinualBenchmark, FunctionalProgram, OcrEntry, Relationship, Sample,
    SceneGraph, SplitStyle, TaskDataset,
};

pub(crate) fn sample(
    id: &str,
    tag: &str,
    q: &str,
    answer: &str,
    rows: Vec<Relationship>,
    ocr: Option<&str>,
) -> Sample {
    Sample {
        id: id.into(),
        scene: 'a',
        evidence_graph: SceneGraph::new(vec![rows[0].clone()]),
        scene_graph: SceneGraph::new(rows),
        question: q.into(),
        annotations: vec![answer.to_string(); 10],
        program: FunctionalProgram::new(&[("locate_object", "table"), ("query_name", "")]),
        task_tag: tag.into(),
        ocr_tokens: ocr.map(|t| vec![OcrEntry { text: t.into(), bbox: [0.2, 0.2, 0.2, 0.1] }]),
        knowledge: None,
    }
}

fn rel(s: &str, p: &str, o: &str) -> Relationship {
    Relationship::relation(s, p, o)
}

/// Relation-flavored task: four distinct memorizable QA patterns.
pub(crate) fn task_o() -> TaskDataset {
    let train = vec![
        sample("o-0", "o", "what is near the table", "chair", vec![rel("chair", "near", "table"), rel("lamp", "on", "table")], None),
        sample("o-1", "o", "what is on the table", "lamp", vec![rel("lamp", "on", "table")], None),
        sample("o-2", "o", "what is near the window", "sofa", vec![rel("sofa", "near", "window")], None),
        sample("o-3", "o", "what does the sign say", "exit", vec![rel("sign", "says", "exit")], Some("exit")),
    ];
    let test = vec![
        sample("o-t0", "o", "what is near the table", "chair", vec![rel("chair", "near", "table"), rel("lamp", "on", "table")], None),
        sample("o-t1", "o", "what is on the table", "lamp", vec![rel("lamp", "on", "table")], None),
    ];
    TaskDataset { task_tag: "o".into(), train, val: Vec::new(), test }
}

/// Attribute-flavored task over the same objects.
pub(crate) fn task_a() -> TaskDataset {
    let attr = Relationship::attribute;
    let train = vec![
        sample("a-0", "a", "what color is the chair", "red", vec![attr("chair", "red"), rel("chair", "near", "table")], None),
        sample("a-1", "a", "what color is the sofa", "blue", vec![attr("sofa", "blue")], None),
        sample("a-2", "a", "what size is the table", "small", vec![attr("table", "small")], None),
        sample("a-3", "a", "what size is the window", "large", vec![attr("window", "large")], None),
    ];
    let test = vec![
        sample("a-t0", "a", "what color is the chair", "red", vec![attr("chair", "red"), rel("chair", "near", "table")], None),
        sample("a-t1", "a", "what color is the sofa", "blue", vec![attr("sofa", "blue")], None),
    ];
    TaskDataset { task_tag: "a".into(), train, val: Vec::new(), test }
}

pub(crate) fn toy_task_pair() -> (Vocab, Vec<TaskDataset>) {
    let bank = ConceptBank::default_world();
    (Vocab::build(&bank), vec![task_o(), task_a()])
}

/// Two-task benchmark over the handmade tasks.
pub(crate) fn toy_benchmark() -> (Vocab, ContinualBenchmark) {
    let (vocab, tasks) = toy_task_pair();
    let mut unique_pools = BTreeMap::new();
    for t in &tasks {
        unique_pools.insert(t.task_tag.clone(), BTreeSet::new());
    }
    let bench = ContinualBenchmark {
        style: SplitStyle::Function,
        order_code: "oa".into(),
        tasks,
        unique_pools,
    };
    bench.validate().expect("fixture benchmark is well-formed");
    (vocab, bench)
}

pub(crate) fn toy_model_cfg(d: usize, heads: usize) -> ModelConfig {
    let bank = ConceptBank::default_world();
    ModelConfig {
        d,
        fusion_layers: 1,
        heads,
        text_blocks: 1,
        max_decode_steps: 6,
        max_text_len: 64,
        answer_vocab: AnswerVocab::from_bank(&bank),
    }
}

pub(crate) fn toy_model(vocab: &Vocab, d: usize, heads: usize, seed: u64) -> UniVqaModel {
    UniVqaModel::new(toy_model_cfg(d, heads), vocab, seed).expect("toy model builds")
}

pub(crate) fn toy_vqa_train(epochs: usize, batch_size: usize, lr: f64) -> VqaTrainConfig {
    VqaTrainConfig {
        epochs,
        batch_size,
        optim: AdamConfig { lr, ..AdamConfig::default() },
    }
}

pub(crate) fn toy_srm_cfg() -> SrmConfig {
    SrmConfig { blocks: 1, width: 32, heads: 2, max_seq_len: 96, tied_output: false }
}

pub(crate) fn toy_srm_train(epochs: usize, lr: f64) -> SrmTrainConfig {
    SrmTrainConfig {
        epochs,
        batch_size: 8,
        optim: AdamConfig { lr, ..AdamConfig::default() },
        ..SrmTrainConfig::default()
    }
}
