//! Synthetic scene-graph VQA corpus: generation, task assignment, answer
//! smoothing, and the two continual splits (scene-incremental and
//! function-incremental).
//!
//! Everything here is a deterministic function of (seed, world spec): the
//! same inputs serialize to byte-identical JSONL, which several downstream
//! reproducibility checks depend on.

mod bank;
mod gen;

pub use bank::{
    AttributeDef, ConceptBank, KnowledgeFact, Lexicon, ObjectDef, ATTR_CATEGORIES, FUNCTIONS,
    KNOWLEDGE_PREDICATE, PERSON_RELATIONS, QUESTION_WORDS, SCENES, SPATIAL_RELATIONS,
    TEXT_PREDICATE,
};
pub use gen::generate_world;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One scene-graph row. Two shapes share the struct: relation rows
/// (`subject predicate object`) and attribute rows, which leave `object`
/// empty and put the attribute word in `predicate` ("red chair").
/// Knowledge rows use the fixed predicate "is used for" with an activity
/// value in the object slot; scene-text rows use "says" with a text token.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq, PartialOrd, Ord)]
pub struct Relationship {
    pub subject: String,
    pub predicate: String,
    #[serde(default)]
    pub object: String,
}

impl Relationship {
    pub fn relation(subject: &str, predicate: &str, object: &str) -> Self {
        Relationship {
            subject: subject.into(),
            predicate: predicate.into(),
            object: object.into(),
        }
    }

    pub fn attribute(subject: &str, attr: &str) -> Self {
        Relationship {
            subject: subject.into(),
            predicate: attr.into(),
            object: String::new(),
        }
    }

    pub fn is_attribute(&self) -> bool {
        self.object.is_empty()
    }

    /// The phrase this row serializes to.
    pub fn render(&self) -> String {
        if self.is_attribute() {
            format!("{} {}", self.predicate, self.subject)
        } else {
            format!("{} {} {}", self.subject, self.predicate, self.object)
        }
    }

    /// Inverse of [`Self::render`] under a lexicon; `None` if the words do
    /// not form exactly one well-formed row.
    pub fn parse(words: &[&str], lex: &Lexicon) -> Option<Self> {
        if words.is_empty() {
            return None;
        }
        if lex.is_attr(words[0]) {
            let n = lex.match_object(&words[1..])?;
            if 1 + n != words.len() {
                return None;
            }
            return Some(Relationship::attribute(&words[1..1 + n].join(" "), words[0]));
        }
        let ns = lex.match_object(words)?;
        let subject = words[..ns].join(" ");
        let rest = &words[ns..];
        let np = lex.match_predicate(rest)?;
        let predicate = rest[..np].join(" ");
        let tail = &rest[np..];
        if predicate == KNOWLEDGE_PREDICATE {
            if tail.len() == 1 && lex.is_value(tail[0]) {
                return Some(Relationship::relation(&subject, &predicate, tail[0]));
            }
            return None;
        }
        if predicate == TEXT_PREDICATE {
            if tail.len() == 1 && lex.is_ocr(tail[0]) {
                return Some(Relationship::relation(&subject, &predicate, tail[0]));
            }
            return None;
        }
        let no = lex.match_object(tail)?;
        if no != tail.len() {
            return None;
        }
        Some(Relationship::relation(&subject, &predicate, &tail.join(" ")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq, Default)]
pub struct SceneGraph {
    pub relationships: Vec<Relationship>,
}

impl SceneGraph {
    pub fn new(relationships: Vec<Relationship>) -> Self {
        SceneGraph { relationships }
    }

    pub fn phrases(&self) -> Vec<String> {
        self.relationships.iter().map(Relationship::render).collect()
    }

    /// All object names mentioned anywhere in the graph, in first-mention order.
    pub fn mentioned_objects(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for r in &self.relationships {
            let mut push = |name: &str| {
                if !name.is_empty() && seen.insert(name.to_string()) {
                    out.push(name.to_string());
                }
            };
            push(&r.subject);
            if !r.is_attribute()
                && r.predicate != KNOWLEDGE_PREDICATE
                && r.predicate != TEXT_PREDICATE
            {
                push(&r.object);
            }
        }
        out
    }

    /// True when every row of `other` appears in `self`.
    pub fn contains(&self, other: &SceneGraph) -> bool {
        other.relationships.iter().all(|r| self.relationships.contains(r))
    }
}

/// Closed set of functional-program operation names.
pub const PROGRAM_OPS: [&str; 11] = [
    "Select", "Query", "Choose", "Verify", "Filter", "Relate", "Different", "Same", "Common",
    "knowledge-lookup", "scene-text-read",
];

/// The reasoning recipe behind a question: parallel operation/argument
/// lists (an empty string marks an argument-free step).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct FunctionalProgram {
    pub operations: Vec<String>,
    pub arguments: Vec<String>,
}

impl FunctionalProgram {
    pub fn new(steps: &[(&str, &str)]) -> Self {
        FunctionalProgram {
            operations: steps.iter().map(|(o, _)| o.to_string()).collect(),
            arguments: steps.iter().map(|(_, a)| a.to_string()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.operations.is_empty() {
            return Err(Error::data("empty functional program"));
        }
        if self.operations.len() != self.arguments.len() {
            return Err(Error::data("program operations/arguments length mismatch"));
        }
        for op in &self.operations {
            if !PROGRAM_OPS.contains(&op.as_str()) {
                return Err(Error::data(format!("unknown program operation '{op}'")));
            }
        }
        Ok(())
    }

    pub fn has_op(&self, op: &str) -> bool {
        self.operations.iter().any(|o| o == op)
    }
}

/// A synthetic scene-text token with its region box (x, y, w, h in [0,1]).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OcrEntry {
    pub text: String,
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Scene letter, recorded for scene-style splitting.
    pub scene: char,
    pub scene_graph: SceneGraph,
    /// The subgraph that grounds the question (G_qa).
    pub evidence_graph: SceneGraph,
    pub question: String,
    /// Exactly 10 answer strings; the majority value is the ground truth.
    pub annotations: Vec<String>,
    pub program: FunctionalProgram,
    pub task_tag: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ocr_tokens: Option<Vec<OcrEntry>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<String>,
}

impl Sample {
    /// The majority annotation (the ground-truth answer).
    pub fn answer(&self) -> &str {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for a in &self.annotations {
            *counts.entry(a.as_str()).or_default() += 1;
        }
        counts
            .into_iter()
            .max_by_key(|(_, c)| *c)
            .map(|(a, _)| a)
            .unwrap_or("")
    }

    pub fn validate(&self) -> Result<()> {
        if self.annotations.len() != 10 {
            return Err(Error::data(format!(
                "sample {}: {} annotations, want 10",
                self.id,
                self.annotations.len()
            )));
        }
        if self.scene_graph.relationships.is_empty() {
            return Err(Error::data(format!("sample {}: empty scene graph", self.id)));
        }
        if !self.scene_graph.contains(&self.evidence_graph) {
            return Err(Error::data(format!(
                "sample {}: evidence graph not contained in scene graph",
                self.id
            )));
        }
        self.program.validate()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct TaskDataset {
    pub task_tag: String,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl TaskDataset {
    pub fn all_samples(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().chain(self.val.iter()).chain(self.test.iter())
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SplitStyle {
    Scene,
    Function,
}

impl SplitStyle {
    pub fn dir_name(self) -> &'static str {
        match self {
            SplitStyle::Scene => "scene",
            SplitStyle::Function => "function",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinualBenchmark {
    pub style: SplitStyle,
    /// One letter per task, in task order (e.g. "oarlks" or "abcdef").
    pub order_code: String,
    pub tasks: Vec<TaskDataset>,
    /// Per-task answer strings that must never appear in another task.
    pub unique_pools: BTreeMap<String, BTreeSet<String>>,
}

impl ContinualBenchmark {
    pub fn validate(&self) -> Result<()> {
        if self.order_code.chars().count() != self.tasks.len() {
            return Err(Error::data("order code length differs from task count"));
        }
        let letters: BTreeSet<char> = self.order_code.chars().collect();
        if letters.len() != self.tasks.len() {
            return Err(Error::data("order code letters not unique"));
        }
        let mut ids = BTreeSet::new();
        for task in &self.tasks {
            for s in task.all_samples() {
                if !ids.insert(s.id.clone()) {
                    return Err(Error::data(format!("duplicate sample id {}", s.id)));
                }
            }
        }
        // Unique answers must be exclusive across tasks.
        let pools: Vec<(&String, &BTreeSet<String>)> = self.unique_pools.iter().collect();
        for (i, (tag_a, pool_a)) in pools.iter().enumerate() {
            for (tag_b, pool_b) in pools.iter().skip(i + 1) {
                if let Some(w) = pool_a.intersection(pool_b).next() {
                    return Err(Error::data(format!(
                        "answer '{w}' is in unique pools of both {tag_a} and {tag_b}"
                    )));
                }
            }
        }
        for task in &self.tasks {
            for s in task.all_samples() {
                let ans = s.answer().to_string();
                for (tag, pool) in &self.unique_pools {
                    if pool.contains(&ans) && *tag != task.task_tag {
                        return Err(Error::data(format!(
                            "unique answer '{ans}' of task {tag} leaked into task {}",
                            task.task_tag
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Reorders tasks to a permutation given by another order code over the
    /// same letters.
    pub fn reorder(&self, order_code: &str) -> Result<ContinualBenchmark> {
        let have: BTreeSet<char> = self.order_code.chars().collect();
        let want: BTreeSet<char> = order_code.chars().collect();
        if have != want || order_code.chars().count() != self.tasks.len() {
            return Err(Error::config(format!(
                "order code '{order_code}' does not permute '{}'",
                self.order_code
            )));
        }
        let mut tasks = Vec::with_capacity(self.tasks.len());
        for letter in order_code.chars() {
            let pos = self
                .order_code
                .chars()
                .position(|c| c == letter)
                .expect("letter checked above");
            tasks.push(self.tasks[pos].clone());
        }
        Ok(ContinualBenchmark {
            style: self.style,
            order_code: order_code.to_string(),
            tasks,
            unique_pools: self.unique_pools.clone(),
        })
    }
}

/// Size and shape parameters for world generation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct WorldSpec {
    /// Samples generated per (scene, function) cell.
    pub samples_per_cell: usize,
    pub train_per_task: usize,
    pub val_per_task: usize,
    pub test_per_task: usize,
    /// Answer-histogram cap: no answer may exceed cap_ratio x median count.
    pub cap_ratio: f64,
    /// Fraction of the 10 annotations replaced with a wrong answer
    /// (rounded to a count; at most 0.4 so the majority stays truthful).
    pub annotation_noise: f64,
    /// Relation rows per graph (attribute rows come on top).
    pub min_relations: usize,
    pub max_relations: usize,
    /// Chance that a mentioned object receives a random attribute row.
    pub attribute_rate: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            samples_per_cell: 520,
            train_per_task: 2000,
            val_per_task: 400,
            test_per_task: 400,
            cap_ratio: 3.0,
            annotation_noise: 0.0,
            min_relations: 3,
            max_relations: 5,
            attribute_rate: 0.8,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_cell == 0 {
            return Err(Error::config("samples_per_cell must be >= 1"));
        }
        if self.train_per_task == 0 || self.val_per_task == 0 || self.test_per_task == 0 {
            return Err(Error::config("split sizes must be >= 1"));
        }
        if self.cap_ratio <= 1.0 {
            return Err(Error::config("cap_ratio must be > 1"));
        }
        if !(0.0..=0.4).contains(&self.annotation_noise) {
            return Err(Error::config("annotation_noise must lie in [0, 0.4]"));
        }
        if self.min_relations == 0 || self.min_relations > self.max_relations {
            return Err(Error::config("need 1 <= min_relations <= max_relations"));
        }
        if !(0.0..=1.0).contains(&self.attribute_rate) {
            return Err(Error::config("attribute_rate must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Maps a program (plus modality flags) to its function-task letter.
///
/// Several operation sets overlap, so matching rows are resolved by a fixed
/// precedence: scene text > knowledge > logic > relation > attribute >
/// object. The most specialized capability wins.
pub fn assign_function_task(
    program: &FunctionalProgram,
    has_ocr: bool,
    has_knowledge: bool,
) -> Result<char> {
    program.validate()?;
    if has_ocr || program.has_op("scene-text-read") {
        return Ok('s');
    }
    if has_knowledge || program.has_op("knowledge-lookup") {
        return Ok('k');
    }
    if program.has_op("Same") || program.has_op("Different") || program.has_op("Common") {
        return Ok('l');
    }
    if program.has_op("Relate") {
        return Ok('r');
    }
    let queries_attr = program
        .operations
        .iter()
        .zip(&program.arguments)
        .any(|(op, arg)| op == "Query" && ATTR_CATEGORIES.contains(&arg.as_str()));
    if program.has_op("Verify") || program.has_op("Choose") || queries_attr {
        return Ok('a');
    }
    Ok('o')
}

/// Caps over-frequent answers at `cap_ratio x median` of the answer
/// histogram. Keeps the first occurrences in stable order (the input order
/// is already rng-shuffled by the callers), and never drops an answer class
/// entirely.
fn smooth_samples(samples: Vec<Sample>, cap_ratio: f64) -> Result<Vec<Sample>> {
    if cap_ratio <= 1.0 {
        return Err(Error::config("cap_ratio must be > 1"));
    }
    if samples.is_empty() {
        return Ok(samples);
    }
    let mut hist: BTreeMap<String, usize> = BTreeMap::new();
    for s in &samples {
        *hist.entry(s.answer().to_string()).or_default() += 1;
    }
    let mut counts: Vec<usize> = hist.values().copied().collect();
    counts.sort_unstable();
    let median = if counts.len() % 2 == 1 {
        counts[counts.len() / 2] as f64
    } else {
        (counts[counts.len() / 2 - 1] + counts[counts.len() / 2]) as f64 / 2.0
    };
    let cap = ((cap_ratio * median).floor() as usize).max(1);
    let mut kept_per_answer: BTreeMap<String, usize> = BTreeMap::new();
    Ok(samples
        .into_iter()
        .filter(|s| {
            let k = kept_per_answer.entry(s.answer().to_string()).or_default();
            *k += 1;
            *k <= cap
        })
        .collect())
}

/// Public smoothing entry point: applies the cap to each partition of a
/// task independently.
pub fn smooth_answer_distribution(task: TaskDataset, cap_ratio: f64) -> Result<TaskDataset> {
    Ok(TaskDataset {
        task_tag: task.task_tag,
        train: smooth_samples(task.train, cap_ratio)?,
        val: smooth_samples(task.val, cap_ratio)?,
        test: smooth_samples(task.test, cap_ratio)?,
    })
}

fn shuffle<T>(items: &mut [T], rng: &mut impl rand::Rng) {
    use rand::seq::SliceRandom;
    items.shuffle(rng);
}

fn partition_task(
    tag: String,
    mut samples: Vec<Sample>,
    spec: &WorldSpec,
) -> Result<TaskDataset> {
    let need = spec.train_per_task + spec.val_per_task + spec.test_per_task;
    if samples.len() < need {
        return Err(Error::data(format!(
            "task {tag}: {} samples after smoothing, need {need}; raise samples_per_cell",
            samples.len()
        )));
    }
    let test = samples.split_off(samples.len() - spec.test_per_task);
    let val = samples.split_off(samples.len() - spec.val_per_task);
    samples.truncate(spec.train_per_task);
    Ok(TaskDataset { task_tag: tag, train: samples, val, test })
}

/// Builds the function-incremental benchmark: six tasks in "oarlks" order,
/// each holding one reasoning capability across all scenes.
pub fn build_function_splits(
    bank: &ConceptBank,
    pool: &[Sample],
    spec: &WorldSpec,
    seed: u64,
) -> Result<ContinualBenchmark> {
    spec.validate()?;
    let mut tasks = Vec::new();
    let mut unique_pools = BTreeMap::new();
    for (idx, letter) in FUNCTIONS.iter().enumerate() {
        let mut samples: Vec<Sample> = pool
            .iter()
            .filter(|s| s.task_tag == letter.to_string())
            .cloned()
            .collect();
        let mut r = rng::stream(seed, "function-split", idx as u64);
        shuffle(&mut samples, &mut r);
        let samples = smooth_samples(samples, spec.cap_ratio)?;
        tasks.push(partition_task(letter.to_string(), samples, spec)?);
        // Function tasks share answer vocabulary; no exclusive pools.
        unique_pools.insert(letter.to_string(), BTreeSet::new());
    }
    let _ = bank;
    let benchmark = ContinualBenchmark {
        style: SplitStyle::Function,
        order_code: FUNCTIONS.iter().collect(),
        tasks,
        unique_pools,
    };
    benchmark.validate()?;
    Ok(benchmark)
}

/// Builds the scene-incremental benchmark: six tasks in "abcdef" order, one
/// per scene, with that scene's unique object names as its exclusive answer
/// pool and unique/common answer counts balanced exactly.
pub fn build_scene_splits(
    bank: &ConceptBank,
    pool: &[Sample],
    spec: &WorldSpec,
    seed: u64,
) -> Result<ContinualBenchmark> {
    spec.validate()?;
    // Split-integrity pre-check: a unique answer must come from one scene only.
    let mut answer_scene: BTreeMap<String, char> = BTreeMap::new();
    for s in pool {
        let ans = s.answer().to_string();
        for (scene, _) in SCENES {
            if bank.unique_pool(scene).contains(&ans) {
                match answer_scene.get(&ans) {
                    Some(&prev) if prev != s.scene => {
                        return Err(Error::data(format!(
                            "unique answer '{ans}' found in scenes {prev} and {}",
                            s.scene
                        )));
                    }
                    _ => {
                        answer_scene.insert(ans.clone(), s.scene);
                    }
                }
            }
        }
    }

    let mut tasks = Vec::new();
    let mut unique_pools = BTreeMap::new();
    for (idx, (scene, _)) in SCENES.iter().enumerate() {
        let pool_set = bank.unique_pool(*scene);
        let mut samples: Vec<Sample> = pool.iter().filter(|s| s.scene == *scene).cloned().collect();
        let mut r = rng::stream(seed, "scene-split", idx as u64);
        shuffle(&mut samples, &mut r);
        let samples = smooth_samples(samples, spec.cap_ratio)?;
        // Balance unique-answer vs common-answer samples exactly, by
        // stratified draw per partition.
        let (unique_side, common_side): (Vec<Sample>, Vec<Sample>) = samples
            .into_iter()
            .partition(|s| pool_set.contains(s.answer()));
        let need = spec.train_per_task + spec.val_per_task + spec.test_per_task;
        let per_side = need / 2 + need % 2;
        if unique_side.len() < per_side || common_side.len() < per_side {
            return Err(Error::data(format!(
                "scene {scene}: {} unique / {} common answer samples after smoothing, need {per_side} each",
                unique_side.len(),
                common_side.len()
            )));
        }
        let mut interleaved = Vec::with_capacity(need);
        let mut iu = unique_side.into_iter();
        let mut ic = common_side.into_iter();
        for i in 0..need {
            let s = if i % 2 == 0 { iu.next() } else { ic.next() };
            interleaved.push(s.expect("length checked above"));
        }
        tasks.push(partition_task(scene.to_string(), interleaved, spec)?);
        unique_pools.insert(scene.to_string(), pool_set);
    }
    let benchmark = ContinualBenchmark {
        style: SplitStyle::Scene,
        order_code: SCENES.iter().map(|(c, _)| *c).collect(),
        tasks,
        unique_pools,
    };
    benchmark.validate()?;
    Ok(benchmark)
}

// ---------------------------------------------------------------------------
// On-disk layout
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskManifestEntry {
    pub task_tag: String,
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
    pub train_len: usize,
    pub val_len: usize,
    pub test_len: usize,
}

/// Provenance record written next to each benchmark's JSONL files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub style: SplitStyle,
    pub order_code: String,
    pub seed: u64,
    pub spec: WorldSpec,
    /// FNV-1a hash over the serialized spec and seed.
    pub spec_hash: String,
    pub tasks: Vec<TaskManifestEntry>,
    pub unique_pools: BTreeMap<String, BTreeSet<String>>,
}

/// 64-bit FNV-1a over the serialized (spec, seed) pair.
pub fn spec_hash(spec: &WorldSpec, seed: u64) -> String {
    let bytes = serde_json::to_vec(spec).expect("spec serializes");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes.iter().chain(seed.to_le_bytes().iter()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn write_jsonl(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for s in samples {
        let line = serde_json::to_string(s).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn read_jsonl(path: &Path) -> Result<Vec<Sample>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(f);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        out.push(s);
    }
    Ok(out)
}

/// Writes a benchmark under `dir/<style>/task_<idx>_<tag>/{train,val,test}.jsonl`
/// plus `dir/<style>/manifest.json`, and returns the manifest.
pub fn write_benchmark(
    dir: &Path,
    benchmark: &ContinualBenchmark,
    spec: &WorldSpec,
    seed: u64,
) -> Result<BenchmarkManifest> {
    let root = dir.join(benchmark.style.dir_name());
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let mut entries = Vec::new();
    for (idx, task) in benchmark.tasks.iter().enumerate() {
        let task_dir = root.join(format!("task_{idx}_{}", task.task_tag));
        fs::create_dir_all(&task_dir).map_err(|e| Error::io(&task_dir, e))?;
        let train = task_dir.join("train.jsonl");
        let val = task_dir.join("val.jsonl");
        let test = task_dir.join("test.jsonl");
        write_jsonl(&train, &task.train)?;
        write_jsonl(&val, &task.val)?;
        write_jsonl(&test, &task.test)?;
        entries.push(TaskManifestEntry {
            task_tag: task.task_tag.clone(),
            train,
            val,
            test,
            train_len: task.train.len(),
            val_len: task.val.len(),
            test_len: task.test.len(),
        });
    }
    let manifest = BenchmarkManifest {
        style: benchmark.style,
        order_code: benchmark.order_code.clone(),
        seed,
        spec: spec.clone(),
        spec_hash: spec_hash(spec, seed),
        tasks: entries,
        unique_pools: benchmark.unique_pools.clone(),
    };
    let mpath = root.join("manifest.json");
    let body = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Json {
        path: mpath.clone(),
        source: e,
    })?;
    fs::write(&mpath, body).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

/// Loads a benchmark back from its manifest file.
pub fn read_benchmark(manifest_path: &Path) -> Result<ContinualBenchmark> {
    let body = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: BenchmarkManifest = serde_json::from_str(&body).map_err(|e| Error::Json {
        path: manifest_path.to_path_buf(),
        source: e,
    })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &Path| -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else if p.exists() {
            p.to_path_buf()
        } else {
            // Paths were written relative to the invocation directory;
            // fall back to resolving against the manifest's folder.
            let file = p.file_name().map(PathBuf::from).unwrap_or_default();
            let parent = p.parent().and_then(|q| q.file_name()).map(PathBuf::from);
            match parent {
                Some(d) => base.join(d).join(file),
                None => base.join(file),
            }
        }
    };
    let mut tasks = Vec::new();
    for entry in &manifest.tasks {
        tasks.push(TaskDataset {
            task_tag: entry.task_tag.clone(),
            train: read_jsonl(&resolve(&entry.train))?,
            val: read_jsonl(&resolve(&entry.val))?,
            test: read_jsonl(&resolve(&entry.test))?,
        });
    }
    let benchmark = ContinualBenchmark {
        style: manifest.style,
        order_code: manifest.order_code,
        tasks,
        unique_pools: manifest.unique_pools,
    };
    benchmark.validate()?;
    Ok(benchmark)
}
