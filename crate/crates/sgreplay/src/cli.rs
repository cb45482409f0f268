//! Command-line front end: world generation, split building, strategy
//! runs, report rendering, and replay inspection.
//!
//! Every command is a thin wrapper over the library APIs and exits with a
//! class-coded status: 0 ok, 2 config, 3 data, 4 divergence, 5 I/O. Two
//! environment variables adjust behaviour without touching configs:
//! `SGREPLAY_OUT_ROOT` prefixes every relative output path, and
//! `SGREPLAY_THREADS` caps the worker pool.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::cl_engine::{run_sequence, RunSetup, StrategyConfig, StrategyKind};
use crate::error::{Error, Result};
use crate::evalkit::{
    average_accuracy, backward_transfer, forgetting, render_report, AccuracyMatrix, MetricReport,
};
use crate::rng;
use crate::sgcodec::Vocab;
use crate::srm::{
    generate_replay_set, DecodeMode, PromptMode, SgPromptDB, SrmConfig, SrmModel, SrmTrainConfig,
};
use crate::univqa::{AnswerVocab, ModelConfig, VqaTrainConfig};
use crate::worldgen::{
    build_function_splits, build_scene_splits, generate_world, read_benchmark, write_benchmark,
    BenchmarkManifest, ConceptBank, Lexicon, WorldSpec,
};

#[derive(Parser)]
#[command(
    name = "sgreplay",
    about = "Continual VQA on a synthetic scene-graph world",
    version,
    max_term_width = 100
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world and write both benchmark styles.
    Generate {
        /// World-spec JSON; the built-in default world when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        /// Root directory for the `function/` and `scene/` benchmarks.
        #[arg(long)]
        out: PathBuf,
    },
    /// Reorder an existing benchmark's tasks into a new benchmark.
    BuildSplits {
        /// Path to a benchmark `manifest.json`.
        #[arg(long)]
        benchmark: PathBuf,
        /// Task order, a permutation of the benchmark's letters.
        #[arg(long)]
        order: String,
        /// Root directory for the reordered copy (one root per order).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one strategy through a benchmark and write the run artifacts.
    Run {
        /// Run-config JSON (see `RunConfig`).
        #[arg(long)]
        config: PathBuf,
    },
    /// Aggregate finished runs into summary tables and figures.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// Run directories, each holding config.json + accuracy_matrix.csv.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Regenerate and print the rehearsal set a run drew before a task.
    InspectReplay {
        /// A finished symbolic-replay run directory.
        run_dir: PathBuf,
        /// 1-based index of the task the rehearsal preceded; the final
        /// task when omitted.
        #[arg(long)]
        task: Option<usize>,
        /// How many triplets to draw.
        #[arg(long, default_value_t = 12)]
        count: usize,
    },
}

/// Answer-model dimensions, with the vocabulary filled in from the
/// built-in world so config files stay hand-writable.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetShape {
    pub d: usize,
    pub fusion_layers: usize,
    pub heads: usize,
    pub text_blocks: usize,
    pub max_decode_steps: usize,
    pub max_text_len: usize,
}

impl Default for NetShape {
    fn default() -> NetShape {
        NetShape {
            d: 48,
            fusion_layers: 2,
            heads: 4,
            text_blocks: 1,
            max_decode_steps: 6,
            max_text_len: 64,
        }
    }
}

impl NetShape {
    pub fn to_model_config(&self) -> ModelConfig {
        ModelConfig {
            d: self.d,
            fusion_layers: self.fusion_layers,
            heads: self.heads,
            text_blocks: self.text_blocks,
            max_decode_steps: self.max_decode_steps,
            max_text_len: self.max_text_len,
            answer_vocab: AnswerVocab::from_bank(&ConceptBank::default_world()),
        }
    }
}

fn default_decode() -> DecodeMode {
    DecodeMode::TopK { k: 3, temperature: 0.8 }
}

/// One experiment, fully specified: which benchmark, which strategy, what
/// models, and where the artifacts go. Unknown keys are rejected so typos
/// surface as config errors instead of silently falling back to defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Path to a benchmark `manifest.json`.
    pub benchmark: PathBuf,
    /// Optional task-order override, a permutation of the benchmark's own.
    #[serde(default)]
    pub order_code: Option<String>,
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub net: NetShape,
    #[serde(default)]
    pub srm: SrmConfig,
    #[serde(default)]
    pub srm_train: SrmTrainConfig,
    #[serde(default)]
    pub vqa_train: VqaTrainConfig,
    #[serde(default = "default_decode")]
    pub replay_decode: DecodeMode,
    #[serde(default)]
    pub prompt_mode: PromptMode,
    pub seed: u64,
    pub out_dir: PathBuf,
}

/// Entry point for the binary: parses arguments, runs one command, and
/// returns the class-coded exit status.
pub fn main() -> i32 {
    init_threads();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Generate { spec, seed, out } => cmd_generate(spec.as_deref(), seed, &out),
        Command::BuildSplits { benchmark, order, out } => cmd_build_splits(&benchmark, &order, &out),
        Command::Run { config } => cmd_run(&config),
        Command::Report { out, runs } => cmd_report(&runs, &out),
        Command::InspectReplay { run_dir, task, count } => cmd_inspect_replay(&run_dir, task, count),
    }
}

fn init_threads() {
    if let Ok(v) = std::env::var("SGREPLAY_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                // Ignore failure: the global pool can only be set once.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

/// Relative output paths land under `SGREPLAY_OUT_ROOT` when it is set.
fn resolve_out(path: &Path) -> PathBuf {
    match std::env::var_os("SGREPLAY_OUT_ROOT") {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&body).map_err(|e| Error::json(path, e))
}

fn cmd_generate(spec_path: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let spec: WorldSpec = match spec_path {
        Some(p) => read_json(p)?,
        None => WorldSpec::default(),
    };
    let out = resolve_out(out);
    let (bank, pool) = generate_world(seed, &spec)?;
    println!("generated {} samples (seed {seed})", pool.len());
    for benchmark in [
        build_function_splits(&bank, &pool, &spec, seed)?,
        build_scene_splits(&bank, &pool, &spec, seed)?,
    ] {
        let manifest = write_benchmark(&out, &benchmark, &spec, seed)?;
        let train: usize = benchmark.tasks.iter().map(|t| t.train.len()).sum();
        println!(
            "  {}: {} tasks ({}), {} train samples, spec hash {}",
            benchmark.style.dir_name(),
            benchmark.tasks.len(),
            benchmark.order_code,
            train,
            manifest.spec_hash,
        );
    }
    println!("benchmarks in {}", out.display());
    Ok(())
}

fn cmd_build_splits(manifest_path: &Path, order: &str, out: &Path) -> Result<()> {
    if !manifest_path.exists() {
        return Err(Error::config(format!(
            "benchmark manifest '{}' does not exist",
            manifest_path.display()
        )));
    }
    let manifest: BenchmarkManifest = read_json(manifest_path)?;
    let benchmark = read_benchmark(manifest_path)?;
    let reordered = benchmark.reorder(order)?;
    let out = resolve_out(out);
    write_benchmark(&out, &reordered, &manifest.spec, manifest.seed)?;
    println!(
        "reordered {} -> {} into {}",
        benchmark.order_code,
        order,
        out.join(reordered.style.dir_name()).display()
    );
    Ok(())
}

fn cmd_run(config_path: &Path) -> Result<()> {
    let cfg: RunConfig = read_json(config_path)?;
    if !cfg.benchmark.exists() {
        return Err(Error::config(format!(
            "benchmark manifest '{}' does not exist",
            cfg.benchmark.display()
        )));
    }
    let mut benchmark = read_benchmark(&cfg.benchmark)?;
    if let Some(code) = &cfg.order_code {
        if *code != benchmark.order_code {
            benchmark = benchmark.reorder(code)?;
        }
    }
    let out_dir = resolve_out(&cfg.out_dir);
    let setup = RunSetup {
        srm: cfg.srm.clone(),
        srm_train: cfg.srm_train.clone(),
        vqa: cfg.net.to_model_config(),
        vqa_train: cfg.vqa_train.clone(),
        replay_decode: cfg.replay_decode,
        prompt_mode: cfg.prompt_mode,
        out_dir: Some(out_dir.clone()),
    };
    let outcome = run_sequence(&benchmark, &cfg.strategy, &setup, cfg.seed)?;

    let n = outcome.matrix.n_rows();
    println!(
        "{} over {} tasks ({}), seed {}",
        cfg.strategy.kind.name(),
        n,
        benchmark.order_code,
        cfg.seed
    );
    println!("  final average accuracy {:.4}", average_accuracy(&outcome.matrix, n)?);
    if n >= 2 {
        println!("  final forgetting       {:.4}", forgetting(&outcome.matrix, n)?);
        println!("  final backward transfer {:.4}", backward_transfer(&outcome.matrix, n)?);
    }
    if outcome.memory_bytes > 0 {
        println!("  persisted memory       {} bytes", outcome.memory_bytes);
    }
    println!("  artifacts in {}", out_dir.display());
    Ok(())
}

/// The slice of a run directory's `config.json` the reporting commands
/// need; remaining keys are ignored.
#[derive(Deserialize)]
struct RunDirConfig {
    strategy: StrategyConfig,
    seed: u64,
    order_code: String,
}

#[derive(Deserialize)]
struct MemoryReportFile {
    memory_bytes: u64,
}

fn cmd_report(runs: &[PathBuf], out: &Path) -> Result<()> {
    let mut reports = Vec::new();
    let mut task_sets: Option<BTreeSet<String>> = None;
    for dir in runs {
        let matrix_path = dir.join("accuracy_matrix.csv");
        if !matrix_path.exists() {
            return Err(Error::data(format!(
                "'{}' has no accuracy matrix; is it a finished run directory?",
                dir.display()
            )));
        }
        let cfg: RunDirConfig = read_json(&dir.join("config.json"))?;
        let matrix = AccuracyMatrix::read_csv(&matrix_path)?;
        let mem: MemoryReportFile = read_json(&dir.join("memory_report.json"))?;

        let tasks: BTreeSet<String> = matrix.labels().iter().cloned().collect();
        match &task_sets {
            None => task_sets = Some(tasks),
            Some(first) if *first != tasks => {
                return Err(Error::data(format!(
                    "'{}' covers different tasks than the first run; benchmarks cannot be mixed",
                    dir.display()
                )));
            }
            Some(_) => {}
        }
        reports.push(MetricReport::from_matrix(
            cfg.strategy.kind.name(),
            cfg.order_code,
            cfg.seed,
            cfg.strategy.gamma,
            mem.memory_bytes,
            matrix,
        )?);
    }
    let out = resolve_out(out);
    render_report(&reports, &out)?;
    println!("report over {} runs in {}", reports.len(), out.display());
    Ok(())
}

/// The slice of `config.json` replay inspection needs.
#[derive(Deserialize)]
struct ReplayRunConfig {
    strategy: StrategyConfig,
    seed: u64,
    setup: RunSetup,
}

fn cmd_inspect_replay(run_dir: &Path, task: Option<usize>, count: usize) -> Result<()> {
    let cfg: ReplayRunConfig = read_json(&run_dir.join("config.json"))?;
    if cfg.strategy.kind != StrategyKind::Sgp {
        return Err(Error::config(format!(
            "run used strategy '{}'; only symbolic-replay runs store a prompt database",
            cfg.strategy.kind.name()
        )));
    }
    let matrix = AccuracyMatrix::read_csv(&run_dir.join("accuracy_matrix.csv"))?;
    let n = matrix.n_rows();
    let next = task.unwrap_or(n);
    if next < 2 || next > n {
        return Err(Error::config(format!(
            "task must lie in 2..={n}: the first task trains without rehearsal"
        )));
    }

    // The snapshot that finished task `next - 1` is the one that rehearses.
    let snapshot = run_dir.join("checkpoints").join(format!("task-{}-srm.bin", next - 2));
    if !snapshot.exists() {
        return Err(Error::data(format!("missing checkpoint '{}'", snapshot.display())));
    }
    let bank = ConceptBank::default_world();
    let vocab = Vocab::build(&bank);
    let lexicon = Lexicon::from_bank(&bank);
    let (model, _) = SrmModel::load(&snapshot, Some(&vocab.fingerprint()))?;
    let db = SgPromptDB::load(&run_dir.join("prompt_db.json"))?;
    let prev: Vec<String> = matrix.labels()[..next - 1].to_vec();

    // Same substreams the run itself used, so the first items reproduce
    // the training-time rehearsal set exactly.
    let outcome = generate_replay_set(
        &model,
        &db,
        &prev,
        count,
        &cfg.setup.srm_train,
        &vocab,
        &lexicon,
        cfg.setup.replay_decode,
        rng::derive_seed(cfg.seed, "replay", (next - 1) as u64),
    )?;

    println!(
        "{} of {count} rehearsal triplets before task {next} ({})",
        outcome.triplets.len(),
        prev.join(","),
    );
    let rows: Vec<[String; 5]> = outcome
        .triplets
        .iter()
        .map(|t| {
            [
                t.source_task.clone(),
                clip(&t.prompt_used.phrases().join("; "), 40),
                clip(&t.sg_srm.phrases().join("; "), 52),
                clip(&t.question, 34),
                t.answer.clone(),
            ]
        })
        .collect();
    print_table(&["task", "prompt", "generated graph", "question", "answer"], &rows);
    for (tag, miss) in &outcome.shortfall {
        println!("  ({miss} draws from task '{tag}' stayed malformed)");
    }
    Ok(())
}

fn clip(s: &str, max: usize) -> String {
    if s.chars().count() <= max {
        return s.to_string();
    }
    let cut: String = s.chars().take(max.saturating_sub(1)).collect();
    format!("{cut}\u{2026}")
}

fn print_table(header: &[&str; 5], rows: &[[String; 5]]) {
    let mut width = header.map(str::len);
    for row in rows {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: [&str; 5]| {
        let mut out = String::new();
        for (i, (cell, w)) in cells.iter().zip(width).enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            out.push_str(cell);
            out.extend(std::iter::repeat_n(' ', w.saturating_sub(cell.chars().count())));
        }
        println!("{}", out.trim_end());
    };
    line(*header);
    line(width.map(|w| "-".repeat(w)).each_ref().map(String::as_str));
    for row in rows {
        line(row.each_ref().map(String::as_str));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cl_engine::MemoryBudget;

    #[test]
    fn run_configs_reject_unknown_keys_and_fill_defaults() {
        let minimal = r#"{
            "benchmark": "bench/function/manifest.json",
            "strategy": { "kind": "sgp", "gamma": 1.0 },
            "seed": 9,
            "out_dir": "runs/sgp-9"
        }"#;
        let cfg: RunConfig = serde_json::from_str(minimal).unwrap();
        assert_eq!(cfg.net.d, NetShape::default().d);
        assert!(matches!(cfg.replay_decode, DecodeMode::TopK { k: 3, .. }));
        assert!(cfg.order_code.is_none());
        assert!(cfg.net.to_model_config().answer_vocab.len() > 2, "vocab populated");

        let typo = minimal.replace("out_dir", "outdir");
        let err = serde_json::from_str::<RunConfig>(&typo).unwrap_err();
        assert!(err.to_string().contains("outdir"), "typo named in: {err}");
    }

    #[test]
    fn strategy_blocks_round_trip_through_config_json() {
        let cfg = RunConfig {
            benchmark: "b/manifest.json".into(),
            order_code: Some("rkoals".into()),
            strategy: StrategyConfig::real_kmeans(MemoryBudget::Bytes(65536)),
            net: NetShape::default(),
            srm: SrmConfig::default(),
            srm_train: SrmTrainConfig::default(),
            vqa_train: VqaTrainConfig::default(),
            replay_decode: default_decode(),
            prompt_mode: PromptMode::default(),
            seed: 4,
            out_dir: "runs/km".into(),
        };
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.strategy, cfg.strategy);
        assert_eq!(back.order_code.as_deref(), Some("rkoals"));
    }

    #[test]
    fn clipping_marks_truncation_without_splitting_words_mid_char() {
        assert_eq!(clip("chair near table", 40), "chair near table");
        let clipped = clip("a very long phrase that keeps on going", 10);
        assert_eq!(clipped.chars().count(), 10);
        assert!(clipped.ends_with('\u{2026}'));
    }
}
