//! End-to-end checks of the `sgreplay` binary: generate -> build-splits ->
//! run -> report -> inspect-replay, plus the class-coded exit statuses.

use std::path::Path;
use std::process::{Command, Output};

fn sgreplay(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgreplay"))
        .current_dir(dir)
        .args(args)
        .env_remove("SGREPLAY_OUT_ROOT")
        .env("SGREPLAY_THREADS", "4")
        .output()
        .expect("binary launches")
}

fn assert_ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

const SPEC: &str = r#"{
    "samples_per_cell": 60,
    "train_per_task": 80,
    "val_per_task": 20,
    "test_per_task": 20,
    "cap_ratio": 3.0,
    "annotation_noise": 0.0,
    "min_relations": 3,
    "max_relations": 5,
    "attribute_rate": 0.8
}"#;

const NET: &str = r#""net": { "d": 12, "fusion_layers": 1, "heads": 2,
    "text_blocks": 1, "max_decode_steps": 6, "max_text_len": 64 },
    "vqa_train": { "epochs": 1, "batch_size": 32, "optim": { "lr": 0.002 } }"#;

fn spec_hash_of(manifest: &Path) -> String {
    let body = std::fs::read_to_string(manifest).unwrap();
    let v: serde_json::Value = serde_json::from_str(&body).unwrap();
    v["spec_hash"].as_str().unwrap().to_string()
}

#[test]
fn pipeline_runs_from_world_to_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("spec.json"), SPEC).unwrap();

    // Generate both split styles; a reseeded rerun reproduces the hash.
    let out = assert_ok(&sgreplay(dir, &["generate", "--spec", "spec.json", "--seed", "21", "--out", "bench"]));
    assert!(out.contains("function"), "stdout: {out}");
    assert!(dir.join("bench/function/manifest.json").exists());
    assert!(dir.join("bench/scene/manifest.json").exists());
    assert!(dir.join("bench/function/task_0_o/train.jsonl").exists());
    assert_ok(&sgreplay(dir, &["generate", "--spec", "spec.json", "--seed", "21", "--out", "bench2"]));
    assert_eq!(
        spec_hash_of(&dir.join("bench/function/manifest.json")),
        spec_hash_of(&dir.join("bench2/function/manifest.json")),
    );

    // Reorder into a fresh benchmark; garbage orders are config errors.
    assert_ok(&sgreplay(dir, &["build-splits", "--benchmark", "bench/function/manifest.json", "--order", "rkoals", "--out", "reordered"]));
    let body = std::fs::read_to_string(dir.join("reordered/function/manifest.json")).unwrap();
    assert!(body.contains("\"rkoals\""));
    let bad = sgreplay(dir, &["build-splits", "--benchmark", "bench/function/manifest.json", "--order", "zzzzzz", "--out", "x"]);
    assert_eq!(exit_code(&bad), 2);

    // A finetune run: 6 tasks leave a 21-entry matrix, reruns of the same
    // config + seed reproduce it byte for byte.
    let run_cfg = format!(
        r#"{{ "benchmark": "bench/function/manifest.json",
             "strategy": {{ "kind": "finetune" }}, {NET},
             "seed": 5, "out_dir": "runs/ft" }}"#
    );
    std::fs::write(dir.join("ft.json"), run_cfg.replace("runs/ft", "runs/ft-a")).unwrap();
    assert_ok(&sgreplay(dir, &["run", "--config", "ft.json"]));
    std::fs::write(dir.join("ft.json"), run_cfg.replace("runs/ft", "runs/ft-b")).unwrap();
    assert_ok(&sgreplay(dir, &["run", "--config", "ft.json"]));

    let csv_a = std::fs::read(dir.join("runs/ft-a/accuracy_matrix.csv")).unwrap();
    let csv_b = std::fs::read(dir.join("runs/ft-b/accuracy_matrix.csv")).unwrap();
    assert_eq!(csv_a, csv_b, "same config + seed must reproduce the matrix");
    let text = String::from_utf8(csv_a).unwrap();
    let entries: usize = text.lines().skip(1).map(|l| l.split(',').count()).sum();
    assert_eq!(entries, 21, "6 tasks fill the lower triangle");
    for artifact in ["config.json", "events.jsonl", "memory_report.json", "checkpoints/task-5-vqa.bin"] {
        assert!(dir.join("runs/ft-a").join(artifact).exists(), "missing {artifact}");
    }

    // Reports aggregate finished runs.
    assert_ok(&sgreplay(dir, &["report", "--out", "report", "runs/ft-a", "runs/ft-b"]));
    let summary = std::fs::read_to_string(dir.join("report/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3, "header + one row per run");
    assert!(summary.contains("finetune,oarlks,5"));
    for figure in ["summary_by_order.svg", "curves.svg", "memory.svg"] {
        assert!(dir.join("report").join(figure).exists(), "missing {figure}");
    }

    // Error classes: a directory that is not a run, a corrupt config, a
    // config whose benchmark path dangles.
    assert_eq!(exit_code(&sgreplay(dir, &["report", "--out", "r2", "bench"])), 3);
    std::fs::write(dir.join("broken.json"), "{\"benchmark\": 3}").unwrap();
    assert_eq!(exit_code(&sgreplay(dir, &["run", "--config", "broken.json"])), 3);
    std::fs::write(
        dir.join("dangling.json"),
        run_cfg.replace("bench/function/manifest.json", "nowhere/manifest.json"),
    )
    .unwrap();
    assert_eq!(exit_code(&sgreplay(dir, &["run", "--config", "dangling.json"])), 2);
}

#[test]
fn replay_inspection_needs_a_symbolic_replay_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("spec.json"), SPEC).unwrap();
    assert_ok(&sgreplay(dir, &["generate", "--spec", "spec.json", "--seed", "33", "--out", "bench"]));

    // A light symbolic-replay run: little rehearsal volume, short decode
    // budgets, an intentionally coarse replay model.
    let run_cfg = format!(
        r#"{{ "benchmark": "bench/function/manifest.json",
             "strategy": {{ "kind": "sgp", "gamma": 0.1 }}, {NET},
             "srm": {{ "blocks": 1, "width": 24, "heads": 2, "max_seq_len": 96, "tied_output": false }},
             "srm_train": {{ "epochs": 1, "batch_size": 32, "max_gen_len": 32, "resample_attempts": 2 }},
             "seed": 7, "out_dir": "runs/sgp" }}"#
    );
    std::fs::write(dir.join("sgp.json"), run_cfg).unwrap();
    assert_ok(&sgreplay(dir, &["run", "--config", "sgp.json"]));
    assert!(dir.join("runs/sgp/prompt_db.json").exists());
    assert!(dir.join("runs/sgp/checkpoints/task-0-srm.bin").exists());

    let out = assert_ok(&sgreplay(dir, &["inspect-replay", "runs/sgp", "--task", "2", "--count", "3"]));
    assert!(out.contains("before task 2 (o)"), "stdout: {out}");
    assert!(out.contains("generated graph"), "stdout: {out}");

    // Inspection is only meaningful where a prompt database exists.
    let ft_cfg = r#"{ "benchmark": "bench/function/manifest.json",
        "strategy": { "kind": "finetune" },
        "net": { "d": 12, "fusion_layers": 1, "heads": 2, "text_blocks": 1,
                 "max_decode_steps": 6, "max_text_len": 64 },
        "vqa_train": { "epochs": 1, "batch_size": 32 },
        "seed": 7, "out_dir": "runs/ft" }"#;
    std::fs::write(dir.join("ft.json"), ft_cfg).unwrap();
    assert_ok(&sgreplay(dir, &["run", "--config", "ft.json"]));
    assert_eq!(exit_code(&sgreplay(dir, &["inspect-replay", "runs/ft"])), 2);
    assert_eq!(exit_code(&sgreplay(dir, &["inspect-replay", "runs/sgp", "--task", "1"])), 2);
}

#[test]
fn output_root_override_relocates_relative_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("spec.json"), SPEC).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_sgreplay"))
        .current_dir(dir)
        .args(["generate", "--spec", "spec.json", "--seed", "21", "--out", "bench"])
        .env("SGREPLAY_OUT_ROOT", dir.join("elsewhere"))
        .output()
        .expect("binary launches");
    assert_ok(&out);
    assert!(dir.join("elsewhere/bench/function/manifest.json").exists());
    assert!(!dir.join("bench").exists());
}
