//! Generate a small synthetic world and slice it into both benchmark
//! styles.
//!
//!     cargo run --example generate_world

use sgreplay::worldgen::{build_function_splits, build_scene_splits, generate_world, WorldSpec};

fn main() -> sgreplay::Result<()> {
    let spec = WorldSpec {
        samples_per_cell: 60,
        train_per_task: 80,
        val_per_task: 20,
        test_per_task: 20,
        ..WorldSpec::default()
    };
    let seed = 21;
    let (bank, pool) = generate_world(seed, &spec)?;
    println!("world: {} samples across 6 scenes x 6 question skills\n", pool.len());

    // Every sample carries its scene graph, the evidence subgraph that
    // grounds the answer, ten annotations, and a functional program.
    let s = pool.iter().find(|s| s.ocr_tokens.is_some()).expect("text questions exist");
    println!("sample {} (scene '{}', skill '{}')", s.id, s.scene, s.task_tag);
    println!("  question   {}", s.question);
    println!("  answer     {}", s.answer());
    println!("  evidence   {}", s.evidence_graph.phrases().join("; "));
    let steps: Vec<String> = s
        .program
        .operations
        .iter()
        .zip(&s.program.arguments)
        .map(|(op, arg)| if arg.is_empty() { op.clone() } else { format!("{op}({arg})") })
        .collect();
    println!("  program    {}", steps.join(" -> "));
    if let Some(ocr) = &s.ocr_tokens {
        let words: Vec<&str> = ocr.iter().map(|t| t.text.as_str()).collect();
        println!("  ocr        {}", words.join(" "));
    }
    println!("  graph      {} relationships", s.scene_graph.relationships.len());

    // The same pool supports two task sequences: one new scene at a time,
    // or one new question skill at a time.
    for benchmark in [
        build_scene_splits(&bank, &pool, &spec, seed)?,
        build_function_splits(&bank, &pool, &spec, seed)?,
    ] {
        println!("\n{:?}-incremental ({}):", benchmark.style, benchmark.order_code);
        for task in &benchmark.tasks {
            let uniques = benchmark.unique_pools[&task.task_tag].len();
            println!(
                "  task {}: {} train / {} val / {} test, {} exclusive answers",
                task.task_tag,
                task.train.len(),
                task.val.len(),
                task.test.len(),
                uniques,
            );
        }
    }
    Ok(())
}
