//! Tour of the token codec the replay model is trained on: scene-graph
//! continuation sequences, QA generation sequences, inference prefixes,
//! and lossless parsing back into structure.
//!
//!     cargo run --example codec_tour

use sgreplay::sgcodec::{
    encode_qa_gen, encode_sg_lm, make_inference_prefix, parse_generation, GenMode, Parsed,
    SpecialTokens, Vocab,
};
use sgreplay::worldgen::{ConceptBank, Lexicon, Relationship, SceneGraph};

fn main() -> sgreplay::Result<()> {
    let bank = ConceptBank::default_world();
    let vocab = Vocab::build(&bank);
    let lexicon = Lexicon::from_bank(&bank);
    println!("vocabulary: {} tokens, fingerprint {}\n", vocab.len(), vocab.fingerprint());

    let graph = SceneGraph::new(vec![
        Relationship::relation("chair", "near", "table"),
        Relationship::attribute("chair", "red"),
        Relationship::relation("sign", "says", "exit"),
    ]);

    // Scene-graph continuation: the model learns to finish a graph from
    // any leading fragment of it.
    let (seq, targets) = encode_sg_lm(&graph, &vocab)?;
    println!("sg sequence   {}", render(&seq.ids, &vocab));
    println!("  {} input tokens, {} prediction targets", seq.ids.len(), targets.ids.len());

    // QA generation: same graph, then a question and its answer.
    let (qa, _, _) = encode_qa_gen(&graph, "what is near the table", "chair", &vocab)?;
    println!("qa sequence   {}", render(&qa.ids, &vocab));

    // At replay time the graph fragment comes from sampled prompts; the
    // two prefixes differ only in their trailing control token.
    let prompt = SceneGraph::new(vec![graph.relationships[0].clone()]);
    let sg_prefix = make_inference_prefix(&prompt, GenMode::Sg, &vocab)?;
    let qa_prefix = make_inference_prefix(&prompt, GenMode::Qa, &vocab)?;
    println!("sg prefix     {}", render(&sg_prefix.ids, &vocab));
    println!("qa prefix     {}", render(&qa_prefix.ids, &vocab));

    // Parsing is exact: a well-formed generation reconstructs the graph
    // (or QA pair) with no guesswork left to the caller. A real generation
    // ends when the model emits [e], so we append it here by hand.
    let mut sg_gen = seq.ids.clone();
    sg_gen.push(SpecialTokens::EOT);
    match parse_generation(&sg_gen, GenMode::Sg, &vocab, &lexicon) {
        Ok(Parsed::Sg(back)) => {
            println!("\nparsed graph  {}", back.phrases().join("; "));
            assert_eq!(back, graph, "round trip is lossless");
        }
        other => panic!("expected a scene graph, got {other:?}"),
    }
    let mut qa_gen = qa.ids.clone();
    qa_gen.push(SpecialTokens::EOT);
    match parse_generation(&qa_gen, GenMode::Qa, &vocab, &lexicon) {
        Ok(Parsed::Qa { question, answer }) => {
            println!("parsed qa     {question} -> {answer}");
        }
        other => panic!("expected a qa pair, got {other:?}"),
    }
    Ok(())
}

fn render(ids: &[usize], vocab: &Vocab) -> String {
    ids.iter().map(|&t| vocab.word(t)).collect::<Vec<_>>().join(" ")
}
