//! Feature synthesis for the answerer's non-text modalities.
//!
//! There is no detector or OCR system in this world, so visual features are
//! synthesized deterministically from names: every object or scene-text
//! token maps to fixed pseudo-random vectors keyed by a hash of the string.
//! Identity is therefore recoverable from the features (same learnability
//! structure a real detector would give) while staying fully reproducible —
//! the vectors depend only on the name, never on the run seed.

use rand::Rng;

use crate::error::Result;
use crate::rng;
use crate::sgcodec::Vocab;
use crate::srm::ReplayTriplet;
use crate::worldgen::{Sample, SceneGraph};

use super::{InputBundle, ObjectFeature, OcrFeature};

/// Appearance-vector width for detected objects.
pub const APP_DIM: usize = 32;
/// Word-identity vector width for OCR tokens.
pub const LEX_DIM: usize = 32;
/// Region vector width for OCR tokens.
pub const REG_DIM: usize = 32;
/// Bucket count of the character-trigram bag for OCR tokens.
pub const TRI_DIM: usize = 64;

/// Master seed of the feature universe. A constant: features belong to the
/// world definition, not to any particular run.
const FEATURE_SEED: u64 = 0x5ce9_e000_f0ea_7042;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

/// A fixed pseudo-random vector in [-1, 1) keyed by `(purpose, name)`.
fn name_vector(purpose: &str, name: &str, dim: usize) -> Vec<f64> {
    let mut r = rng::stream(FEATURE_SEED, purpose, fnv1a(name.as_bytes()));
    (0..dim).map(|_| r.random::<f64>() * 2.0 - 1.0).collect()
}

/// A fixed region box (x, y, w, h in [0, 1]) keyed by the name.
fn name_box(purpose: &str, name: &str) -> [f64; 4] {
    let mut r = rng::stream(FEATURE_SEED, purpose, fnv1a(name.as_bytes()));
    let w = r.random_range(0.1..0.4);
    let h = r.random_range(0.1..0.4);
    let x = r.random_range(0.0..1.0 - w);
    let y = r.random_range(0.0..1.0 - h);
    [x, y, w, h]
}

/// L2-normalized bag of character trigrams, hashed into [`TRI_DIM`] buckets.
/// Stands in for a character-shape descriptor: visually similar strings get
/// similar bags.
fn trigram_vector(token: &str) -> Vec<f64> {
    let padded: Vec<char> = std::iter::once('#')
        .chain(token.chars())
        .chain(std::iter::once('#'))
        .collect();
    let mut v = vec![0.0; TRI_DIM];
    if padded.len() < 3 {
        return v;
    }
    for tri in padded.windows(3) {
        let s: String = tri.iter().collect();
        let bucket = (fnv1a(s.as_bytes()) % TRI_DIM as u64) as usize;
        v[bucket] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

fn object_feature(name: &str) -> ObjectFeature {
    ObjectFeature {
        appearance: name_vector("object-appearance", name, APP_DIM),
        bbox: name_box("object-box", name),
    }
}

fn ocr_feature(token: &str, bbox: [f64; 4]) -> OcrFeature {
    OcrFeature {
        token: token.to_string(),
        lexical: name_vector("ocr-lexical", token, LEX_DIM),
        region: name_vector("ocr-region", token, REG_DIM),
        trigram: trigram_vector(token),
        bbox,
    }
}

/// A scene graph rendered as one plain-text word stream (phrases joined by
/// spaces), the form the text encoder consumes.
pub fn render_sg_text(sg: &SceneGraph) -> String {
    sg.phrases().join(" ")
}

/// Builds the full input view of a real sample: question words, one object
/// feature per mentioned object, the scene graph as text, plus OCR and
/// knowledge fields when the sample has them.
pub fn bundle_from_sample(sample: &Sample, vocab: &Vocab) -> Result<InputBundle> {
    let question = vocab.encode_text(&sample.question)?;
    let objects = sample
        .scene_graph
        .mentioned_objects()
        .iter()
        .map(|name| object_feature(name))
        .collect();
    let sg_text = vocab.encode_text(&render_sg_text(&sample.scene_graph))?;
    let ocr = sample
        .ocr_tokens
        .as_deref()
        .unwrap_or_default()
        .iter()
        .map(|e| ocr_feature(&e.text, e.bbox))
        .collect();
    let knowledge = match &sample.knowledge {
        Some(k) => vocab.encode_text(k)?,
        None => Vec::new(),
    };
    let bundle = InputBundle {
        sample_id: sample.id.clone(),
        question,
        objects,
        sg_text,
        ocr,
        knowledge,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Builds the input view of a replayed triplet: question plus generated
/// scene-graph text only — replayed samples carry no visual features.
pub fn bundle_from_replay(
    triplet: &ReplayTriplet,
    vocab: &Vocab,
    id: impl Into<String>,
) -> Result<InputBundle> {
    let bundle = InputBundle {
        sample_id: id.into(),
        question: vocab.encode_text(&triplet.question)?,
        objects: Vec::new(),
        sg_text: vocab.encode_text(&render_sg_text(&triplet.sg_srm))?,
        ocr: Vec::new(),
        knowledge: Vec::new(),
    };
    bundle.validate()?;
    Ok(bundle)
}
