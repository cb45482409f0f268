//! The unified answerer: heterogeneous inputs (question words, detected
//! objects, scene-graph text, OCR tokens, knowledge snippets) are projected
//! into one `d`-dimensional space, fused by a multimodal transformer under a
//! decode-causal mask, and answered auto-regressively by a pointer decoder
//! that can either emit a vocabulary word or copy an OCR token.
//!
//! Sub-modules:
//! - [`features`]: turns [`Sample`](crate::worldgen::Sample)s and replay
//!   triplets into [`InputBundle`]s (synthetic appearance vectors, boxes,
//!   trigram bags).
//! - [`model`]: parameters, embedding, fusion, and the pointer decoder.
//! - [`train`]: the mixed current + replayed training loop with strategy
//!   hooks for regularizers and episodic memory.

mod features;
mod model;
mod train;

pub use features::{
    bundle_from_replay, bundle_from_sample, render_sg_text, APP_DIM, LEX_DIM, REG_DIM, TRI_DIM,
};
pub use model::{fusion_mask, EmbeddedInputs, UniVqaModel};
pub use train::{train_univqa, NoHooks, StrategyHooks, TrainItem, VqaBatchLoss, VqaTrainConfig};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::worldgen::ConceptBank;

/// Closed answer-word list shared by the classifier head and the decoder
/// input embedding. Ids 0 and 1 are the decode control words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<String>", try_from = "Vec<String>")]
pub struct AnswerVocab {
    words: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl AnswerVocab {
    /// Decoder start word; fed as the input to step 0.
    pub const BEGIN: usize = 0;
    /// Decoder stop word; emitting it ends the answer.
    pub const END: usize = 1;

    const BEGIN_WORD: &'static str = "<begin>";
    const END_WORD: &'static str = "<end>";

    /// Builds the vocabulary from an iterator of answer words (sorted and
    /// deduplicated), prefixing the two control words.
    pub fn build(words: impl IntoIterator<Item = String>) -> AnswerVocab {
        let mut list: Vec<String> = vec![Self::BEGIN_WORD.into(), Self::END_WORD.into()];
        let mut body: Vec<String> = words
            .into_iter()
            .filter(|w| w != Self::BEGIN_WORD && w != Self::END_WORD)
            .collect();
        body.sort();
        body.dedup();
        list.extend(body);
        let index = list
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        AnswerVocab { words: list, index }
    }

    /// The vocabulary over every word that can appear in an answer of the
    /// given world.
    pub fn from_bank(bank: &ConceptBank) -> AnswerVocab {
        AnswerVocab::build(bank.answer_words())
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the two control words are always present
    }

    /// FNV-1a digest of the word list; checkpoints refuse to load under a
    /// different vocabulary.
    pub fn fingerprint(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for w in &self.words {
            for b in w.as_bytes() {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
            h ^= 0xff;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        format!("{h:016x}")
    }
}

impl From<AnswerVocab> for Vec<String> {
    fn from(v: AnswerVocab) -> Vec<String> {
        v.words
    }
}

impl TryFrom<Vec<String>> for AnswerVocab {
    type Error = Error;

    fn try_from(words: Vec<String>) -> Result<AnswerVocab> {
        if words.first().map(String::as_str) != Some(Self::BEGIN_WORD)
            || words.get(1).map(String::as_str) != Some(Self::END_WORD)
        {
            return Err(Error::data("answer vocabulary missing control words"));
        }
        let index: BTreeMap<String, usize> = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        if index.len() != words.len() {
            return Err(Error::data("answer vocabulary has duplicate words"));
        }
        Ok(AnswerVocab { words, index })
    }
}

/// Answerer hyperparameters. The defaults are the desk-scale shape; the
/// full-scale width (768, 12 heads) is accepted through the same fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Common embedding width all modalities are projected into.
    pub d: usize,
    /// Multimodal fusion depth.
    pub fusion_layers: usize,
    pub heads: usize,
    /// Hard cap on emitted answer words per sample.
    pub max_decode_steps: usize,
    /// Depth of the lightweight text encoder run over each text field.
    pub text_blocks: usize,
    /// Longest text field (question / scene-graph text / knowledge) in words.
    pub max_text_len: usize,
    pub answer_vocab: AnswerVocab,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 128,
            fusion_layers: 4,
            heads: 4,
            max_decode_steps: 12,
            text_blocks: 2,
            max_text_len: 64,
            answer_vocab: AnswerVocab::from_bank(&ConceptBank::default_world()),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::config(format!(
                "width {} not divisible by {} heads",
                self.d, self.heads
            )));
        }
        if self.fusion_layers == 0 {
            return Err(Error::config("fusion_layers must be at least 1"));
        }
        if self.max_decode_steps == 0 {
            return Err(Error::config("max_decode_steps must be at least 1"));
        }
        if self.max_text_len == 0 {
            return Err(Error::config("max_text_len must be at least 1"));
        }
        Ok(())
    }
}

/// Which modality an input row belongs to. Every fused row is tagged so the
/// mask builder, the pointer head, and diagnostics can address rows by kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModalityTag {
    Question,
    Object,
    SgText,
    Ocr,
    Knowledge,
    /// The learnable summary token appended when a whole-sample embedding is
    /// requested (episodic-memory clustering).
    SampleToken,
}

impl ModalityTag {
    /// Row index into the modality-type embedding table.
    pub(crate) fn type_row(self) -> usize {
        match self {
            ModalityTag::Question => 0,
            ModalityTag::Object => 1,
            ModalityTag::SgText => 2,
            ModalityTag::Ocr => 3,
            ModalityTag::Knowledge => 4,
            ModalityTag::SampleToken => 5,
        }
    }

    /// Number of type-embedding rows: the five input modalities, the sample
    /// token, and the decode stream.
    pub(crate) const ROWS: usize = 7;
    pub(crate) const DECODE_ROW: usize = 6;
}

/// One detected object: a fixed appearance vector plus its region box
/// (x, y, w, h in [0, 1]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectFeature {
    pub appearance: Vec<f64>,
    pub bbox: [f64; 4],
}

/// One scene-text token with the four feature components the embedder sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrFeature {
    pub token: String,
    /// Word-identity vector (distributional stand-in).
    pub lexical: Vec<f64>,
    /// Visual region vector (detector stand-in).
    pub region: Vec<f64>,
    /// Bag-of-character-trigrams hash embedding (character-shape stand-in).
    pub trigram: Vec<f64>,
    pub bbox: [f64; 4],
}

/// Everything the answerer sees for one sample. Text fields are word ids in
/// the shared world vocabulary; objects and OCR carry raw feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBundle {
    pub sample_id: String,
    pub question: Vec<usize>,
    pub objects: Vec<ObjectFeature>,
    /// The scene graph rendered as plain text (empty when absent).
    pub sg_text: Vec<usize>,
    pub ocr: Vec<OcrFeature>,
    pub knowledge: Vec<usize>,
}

impl InputBundle {
    /// A bundle must carry at least one grounding modality: detected objects
    /// or scene-graph text. Replayed samples have only the latter.
    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() && self.sg_text.is_empty() {
            return Err(Error::data(format!(
                "bundle {}: needs object features or scene-graph text",
                self.sample_id
            )));
        }
        Ok(())
    }
}

/// Where an emitted answer word came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSource {
    Vocab,
    /// Copied from the OCR list; the payload is the index into
    /// [`InputBundle::ocr`].
    OcrCopy(usize),
}

/// Why decoding ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The stop word was emitted.
    End,
    /// The per-sample word budget ran out first.
    StepCap,
}

/// A decoded answer: the words, where each came from, and why decoding
/// stopped. The stop word itself is not part of `words`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerDecode {
    pub words: Vec<String>,
    pub sources: Vec<StepSource>,
    pub stop: StopReason,
}

impl AnswerDecode {
    pub fn answer(&self) -> String {
        self.words.join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answer_vocab_sorts_dedups_and_pins_control_ids() {
        let v = AnswerVocab::build(["red", "lamp", "red", "bench"].map(String::from));
        assert_eq!(v.word(AnswerVocab::BEGIN), "<begin>");
        assert_eq!(v.word(AnswerVocab::END), "<end>");
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("bench"), Some(2));
        assert_eq!(v.id("lamp"), Some(3));
        assert_eq!(v.id("red"), Some(4));
        assert_eq!(v.id("taxi"), None);

        let json = serde_json::to_string(&v).unwrap();
        let back: AnswerVocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.fingerprint(), v.fingerprint());

        let bad: std::result::Result<AnswerVocab, _> =
            serde_json::from_str(r#"["red","lamp"]"#);
        assert!(bad.is_err());
    }

    #[test]
    fn bundle_needs_a_grounding_modality() {
        let empty = InputBundle {
            sample_id: "q0".into(),
            question: vec![9, 10],
            objects: vec![],
            sg_text: vec![],
            ocr: vec![],
            knowledge: vec![],
        };
        assert!(empty.validate().is_err());

        let with_text = InputBundle {
            sg_text: vec![11],
            ..empty
        };
        assert!(with_text.validate().is_ok());
    }
}
