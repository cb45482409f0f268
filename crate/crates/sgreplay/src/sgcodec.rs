//! Token vocabulary and the exact wire formats for sequence-model training
//! and inference: scene-graph continuation pairs, QA-generation pairs with
//! their loss masks, inference prefixes, and the lossless parser that turns
//! generated token sequences back into structured graphs or QA pairs.
//!
//! Tokenization is whitespace word-level over the closed world lexicon;
//! the vocabulary is built once from the full concept bank and frozen, so
//! word ids are stable across the whole task sequence.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::worldgen::{ConceptBank, Lexicon, Relationship, SceneGraph};

/// Fixed special-token ids. They occupy the first vocabulary slots in this
/// order; corpus words start at [`SpecialTokens::COUNT`].
pub struct SpecialTokens;

impl SpecialTokens {
    pub const GEN: usize = 0;
    pub const SEP: usize = 1;
    pub const QUES: usize = 2;
    pub const ANS: usize = 3;
    pub const EOT: usize = 4;
    pub const BEGIN: usize = 5;
    pub const END: usize = 6;
    pub const PAD: usize = 7;
    pub const UNK: usize = 8;
    pub const COUNT: usize = 9;

    pub const LITERALS: [&'static str; 9] =
        ["[g]", "[s]", "[q]", "[a]", "[e]", "<begin>", "<end>", "<pad>", "<unk>"];

    pub fn is_special(id: usize) -> bool {
        id < Self::COUNT
    }
}

/// Bidirectional word/id map covering the special tokens and every corpus
/// word. Frozen after construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    ids: BTreeMap<String, usize>,
}

impl Vocab {
    /// Builds the vocabulary from a bank: special tokens first, then all
    /// corpus words in sorted order.
    pub fn build(bank: &ConceptBank) -> Vocab {
        let mut words: Vec<String> =
            SpecialTokens::LITERALS.iter().map(|s| s.to_string()).collect();
        words.extend(bank.all_words());
        let ids = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocab { words, ids }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    /// Tokenizes free text. Unknown words map to UNK; special-token
    /// literals are rejected because plain text must never produce them.
    pub fn encode_text(&self, text: &str) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for w in text.split_whitespace() {
            if SpecialTokens::LITERALS.contains(&w) {
                return Err(Error::data(format!("control token '{w}' inside text")));
            }
            out.push(self.id(w).unwrap_or(SpecialTokens::UNK));
        }
        Ok(out)
    }

    pub fn decode_words(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.word(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// FNV-1a over the word list; stored in checkpoints so a model is never
    /// silently loaded against a different vocabulary.
    pub fn fingerprint(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for w in &self.words {
            for b in w.as_bytes() {
                h ^= *b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
            h ^= 0xff;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    /// Restores the id map after deserialization.
    pub fn rebuild_index(&mut self) {
        self.ids = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeqRole {
    SgLmInput,
    SgLmTarget,
    QaGenInput,
    QaGenTarget,
    SgInferencePrefix,
    QaInferencePrefix,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<usize>,
    pub role: SeqRole,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn encode_graph_body(sg: &SceneGraph, vocab: &Vocab) -> Result<Vec<usize>> {
    let mut ids = Vec::new();
    for (i, rel) in sg.relationships.iter().enumerate() {
        if i > 0 {
            ids.push(SpecialTokens::SEP);
        }
        let phrase = rel.render();
        let words = vocab.encode_text(&phrase)?;
        if words.is_empty() {
            return Err(Error::data("relationship renders to an empty phrase"));
        }
        ids.extend(words);
    }
    Ok(ids)
}

/// Scene-graph continuation pair: input `[g] r_1 [s] r_2 [s] ... r_K`,
/// target = input shifted left by one with `[e]` appended.
pub fn encode_sg_lm(sg: &SceneGraph, vocab: &Vocab) -> Result<(TokenSeq, TokenSeq)> {
    if sg.relationships.is_empty() {
        return Err(Error::data("cannot encode an empty scene graph"));
    }
    let mut input = vec![SpecialTokens::GEN];
    input.extend(encode_graph_body(sg, vocab)?);
    let mut target = input[1..].to_vec();
    target.push(SpecialTokens::EOT);
    Ok((
        TokenSeq { ids: input, role: SeqRole::SgLmInput },
        TokenSeq { ids: target, role: SeqRole::SgLmTarget },
    ))
}

/// QA-generation pair: input `[g] evidence [q] question [a] answer`; target
/// is the shifted sequence ending in `[e]`. The returned mask has one entry
/// per target position and is 1 exactly on the span that decodes the
/// question, `[a]`, the answer, and `[e]` — the evidence prefix carries no
/// loss.
pub fn encode_qa_gen(
    evidence: &SceneGraph,
    question: &str,
    answer: &str,
    vocab: &Vocab,
) -> Result<(TokenSeq, TokenSeq, Vec<f64>)> {
    if evidence.relationships.is_empty() {
        return Err(Error::data("QA encoding needs a non-empty evidence graph"));
    }
    let q_ids = vocab.encode_text(question)?;
    let a_ids = vocab.encode_text(answer)?;
    if q_ids.is_empty() || a_ids.is_empty() {
        return Err(Error::data("question and answer must be non-empty"));
    }
    let mut input = vec![SpecialTokens::GEN];
    input.extend(encode_graph_body(evidence, vocab)?);
    let ques_pos = input.len();
    input.push(SpecialTokens::QUES);
    input.extend(&q_ids);
    input.push(SpecialTokens::ANS);
    input.extend(&a_ids);

    let mut target = input[1..].to_vec();
    target.push(SpecialTokens::EOT);
    // Position i predicts input[i+1]; the first supervised position is the
    // one that predicts the first question word, i.e. the [q] position.
    let mask: Vec<f64> = (0..target.len())
        .map(|i| if i >= ques_pos { 1.0 } else { 0.0 })
        .collect();
    Ok((
        TokenSeq { ids: input, role: SeqRole::QaGenInput },
        TokenSeq { ids: target, role: SeqRole::QaGenTarget },
        mask,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenMode {
    Sg,
    Qa,
}

/// Decoding prefix: `[g] prompt [s]` for scene-graph completion, or
/// `[g] prompt [q]` for QA generation.
pub fn make_inference_prefix(prompt: &SceneGraph, mode: GenMode, vocab: &Vocab) -> Result<TokenSeq> {
    if prompt.relationships.is_empty() {
        return Err(Error::data("inference prompt renders empty"));
    }
    let mut ids = vec![SpecialTokens::GEN];
    ids.extend(encode_graph_body(prompt, vocab)?);
    let (last, role) = match mode {
        GenMode::Sg => (SpecialTokens::SEP, SeqRole::SgInferencePrefix),
        GenMode::Qa => (SpecialTokens::QUES, SeqRole::QaInferencePrefix),
    };
    ids.push(last);
    Ok(TokenSeq { ids, role })
}

/// A generation that failed well-formedness checks; the caller is expected
/// to resample rather than propagate this as a hard error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Malformed(pub String);

impl std::fmt::Display for Malformed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "malformed generation: {}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Parsed {
    Sg(SceneGraph),
    Qa { question: String, answer: String },
}

/// Parses a decoded token sequence back into structure. Scene-graph mode
/// splits on `[s]` and stops at `[e]`, parsing each phrase against the
/// lexicon; QA mode splits at `[a]` and stops at `[e]`.
pub fn parse_generation(
    ids: &[usize],
    mode: GenMode,
    vocab: &Vocab,
    lexicon: &Lexicon,
) -> std::result::Result<Parsed, Malformed> {
    if ids.first() != Some(&SpecialTokens::GEN) {
        return Err(Malformed("sequence does not start with [g]".into()));
    }
    let body = &ids[1..];
    let end = body
        .iter()
        .position(|&t| t == SpecialTokens::EOT)
        .ok_or_else(|| Malformed("no [e] within the generated sequence".into()))?;
    let body = &body[..end];
    match mode {
        GenMode::Sg => {
            let mut relationships = Vec::new();
            for segment in body.split(|&t| t == SpecialTokens::SEP) {
                if segment.is_empty() {
                    return Err(Malformed("empty relationship between separators".into()));
                }
                if segment.iter().any(|&t| SpecialTokens::is_special(t)) {
                    return Err(Malformed("control token inside a relationship".into()));
                }
                let words: Vec<&str> = segment.iter().map(|&t| vocab.word(t)).collect();
                let rel = Relationship::parse(&words, lexicon).ok_or_else(|| {
                    Malformed(format!("unparseable phrase '{}'", words.join(" ")))
                })?;
                relationships.push(rel);
            }
            if relationships.is_empty() {
                return Err(Malformed("no relationships before [e]".into()));
            }
            Ok(Parsed::Sg(SceneGraph::new(relationships)))
        }
        GenMode::Qa => {
            let ques = body
                .iter()
                .position(|&t| t == SpecialTokens::QUES)
                .ok_or_else(|| Malformed("missing [q]".into()))?;
            let after_q = &body[ques + 1..];
            let ans = after_q
                .iter()
                .position(|&t| t == SpecialTokens::ANS)
                .ok_or_else(|| Malformed("missing [a]".into()))?;
            let q_ids = &after_q[..ans];
            let a_ids = &after_q[ans + 1..];
            if q_ids.is_empty() || a_ids.is_empty() {
                return Err(Malformed("empty question or answer".into()));
            }
            if q_ids
                .iter()
                .chain(a_ids.iter())
                .any(|&t| SpecialTokens::is_special(t))
            {
                return Err(Malformed("control token inside question or answer".into()));
            }
            Ok(Parsed::Qa {
                question: vocab.decode_words(q_ids),
                answer: vocab.decode_words(a_ids),
            })
        }
    }
}
