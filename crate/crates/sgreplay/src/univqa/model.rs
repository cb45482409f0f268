//! Parameters and forward passes of the answerer.
//!
//! Every modality is projected into the shared `d`-wide space, tagged with a
//! modality-type embedding, and concatenated into one row matrix. Decode
//! steps are appended as extra rows behind the inputs, and a single additive
//! mask gives the fusion stack its asymmetric visibility rule: inputs see
//! only inputs, decode step `t` sees all inputs plus steps `<= t`. The
//! decoder head scores each step jointly over the answer vocabulary and a
//! bilinear copy score per OCR token.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read as IoRead, Write as IoWrite};
use std::ops::Range;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::io::{read_f64s, write_f64s};
use crate::nn::{
    Adam, LayerNormParams, NodeId, ParamSet, Tape, TransformerStack, MASK_OFF,
};
use crate::sgcodec::Vocab;

use super::features::{APP_DIM, LEX_DIM, REG_DIM, TRI_DIM};
use super::{
    AnswerDecode, AnswerVocab, InputBundle, ModalityTag, ModelConfig, StepSource, StopReason,
};

/// Additive attention bias for `n_inputs` input rows followed by `n_steps`
/// decode rows: inputs attend freely among themselves and never to decode
/// rows; decode step `t` attends to every input and to decode steps `<= t`.
pub fn fusion_mask(n_inputs: usize, n_steps: usize) -> Array2<f64> {
    let n = n_inputs + n_steps;
    Array2::from_shape_fn((n, n), |(i, j)| {
        let from_decode = i >= n_inputs;
        let to_decode = j >= n_inputs;
        match (from_decode, to_decode) {
            (false, false) => 0.0,
            (false, true) => MASK_OFF,
            (true, false) => 0.0,
            (true, true) => {
                if j <= i {
                    0.0
                } else {
                    MASK_OFF
                }
            }
        }
    })
}

/// The projected input rows of one bundle, plus the bookkeeping the decoder
/// head needs: which modality each row carries and where the OCR rows sit.
pub struct EmbeddedInputs {
    pub rows: NodeId,
    pub tags: Vec<ModalityTag>,
    /// Row range of the OCR tokens inside `rows`; `None` when the bundle has
    /// no OCR.
    pub ocr_rows: Option<Range<usize>>,
}

impl EmbeddedInputs {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

/// What feeds one decode step: the start word, a previously emitted
/// vocabulary word, or the input embedding of a previously copied OCR token.
#[derive(Debug, Clone, Copy)]
enum StepInput {
    Begin,
    Vocab(usize),
    OcrRow(usize),
}

/// Gold decoding plan for one sample under teacher forcing.
#[derive(Debug)]
struct TeacherForcing {
    /// Input per step: BEGIN, then the gold word embeddings shifted by one.
    steps: Vec<StepInput>,
    /// Joint-space target per step (vocab id, or vocab_len + ocr index); the
    /// last step's target is always END.
    targets: Vec<usize>,
    sources: Vec<StepSource>,
    words: Vec<String>,
}

#[derive(Clone)]
pub struct UniVqaModel {
    pub cfg: ModelConfig,
    pub text_vocab_size: usize,
    pub text_vocab_fingerprint: String,
    pub params: ParamSet,
    tok_emb: usize,
    text_pos: usize,
    type_emb: usize,
    text_enc: TransformerStack,
    obj_app: usize,
    obj_box: usize,
    obj_bias: usize,
    obj_ln: LayerNormParams,
    ocr_lex: usize,
    ocr_reg: usize,
    ocr_tri: usize,
    ocr_box: usize,
    ocr_bias: usize,
    ocr_ln: LayerNormParams,
    fusion: TransformerStack,
    ans_emb: usize,
    dec_pos: usize,
    cls_w: usize,
    cls_b: usize,
    ptr_w: usize,
    sample_token: usize,
}

impl UniVqaModel {
    pub fn new(cfg: ModelConfig, text_vocab: &Vocab, seed: u64) -> Result<UniVqaModel> {
        let mut rng = crate::rng::stream(seed, "vqa-init", 0);
        Self::init(cfg, text_vocab.len(), text_vocab.fingerprint(), &mut rng)
    }

    fn init(
        cfg: ModelConfig,
        text_vocab_size: usize,
        text_vocab_fingerprint: String,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<UniVqaModel> {
        cfg.validate()?;
        let d = cfg.d;
        let v_ans = cfg.answer_vocab.len();
        let mut params = ParamSet::new();
        let tok_emb = params.push_gauss("tok_emb", text_vocab_size, d, 0.02, rng);
        let text_pos = params.push_gauss("text_pos", cfg.max_text_len, d, 0.02, rng);
        let type_emb = params.push_gauss("type_emb", ModalityTag::ROWS, d, 0.02, rng);
        let text_enc = TransformerStack::init(&mut params, "text", cfg.text_blocks, d, cfg.heads, rng);
        let obj_app = params.push_gauss("obj.app", APP_DIM, d, 1.0 / (APP_DIM as f64).sqrt(), rng);
        let obj_box = params.push_gauss("obj.box", 4, d, 0.5, rng);
        let obj_bias = params.push_zeros("obj.bias", 1, d);
        let obj_ln = LayerNormParams::init(&mut params, "obj.ln", d);
        let ocr_lex = params.push_gauss("ocr.lex", LEX_DIM, d, 1.0 / (LEX_DIM as f64).sqrt(), rng);
        let ocr_reg = params.push_gauss("ocr.reg", REG_DIM, d, 1.0 / (REG_DIM as f64).sqrt(), rng);
        let ocr_tri = params.push_gauss("ocr.tri", TRI_DIM, d, 1.0 / (TRI_DIM as f64).sqrt(), rng);
        let ocr_box = params.push_gauss("ocr.box", 4, d, 0.5, rng);
        let ocr_bias = params.push_zeros("ocr.bias", 1, d);
        let ocr_ln = LayerNormParams::init(&mut params, "ocr.ln", d);
        let fusion = TransformerStack::init(&mut params, "fusion", cfg.fusion_layers, d, cfg.heads, rng);
        let ans_emb = params.push_gauss("ans_emb", v_ans, d, 0.02, rng);
        let dec_pos = params.push_gauss("dec_pos", cfg.max_decode_steps, d, 0.02, rng);
        let cls_w = params.push_gauss("cls.w", d, v_ans, 1.0 / (d as f64).sqrt(), rng);
        let cls_b = params.push_zeros("cls.b", 1, v_ans);
        let ptr_w = params.push_gauss("ptr.w", d, d, 1.0 / (d as f64).sqrt(), rng);
        let sample_token = params.push_gauss("sample_token", 1, d, 0.02, rng);
        Ok(UniVqaModel {
            cfg,
            text_vocab_size,
            text_vocab_fingerprint,
            params,
            tok_emb,
            text_pos,
            type_emb,
            text_enc,
            obj_app,
            obj_box,
            obj_bias,
            obj_ln,
            ocr_lex,
            ocr_reg,
            ocr_tri,
            ocr_box,
            ocr_bias,
            ocr_ln,
            fusion,
            ans_emb,
            dec_pos,
            cls_w,
            cls_b,
            ptr_w,
            sample_token,
        })
    }

    fn type_row<'p>(&self, tape: &mut Tape<'p>, row: usize) -> NodeId {
        let all = tape.param(self.type_emb);
        tape.slice_rows(all, row..row + 1)
    }

    /// Embeds one text field: token embedding + position + field type, run
    /// through the shared lightweight text encoder (full attention within
    /// the field).
    fn text_segment<'p>(&self, tape: &mut Tape<'p>, ids: &[usize], tag: ModalityTag) -> Result<NodeId> {
        if ids.len() > self.cfg.max_text_len {
            return Err(Error::data(format!(
                "text field of {} words exceeds max_text_len {}",
                ids.len(),
                self.cfg.max_text_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.text_vocab_size) {
            return Err(Error::data(format!(
                "text token id {bad} outside vocabulary of {}",
                self.text_vocab_size
            )));
        }
        let tok = tape.embed(self.tok_emb, ids);
        let pos_all = tape.param(self.text_pos);
        let pos = tape.slice_rows(pos_all, 0..ids.len());
        let x = tape.add(tok, pos);
        let ty = self.type_row(tape, tag.type_row());
        let x = tape.add_row(x, ty);
        let mask = tape.input(Array2::zeros((ids.len(), ids.len())));
        Ok(self.text_enc.apply(tape, x, mask))
    }

    /// Projects every bundle element into the common space and concatenates
    /// the rows in bundle order (question, objects, scene-graph text, OCR,
    /// knowledge). Object rows carry no position information, which is what
    /// makes the answerer indifferent to object order. With
    /// `with_sample_token` the learnable summary token is appended as one
    /// extra input row.
    pub fn embed_inputs<'p>(
        &self,
        tape: &mut Tape<'p>,
        bundle: &InputBundle,
        with_sample_token: bool,
    ) -> Result<EmbeddedInputs> {
        bundle.validate()?;
        let mut parts: Vec<NodeId> = Vec::new();
        let mut tags: Vec<ModalityTag> = Vec::new();

        if !bundle.question.is_empty() {
            parts.push(self.text_segment(tape, &bundle.question, ModalityTag::Question)?);
            tags.extend(std::iter::repeat_n(ModalityTag::Question, bundle.question.len()));
        }
        if !bundle.objects.is_empty() {
            let n = bundle.objects.len();
            let mut app = Array2::zeros((n, APP_DIM));
            let mut boxes = Array2::zeros((n, 4));
            for (i, o) in bundle.objects.iter().enumerate() {
                if o.appearance.len() != APP_DIM {
                    return Err(Error::data(format!(
                        "bundle {}: object appearance has dim {}, want {APP_DIM}",
                        bundle.sample_id,
                        o.appearance.len()
                    )));
                }
                for (c, &v) in o.appearance.iter().enumerate() {
                    app[[i, c]] = v;
                }
                for c in 0..4 {
                    boxes[[i, c]] = o.bbox[c];
                }
            }
            let app = tape.input(app);
            let boxes = tape.input(boxes);
            let wa = tape.param(self.obj_app);
            let wb = tape.param(self.obj_box);
            let a = tape.matmul(app, wa);
            let b = tape.matmul(boxes, wb);
            let x = tape.add(a, b);
            let bias = tape.param(self.obj_bias);
            let x = tape.add_row(x, bias);
            let x = self.obj_ln.apply(tape, x);
            let ty = self.type_row(tape, ModalityTag::Object.type_row());
            parts.push(tape.add_row(x, ty));
            tags.extend(std::iter::repeat_n(ModalityTag::Object, n));
        }
        if !bundle.sg_text.is_empty() {
            parts.push(self.text_segment(tape, &bundle.sg_text, ModalityTag::SgText)?);
            tags.extend(std::iter::repeat_n(ModalityTag::SgText, bundle.sg_text.len()));
        }
        let mut ocr_rows = None;
        if !bundle.ocr.is_empty() {
            let n = bundle.ocr.len();
            let mut lex = Array2::zeros((n, LEX_DIM));
            let mut reg = Array2::zeros((n, REG_DIM));
            let mut tri = Array2::zeros((n, TRI_DIM));
            let mut boxes = Array2::zeros((n, 4));
            for (i, o) in bundle.ocr.iter().enumerate() {
                if o.lexical.len() != LEX_DIM || o.region.len() != REG_DIM || o.trigram.len() != TRI_DIM {
                    return Err(Error::data(format!(
                        "bundle {}: OCR '{}' has feature dims {}/{}/{}, want {LEX_DIM}/{REG_DIM}/{TRI_DIM}",
                        bundle.sample_id,
                        o.token,
                        o.lexical.len(),
                        o.region.len(),
                        o.trigram.len()
                    )));
                }
                for (c, &v) in o.lexical.iter().enumerate() {
                    lex[[i, c]] = v;
                }
                for (c, &v) in o.region.iter().enumerate() {
                    reg[[i, c]] = v;
                }
                for (c, &v) in o.trigram.iter().enumerate() {
                    tri[[i, c]] = v;
                }
                for c in 0..4 {
                    boxes[[i, c]] = o.bbox[c];
                }
            }
            let lex = tape.input(lex);
            let reg = tape.input(reg);
            let tri = tape.input(tri);
            let boxes = tape.input(boxes);
            let wl = tape.param(self.ocr_lex);
            let wr = tape.param(self.ocr_reg);
            let wt = tape.param(self.ocr_tri);
            let wb = tape.param(self.ocr_box);
            let l = tape.matmul(lex, wl);
            let r = tape.matmul(reg, wr);
            let t = tape.matmul(tri, wt);
            let b = tape.matmul(boxes, wb);
            let x = tape.add(l, r);
            let x = tape.add(x, t);
            let x = tape.add(x, b);
            let bias = tape.param(self.ocr_bias);
            let x = tape.add_row(x, bias);
            let x = self.ocr_ln.apply(tape, x);
            let ty = self.type_row(tape, ModalityTag::Ocr.type_row());
            ocr_rows = Some(tags.len()..tags.len() + n);
            parts.push(tape.add_row(x, ty));
            tags.extend(std::iter::repeat_n(ModalityTag::Ocr, n));
        }
        if !bundle.knowledge.is_empty() {
            parts.push(self.text_segment(tape, &bundle.knowledge, ModalityTag::Knowledge)?);
            tags.extend(std::iter::repeat_n(ModalityTag::Knowledge, bundle.knowledge.len()));
        }
        if with_sample_token {
            parts.push(tape.param(self.sample_token));
            tags.push(ModalityTag::SampleToken);
        }
        let rows = tape.concat_rows(&parts);
        Ok(EmbeddedInputs { rows, tags, ocr_rows })
    }

    /// One row per decode step: the step's input word embedding (answer-word
    /// table or a copied OCR token's input row) plus step position and the
    /// decode type embedding.
    fn decode_rows<'p>(
        &self,
        tape: &mut Tape<'p>,
        embedded: &EmbeddedInputs,
        steps: &[StepInput],
    ) -> NodeId {
        let mut rows = Vec::with_capacity(steps.len());
        for (t, step) in steps.iter().enumerate() {
            let base = match step {
                StepInput::Begin => tape.embed(self.ans_emb, &[AnswerVocab::BEGIN]),
                StepInput::Vocab(w) => tape.embed(self.ans_emb, &[*w]),
                StepInput::OcrRow(j) => {
                    let range = embedded.ocr_rows.clone().expect("copy step without OCR rows");
                    tape.slice_rows(embedded.rows, range.start + j..range.start + j + 1)
                }
            };
            let pos_all = tape.param(self.dec_pos);
            let pos = tape.slice_rows(pos_all, t..t + 1);
            let x = tape.add(base, pos);
            let ty = self.type_row(tape, ModalityTag::DECODE_ROW);
            rows.push(tape.add(x, ty));
        }
        tape.concat_rows(&rows)
    }

    /// Fuses inputs plus `steps` decode rows and returns the per-step joint
    /// score matrix `[n_steps, |answer vocab| + |OCR|]`.
    fn joint_logits<'p>(
        &self,
        tape: &mut Tape<'p>,
        bundle: &InputBundle,
        steps: &[StepInput],
    ) -> Result<NodeId> {
        if steps.is_empty() || steps.len() > self.cfg.max_decode_steps {
            return Err(Error::data(format!(
                "{} decode steps outside 1..={}",
                steps.len(),
                self.cfg.max_decode_steps
            )));
        }
        let embedded = self.embed_inputs(tape, bundle, false)?;
        let dec = self.decode_rows(tape, &embedded, steps);
        let all = tape.concat_rows(&[embedded.rows, dec]);
        let n_in = embedded.len();
        let mask = tape.input(fusion_mask(n_in, steps.len()));
        let fused = self.fusion.apply(tape, all, mask);
        let dec_out = tape.slice_rows(fused, n_in..n_in + steps.len());
        let w = tape.param(self.cls_w);
        let b = tape.param(self.cls_b);
        let vocab_logits = tape.matmul(dec_out, w);
        let vocab_logits = tape.add_row(vocab_logits, b);
        match embedded.ocr_rows {
            Some(range) => {
                let ocr_out = tape.slice_rows(fused, range);
                let wp = tape.param(self.ptr_w);
                let q = tape.matmul(dec_out, wp);
                let kt = tape.transpose(ocr_out);
                let copy_scores = tape.matmul(q, kt);
                Ok(tape.concat_cols(&[vocab_logits, copy_scores]))
            }
            None => Ok(vocab_logits),
        }
    }

    /// Builds the teacher-forcing plan for a gold answer. Gold words found
    /// in the OCR list are supervised as copies (first matching index); the
    /// rest fall back to the answer vocabulary; a word in neither is
    /// unanswerable and rejected.
    fn teacher_forcing(&self, bundle: &InputBundle, answer_words: &[String]) -> Result<TeacherForcing> {
        if answer_words.is_empty() {
            return Err(Error::data(format!("bundle {}: empty gold answer", bundle.sample_id)));
        }
        let n_steps = answer_words.len() + 1;
        if n_steps > self.cfg.max_decode_steps {
            return Err(Error::data(format!(
                "bundle {}: answer needs {} decode steps, budget is {}",
                bundle.sample_id, n_steps, self.cfg.max_decode_steps
            )));
        }
        let v = self.cfg.answer_vocab.len();
        let mut steps = vec![StepInput::Begin];
        let mut targets = Vec::with_capacity(n_steps);
        let mut sources = Vec::with_capacity(answer_words.len());
        for word in answer_words {
            if let Some(j) = bundle.ocr.iter().position(|o| &o.token == word) {
                targets.push(v + j);
                sources.push(StepSource::OcrCopy(j));
                steps.push(StepInput::OcrRow(j));
            } else if let Some(id) = self.cfg.answer_vocab.id(word) {
                targets.push(id);
                sources.push(StepSource::Vocab);
                steps.push(StepInput::Vocab(id));
            } else {
                return Err(Error::data(format!(
                    "bundle {}: gold word '{word}' is neither in the answer vocabulary nor copyable",
                    bundle.sample_id
                )));
            }
        }
        // The last gold word feeds the closing step, whose target is END, so
        // `steps` (BEGIN + every gold word) and `targets` line up one-to-one.
        targets.push(AnswerVocab::END);
        Ok(TeacherForcing {
            steps,
            targets,
            sources,
            words: answer_words.to_vec(),
        })
    }

    /// Per-step mean answer-prediction loss for one sample under teacher
    /// forcing, scaled by `scale` (callers pass 1/batch for batch means).
    pub(crate) fn answer_loss_on_tape<'p>(
        &self,
        tape: &mut Tape<'p>,
        bundle: &InputBundle,
        answer_words: &[String],
        scale: f64,
    ) -> Result<NodeId> {
        let tf = self.teacher_forcing(bundle, answer_words)?;
        let joint = self.joint_logits(tape, bundle, &tf.steps)?;
        let weights = vec![1.0; tf.targets.len()];
        let ce = tape.cross_entropy(joint, &tf.targets, &weights);
        Ok(tape.scale(ce, scale / tf.targets.len() as f64))
    }

    /// Squared L2 norm of the step-0 joint scores — a label-free probe of
    /// how strongly the parameters shape the pre-softmax output.
    pub(crate) fn first_step_energy_on_tape<'p>(
        &self,
        tape: &mut Tape<'p>,
        bundle: &InputBundle,
    ) -> Result<NodeId> {
        let joint = self.joint_logits(tape, bundle, &[StepInput::Begin])?;
        Ok(tape.sum_squares(joint))
    }

    /// Teacher-forced decode: returns the gold words tagged with their
    /// supervised sources plus the raw joint score rows, one per step
    /// (answer words then the closing END step).
    pub fn pointer_decode_train(
        &self,
        bundle: &InputBundle,
        answer_words: &[String],
    ) -> Result<(AnswerDecode, Vec<Vec<f64>>)> {
        let tf = self.teacher_forcing(bundle, answer_words)?;
        let mut tape = Tape::new(&self.params);
        let joint = self.joint_logits(&mut tape, bundle, &tf.steps)?;
        let scores = tape
            .value(joint)
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect();
        let decode = AnswerDecode {
            words: tf.words,
            sources: tf.sources,
            stop: StopReason::End,
        };
        Ok((decode, scores))
    }

    /// Greedy auto-regressive decode: BEGIN feeds step 0, each step's argmax
    /// over the joint scores is emitted and fed to the next step, and
    /// decoding stops at END or the step cap.
    pub fn pointer_decode(&self, bundle: &InputBundle) -> Result<AnswerDecode> {
        let v = self.cfg.answer_vocab.len();
        let mut steps = vec![StepInput::Begin];
        let mut words = Vec::new();
        let mut sources = Vec::new();
        for _ in 0..self.cfg.max_decode_steps {
            let mut tape = Tape::new(&self.params);
            let joint = self.joint_logits(&mut tape, bundle, &steps)?;
            let scores = tape.value(joint);
            let last = scores.nrows() - 1;
            let mut best = 0;
            for j in 1..scores.ncols() {
                if scores[[last, j]] > scores[[last, best]] {
                    best = j;
                }
            }
            if best == AnswerVocab::END {
                return Ok(AnswerDecode { words, sources, stop: StopReason::End });
            }
            if best < v {
                words.push(self.cfg.answer_vocab.word(best).to_string());
                sources.push(StepSource::Vocab);
                steps.push(StepInput::Vocab(best));
            } else {
                let j = best - v;
                words.push(bundle.ocr[j].token.clone());
                sources.push(StepSource::OcrCopy(j));
                steps.push(StepInput::OcrRow(j));
            }
        }
        Ok(AnswerDecode { words, sources, stop: StopReason::StepCap })
    }

    /// Whole-sample embedding: the learnable summary token is appended to
    /// the inputs, fused with zero decode steps, and its enriched row is the
    /// representation (used for episodic-memory clustering).
    pub fn sample_representation(&self, bundle: &InputBundle) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let embedded = self.embed_inputs(&mut tape, bundle, true)?;
        let n = embedded.len();
        let mask = tape.input(fusion_mask(n, 0));
        let fused = self.fusion.apply(&mut tape, embedded.rows, mask);
        Ok(tape.value(fused).row(n - 1).to_vec())
    }

    /// Writes the model (and optionally the optimizer moments) to a binary
    /// checkpoint: magic, JSON metadata, then raw little-endian f64s.
    pub fn save(&self, path: &Path, optimizer: Option<&Adam>) -> Result<()> {
        let meta = CkptMeta {
            cfg: self.cfg.clone(),
            text_vocab_size: self.text_vocab_size,
            text_vocab_fingerprint: self.text_vocab_fingerprint.clone(),
            n_scalars: self.params.num_scalars(),
            has_optimizer: optimizer.is_some(),
        };
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        let io = |e| Error::io(path, e);
        w.write_all(MAGIC).map_err(io)?;
        let meta_json = serde_json::to_vec(&meta).expect("meta serializes");
        w.write_all(&(meta_json.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&meta_json).map_err(io)?;
        write_f64s(&mut w, &self.params.to_flat()).map_err(io)?;
        if let Some(opt) = optimizer {
            let (m, v, step) = opt.state_flat();
            write_f64s(&mut w, &m).map_err(io)?;
            write_f64s(&mut w, &v).map_err(io)?;
            w.write_all(&step.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Loads a checkpoint. When `expected_text_fingerprint` is given, a
    /// mismatch with the stored text-vocabulary fingerprint is a
    /// configuration error. Returns the model and, if present,
    /// `(m, v, step)` optimizer moments.
    #[allow(clippy::type_complexity)]
    pub fn load(
        path: &Path,
        expected_text_fingerprint: Option<&str>,
    ) -> Result<(UniVqaModel, Option<(Vec<f64>, Vec<f64>, u64)>)> {
        let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let io = |e| Error::io(path, e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(Error::data(format!("{}: not an answerer checkpoint", path.display())));
        }
        let mut len8 = [0u8; 8];
        r.read_exact(&mut len8).map_err(io)?;
        let meta_len = u64::from_le_bytes(len8) as usize;
        let mut meta_json = vec![0u8; meta_len];
        r.read_exact(&mut meta_json).map_err(io)?;
        let meta: CkptMeta = serde_json::from_slice(&meta_json)
            .map_err(|e| Error::data(format!("{}: bad checkpoint metadata: {e}", path.display())))?;
        if let Some(fp) = expected_text_fingerprint {
            if fp != meta.text_vocab_fingerprint {
                return Err(Error::config(format!(
                    "checkpoint was built for a different text vocabulary ({} != {fp})",
                    meta.text_vocab_fingerprint
                )));
            }
        }
        let mut rng = crate::rng::stream(0, "vqa-rebuild", 0);
        let mut model = Self::init(meta.cfg, meta.text_vocab_size, meta.text_vocab_fingerprint, &mut rng)?;
        if model.params.num_scalars() != meta.n_scalars {
            return Err(Error::data(format!(
                "{}: checkpoint holds {} scalars, model needs {}",
                path.display(),
                meta.n_scalars,
                model.params.num_scalars()
            )));
        }
        let flat = read_f64s(&mut r, meta.n_scalars).map_err(io)?;
        model.params.load_flat(&flat);
        let opt = if meta.has_optimizer {
            let m = read_f64s(&mut r, meta.n_scalars).map_err(io)?;
            let v = read_f64s(&mut r, meta.n_scalars).map_err(io)?;
            let mut step8 = [0u8; 8];
            r.read_exact(&mut step8).map_err(io)?;
            Some((m, v, u64::from_le_bytes(step8)))
        } else {
            None
        };
        Ok((model, opt))
    }
}

const MAGIC: &[u8; 8] = b"SGRPVQA1";

#[derive(Serialize, Deserialize)]
struct CkptMeta {
    cfg: ModelConfig,
    text_vocab_size: usize,
    text_vocab_fingerprint: String,
    n_scalars: usize,
    has_optimizer: bool,
}
