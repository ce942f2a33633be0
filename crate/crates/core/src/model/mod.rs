//! Differentiable encoder-decoder models over the autodiff tape.
//!
//! Two architectures share one parameter registry: a pre-norm Transformer and
//! a unidirectional LSTM with optional additive attention. Parameters are
//! organized into five named groups (`src_embedding`, `tgt_embedding`,
//! `encoder`, `decoder`, `output_projection`); the transfer experiments
//! freeze and thaw whole groups.

mod checkpoint;
mod decode;
mod lstm;
mod transformer;
pub mod vocab;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use decode::{greedy_decode, greedy_decode_batch};
pub use vocab::{Vocab, BOS, EOS, PAD};

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("token id {id} outside vocabulary of size {vocab}")]
    VocabOverflow { id: u32, vocab: usize },
    #[error("sequence length {len} exceeds max positions {max}")]
    LengthOverflow { len: usize, max: usize },
    #[error("freeze mask leaves no trainable parameter group")]
    AllFrozen,
    #[error("unknown token '{0}'")]
    UnknownToken(String),
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Lstm,
    Transformer,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arch::Lstm => write!(f, "lstm"),
            Arch::Transformer => write!(f, "transformer"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub embedding_size: usize,
    /// LSTM hidden size or Transformer feed-forward size.
    pub hidden_or_ffn_size: usize,
    /// Attention heads (Transformer only).
    pub heads: usize,
    pub layers: usize,
    pub dropout_rate: f64,
    /// Additive attention switch (LSTM only).
    pub attention_enabled: bool,
    pub max_positions: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
}

impl ModelConfig {
    /// Best SCAN Transformer hyperparameters: 128/256, 2 heads, 3 layers.
    pub fn scan_transformer(src_vocab: usize, tgt_vocab: usize) -> Self {
        Self {
            arch: Arch::Transformer,
            embedding_size: 128,
            hidden_or_ffn_size: 256,
            heads: 2,
            layers: 3,
            dropout_rate: 0.1,
            attention_enabled: true,
            max_positions: 128,
            src_vocab,
            tgt_vocab,
        }
    }

    /// Best SCAN LSTM hyperparameters: embedding 128, hidden 64, 2 layers.
    pub fn scan_lstm(src_vocab: usize, tgt_vocab: usize) -> Self {
        Self {
            arch: Arch::Lstm,
            embedding_size: 128,
            hidden_or_ffn_size: 64,
            heads: 1,
            layers: 2,
            dropout_rate: 0.1,
            attention_enabled: true,
            max_positions: 128,
            src_vocab,
            tgt_vocab,
        }
    }

    /// Best Colors Transformer hyperparameters: 32/32, 4 heads, 2 layers.
    pub fn colors_transformer(src_vocab: usize, tgt_vocab: usize) -> Self {
        Self {
            arch: Arch::Transformer,
            embedding_size: 32,
            hidden_or_ffn_size: 32,
            heads: 4,
            layers: 2,
            dropout_rate: 0.1,
            attention_enabled: true,
            max_positions: 64,
            src_vocab,
            tgt_vocab,
        }
    }

    /// Best Colors LSTM hyperparameters: embedding 32, hidden 64, 2 layers.
    pub fn colors_lstm(src_vocab: usize, tgt_vocab: usize) -> Self {
        Self {
            arch: Arch::Lstm,
            embedding_size: 32,
            hidden_or_ffn_size: 64,
            heads: 1,
            layers: 2,
            dropout_rate: 0.1,
            attention_enabled: true,
            max_positions: 64,
            src_vocab,
            tgt_vocab,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.embedding_size == 0 || self.layers == 0 || self.hidden_or_ffn_size == 0 {
            return Err(EngineError::InvalidConfig(
                "sizes and layer count must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(EngineError::InvalidConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.arch == Arch::Transformer
            && (self.heads == 0 || self.embedding_size % self.heads != 0)
        {
            return Err(EngineError::InvalidConfig(format!(
                "embedding size {} not divisible by {} heads",
                self.embedding_size, self.heads
            )));
        }
        if self.src_vocab < 3 || self.tgt_vocab < 3 {
            return Err(EngineError::InvalidConfig(
                "vocabularies must include the special tokens".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    SrcEmbedding,
    TgtEmbedding,
    Encoder,
    Decoder,
    OutputProjection,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::SrcEmbedding,
        ParamGroup::TgtEmbedding,
        ParamGroup::Encoder,
        ParamGroup::Decoder,
        ParamGroup::OutputProjection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::SrcEmbedding => "src_embedding",
            ParamGroup::TgtEmbedding => "tgt_embedding",
            ParamGroup::Encoder => "encoder",
            ParamGroup::Decoder => "decoder",
            ParamGroup::OutputProjection => "output_projection",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.name() == name)
    }
}

/// Per-group trainability flags; `true` means the group keeps training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeMask {
    pub src_embedding: bool,
    pub tgt_embedding: bool,
    pub encoder: bool,
    pub decoder: bool,
    pub output_projection: bool,
}

impl Default for FreezeMask {
    fn default() -> Self {
        Self::all_trainable()
    }
}

impl FreezeMask {
    pub fn all_trainable() -> Self {
        Self {
            src_embedding: true,
            tgt_embedding: true,
            encoder: true,
            decoder: true,
            output_projection: true,
        }
    }

    /// The transfer-experiment mask: encoder and decoder frozen, embedding
    /// and output layers free to move.
    pub fn freeze_encoder_decoder() -> Self {
        Self {
            src_embedding: true,
            tgt_embedding: true,
            encoder: false,
            decoder: false,
            output_projection: true,
        }
    }

    pub fn all_frozen() -> Self {
        Self {
            src_embedding: false,
            tgt_embedding: false,
            encoder: false,
            decoder: false,
            output_projection: false,
        }
    }

    pub fn trainable(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::SrcEmbedding => self.src_embedding,
            ParamGroup::TgtEmbedding => self.tgt_embedding,
            ParamGroup::Encoder => self.encoder,
            ParamGroup::Decoder => self.decoder,
            ParamGroup::OutputProjection => self.output_projection,
        }
    }

    pub fn any_trainable(&self) -> bool {
        ParamGroup::ALL.into_iter().any(|g| self.trainable(g))
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
    pub trainable: bool,
}

/// Which embedding table [`Seq2SeqModel::token_embedding`] reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSide {
    Source,
    Target,
}

/// One training batch: per-sequence source ids, teacher-forcing decoder
/// inputs, and gold next-token targets. PAD entries are stripped when the
/// batch is packed, so padded and unpadded encodings train identically.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub src: Vec<Vec<u32>>,
    pub tgt_in: Vec<Vec<u32>>,
    pub tgt_out: Vec<Vec<u32>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// A forward pass: the tape, the packed per-position logits, the scalar
/// mean cross-entropy (when targets were supplied), and the tape handle of
/// every parameter so gradients can be read back.
pub struct ForwardPass {
    pub tape: Tape,
    pub logits: Var,
    pub loss: Option<Var>,
    pub param_vars: Vec<Var>,
}

/// Gradients aligned with the model's parameter registry; `None` for frozen
/// parameters.
pub struct GradSet {
    pub by_param: Vec<Option<Tensor>>,
}

pub struct Seq2SeqModel {
    config: ModelConfig,
    src_vocab: Vocab,
    tgt_vocab: Vocab,
    params: Vec<Param>,
}

impl Seq2SeqModel {
    /// Deterministically initializes a model: matrices `uniform(-a, a)` with
    /// `a = sqrt(6 / (fan_in + fan_out))`, zero biases, unit layer-norm
    /// gains, embeddings `normal(0, d^-0.5)`. Parameters are drawn in
    /// registry order from one seeded stream.
    pub fn build(
        config: ModelConfig,
        src_vocab: Vocab,
        tgt_vocab: Vocab,
        seed: u64,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        if config.src_vocab != src_vocab.len() || config.tgt_vocab != tgt_vocab.len() {
            return Err(EngineError::InvalidConfig(format!(
                "config vocab sizes ({}, {}) disagree with vocabularies ({}, {})",
                config.src_vocab,
                config.tgt_vocab,
                src_vocab.len(),
                tgt_vocab.len()
            )));
        }
        use rand::SeedableRng;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let shapes = match config.arch {
            Arch::Transformer => transformer::param_shapes(&config),
            Arch::Lstm => lstm::param_shapes(&config),
        };
        let params = shapes
            .into_iter()
            .map(|(name, group, kind, rows, cols)| Param {
                value: init_tensor(kind, rows, cols, &mut rng),
                name,
                group,
                trainable: true,
            })
            .collect();
        Ok(Self {
            config,
            src_vocab,
            tgt_vocab,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn src_vocab(&self) -> &Vocab {
        &self.src_vocab
    }

    pub fn tgt_vocab(&self) -> &Vocab {
        &self.tgt_vocab
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub(crate) fn param_named(&self, name: &str) -> &Tensor {
        &self
            .params
            .iter()
            .find(|p| p.name == name)
            .unwrap_or_else(|| panic!("parameter {name} missing"))
            .value
    }

    /// Sets per-group trainability. Values are untouched.
    pub fn apply_freeze_mask(&mut self, mask: FreezeMask) -> Result<(), EngineError> {
        if !mask.any_trainable() {
            return Err(EngineError::AllFrozen);
        }
        for p in &mut self.params {
            p.trainable = mask.trainable(p.group);
        }
        Ok(())
    }

    pub fn freeze_state(&self) -> FreezeMask {
        let trainable = |g: ParamGroup| {
            self.params
                .iter()
                .filter(|p| p.group == g)
                .all(|p| p.trainable)
        };
        FreezeMask {
            src_embedding: trainable(ParamGroup::SrcEmbedding),
            tgt_embedding: trainable(ParamGroup::TgtEmbedding),
            encoder: trainable(ParamGroup::Encoder),
            decoder: trainable(ParamGroup::Decoder),
            output_projection: trainable(ParamGroup::OutputProjection),
        }
    }

    /// The current embedding row of a token.
    pub fn token_embedding(&self, side: EmbeddingSide, id: u32) -> Result<Vec<f64>, EngineError> {
        let (table, vocab) = match side {
            EmbeddingSide::Source => (self.param_named("src_embedding.weight"), &self.src_vocab),
            EmbeddingSide::Target => (self.param_named("tgt_embedding.weight"), &self.tgt_vocab),
        };
        if id as usize >= vocab.len() {
            return Err(EngineError::VocabOverflow {
                id,
                vocab: vocab.len(),
            });
        }
        Ok(table.row(id as usize).to_vec())
    }

    pub fn token_embedding_of(
        &self,
        side: EmbeddingSide,
        token: &str,
    ) -> Result<Vec<f64>, EngineError> {
        let vocab = match side {
            EmbeddingSide::Source => &self.src_vocab,
            EmbeddingSide::Target => &self.tgt_vocab,
        };
        let id = vocab
            .id_of(token)
            .ok_or_else(|| EngineError::UnknownToken(token.to_string()))?;
        self.token_embedding(side, id)
    }

    /// Grows the vocabularies for a finetuning split. New source tokens get
    /// freshly initialized embedding rows; new target tokens get fresh
    /// embedding rows plus fresh output-projection columns. Existing
    /// parameters keep their exact values.
    pub fn extend_vocab(
        &mut self,
        new_src: &[String],
        new_tgt: &[String],
        seed: u64,
    ) -> (usize, usize) {
        use rand::SeedableRng;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let added_src = self.src_vocab.extend(new_src.iter());
        let added_tgt = self.tgt_vocab.extend(new_tgt.iter());
        let d = self.config.embedding_size;

        if added_src > 0 {
            let extra = init_tensor(InitKind::Embedding, added_src, d, &mut rng);
            grow_rows(self.param_mut_named("src_embedding.weight"), &extra);
            self.config.src_vocab += added_src;
        }
        if added_tgt > 0 {
            let extra = init_tensor(InitKind::Embedding, added_tgt, d, &mut rng);
            grow_rows(self.param_mut_named("tgt_embedding.weight"), &extra);

            let out_in = self.param_named("output_projection.weight").rows();
            let extra_cols = init_tensor(InitKind::Matrix, out_in, added_tgt, &mut rng);
            grow_cols(self.param_mut_named("output_projection.weight"), &extra_cols);
            grow_cols(
                self.param_mut_named("output_projection.bias"),
                &Tensor::zeros(1, added_tgt),
            );
            self.config.tgt_vocab += added_tgt;
        }
        (added_src, added_tgt)
    }

    fn param_mut_named(&mut self, name: &str) -> &mut Tensor {
        &mut self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .unwrap_or_else(|| panic!("parameter {name} missing"))
            .value
    }

    fn check_ids(&self, ids: &[u32], vocab_len: usize) -> Result<(), EngineError> {
        if ids.len() > self.config.max_positions {
            return Err(EngineError::LengthOverflow {
                len: ids.len(),
                max: self.config.max_positions,
            });
        }
        for &id in ids {
            if id as usize >= vocab_len {
                return Err(EngineError::VocabOverflow {
                    id,
                    vocab: vocab_len,
                });
            }
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Batch) -> Result<(), EngineError> {
        for s in &batch.src {
            self.check_ids(s, self.src_vocab.len())?;
        }
        for t in &batch.tgt_in {
            self.check_ids(t, self.tgt_vocab.len())?;
        }
        for t in &batch.tgt_out {
            self.check_ids(t, self.tgt_vocab.len())?;
        }
        Ok(())
    }

    /// Teacher-forced forward pass over a batch. Targets are optional; when
    /// present the mean token cross-entropy over non-PAD positions is
    /// recorded on the tape.
    pub fn forward_batch(
        &self,
        batch: &Batch,
        train_mode: bool,
        rng: Option<&mut ChaCha12Rng>,
    ) -> Result<ForwardPass, EngineError> {
        if batch.is_empty() {
            return Err(EngineError::InvalidConfig("empty batch".into()));
        }
        self.check_batch(batch)?;
        let mut dropout = DropoutCtx::new(
            if train_mode { self.config.dropout_rate } else { 0.0 },
            rng,
        );
        match self.config.arch {
            Arch::Transformer => transformer::forward(self, batch, &mut dropout),
            Arch::Lstm => lstm::forward(self, batch, &mut dropout),
        }
    }

    /// Per-position next-token logits for one teacher-forced sequence:
    /// shape `[len(tgt_prefix), tgt_vocab]`. The prefix is consumed as the
    /// decoder input exactly as given (callers prepend BOS).
    pub fn forward_logits(
        &self,
        src: &[u32],
        tgt_prefix: &[u32],
        train_mode: bool,
        rng: Option<&mut ChaCha12Rng>,
    ) -> Result<Tensor, EngineError> {
        let batch = Batch {
            src: vec![src.to_vec()],
            tgt_in: vec![tgt_prefix.to_vec()],
            tgt_out: vec![],
        };
        let pass = self.forward_batch(&batch, train_mode, rng)?;
        Ok(pass.tape.value(pass.logits).clone())
    }

    /// Gradients of the mean cross-entropy over a batch, for trainable
    /// parameters only, plus the loss value.
    pub fn compute_gradients(
        &self,
        batch: &Batch,
        train_mode: bool,
        rng: Option<&mut ChaCha12Rng>,
    ) -> Result<(GradSet, f64), EngineError> {
        assert_eq!(
            batch.tgt_in.len(),
            batch.tgt_out.len(),
            "teacher forcing needs aligned targets"
        );
        let pass = self.forward_batch(batch, train_mode, rng)?;
        let loss_var = pass.loss.expect("targets supplied");
        let loss = pass.tape.value(loss_var).item();
        if !loss.is_finite() {
            return Err(EngineError::NonFiniteLoss);
        }
        let mut grads = pass.tape.backward(loss_var);
        let by_param = self
            .params
            .iter()
            .zip(&pass.param_vars)
            .map(|(p, &var)| {
                if p.trainable {
                    Some(
                        grads
                            .take(var)
                            .unwrap_or_else(|| Tensor::zeros(p.value.rows(), p.value.cols())),
                    )
                } else {
                    None
                }
            })
            .collect();
        Ok((GradSet { by_param }, loss))
    }

    /// Pushes every parameter onto a tape, in registry order.
    pub(crate) fn push_params(&self, tape: &mut Tape) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.clone()))
            .collect()
    }

    pub(crate) fn var_named(&self, vars: &[Var], name: &str) -> Var {
        let idx = self
            .params
            .iter()
            .position(|p| p.name == name)
            .unwrap_or_else(|| panic!("parameter {name} missing"));
        vars[idx]
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum InitKind {
    Matrix,
    Bias,
    Gain,
    Embedding,
}

fn init_tensor(kind: InitKind, rows: usize, cols: usize, rng: &mut ChaCha12Rng) -> Tensor {
    match kind {
        InitKind::Matrix => {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| rng.random_range(-a..a))
                .collect();
            Tensor::from_vec(rows, cols, data)
        }
        InitKind::Bias => Tensor::zeros(rows, cols),
        InitKind::Gain => Tensor::from_vec(rows, cols, vec![1.0; rows * cols]),
        InitKind::Embedding => {
            let std = (cols as f64).powf(-0.5);
            let normal = Normal::new(0.0, std).expect("valid std");
            let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
            Tensor::from_vec(rows, cols, data)
        }
    }
}

fn grow_rows(t: &mut Tensor, extra: &Tensor) {
    assert_eq!(t.cols(), extra.cols());
    let mut data = Vec::with_capacity((t.rows() + extra.rows()) * t.cols());
    data.extend_from_slice(t.data());
    data.extend_from_slice(extra.data());
    *t = Tensor::from_vec(t.rows() + extra.rows(), t.cols(), data);
}

fn grow_cols(t: &mut Tensor, extra: &Tensor) {
    assert_eq!(t.rows(), extra.rows());
    let mut out = Tensor::zeros(t.rows(), t.cols() + extra.cols());
    for r in 0..t.rows() {
        out.row_mut(r)[..t.cols()].copy_from_slice(t.row(r));
        out.row_mut(r)[t.cols()..].copy_from_slice(extra.row(r));
    }
    *t = out;
}

/// Dropout mask source for one forward pass. Masks are drawn sequentially
/// from the training RNG, so a fixed seed reproduces the exact run.
pub(crate) struct DropoutCtx<'a> {
    rate: f64,
    rng: Option<&'a mut ChaCha12Rng>,
}

impl<'a> DropoutCtx<'a> {
    pub(crate) fn disabled() -> Self {
        Self {
            rate: 0.0,
            rng: None,
        }
    }

    fn new(rate: f64, rng: Option<&'a mut ChaCha12Rng>) -> Self {
        Self {
            rate: if rng.is_some() { rate } else { 0.0 },
            rng,
        }
    }

    /// Rate and a fresh stream seed for attention-weight dropout, when
    /// training with dropout.
    pub(crate) fn attention_dropout(&mut self) -> Option<(f64, u64)> {
        if self.rate <= 0.0 {
            return None;
        }
        let rng = self.rng.as_mut().expect("rate > 0 implies rng");
        Some((self.rate, rng.random::<u64>()))
    }

    pub(crate) fn apply(&mut self, tape: &mut Tape, x: Var) -> Var {
        if self.rate <= 0.0 {
            return x;
        }
        let rng = self.rng.as_mut().expect("rate > 0 implies rng");
        let (rows, cols) = tape.value(x).shape();
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let data = (0..rows * cols)
            .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
            .collect();
        tape.const_mul(x, Tensor::from_vec(rows, cols, data))
    }
}

/// Sinusoidal positional encoding rows for positions `0..len`.
pub(crate) fn positional_rows(len: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(len, d);
    for pos in 0..len {
        let row = t.row_mut(pos);
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            row[2 * i] = angle.sin();
            row[2 * i + 1] = angle.cos();
        }
        if d % 2 == 1 {
            let i = d / 2;
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            row[d - 1] = angle.sin();
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_vocabs() -> (Vocab, Vocab) {
        (
            Vocab::from_tokens(["a", "b", "c"]),
            Vocab::from_tokens(["X", "Y"]),
        )
    }

    fn tiny_config(arch: Arch, src: usize, tgt: usize) -> ModelConfig {
        ModelConfig {
            arch,
            embedding_size: 8,
            hidden_or_ffn_size: 12,
            heads: 2,
            layers: 2,
            dropout_rate: 0.0,
            attention_enabled: true,
            max_positions: 16,
            src_vocab: src,
            tgt_vocab: tgt,
        }
    }

    #[test]
    fn invalid_head_split_rejected() {
        let (sv, tv) = tiny_vocabs();
        let mut cfg = tiny_config(Arch::Transformer, sv.len(), tv.len());
        cfg.heads = 3;
        assert!(matches!(
            Seq2SeqModel::build(cfg, sv, tv, 0),
            Err(EngineError::InvalidConfig(_))
        ));
    }

    #[test]
    fn build_is_deterministic_and_embeddings_distinct() {
        let (sv, tv) = tiny_vocabs();
        let cfg = tiny_config(Arch::Transformer, sv.len(), tv.len());
        let m1 = Seq2SeqModel::build(cfg.clone(), sv.clone(), tv.clone(), 0).unwrap();
        let m2 = Seq2SeqModel::build(cfg, sv, tv, 0).unwrap();
        for (a, b) in m1.params().iter().zip(m2.params()) {
            assert_eq!(a.value.data(), b.value.data(), "{}", a.name);
        }
        let e_a = m1.token_embedding_of(EmbeddingSide::Source, "a").unwrap();
        let e_b = m1.token_embedding_of(EmbeddingSide::Source, "b").unwrap();
        assert_eq!(e_a.len(), 8);
        assert_ne!(e_a, e_b);
    }

    #[test]
    fn freeze_mask_round_trip_and_all_frozen_error() {
        let (sv, tv) = tiny_vocabs();
        let cfg = tiny_config(Arch::Lstm, sv.len(), tv.len());
        let mut m = Seq2SeqModel::build(cfg, sv, tv, 1).unwrap();
        m.apply_freeze_mask(FreezeMask::freeze_encoder_decoder())
            .unwrap();
        let state = m.freeze_state();
        assert!(!state.encoder && !state.decoder);
        assert!(state.src_embedding && state.tgt_embedding && state.output_projection);
        assert!(matches!(
            m.apply_freeze_mask(FreezeMask::all_frozen()),
            Err(EngineError::AllFrozen)
        ));
    }

    #[test]
    fn extend_vocab_keeps_old_rows_bit_identical() {
        let (sv, tv) = tiny_vocabs();
        let cfg = tiny_config(Arch::Transformer, sv.len(), tv.len());
        let mut m = Seq2SeqModel::build(cfg, sv, tv, 2).unwrap();
        let before_src = m.param_named("src_embedding.weight").clone();
        let before_out = m.param_named("output_projection.weight").clone();
        let (ns, nt) = m.extend_vocab(&["zz".into()], &["ZZ".into()], 7);
        assert_eq!((ns, nt), (1, 1));
        let after_src = m.param_named("src_embedding.weight");
        assert_eq!(after_src.rows(), before_src.rows() + 1);
        for r in 0..before_src.rows() {
            assert_eq!(after_src.row(r), before_src.row(r));
        }
        let after_out = m.param_named("output_projection.weight");
        assert_eq!(after_out.cols(), before_out.cols() + 1);
        for r in 0..before_out.rows() {
            assert_eq!(
                &after_out.row(r)[..before_out.cols()],
                before_out.row(r)
            );
        }
        assert!(m.src_vocab().contains("zz"));
        assert!(m.tgt_vocab().contains("ZZ"));
    }
}
