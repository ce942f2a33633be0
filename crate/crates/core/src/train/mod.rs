//! Teacher-forced training on splits: Adam over shuffled minibatches,
//! optional freeze-masked finetuning, and multi-seed replicate runs.

mod adam;

pub use adam::Adam;

use crate::dataset::{DatasetProvenance, ForgeError, Split};
use crate::eval::exact_match_accuracy;
use crate::grammar::Example;
use crate::model::{
    Batch, EngineError, FreezeMask, ModelConfig, Seq2SeqModel, Vocab, BOS, EOS,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Forge(#[from] ForgeError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
}

/// Which parameters the run keeps at the end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSelection {
    /// Keep the last-epoch model (default; no selection set is consulted).
    LastEpoch,
    /// Carve a validation fraction out of train and keep the epoch with the
    /// lowest validation loss.
    BestValidation { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Mirrors the model config's dropout; recorded here for provenance.
    pub dropout: f64,
    pub seed: u64,
    pub shuffle_each_epoch: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub selection: ModelSelection,
}

impl TrainConfig {
    pub fn new(learning_rate: f64, batch_size: usize, epochs: usize, dropout: f64) -> Self {
        Self {
            learning_rate,
            batch_size,
            epochs,
            dropout,
            seed: 0,
            shuffle_each_epoch: true,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            selection: ModelSelection::LastEpoch,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate <= 0.0 {
            return Err(TrainError::InvalidConfig("learning rate must be > 0".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::InvalidConfig(
                "batch size and epochs must be >= 1".into(),
            ));
        }
        if let ModelSelection::BestValidation { fraction } = self.selection {
            if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
                return Err(TrainError::InvalidConfig(format!(
                    "validation fraction {fraction} outside (0, 1)"
                )));
            }
        }
        Ok(())
    }
}

/// Everything a run leaves behind: provenance, the loss trajectory, the
/// final exact-match test accuracy, and wall-clock seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: DatasetProvenance,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub per_epoch_loss: Vec<f64>,
    pub per_epoch_validation_loss: Option<Vec<f64>>,
    pub final_test_accuracy: Option<f64>,
    pub train_size: usize,
    pub test_size: usize,
    pub wall_clock_secs: f64,
}

/// Vocabularies over all tokens of a split (inputs and outputs of both
/// sides, so evaluation never meets an unknown token).
pub fn split_vocabs(split: &Split) -> (Vocab, Vocab) {
    let mut src_tokens = Vec::new();
    let mut tgt_tokens = Vec::new();
    for e in split.train.iter().chain(&split.test) {
        src_tokens.extend(e.input.tokens().iter().cloned());
        tgt_tokens.extend(e.output.tokens().iter().cloned());
    }
    (Vocab::from_tokens(src_tokens), Vocab::from_tokens(tgt_tokens))
}

/// Fills a config template's vocabulary sizes for a concrete split.
pub fn fit_config(template: &ModelConfig, src: &Vocab, tgt: &Vocab) -> ModelConfig {
    ModelConfig {
        src_vocab: src.len(),
        tgt_vocab: tgt.len(),
        ..template.clone()
    }
}

/// Greedy-decode budget: 1 + the longest training target, times 1.5.
pub fn max_decode_len(split: &Split) -> usize {
    let longest = split
        .train
        .iter()
        .map(|e| e.output.tokens().len())
        .max()
        .unwrap_or(8);
    (((1 + longest) as f64) * 1.5).ceil() as usize
}

type EncodedExample = (Vec<u32>, Vec<u32>, Vec<u32>);

fn encode_examples(
    examples: &[Example],
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
) -> Result<Vec<EncodedExample>, TrainError> {
    examples
        .iter()
        .map(|e| {
            let mut src = src_vocab.encode(e.input.tokens()).ok_or_else(|| {
                TrainError::InvalidConfig(format!("unencodable input '{}'", e.input))
            })?;
            src.push(EOS);
            let out = tgt_vocab.encode(e.output.tokens()).ok_or_else(|| {
                TrainError::InvalidConfig(format!("unencodable output '{}'", e.output))
            })?;
            let mut tgt_in = vec![BOS];
            tgt_in.extend(&out);
            let mut tgt_out = out;
            tgt_out.push(EOS);
            Ok((src, tgt_in, tgt_out))
        })
        .collect()
}

/// Trains a model on a split: `epochs` passes of teacher-forced
/// cross-entropy Adam steps over shuffled minibatches. Records per-epoch
/// mean loss (token-weighted) and ends with exact-match accuracy on the
/// split's test set.
pub fn train(
    model: &mut Seq2SeqModel,
    split: &Split,
    config: &TrainConfig,
) -> Result<RunRecord, TrainError> {
    config.validate()?;
    let started = Instant::now();
    let src_vocab = model.src_vocab().clone();
    let tgt_vocab = model.tgt_vocab().clone();
    let encoded = encode_examples(&split.train, &src_vocab, &tgt_vocab)?;
    if encoded.is_empty() {
        return Err(TrainError::InvalidConfig("empty training set".into()));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let (train_idx, val_idx): (Vec<usize>, Vec<usize>) = match config.selection {
        ModelSelection::LastEpoch => ((0..encoded.len()).collect(), Vec::new()),
        ModelSelection::BestValidation { fraction } => {
            let mut idx: Vec<usize> = (0..encoded.len()).collect();
            idx.shuffle(&mut rng);
            let n_val = ((encoded.len() as f64) * fraction).round().max(1.0) as usize;
            let val = idx.split_off(encoded.len() - n_val.min(encoded.len() - 1));
            (idx, val)
        }
    };

    let mut adam = Adam::new(
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.epsilon,
        model.params(),
    );
    let mut order: Vec<usize> = train_idx.clone();
    let mut per_epoch_loss = Vec::with_capacity(config.epochs);
    let mut per_epoch_val = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, Vec<crate::tensor::Tensor>)> = None;

    for epoch in 0..config.epochs {
        if config.shuffle_each_epoch {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut tokens = 0usize;
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = Batch {
                src: chunk.iter().map(|&i| encoded[i].0.clone()).collect(),
                tgt_in: chunk.iter().map(|&i| encoded[i].1.clone()).collect(),
                tgt_out: chunk.iter().map(|&i| encoded[i].2.clone()).collect(),
            };
            let n_tokens: usize = batch.tgt_out.iter().map(|t| t.len()).sum();
            let (grads, loss) = model
                .compute_gradients(&batch, true, Some(&mut rng))
                .map_err(|e| match e {
                    EngineError::NonFiniteLoss => TrainError::NonFiniteLoss {
                        epoch,
                        batch: batch_no,
                    },
                    other => TrainError::Engine(other),
                })?;
            adam.step(model.params_mut(), &grads);
            loss_sum += loss * n_tokens as f64;
            tokens += n_tokens;
        }
        per_epoch_loss.push(loss_sum / tokens.max(1) as f64);

        if !val_idx.is_empty() {
            let vloss = mean_loss(model, &encoded, &val_idx, config.batch_size)?;
            per_epoch_val.push(vloss);
            let better = best.as_ref().map(|(b, _)| vloss < *b).unwrap_or(true);
            if better {
                best = Some((
                    vloss,
                    model.params().iter().map(|p| p.value.clone()).collect(),
                ));
            }
        }
    }

    if let Some((_, snapshot)) = best {
        for (p, s) in model.params_mut().iter_mut().zip(snapshot) {
            p.value = s;
        }
    }

    let final_test_accuracy = if split.test.is_empty() {
        None
    } else {
        Some(exact_match_accuracy(
            model,
            &split.test,
            max_decode_len(split),
        ))
    };

    Ok(RunRecord {
        dataset: split.provenance.clone(),
        model: model.config().clone(),
        train: config.clone(),
        seed: config.seed,
        per_epoch_loss,
        per_epoch_validation_loss: if per_epoch_val.is_empty() {
            None
        } else {
            Some(per_epoch_val)
        },
        final_test_accuracy,
        train_size: split.train.len(),
        test_size: split.test.len(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

fn mean_loss(
    model: &Seq2SeqModel,
    encoded: &[EncodedExample],
    idx: &[usize],
    batch_size: usize,
) -> Result<f64, TrainError> {
    let mut loss_sum = 0.0;
    let mut tokens = 0usize;
    for chunk in idx.chunks(batch_size) {
        let batch = Batch {
            src: chunk.iter().map(|&i| encoded[i].0.clone()).collect(),
            tgt_in: chunk.iter().map(|&i| encoded[i].1.clone()).collect(),
            tgt_out: chunk.iter().map(|&i| encoded[i].2.clone()).collect(),
        };
        let n: usize = batch.tgt_out.iter().map(|t| t.len()).sum();
        let pass = model.forward_batch(&batch, false, None)?;
        loss_sum += pass.tape.value(pass.loss.expect("targets supplied")).item() * n as f64;
        tokens += n;
    }
    Ok(loss_sum / tokens.max(1) as f64)
}

/// Finetunes a trained model on a new split under a freeze mask. Tokens the
/// model has never seen get freshly initialized embedding/output rows (drawn
/// from the finetune seed); frozen tensors are bit-identical afterwards.
pub fn finetune(
    model: &mut Seq2SeqModel,
    split: &Split,
    config: &TrainConfig,
    mask: FreezeMask,
) -> Result<RunRecord, TrainError> {
    model.apply_freeze_mask(mask)?;
    let (src_vocab, tgt_vocab) = split_vocabs(split);
    let new_src: Vec<String> = src_vocab
        .tokens()
        .iter()
        .filter(|t| !model.src_vocab().contains(t))
        .cloned()
        .collect();
    let new_tgt: Vec<String> = tgt_vocab
        .tokens()
        .iter()
        .filter(|t| !model.tgt_vocab().contains(t))
        .cloned()
        .collect();
    model.extend_vocab(&new_src, &new_tgt, config.seed);
    train(model, split, config)
}

/// Outcome of one seed of a replicate run.
#[derive(Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub result: Result<RunRecord, TrainError>,
}

impl SeedRun {
    pub fn record(&self) -> Option<&RunRecord> {
        self.result.as_ref().ok()
    }
}

/// Runs `n_seeds` independent replicates: seed `s` draws its own dataset
/// sample (via the builder), its own model initialization, and its own
/// shuffle/dropout stream. Failures are recorded without aborting the
/// remaining seeds.
pub fn multi_seed_run<F>(
    build_split: F,
    model_template: &ModelConfig,
    train_config: &TrainConfig,
    n_seeds: usize,
    base_seed: u64,
) -> Vec<SeedRun>
where
    F: Fn(u64) -> Result<Split, ForgeError>,
{
    (0..n_seeds as u64)
        .map(|offset| {
            let seed = base_seed + offset;
            let result = (|| {
                let split = build_split(seed)?;
                let (model, record) = run_single(&split, model_template, train_config, seed)?;
                drop(model);
                Ok(record)
            })();
            SeedRun { seed, result }
        })
        .collect()
}

/// Builds vocabularies and a model for a split, trains, and returns both.
pub fn run_single(
    split: &Split,
    model_template: &ModelConfig,
    train_config: &TrainConfig,
    seed: u64,
) -> Result<(Seq2SeqModel, RunRecord), TrainError> {
    let (src_vocab, tgt_vocab) = split_vocabs(split);
    let cfg = fit_config(model_template, &src_vocab, &tgt_vocab);
    if (cfg.dropout_rate - train_config.dropout).abs() > 1e-12 {
        return Err(TrainError::InvalidConfig(format!(
            "train dropout {} must mirror model dropout {}",
            train_config.dropout, cfg.dropout_rate
        )));
    }
    let mut model = Seq2SeqModel::build(cfg, src_vocab, tgt_vocab, seed)?;
    let config = TrainConfig {
        seed,
        ..train_config.clone()
    };
    let record = train(&mut model, split, &config)?;
    Ok((model, record))
}
