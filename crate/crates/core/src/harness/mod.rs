//! Experiment harness: declarative configs in, datasets/checkpoints/CSV/JSON
//! reports out. Ships named recipes that regenerate each figure's underlying
//! numbers; completed (setting, seed) cells are skipped on rerun via their
//! saved records.

mod recipes;
mod report;
mod runner;

pub use recipes::{describe_recipe, list_recipes, recipe};
pub use report::{emit_report, read_results, ResultRow, RESULTS_HEADER};
pub use runner::{analyze_model, run_experiment, AnalysisArtifacts, ExperimentOutcome};

use crate::dataset::{DatasetSpec, ForgeError};
use crate::model::{Arch, EngineError, ModelConfig};
use crate::train::{TrainConfig, TrainError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config validation: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("unknown recipe '{0}'")]
    UnknownRecipe(String),
    #[error("results schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Forge(#[from] ForgeError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Generalization vs number of example primitives (uniform, size-capped).
    Injection,
    /// Linear / quadratic / skewed training distributions vs uniform.
    Distribution,
    /// The #primitives x #examples uniform grid.
    Grid,
    /// Pretrain on many primitives, finetune frozen vs unfrozen.
    Transfer,
    /// Model size sweep, optionally with random-split sanity runs.
    Capacity,
    /// One compositional exposure sentence instead of the definition.
    Implicit,
    /// Several isolated primitives at once.
    MultiIsolated,
    /// The jump -> WALK output remap.
    Remap,
    /// Embedding-distance reports and t-SNE projections across settings.
    EmbeddingAnalysis,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Injection => "injection",
            ExperimentKind::Distribution => "distribution",
            ExperimentKind::Grid => "grid",
            ExperimentKind::Transfer => "transfer",
            ExperimentKind::Capacity => "capacity",
            ExperimentKind::Implicit => "implicit",
            ExperimentKind::MultiIsolated => "multi_isolated",
            ExperimentKind::Remap => "remap",
            ExperimentKind::EmbeddingAnalysis => "embedding_analysis",
        }
    }
}

/// A full experiment description. Axis fields apply only to the kinds that
/// define them; validation rejects configs that reference the wrong ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub kind: ExperimentKind,
    /// Example-primitive counts (injection, distribution, grid rows,
    /// capacity, implicit, embedding analysis).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_primitives_axis: Option<Vec<usize>>,
    /// Distribution scheme names (distribution kind).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schemes: Option<Vec<String>>,
    /// Per-primitive example counts (grid columns).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub examples_axis: Option<Vec<usize>>,
    /// Embedding sizes (capacity kind).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_sizes: Option<Vec<usize>>,
    /// Exposure complexities (implicit kind).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complexities: Option<Vec<u8>>,
    /// Isolated primitive count (multi-isolated kind).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_isolated: Option<usize>,
    /// Training-size cap |T| for capped settings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_cap: Option<usize>,
    /// Run each capacity configuration on a random 80/20 split too.
    #[serde(default)]
    pub random_split_sanity: bool,
    /// Colors instead of SCAN (injection and embedding analysis only).
    #[serde(default)]
    pub colors: bool,
    /// Model template; vocabulary sizes are filled per split.
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Pretraining phase overrides (transfer kind).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<TrainConfig>,
    pub n_seeds: usize,
    pub base_seed: u64,
}

impl ExperimentConfig {
    pub fn arch(&self) -> Arch {
        self.model.arch
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let invalid = |field: &str, reason: &str| HarnessError::InvalidConfig {
            field: field.to_string(),
            reason: reason.to_string(),
        };
        if self.experiment_id.is_empty() {
            return Err(invalid("experiment_id", "must not be empty"));
        }
        if self.n_seeds == 0 {
            return Err(invalid("n_seeds", "must be at least 1"));
        }
        let need = |cond: bool, field: &str| {
            if cond {
                Ok(())
            } else {
                Err(invalid(field, "required for this experiment kind"))
            }
        };
        let forbid = |absent: bool, field: &str| {
            if absent {
                Ok(())
            } else {
                Err(invalid(field, "not defined for this experiment kind"))
            }
        };
        match self.kind {
            ExperimentKind::Injection => {
                need(self.n_primitives_axis.is_some(), "n_primitives_axis")?;
                forbid(self.schemes.is_none(), "schemes")?;
                forbid(self.examples_axis.is_none(), "examples_axis")?;
                forbid(self.complexities.is_none(), "complexities")?;
            }
            ExperimentKind::Distribution => {
                need(self.n_primitives_axis.is_some(), "n_primitives_axis")?;
                need(self.schemes.is_some(), "schemes")?;
                for s in self.schemes.as_deref().unwrap_or_default() {
                    if !["uniform", "linear", "quadratic", "skewed"].contains(&s.as_str()) {
                        return Err(invalid("schemes", &format!("unknown scheme '{s}'")));
                    }
                }
                forbid(self.examples_axis.is_none(), "examples_axis")?;
            }
            ExperimentKind::Grid => {
                need(self.n_primitives_axis.is_some(), "n_primitives_axis")?;
                need(self.examples_axis.is_some(), "examples_axis")?;
                forbid(self.schemes.is_none(), "schemes")?;
            }
            ExperimentKind::Transfer => {
                forbid(self.n_primitives_axis.is_none(), "n_primitives_axis")?;
                forbid(self.schemes.is_none(), "schemes")?;
            }
            ExperimentKind::Capacity => {
                need(self.embedding_sizes.is_some(), "embedding_sizes")?;
                need(self.n_primitives_axis.is_some(), "n_primitives_axis")?;
            }
            ExperimentKind::Implicit => {
                need(self.complexities.is_some(), "complexities")?;
                need(self.n_primitives_axis.is_some(), "n_primitives_axis")?;
                if let Some(cs) = &self.complexities {
                    if cs.iter().any(|c| !(1..=4).contains(c)) {
                        return Err(invalid("complexities", "must lie in 1..=4"));
                    }
                }
            }
            ExperimentKind::MultiIsolated => {
                need(self.n_isolated.is_some(), "n_isolated")?;
                forbid(self.n_primitives_axis.is_none(), "n_primitives_axis")?;
            }
            ExperimentKind::Remap => {
                forbid(self.n_primitives_axis.is_none(), "n_primitives_axis")?;
                forbid(self.schemes.is_none(), "schemes")?;
            }
            ExperimentKind::EmbeddingAnalysis => {
                need(self.n_primitives_axis.is_some(), "n_primitives_axis")?;
            }
        }
        if self.colors
            && !matches!(
                self.kind,
                ExperimentKind::Injection | ExperimentKind::EmbeddingAnalysis
            )
        {
            return Err(invalid("colors", "only injection and embedding analysis run on Colors"));
        }
        if (self.model.dropout_rate - self.train.dropout).abs() > 1e-12 {
            return Err(invalid("train.dropout", "must mirror model.dropout_rate"));
        }
        // The model is a template whose vocabulary sizes are filled per
        // split; validate with placeholders.
        let probe = ModelConfig {
            src_vocab: self.model.src_vocab.max(3),
            tgt_vocab: self.model.tgt_vocab.max(3),
            ..self.model.clone()
        };
        probe
            .validate()
            .map_err(|e| invalid("model", &e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| invalid("train", &e.to_string()))?;
        Ok(())
    }

    /// Stable FNV-1a hash of the canonical JSON encoding; embedded in every
    /// output row.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.as_bytes() {
            hash ^= *b as u64;
            hash = hash.wrapping_mul(0x100_0000_01b3);
        }
        format!("{hash:016x}")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::InvalidConfig {
                field: "toml".into(),
                reason: e.to_string(),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Trims a config to the reduced-scale profile: two seeds, shorter training
/// on the large SCAN sets, and truncated axes. Trend checks only; the full
/// profile reproduces the paper-scale settings.
pub fn apply_ci_profile(cfg: &mut ExperimentConfig) {
    cfg.n_seeds = cfg.n_seeds.min(2);
    let large_data = !cfg.colors;
    if large_data && cfg.train.epochs > 40 {
        cfg.train.epochs = 40;
    }
    if let Some(pre) = &mut cfg.pretrain {
        if pre.epochs > 40 {
            pre.epochs = 40;
        }
    }
    match cfg.kind {
        ExperimentKind::Injection => {
            if let Some(axis) = &mut cfg.n_primitives_axis {
                let lo = axis.iter().copied().min();
                let hi = axis.iter().copied().filter(|&n| n >= 50).min();
                *axis = match (lo, hi) {
                    (Some(a), Some(b)) if a != b => vec![a, b],
                    (Some(a), _) => vec![a],
                    _ => axis.clone(),
                };
            }
        }
        ExperimentKind::Grid => {
            if let Some(axis) = &mut cfg.n_primitives_axis {
                axis.truncate(2);
            }
            if let Some(axis) = &mut cfg.examples_axis {
                axis.truncate(2);
            }
        }
        ExperimentKind::Distribution => {
            if let Some(axis) = &mut cfg.n_primitives_axis {
                if let Some(&hi) = axis.iter().max() {
                    *axis = vec![hi];
                }
            }
        }
        ExperimentKind::Capacity => {
            if let Some(sizes) = &mut cfg.embedding_sizes {
                sizes.truncate(2);
            }
            if let Some(axis) = &mut cfg.n_primitives_axis {
                axis.truncate(1);
            }
        }
        ExperimentKind::Implicit | ExperimentKind::EmbeddingAnalysis => {
            if let Some(axis) = &mut cfg.n_primitives_axis {
                let lo = axis.iter().copied().min().unwrap_or(3);
                let hi = axis.iter().copied().max().unwrap_or(lo);
                *axis = if lo == hi { vec![lo] } else { vec![lo, hi] };
            }
        }
        ExperimentKind::Transfer | ExperimentKind::MultiIsolated | ExperimentKind::Remap => {}
    }
}

/// Builds the dataset spec for one (setting, seed) of a capped uniform
/// injection experiment.
pub(crate) fn injection_spec(
    n_primitives: usize,
    size_cap: Option<usize>,
    seed: u64,
) -> Result<DatasetSpec, HarnessError> {
    if n_primitives < 3 {
        return Err(HarnessError::InvalidConfig {
            field: "n_primitives_axis".into(),
            reason: format!("settings keep the three original example primitives; {n_primitives} requested"),
        });
    }
    Ok(DatasetSpec {
        base: crate::grammar::GrammarFamily::Scan,
        extra_primitives: n_primitives - 3,
        scheme: crate::dataset::DistributionScheme::uniform_capped(),
        size_cap,
        exposure: crate::dataset::Exposure::Definition,
        isolated_count: 1,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_names_offending_fields() {
        let mut cfg = recipe("fig2-scan-transformer").unwrap();
        cfg.n_primitives_axis = None;
        match cfg.validate() {
            Err(HarnessError::InvalidConfig { field, .. }) => {
                assert_eq!(field, "n_primitives_axis")
            }
            other => panic!("expected InvalidConfig, got {other:?}"),
        }

        let mut cfg = recipe("fig3a-distributions").unwrap();
        cfg.schemes = Some(vec!["zipf".into()]);
        match cfg.validate() {
            Err(HarnessError::InvalidConfig { field, reason }) => {
                assert_eq!(field, "schemes");
                assert!(reason.contains("zipf"));
            }
            other => panic!("expected InvalidConfig, got {other:?}"),
        }
    }

    #[test]
    fn toml_round_trip_preserves_config_and_hash() {
        let cfg = recipe("fig2-scan-transformer").unwrap();
        let text = cfg.to_toml();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.config_hash(), back.config_hash());
        let mut other = cfg.clone();
        other.base_seed += 1;
        assert_ne!(cfg.config_hash(), other.config_hash());
    }
}
