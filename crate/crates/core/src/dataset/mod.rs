//! Split builders: every training-distribution variant studied by the lab,
//! plus the on-disk dataset format.
//!
//! All builders enforce the systematicity contract: each isolated primitive
//! occurs in exactly one training example (its definition or one implicit
//! sentence) and only compositionally in the test set.

mod allocate;
mod builders;
mod io;
mod sampler;

pub use allocate::allocate_counts;
pub use builders::{
    build_add_jump_split, build_grid, build_implicit_split, build_injected_split,
    build_multi_isolated_split, build_random_split, build_remapped_split, build_transfer_pair,
    colors_canonical_split, implicit_sentence, MULTI_ISOLATED_BASE_TRAIN_SIZE, ORIGINAL_SCAN_CAP,
};
pub use io::{read_dataset, write_dataset};

use crate::grammar::{Example, GrammarError, GrammarFamily, PrimitiveEntry};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("infeasible allocation: {0}")]
    InfeasibleAllocation(String),
    #[error("systematicity violation: {0}")]
    SystematicityViolation(String),
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("{path}:{line}: malformed line: {reason}")]
    MalformedLine {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("missing or invalid header in {0}")]
    MissingHeader(String),
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
}

/// Constants of the exponentially-skewed ("skewed") distribution: 10% of
/// example primitives carry 500 compositional examples each, 30% carry 10,
/// the remainder carry one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewParams {
    pub fraction_heavy: f64,
    pub heavy_count: usize,
    pub fraction_mid: f64,
    pub mid_count: usize,
    pub light_count: usize,
}

impl Default for SkewParams {
    fn default() -> Self {
        Self {
            fraction_heavy: 0.10,
            heavy_count: 500,
            fraction_mid: 0.30,
            mid_count: 10,
            light_count: 1,
        }
    }
}

impl SkewParams {
    pub fn validate(&self) -> Result<(), ForgeError> {
        if self.fraction_heavy < 0.0
            || self.fraction_mid < 0.0
            || self.fraction_heavy + self.fraction_mid > 1.0
        {
            return Err(ForgeError::InvalidSpec(
                "skew fractions must be non-negative and sum to at most 1".into(),
            ));
        }
        if self.heavy_count == 0 || self.mid_count == 0 || self.light_count == 0 {
            return Err(ForgeError::InvalidSpec(
                "skew counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// How many compositional examples each example primitive contributes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionScheme {
    /// Equal counts: either a fixed per-primitive count, or derived from the
    /// training-size cap when `examples_per_primitive` is absent.
    Uniform {
        examples_per_primitive: Option<usize>,
    },
    /// `count_i = i` for the i-th primitive in lexicographic order.
    Linear,
    /// `count_i = i^2`.
    Quadratic,
    Skewed(SkewParams),
}

impl DistributionScheme {
    pub fn uniform_capped() -> Self {
        DistributionScheme::Uniform {
            examples_per_primitive: None,
        }
    }

    pub fn uniform_per_primitive(e: usize) -> Self {
        DistributionScheme::Uniform {
            examples_per_primitive: Some(e),
        }
    }

    pub fn skewed() -> Self {
        DistributionScheme::Skewed(SkewParams::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            DistributionScheme::Uniform { .. } => "uniform",
            DistributionScheme::Linear => "linear",
            DistributionScheme::Quadratic => "quadratic",
            DistributionScheme::Skewed(_) => "skewed",
        }
    }
}

/// How the isolated primitive is exposed in training: its bare definition or
/// one compositional sentence of graded complexity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Exposure {
    Definition,
    ImplicitSentence { complexity: u8 },
}

/// The full recipe for synthesizing a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub base: GrammarFamily,
    pub extra_primitives: usize,
    pub scheme: DistributionScheme,
    /// Total training-set size cap |T|, covering compositional examples plus
    /// all primitive definitions (example definitions and one isolated
    /// definition).
    pub size_cap: Option<usize>,
    pub exposure: Exposure,
    pub isolated_count: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn scan_uniform(extra_primitives: usize, size_cap: usize, seed: u64) -> Self {
        Self {
            base: GrammarFamily::Scan,
            extra_primitives,
            scheme: DistributionScheme::uniform_capped(),
            size_cap: Some(size_cap),
            exposure: Exposure::Definition,
            isolated_count: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ForgeError> {
        if self.isolated_count == 0 {
            return Err(ForgeError::InvalidSpec(
                "isolated_count must be at least 1".into(),
            ));
        }
        if let Exposure::ImplicitSentence { complexity } = self.exposure {
            if !(1..=4).contains(&complexity) {
                return Err(ForgeError::InvalidSpec(format!(
                    "implicit exposure complexity {complexity} outside 1..=4"
                )));
            }
        }
        if let DistributionScheme::Skewed(p) = &self.scheme {
            p.validate()?;
        }
        Ok(())
    }
}

/// The `#primitives x #examples` grid of uniform training sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub primitives_axis: Vec<usize>,
    pub examples_axis: Vec<usize>,
    pub seed: u64,
}

/// Where a split came from; serialized into dataset file headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetProvenance {
    Spec(DatasetSpec),
    AddJump,
    ColorsCanonical,
    Grid {
        n_primitives: usize,
        n_examples: usize,
        seed: u64,
    },
    TransferPretrain {
        seed: u64,
    },
    MultiIsolated {
        n_isolated: usize,
        seed: u64,
    },
    Remap,
    Random {
        train_fraction: f64,
        seed: u64,
    },
}

/// A train/test pair with designated isolated primitives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub isolated: Vec<PrimitiveEntry>,
    pub provenance: DatasetProvenance,
}

impl Split {
    /// Checks the declared invariants: one-shot exposure of every isolated
    /// primitive, compositional-only test occurrences, no training
    /// duplicates, disjoint train/test.
    pub fn validate_systematicity(&self) -> Result<(), ForgeError> {
        let mut seen = HashSet::with_capacity(self.train.len());
        for e in &self.train {
            if !seen.insert(e.input.joined()) {
                return Err(ForgeError::SystematicityViolation(format!(
                    "duplicate training example '{}'",
                    e.input
                )));
            }
        }
        let test_inputs: HashSet<String> = self.test.iter().map(|e| e.input.joined()).collect();
        for e in &self.train {
            if test_inputs.contains(&e.input.joined()) {
                return Err(ForgeError::SystematicityViolation(format!(
                    "training example '{}' leaks into the test set",
                    e.input
                )));
            }
        }
        for iso in &self.isolated {
            let occurrences: Vec<_> = self
                .train
                .iter()
                .filter(|e| e.input.contains_token(&iso.surface))
                .collect();
            if occurrences.len() != 1 {
                return Err(ForgeError::SystematicityViolation(format!(
                    "isolated primitive '{}' occurs {} times in train, expected exactly 1",
                    iso.surface,
                    occurrences.len()
                )));
            }
            if let Some(e) = self
                .test
                .iter()
                .find(|e| e.input.contains_token(&iso.surface) && e.input.tokens().len() == 1)
            {
                return Err(ForgeError::SystematicityViolation(format!(
                    "test contains non-compositional occurrence '{}'",
                    e.input
                )));
            }
        }
        Ok(())
    }

    pub fn train_size(&self) -> usize {
        self.train.len()
    }

    pub fn test_size(&self) -> usize {
        self.test.len()
    }
}
