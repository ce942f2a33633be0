//! scanlab-core: grammar-synthesized primitive-generalization benchmarks and
//! a from-scratch differentiable seq2seq stack for studying how training
//! distributions shape one-shot compositional generalization.
//!
//! The crate is organized around the experiment pipeline:
//!
//! - [`grammar`]: SCAN/Colors command languages, enumeration, interpretation.
//! - [`dataset`]: split builders (injection, distribution schemes, grids,
//!   transfer, implicit exposure, multi-isolated, remap) and dataset file IO.
//! - [`tensor`] / [`tape`]: dense f64 tensors and reverse-mode autodiff.
//! - [`model`]: LSTM and Transformer encoder-decoders with named parameter
//!   groups, freezing, checkpoints, greedy decoding.
//! - [`train`]: Adam, teacher-forced training, finetuning, multi-seed runs.
//! - [`eval`]: exact-match accuracy, embedding-distance reports, exact t-SNE,
//!   cross-seed statistics.
//! - [`harness`]: declarative experiment configs, figure recipes, results
//!   CSV/JSON emission.

pub mod dataset;
pub mod eval;
pub mod grammar;
pub mod harness;
pub mod model;
pub mod tape;
pub mod train;
pub mod tensor;

pub use grammar::{
    ActionSequence, Command, Example, ExampleKind, Grammar, GrammarError, GrammarFamily,
    PrimitiveEntry, PrimitiveRole,
};
