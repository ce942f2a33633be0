//! Evaluation and analysis: exact-match accuracy, embedding-distance
//! reports, exact t-SNE projection, and cross-seed aggregate statistics.

mod embedding;
mod tsne;

pub use embedding::{embedding_distance_report, DistanceTriple, EmbeddingReport, PairDistances};
pub use tsne::{tsne_project, TsneConfig, TsneResult};

use crate::grammar::Example;
use crate::model::{greedy_decode_batch, Seq2SeqModel, EOS};
use crate::train::RunRecord;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unknown token '{0}'")]
    UnknownToken(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Fraction of examples whose greedy decode equals the gold action sequence
/// token for token. Unknown source tokens or failed decodes count as misses.
pub fn exact_match_accuracy(model: &Seq2SeqModel, examples: &[Example], max_len: usize) -> f64 {
    assert!(!examples.is_empty(), "accuracy over an empty set");
    let mut srcs = Vec::with_capacity(examples.len());
    let mut decodable = Vec::with_capacity(examples.len());
    for e in examples {
        match model.src_vocab().encode(e.input.tokens()) {
            Some(mut ids) => {
                ids.push(EOS);
                decodable.push(true);
                srcs.push(ids);
            }
            None => decodable.push(false),
        }
    }
    let decoded = greedy_decode_batch(model, &srcs, max_len).unwrap_or_default();
    let mut hits = 0usize;
    let mut di = 0usize;
    for (e, ok) in examples.iter().zip(&decodable) {
        if !ok {
            continue;
        }
        let got = &decoded[di];
        di += 1;
        let gold = e.output.tokens();
        if got.len() == gold.len() {
            let matches = got
                .iter()
                .zip(gold)
                .all(|(&id, tok)| model.tgt_vocab().token(id) == Some(tok.as_str()));
            if matches {
                hits += 1;
            }
        }
    }
    hits as f64 / examples.len() as f64
}

/// Sample statistics over a set of values (std uses the n-1 denominator;
/// a single value has std 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

pub fn stats_of(values: &[f64]) -> AggregateStats {
    assert!(!values.is_empty(), "statistics over an empty set");
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    AggregateStats {
        n,
        mean,
        std,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Statistics of the final test accuracies of a replicate set. Records
/// without a test accuracy are skipped.
pub fn aggregate_stats(records: &[RunRecord]) -> AggregateStats {
    let accs: Vec<f64> = records
        .iter()
        .filter_map(|r| r.final_test_accuracy)
        .collect();
    stats_of(&accs)
}
