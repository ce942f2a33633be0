//! Greedy decoding: argmax at each step, ties broken by the lowest token id,
//! stopping at EOS or `max_len`. Truncation at `max_len` is a normal outcome.
//!
//! Batch evaluation advances every live sequence one position per step so
//! the heavy projections run as GEMMs; the single-sequence path below is the
//! reference implementation the batched one is tested against.

use super::{lstm, transformer, Arch, EngineError, Seq2SeqModel, BOS, EOS};

/// Sequences decoded together per lockstep chunk; bounds the attention-cache
/// memory.
const DECODE_CHUNK: usize = 512;

fn argmax_lowest(logits: &[f64]) -> u32 {
    let mut best = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in logits.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best as u32
}

/// Decodes one source sequence; returns content token ids (no BOS/EOS).
pub fn greedy_decode(
    model: &Seq2SeqModel,
    src: &[u32],
    max_len: usize,
) -> Result<Vec<u32>, EngineError> {
    assert!(max_len >= 1, "max_len must be at least 1");
    for &id in src {
        if id as usize >= model.src_vocab().len() {
            return Err(EngineError::VocabOverflow {
                id,
                vocab: model.src_vocab().len(),
            });
        }
    }
    let mut out = Vec::new();
    match model.config().arch {
        Arch::Transformer => {
            let mut ctx = transformer::infer_begin(model, src, max_len)?;
            let mut token = BOS;
            for _ in 0..max_len {
                let logits = transformer::infer_step(&mut ctx, token);
                let next = argmax_lowest(&logits);
                if next == EOS {
                    break;
                }
                out.push(next);
                token = next;
            }
        }
        Arch::Lstm => {
            let mut ctx = lstm::infer_begin(model, src)?;
            let mut token = BOS;
            for _ in 0..max_len {
                let logits = lstm::infer_step(&mut ctx, token);
                let next = argmax_lowest(&logits);
                if next == EOS {
                    break;
                }
                out.push(next);
                token = next;
            }
        }
    }
    Ok(out)
}

/// Decodes many sources in lockstep chunks; output order matches input order
/// and is independent of chunking and thread count.
pub fn greedy_decode_batch(
    model: &Seq2SeqModel,
    srcs: &[Vec<u32>],
    max_len: usize,
) -> Result<Vec<Vec<u32>>, EngineError> {
    assert!(max_len >= 1, "max_len must be at least 1");
    let mut out = Vec::with_capacity(srcs.len());
    for chunk in srcs.chunks(DECODE_CHUNK.max(1)) {
        let decoded = match model.config().arch {
            Arch::Transformer => transformer::infer_batch(model, chunk, max_len)?,
            Arch::Lstm => lstm::infer_batch(model, chunk, max_len)?,
        };
        out.extend(decoded);
    }
    Ok(out)
}
