//! Pre-norm Transformer encoder-decoder.
//!
//! Training forwards run on the autodiff tape with token sequences packed
//! along rows (no PAD compute); attention is evaluated per sequence and per
//! head on row/column slices. Greedy decoding uses a tape-free incremental
//! path with cached self-attention keys/values; both paths compute the same
//! function (covered by an equivalence test).

use super::{
    Batch, DropoutCtx, EngineError, ForwardPass, InitKind, ModelConfig, ParamGroup, Seq2SeqModel,
};
use crate::tape::{Tape, Var};
use crate::tensor::{matmul, Tensor};

const LN_EPS: f64 = 1e-5;
const MASKED: f64 = -1e30;

type Shape = (String, ParamGroup, InitKind, usize, usize);

pub(super) fn param_shapes(cfg: &ModelConfig) -> Vec<Shape> {
    let d = cfg.embedding_size;
    let f = cfg.hidden_or_ffn_size;
    let attn = |out: &mut Vec<Shape>, prefix: String, group: ParamGroup| {
        for w in ["wq", "wk", "wv", "wo"] {
            out.push((format!("{prefix}.{w}"), group, InitKind::Matrix, d, d));
            let b = format!("{prefix}.b{}", &w[1..]);
            out.push((b, group, InitKind::Bias, 1, d));
        }
    };
    let ln = |out: &mut Vec<Shape>, prefix: String, group: ParamGroup| {
        out.push((format!("{prefix}.gain"), group, InitKind::Gain, 1, d));
        out.push((format!("{prefix}.bias"), group, InitKind::Bias, 1, d));
    };
    let ffn = |out: &mut Vec<Shape>, prefix: String, group: ParamGroup| {
        out.push((format!("{prefix}.w1"), group, InitKind::Matrix, d, f));
        out.push((format!("{prefix}.b1"), group, InitKind::Bias, 1, f));
        out.push((format!("{prefix}.w2"), group, InitKind::Matrix, f, d));
        out.push((format!("{prefix}.b2"), group, InitKind::Bias, 1, d));
    };

    let mut out: Vec<Shape> = vec![
        (
            "src_embedding.weight".into(),
            ParamGroup::SrcEmbedding,
            InitKind::Embedding,
            cfg.src_vocab,
            d,
        ),
        (
            "tgt_embedding.weight".into(),
            ParamGroup::TgtEmbedding,
            InitKind::Embedding,
            cfg.tgt_vocab,
            d,
        ),
    ];

    for l in 0..cfg.layers {
        let g = ParamGroup::Encoder;
        ln(&mut out, format!("encoder.l{l}.ln1"), g);
        attn(&mut out, format!("encoder.l{l}.attn"), g);
        ln(&mut out, format!("encoder.l{l}.ln2"), g);
        ffn(&mut out, format!("encoder.l{l}.ffn"), g);
    }
    ln(&mut out, "encoder.ln_final".into(), ParamGroup::Encoder);

    for l in 0..cfg.layers {
        let g = ParamGroup::Decoder;
        ln(&mut out, format!("decoder.l{l}.ln1"), g);
        attn(&mut out, format!("decoder.l{l}.self_attn"), g);
        ln(&mut out, format!("decoder.l{l}.ln2"), g);
        attn(&mut out, format!("decoder.l{l}.cross_attn"), g);
        ln(&mut out, format!("decoder.l{l}.ln3"), g);
        ffn(&mut out, format!("decoder.l{l}.ffn"), g);
    }
    ln(&mut out, "decoder.ln_final".into(), ParamGroup::Decoder);

    out.push((
        "output_projection.weight".into(),
        ParamGroup::OutputProjection,
        InitKind::Matrix,
        d,
        cfg.tgt_vocab,
    ));
    out.push((
        "output_projection.bias".into(),
        ParamGroup::OutputProjection,
        InitKind::Bias,
        1,
        cfg.tgt_vocab,
    ));
    out
}

type PackedIds = (Vec<u32>, Vec<(usize, usize)>);

/// Concatenates sequences along rows; returns ids plus `(offset, len)` spans.
fn pack(seqs: &[Vec<u32>], strip_pad: bool) -> Result<PackedIds, EngineError> {
    let mut ids = Vec::new();
    let mut spans = Vec::with_capacity(seqs.len());
    for s in seqs {
        let start = ids.len();
        for &t in s {
            if !(strip_pad && t == super::PAD) {
                ids.push(t);
            }
        }
        let len = ids.len() - start;
        if len == 0 {
            return Err(EngineError::InvalidConfig(
                "sequence empty after PAD stripping".into(),
            ));
        }
        spans.push((start, len));
    }
    Ok((ids, spans))
}

fn positional_const(spans: &[(usize, usize)], d: usize) -> Tensor {
    let max_len = spans.iter().map(|&(_, l)| l).max().unwrap_or(0);
    let table = super::positional_rows(max_len, d);
    let total: usize = spans.iter().map(|&(_, l)| l).sum();
    let mut out = Tensor::zeros(total, d);
    for &(off, len) in spans {
        for p in 0..len {
            out.row_mut(off + p).copy_from_slice(table.row(p));
        }
    }
    out
}

struct Layers<'m> {
    model: &'m Seq2SeqModel,
    vars: Vec<Var>,
}

impl<'m> Layers<'m> {
    fn v(&self, name: &str) -> Var {
        self.model.var_named(&self.vars, name)
    }

    fn layer_norm(&self, tape: &mut Tape, x: Var, prefix: &str) -> Var {
        let gain = self.v(&format!("{prefix}.gain"));
        let bias = self.v(&format!("{prefix}.bias"));
        tape.layer_norm_rows(x, gain, bias, LN_EPS)
    }

    fn linear(&self, tape: &mut Tape, x: Var, w: &str, b: &str) -> Var {
        let wv = self.v(w);
        let bv = self.v(b);
        let m = tape.matmul(x, wv);
        tape.add_bias(m, bv)
    }

    fn ffn(
        &self,
        tape: &mut Tape,
        x: Var,
        prefix: &str,
        dropout: &mut DropoutCtx,
    ) -> Var {
        let h = self.linear(tape, x, &format!("{prefix}.w1"), &format!("{prefix}.b1"));
        let r = tape.relu(h);
        let r = dropout.apply(tape, r);
        self.linear(tape, r, &format!("{prefix}.w2"), &format!("{prefix}.b2"))
    }

    /// Multi-head attention between packed row spans. Queries come from
    /// `q_in` rows `q_spans[i]`, keys/values from `kv_in` rows `kv_spans[i]`.
    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        tape: &mut Tape,
        prefix: &str,
        q_in: Var,
        kv_in: Var,
        q_spans: &[(usize, usize)],
        kv_spans: &[(usize, usize)],
        causal: bool,
        dropout: &mut DropoutCtx,
    ) -> Var {
        let heads = self.model.config().heads;
        let q = self.linear(tape, q_in, &format!("{prefix}.wq"), &format!("{prefix}.bq"));
        let k = self.linear(tape, kv_in, &format!("{prefix}.wk"), &format!("{prefix}.bk"));
        let v = self.linear(tape, kv_in, &format!("{prefix}.wv"), &format!("{prefix}.bv"));
        let ctx = tape.attention(
            q,
            k,
            v,
            &q_spans.to_vec(),
            &kv_spans.to_vec(),
            heads,
            causal,
            dropout.attention_dropout(),
        );
        self.linear(tape, ctx, &format!("{prefix}.wo"), &format!("{prefix}.bo"))
    }
}

pub(super) fn forward(
    model: &Seq2SeqModel,
    batch: &Batch,
    dropout: &mut DropoutCtx,
) -> Result<ForwardPass, EngineError> {
    let cfg = model.config();
    let d = cfg.embedding_size;
    let emb_scale = (d as f64).sqrt();

    let mut tape = Tape::new();
    let param_vars = model.push_params(&mut tape);
    let layers = Layers {
        model,
        vars: param_vars.clone(),
    };

    // Encoder.
    let (src_ids, src_spans) = pack(&batch.src, true)?;
    let src_table = layers.v("src_embedding.weight");
    let mut x = tape.gather(src_table, &src_ids);
    x = tape.scale(x, emb_scale);
    x = tape.add_const(x, &positional_const(&src_spans, d));
    x = dropout.apply(&mut tape, x);
    for l in 0..cfg.layers {
        let ln1 = layers.layer_norm(&mut tape, x, &format!("encoder.l{l}.ln1"));
        let mut a = layers.attention(
            &mut tape,
            &format!("encoder.l{l}.attn"),
            ln1,
            ln1,
            &src_spans,
            &src_spans,
            false,
            dropout,
        );
        a = dropout.apply(&mut tape, a);
        x = tape.add(x, a);
        let ln2 = layers.layer_norm(&mut tape, x, &format!("encoder.l{l}.ln2"));
        let mut h = layers.ffn(&mut tape, ln2, &format!("encoder.l{l}.ffn"), dropout);
        h = dropout.apply(&mut tape, h);
        x = tape.add(x, h);
    }
    let enc_out = layers.layer_norm(&mut tape, x, "encoder.ln_final");

    // Decoder (teacher forced on the given prefix; PAD kept so logits map
    // one-to-one onto prefix positions).
    let (tgt_ids, tgt_spans) = pack(&batch.tgt_in, false)?;
    let tgt_table = layers.v("tgt_embedding.weight");
    let mut y = tape.gather(tgt_table, &tgt_ids);
    y = tape.scale(y, emb_scale);
    y = tape.add_const(y, &positional_const(&tgt_spans, d));
    y = dropout.apply(&mut tape, y);
    for l in 0..cfg.layers {
        let ln1 = layers.layer_norm(&mut tape, y, &format!("decoder.l{l}.ln1"));
        let mut a = layers.attention(
            &mut tape,
            &format!("decoder.l{l}.self_attn"),
            ln1,
            ln1,
            &tgt_spans,
            &tgt_spans,
            true,
            dropout,
        );
        a = dropout.apply(&mut tape, a);
        y = tape.add(y, a);

        let ln2 = layers.layer_norm(&mut tape, y, &format!("decoder.l{l}.ln2"));
        let mut c = layers.attention(
            &mut tape,
            &format!("decoder.l{l}.cross_attn"),
            ln2,
            enc_out,
            &tgt_spans,
            &src_spans,
            false,
            dropout,
        );
        c = dropout.apply(&mut tape, c);
        y = tape.add(y, c);

        let ln3 = layers.layer_norm(&mut tape, y, &format!("decoder.l{l}.ln3"));
        let mut h = layers.ffn(&mut tape, ln3, &format!("decoder.l{l}.ffn"), dropout);
        h = dropout.apply(&mut tape, h);
        y = tape.add(y, h);
    }
    let dec_out = layers.layer_norm(&mut tape, y, "decoder.ln_final");
    let logits = layers.linear(
        &mut tape,
        dec_out,
        "output_projection.weight",
        "output_projection.bias",
    );

    let loss = if batch.tgt_out.is_empty() {
        None
    } else {
        Some(loss_over_targets(
            &mut tape,
            logits,
            &batch.tgt_out,
            &tgt_spans,
        )?)
    };

    Ok(ForwardPass {
        tape,
        logits,
        loss,
        param_vars,
    })
}

/// Mean cross-entropy over non-PAD target positions, selected by packed row.
pub(super) fn loss_over_targets(
    tape: &mut Tape,
    logits: Var,
    tgt_out: &[Vec<u32>],
    tgt_spans: &[(usize, usize)],
) -> Result<Var, EngineError> {
    let mut positions = Vec::new();
    let mut targets = Vec::new();
    for (seq, &(off, len)) in tgt_out.iter().zip(tgt_spans) {
        assert_eq!(
            seq.len(),
            len,
            "target sequence length must match decoder input"
        );
        for (i, &t) in seq.iter().enumerate() {
            if t != super::PAD {
                positions.push((off + i) as u32);
                targets.push(t);
            }
        }
    }
    if targets.is_empty() {
        return Err(EngineError::InvalidConfig(
            "no supervised target positions".into(),
        ));
    }
    let picked = tape.gather(logits, &positions);
    let logp = tape.log_softmax_rows(picked);
    Ok(tape.mean_nll(logp, &targets))
}

// ---------------------------------------------------------------------------
// Incremental inference (greedy decoding).
// ---------------------------------------------------------------------------

fn ln_rows(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Tensor {
    let n = x.cols() as f64;
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + LN_EPS).sqrt();
        for (c, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * is * gain.data()[c] + bias.data()[c];
        }
    }
    out
}

fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let mut out = matmul(x, false, w, false);
    for r in 0..out.rows() {
        for (v, bv) in out.row_mut(r).iter_mut().zip(b.data()) {
            *v += bv;
        }
    }
    out
}

fn softmax_rows_inplace(x: &mut Tensor) {
    for r in 0..x.rows() {
        let row = x.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

fn relu_inplace(x: &mut Tensor) {
    for v in x.data_mut() {
        *v = v.max(0.0);
    }
}

/// Multi-head attention for the inference path: `q` is `[tq, d]`.
fn attn_infer(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, causal: bool) -> Tensor {
    let d = q.cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (tq, tk) = (q.rows(), k.rows());
    let mut out = Tensor::zeros(tq, d);
    for h in 0..heads {
        let col = h * dh;
        let mut scores = Tensor::zeros(tq, tk);
        for i in 0..tq {
            for j in 0..tk {
                if causal && j > i + (tk - tq) {
                    scores.set(i, j, MASKED);
                    continue;
                }
                let mut dot = 0.0;
                for c in 0..dh {
                    dot += q.at(i, col + c) * k.at(j, col + c);
                }
                scores.set(i, j, dot * scale);
            }
        }
        softmax_rows_inplace(&mut scores);
        for i in 0..tq {
            for j in 0..tk {
                let p = scores.at(i, j);
                if p == 0.0 {
                    continue;
                }
                for c in 0..dh {
                    let acc = out.at(i, col + c) + p * v.at(j, col + c);
                    out.set(i, col + c, acc);
                }
            }
        }
    }
    out
}

/// Encoder output plus per-layer cross-attention keys/values for one source.
pub(super) struct InferCtx<'m> {
    model: &'m Seq2SeqModel,
    cross_k: Vec<Tensor>,
    cross_v: Vec<Tensor>,
    self_k: Vec<Tensor>,
    self_v: Vec<Tensor>,
    pos_table: Tensor,
    t: usize,
}

pub(super) fn infer_begin<'m>(
    model: &'m Seq2SeqModel,
    src: &[u32],
    max_len: usize,
) -> Result<InferCtx<'m>, EngineError> {
    let cfg = model.config();
    let d = cfg.embedding_size;
    let heads = cfg.heads;
    let emb_scale = (d as f64).sqrt();
    let src_ids: Vec<u32> = src.iter().copied().filter(|&t| t != super::PAD).collect();
    if src_ids.is_empty() {
        return Err(EngineError::InvalidConfig("empty source".into()));
    }

    let p = |name: &str| model.param_named(name);
    let table = p("src_embedding.weight");
    let mut x = Tensor::zeros(src_ids.len(), d);
    let pos = super::positional_rows(src_ids.len().max(max_len + 1), d);
    for (i, &id) in src_ids.iter().enumerate() {
        let row = x.row_mut(i);
        row.copy_from_slice(table.row(id as usize));
        for (c, v) in row.iter_mut().enumerate() {
            *v = *v * emb_scale + pos.at(i, c);
        }
    }
    for l in 0..cfg.layers {
        let ln1 = ln_rows(
            &x,
            p(&format!("encoder.l{l}.ln1.gain")),
            p(&format!("encoder.l{l}.ln1.bias")),
        );
        let prefix = format!("encoder.l{l}.attn");
        let q = linear(&ln1, p(&format!("{prefix}.wq")), p(&format!("{prefix}.bq")));
        let k = linear(&ln1, p(&format!("{prefix}.wk")), p(&format!("{prefix}.bk")));
        let v = linear(&ln1, p(&format!("{prefix}.wv")), p(&format!("{prefix}.bv")));
        let ctx = attn_infer(&q, &k, &v, heads, false);
        let a = linear(
            &ctx,
            p(&format!("{prefix}.wo")),
            p(&format!("{prefix}.bo")),
        );
        for (xv, av) in x.data_mut().iter_mut().zip(a.data()) {
            *xv += av;
        }
        let ln2 = ln_rows(
            &x,
            p(&format!("encoder.l{l}.ln2.gain")),
            p(&format!("encoder.l{l}.ln2.bias")),
        );
        let mut h = linear(
            &ln2,
            p(&format!("encoder.l{l}.ffn.w1")),
            p(&format!("encoder.l{l}.ffn.b1")),
        );
        relu_inplace(&mut h);
        let h2 = linear(
            &h,
            p(&format!("encoder.l{l}.ffn.w2")),
            p(&format!("encoder.l{l}.ffn.b2")),
        );
        for (xv, hv) in x.data_mut().iter_mut().zip(h2.data()) {
            *xv += hv;
        }
    }
    let enc_out = ln_rows(
        &x,
        p("encoder.ln_final.gain"),
        p("encoder.ln_final.bias"),
    );

    let mut cross_k = Vec::with_capacity(cfg.layers);
    let mut cross_v = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let prefix = format!("decoder.l{l}.cross_attn");
        cross_k.push(linear(
            &enc_out,
            p(&format!("{prefix}.wk")),
            p(&format!("{prefix}.bk")),
        ));
        cross_v.push(linear(
            &enc_out,
            p(&format!("{prefix}.wv")),
            p(&format!("{prefix}.bv")),
        ));
    }

    Ok(InferCtx {
        model,
        cross_k,
        cross_v,
        self_k: vec![Tensor::zeros(0, d); cfg.layers],
        self_v: vec![Tensor::zeros(0, d); cfg.layers],
        pos_table: pos,
        t: 0,
    })
}

/// Advances one decoder step; returns the next-token logits row.
pub(super) fn infer_step(ctx: &mut InferCtx<'_>, token: u32) -> Vec<f64> {
    let model = ctx.model;
    let cfg = model.config();
    let d = cfg.embedding_size;
    let heads = cfg.heads;
    let emb_scale = (d as f64).sqrt();
    let p = |name: &str| model.param_named(name);

    let table = p("tgt_embedding.weight");
    let mut y = Tensor::zeros(1, d);
    y.row_mut(0).copy_from_slice(table.row(token as usize));
    for (c, v) in y.row_mut(0).iter_mut().enumerate() {
        *v = *v * emb_scale + ctx.pos_table.at(ctx.t, c);
    }

    for l in 0..cfg.layers {
        let ln1 = ln_rows(
            &y,
            p(&format!("decoder.l{l}.ln1.gain")),
            p(&format!("decoder.l{l}.ln1.bias")),
        );
        let prefix = format!("decoder.l{l}.self_attn");
        let q = linear(&ln1, p(&format!("{prefix}.wq")), p(&format!("{prefix}.bq")));
        let k_new = linear(&ln1, p(&format!("{prefix}.wk")), p(&format!("{prefix}.bk")));
        let v_new = linear(&ln1, p(&format!("{prefix}.wv")), p(&format!("{prefix}.bv")));
        append_row(&mut ctx.self_k[l], &k_new);
        append_row(&mut ctx.self_v[l], &v_new);
        let ctx_rows = attn_infer(&q, &ctx.self_k[l], &ctx.self_v[l], heads, false);
        let a = linear(
            &ctx_rows,
            p(&format!("{prefix}.wo")),
            p(&format!("{prefix}.bo")),
        );
        for (yv, av) in y.data_mut().iter_mut().zip(a.data()) {
            *yv += av;
        }

        let ln2 = ln_rows(
            &y,
            p(&format!("decoder.l{l}.ln2.gain")),
            p(&format!("decoder.l{l}.ln2.bias")),
        );
        let prefix = format!("decoder.l{l}.cross_attn");
        let q2 = linear(&ln2, p(&format!("{prefix}.wq")), p(&format!("{prefix}.bq")));
        let ctx_rows = attn_infer(&q2, &ctx.cross_k[l], &ctx.cross_v[l], heads, false);
        let c = linear(
            &ctx_rows,
            p(&format!("{prefix}.wo")),
            p(&format!("{prefix}.bo")),
        );
        for (yv, cv) in y.data_mut().iter_mut().zip(c.data()) {
            *yv += cv;
        }

        let ln3 = ln_rows(
            &y,
            p(&format!("decoder.l{l}.ln3.gain")),
            p(&format!("decoder.l{l}.ln3.bias")),
        );
        let mut h = linear(
            &ln3,
            p(&format!("decoder.l{l}.ffn.w1")),
            p(&format!("decoder.l{l}.ffn.b1")),
        );
        relu_inplace(&mut h);
        let h2 = linear(
            &h,
            p(&format!("decoder.l{l}.ffn.w2")),
            p(&format!("decoder.l{l}.ffn.b2")),
        );
        for (yv, hv) in y.data_mut().iter_mut().zip(h2.data()) {
            *yv += hv;
        }
    }
    let out = ln_rows(
        &y,
        p("decoder.ln_final.gain"),
        p("decoder.ln_final.bias"),
    );
    let logits = linear(
        &out,
        p("output_projection.weight"),
        p("output_projection.bias"),
    );
    ctx.t += 1;
    logits.row(0).to_vec()
}

fn append_row(cache: &mut Tensor, row: &Tensor) {
    let mut data = Vec::with_capacity((cache.rows() + 1) * row.cols());
    data.extend_from_slice(cache.data());
    data.extend_from_slice(row.data());
    *cache = Tensor::from_vec(cache.rows() + 1, row.cols(), data);
}

// ---------------------------------------------------------------------------
// Batched lockstep decoding: all sequences advance one position per step, so
// the projections and feed-forward run as real GEMMs instead of per-sequence
// vector products. Per-sequence state is limited to the attention caches.
// ---------------------------------------------------------------------------

struct SeqCaches {
    /// Per layer: growing self-attention keys/values, one row per step.
    self_k: Vec<Vec<f64>>,
    self_v: Vec<Vec<f64>>,
    /// Per layer: fixed cross-attention keys/values over the source.
    cross_k: Vec<Vec<f64>>,
    cross_v: Vec<Vec<f64>>,
    src_len: usize,
}

pub(super) fn infer_batch(
    model: &Seq2SeqModel,
    srcs: &[Vec<u32>],
    max_len: usize,
) -> Result<Vec<Vec<u32>>, EngineError> {
    use rayon::prelude::*;
    let cfg = model.config();
    let d = cfg.embedding_size;
    let heads = cfg.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let layers = cfg.layers;
    let p = |name: &str| model.param_named(name);

    // Batched encoder via the packed tape path (eval mode), then per-layer
    // cross K/V projections over all source rows at once.
    let batch = Batch {
        src: srcs.to_vec(),
        tgt_in: srcs.iter().map(|_| vec![super::BOS]).collect(),
        tgt_out: vec![],
    };
    let (src_ids, src_spans) = pack(&batch.src, true)?;
    drop(src_ids);
    let pass = encode_only(model, &batch)?;
    let enc_out = pass.0;

    let mut cross_k_packed = Vec::with_capacity(layers);
    let mut cross_v_packed = Vec::with_capacity(layers);
    for l in 0..layers {
        let prefix = format!("decoder.l{l}.cross_attn");
        cross_k_packed.push(linear(
            &enc_out,
            p(&format!("{prefix}.wk")),
            p(&format!("{prefix}.bk")),
        ));
        cross_v_packed.push(linear(
            &enc_out,
            p(&format!("{prefix}.wv")),
            p(&format!("{prefix}.bv")),
        ));
    }

    let n = srcs.len();
    let mut caches: Vec<SeqCaches> = src_spans
        .iter()
        .map(|&(off, len)| SeqCaches {
            self_k: vec![Vec::with_capacity(max_len * d); layers],
            self_v: vec![Vec::with_capacity(max_len * d); layers],
            cross_k: (0..layers)
                .map(|l| cross_k_packed[l].data()[off * d..(off + len) * d].to_vec())
                .collect(),
            cross_v: (0..layers)
                .map(|l| cross_v_packed[l].data()[off * d..(off + len) * d].to_vec())
                .collect(),
            src_len: len,
        })
        .collect();

    let pos = super::positional_rows(max_len + 1, d);
    let table = p("tgt_embedding.weight");
    let emb_scale = (d as f64).sqrt();
    let mut outputs: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut tokens: Vec<u32> = vec![super::BOS; n];

    for t in 0..max_len {
        let a = active.len();
        if a == 0 {
            break;
        }
        // x rows for the active sequences.
        let mut x = Tensor::zeros(a, d);
        for (row, &seq) in active.iter().enumerate() {
            let dst = x.row_mut(row);
            dst.copy_from_slice(table.row(tokens[seq] as usize));
            for (c, vdst) in dst.iter_mut().enumerate() {
                *vdst = *vdst * emb_scale + pos.at(t, c);
            }
        }

        for l in 0..layers {
            let ln1 = ln_rows(
                &x,
                p(&format!("decoder.l{l}.ln1.gain")),
                p(&format!("decoder.l{l}.ln1.bias")),
            );
            let prefix = format!("decoder.l{l}.self_attn");
            let q = linear(&ln1, p(&format!("{prefix}.wq")), p(&format!("{prefix}.bq")));
            let k_new = linear(&ln1, p(&format!("{prefix}.wk")), p(&format!("{prefix}.bk")));
            let v_new = linear(&ln1, p(&format!("{prefix}.wv")), p(&format!("{prefix}.bv")));
            let mut ctx = Tensor::zeros(a, d);
            {
                let ctx_rows: Vec<&mut [f64]> = ctx.data_mut().chunks_mut(d).collect();
                let cache_refs: Vec<&mut SeqCaches> = {
                    // Disjoint mutable borrows of the active sequences'
                    // caches, in active order.
                    let mut refs: Vec<Option<&mut SeqCaches>> =
                        caches.iter_mut().map(Some).collect();
                    active
                        .iter()
                        .map(|&s| refs[s].take().expect("active sequences are unique"))
                        .collect()
                };
                cache_refs
                    .into_par_iter()
                    .zip(ctx_rows)
                    .enumerate()
                    .for_each(|(row, (cache, ctx_row))| {
                        cache.self_k[l].extend_from_slice(k_new.row(row));
                        cache.self_v[l].extend_from_slice(v_new.row(row));
                        let t_len = cache.self_k[l].len() / d;
                        attend_row(
                            q.row(row),
                            &cache.self_k[l],
                            &cache.self_v[l],
                            t_len,
                            d,
                            heads,
                            scale,
                            ctx_row,
                        );
                    });
            }
            let o = linear(
                &ctx,
                p(&format!("{prefix}.wo")),
                p(&format!("{prefix}.bo")),
            );
            add_inplace(&mut x, &o);

            let ln2 = ln_rows(
                &x,
                p(&format!("decoder.l{l}.ln2.gain")),
                p(&format!("decoder.l{l}.ln2.bias")),
            );
            let prefix = format!("decoder.l{l}.cross_attn");
            let q2 = linear(&ln2, p(&format!("{prefix}.wq")), p(&format!("{prefix}.bq")));
            let mut ctx2 = Tensor::zeros(a, d);
            {
                let ctx_rows: Vec<&mut [f64]> = ctx2.data_mut().chunks_mut(d).collect();
                active
                    .par_iter()
                    .zip(ctx_rows)
                    .enumerate()
                    .for_each(|(row, (&seq, ctx_row))| {
                        let cache = &caches[seq];
                        attend_row(
                            q2.row(row),
                            &cache.cross_k[l],
                            &cache.cross_v[l],
                            cache.src_len,
                            d,
                            heads,
                            scale,
                            ctx_row,
                        );
                    });
            }
            let o2 = linear(
                &ctx2,
                p(&format!("{prefix}.wo")),
                p(&format!("{prefix}.bo")),
            );
            add_inplace(&mut x, &o2);

            let ln3 = ln_rows(
                &x,
                p(&format!("decoder.l{l}.ln3.gain")),
                p(&format!("decoder.l{l}.ln3.bias")),
            );
            let mut h = linear(
                &ln3,
                p(&format!("decoder.l{l}.ffn.w1")),
                p(&format!("decoder.l{l}.ffn.b1")),
            );
            relu_inplace(&mut h);
            let h2 = linear(
                &h,
                p(&format!("decoder.l{l}.ffn.w2")),
                p(&format!("decoder.l{l}.ffn.b2")),
            );
            add_inplace(&mut x, &h2);
        }

        let out = ln_rows(
            &x,
            p("decoder.ln_final.gain"),
            p("decoder.ln_final.bias"),
        );
        let logits = linear(
            &out,
            p("output_projection.weight"),
            p("output_projection.bias"),
        );

        let mut still_active = Vec::with_capacity(a);
        for (row, &seq) in active.iter().enumerate() {
            let next = argmax_row(logits.row(row));
            if next == super::EOS {
                continue;
            }
            outputs[seq].push(next);
            tokens[seq] = next;
            if outputs[seq].len() < max_len {
                still_active.push(seq);
            }
        }
        // Drop caches for retired sequences lazily; active set shrinks.
        active = still_active;
    }
    Ok(outputs)
}

/// Single-query multi-head attention against a flat `[t, d]` cache.
#[allow(clippy::too_many_arguments)]
fn attend_row(
    q: &[f64],
    keys: &[f64],
    values: &[f64],
    t: usize,
    d: usize,
    heads: usize,
    scale: f64,
    out: &mut [f64],
) {
    let dh = d / heads;
    let mut scores = vec![0.0; t];
    for h in 0..heads {
        let col = h * dh;
        for (j, s) in scores.iter_mut().enumerate() {
            let krow = &keys[j * d + col..j * d + col + dh];
            let mut dot = 0.0;
            for (qv, kv) in q[col..col + dh].iter().zip(krow) {
                dot += qv * kv;
            }
            *s = dot * scale;
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            sum += *s;
        }
        for s in scores.iter_mut() {
            *s /= sum;
        }
        let out_h = &mut out[col..col + dh];
        out_h.fill(0.0);
        for (j, s) in scores.iter().enumerate() {
            let vrow = &values[j * d + col..j * d + col + dh];
            for (o, v) in out_h.iter_mut().zip(vrow) {
                *o += s * v;
            }
        }
    }
}

fn add_inplace(x: &mut Tensor, y: &Tensor) {
    for (a, b) in x.data_mut().iter_mut().zip(y.data()) {
        *a += b;
    }
}

fn argmax_row(row: &[f64]) -> u32 {
    let mut best = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best as u32
}

/// Runs only the encoder of the packed eval-mode forward; returns the packed
/// encoder output.
fn encode_only(model: &Seq2SeqModel, batch: &Batch) -> Result<(Tensor,), EngineError> {
    let cfg = model.config();
    let d = cfg.embedding_size;
    let emb_scale = (d as f64).sqrt();
    let mut no_dropout = DropoutCtx::disabled();
    let mut tape = Tape::new();
    let param_vars = model.push_params(&mut tape);
    let layers = Layers {
        model,
        vars: param_vars,
    };
    let (src_ids, src_spans) = pack(&batch.src, true)?;
    let src_table = layers.v("src_embedding.weight");
    let mut x = tape.gather(src_table, &src_ids);
    x = tape.scale(x, emb_scale);
    x = tape.add_const(x, &positional_const(&src_spans, d));
    for l in 0..cfg.layers {
        let ln1 = layers.layer_norm(&mut tape, x, &format!("encoder.l{l}.ln1"));
        let a = layers.attention(
            &mut tape,
            &format!("encoder.l{l}.attn"),
            ln1,
            ln1,
            &src_spans,
            &src_spans,
            false,
            &mut no_dropout,
        );
        x = tape.add(x, a);
        let ln2 = layers.layer_norm(&mut tape, x, &format!("encoder.l{l}.ln2"));
        let h = layers.ffn(&mut tape, ln2, &format!("encoder.l{l}.ffn"), &mut no_dropout);
        x = tape.add(x, h);
    }
    let enc_out = layers.layer_norm(&mut tape, x, "encoder.ln_final");
    Ok((tape.value(enc_out).clone(),))
}
