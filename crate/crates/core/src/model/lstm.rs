//! Unidirectional LSTM encoder-decoder with optional additive attention.
//!
//! The recurrence is batched across sequences per time step (inactive
//! sequences freeze their state through constant masks); attention and the
//! output projection run on per-sequence slices of the final layer's hidden
//! states. Decoder states start from the encoder's final states layer by
//! layer. Attention conditions the output layer only; the recurrent input is
//! the target embedding alone.

use super::{
    Batch, DropoutCtx, EngineError, ForwardPass, InitKind, ModelConfig, ParamGroup, Seq2SeqModel,
};
use crate::tape::{Tape, Var};
use crate::tensor::{matmul, Tensor};

type Shape = (String, ParamGroup, InitKind, usize, usize);

pub(super) fn param_shapes(cfg: &ModelConfig) -> Vec<Shape> {
    let e = cfg.embedding_size;
    let h = cfg.hidden_or_ffn_size;
    let mut out: Vec<Shape> = vec![
        (
            "src_embedding.weight".into(),
            ParamGroup::SrcEmbedding,
            InitKind::Embedding,
            cfg.src_vocab,
            e,
        ),
        (
            "tgt_embedding.weight".into(),
            ParamGroup::TgtEmbedding,
            InitKind::Embedding,
            cfg.tgt_vocab,
            e,
        ),
    ];
    for (side, group) in [
        ("encoder", ParamGroup::Encoder),
        ("decoder", ParamGroup::Decoder),
    ] {
        for l in 0..cfg.layers {
            let input = if l == 0 { e } else { h };
            out.push((
                format!("{side}.l{l}.w_ih"),
                group,
                InitKind::Matrix,
                input,
                4 * h,
            ));
            out.push((
                format!("{side}.l{l}.w_hh"),
                group,
                InitKind::Matrix,
                h,
                4 * h,
            ));
            out.push((format!("{side}.l{l}.b"), group, InitKind::Bias, 1, 4 * h));
        }
    }
    if cfg.attention_enabled {
        let g = ParamGroup::Decoder;
        out.push(("decoder.attn.w_dec".into(), g, InitKind::Matrix, h, h));
        out.push(("decoder.attn.w_enc".into(), g, InitKind::Matrix, h, h));
        out.push(("decoder.attn.v".into(), g, InitKind::Matrix, h, 1));
    }
    let feat = if cfg.attention_enabled { 2 * h } else { h };
    out.push((
        "output_projection.weight".into(),
        ParamGroup::OutputProjection,
        InitKind::Matrix,
        feat,
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

fn strip_pad(seqs: &[Vec<u32>], strip: bool) -> Result<Vec<Vec<u32>>, EngineError> {
    let mut out = Vec::with_capacity(seqs.len());
    for s in seqs {
        let kept: Vec<u32> = if strip {
            s.iter().copied().filter(|&t| t != super::PAD).collect()
        } else {
            s.clone()
        };
        if kept.is_empty() {
            return Err(EngineError::InvalidConfig(
                "sequence empty after PAD stripping".into(),
            ));
        }
        out.push(kept);
    }
    Ok(out)
}

struct Recurrence {
    /// Final-layer hidden state per time step, `[B, H]` each.
    top_h: Vec<Var>,
    /// Final (h, c) per layer after the last step.
    final_h: Vec<Var>,
    final_c: Vec<Var>,
}

/// Runs the stacked LSTM over `seqs` (batched per step). `init` carries the
/// starting (h, c) per layer.
#[allow(clippy::too_many_arguments)]
fn run_recurrence(
    model: &Seq2SeqModel,
    tape: &mut Tape,
    vars: &[Var],
    side: &str,
    table: Var,
    seqs: &[Vec<u32>],
    init: Option<(&[Var], &[Var])>,
    dropout: &mut DropoutCtx,
) -> Recurrence {
    let cfg = model.config();
    let bsz = seqs.len();
    let hid = cfg.hidden_or_ffn_size;
    let max_t = seqs.iter().map(|s| s.len()).max().unwrap_or(0);

    let mut h: Vec<Var> = Vec::new();
    let mut c: Vec<Var> = Vec::new();
    for l in 0..cfg.layers {
        match init {
            Some((ih, ic)) => {
                h.push(ih[l]);
                c.push(ic[l]);
            }
            None => {
                h.push(tape.leaf(Tensor::zeros(bsz, hid)));
                c.push(tape.leaf(Tensor::zeros(bsz, hid)));
            }
        }
    }

    let mut top_h = Vec::with_capacity(max_t);
    for t in 0..max_t {
        let ids: Vec<u32> = seqs
            .iter()
            .map(|s| s.get(t).copied().unwrap_or(super::PAD))
            .collect();
        let mut x = tape.gather(table, &ids);

        // 1 while the sequence is still active at step t, else freeze.
        let mask_data: Vec<f64> = seqs
            .iter()
            .flat_map(|s| {
                let active = if t < s.len() { 1.0 } else { 0.0 };
                std::iter::repeat_n(active, hid)
            })
            .collect();
        let active = Tensor::from_vec(bsz, hid, mask_data);
        let inactive = active.map(|m| 1.0 - m);

        for l in 0..cfg.layers {
            if l > 0 {
                x = dropout.apply(tape, x);
            }
            let w_ih = model.var_named(vars, &format!("{side}.l{l}.w_ih"));
            let w_hh = model.var_named(vars, &format!("{side}.l{l}.w_hh"));
            let b = model.var_named(vars, &format!("{side}.l{l}.b"));
            let zi = tape.matmul(x, w_ih);
            let zh = tape.matmul(h[l], w_hh);
            let zsum = tape.add(zi, zh);
            let z = tape.add_bias(zsum, b);
            let i_gate = {
                let s = tape.slice_cols(z, 0, hid);
                tape.sigmoid(s)
            };
            let f_gate = {
                let s = tape.slice_cols(z, hid, hid);
                tape.sigmoid(s)
            };
            let g_gate = {
                let s = tape.slice_cols(z, 2 * hid, hid);
                tape.tanh(s)
            };
            let o_gate = {
                let s = tape.slice_cols(z, 3 * hid, hid);
                tape.sigmoid(s)
            };
            let fc = tape.mul(f_gate, c[l]);
            let ig = tape.mul(i_gate, g_gate);
            let c_new = tape.add(fc, ig);
            let c_tanh = tape.tanh(c_new);
            let h_new = tape.mul(o_gate, c_tanh);

            let h_keep = tape.const_mul(h_new, active.clone());
            let h_old = tape.const_mul(h[l], inactive.clone());
            h[l] = tape.add(h_keep, h_old);
            let c_keep = tape.const_mul(c_new, active.clone());
            let c_old = tape.const_mul(c[l], inactive.clone());
            c[l] = tape.add(c_keep, c_old);

            x = h[l];
        }
        top_h.push(h[cfg.layers - 1]);
    }
    Recurrence {
        top_h,
        final_h: h,
        final_c: c,
    }
}

/// Gathers one sequence's hidden rows `[len, H]` out of the per-step batch
/// tensors.
fn per_seq_states(tape: &mut Tape, top_h: &[Var], seq_index: usize, len: usize) -> Var {
    let rows: Vec<Var> = (0..len)
        .map(|t| tape.slice_rows(top_h[t], seq_index, 1))
        .collect();
    tape.concat_rows(&rows)
}

pub(super) fn forward(
    model: &Seq2SeqModel,
    batch: &Batch,
    dropout: &mut DropoutCtx,
) -> Result<ForwardPass, EngineError> {
    let cfg = model.config();
    let mut tape = Tape::new();
    let param_vars = model.push_params(&mut tape);

    let src = strip_pad(&batch.src, true)?;
    let tgt = strip_pad(&batch.tgt_in, false)?;

    let src_table = model.var_named(&param_vars, "src_embedding.weight");
    let enc = run_recurrence(
        model,
        &mut tape,
        &param_vars,
        "encoder",
        src_table,
        &src,
        None,
        dropout,
    );

    let tgt_table = model.var_named(&param_vars, "tgt_embedding.weight");
    let dec = run_recurrence(
        model,
        &mut tape,
        &param_vars,
        "decoder",
        tgt_table,
        &tgt,
        Some((&enc.final_h, &enc.final_c)),
        dropout,
    );

    // Per-sequence features -> logits, concatenated in batch order to match
    // the packed target layout.
    let w_out = model.var_named(&param_vars, "output_projection.weight");
    let b_out = model.var_named(&param_vars, "output_projection.bias");
    let mut spans = Vec::with_capacity(tgt.len());
    let mut offset = 0;
    let mut logit_parts = Vec::with_capacity(tgt.len());
    for (b, tseq) in tgt.iter().enumerate() {
        let h_dec = per_seq_states(&mut tape, &dec.top_h, b, tseq.len());
        let feats = if cfg.attention_enabled {
            let enc_h = per_seq_states(&mut tape, &enc.top_h, b, src[b].len());
            let ctx = additive_attention(model, &mut tape, &param_vars, h_dec, enc_h);
            tape.concat_cols(&[h_dec, ctx])
        } else {
            h_dec
        };
        let feats = dropout.apply(&mut tape, feats);
        let lg = tape.matmul(feats, w_out);
        logit_parts.push(tape.add_bias(lg, b_out));
        spans.push((offset, tseq.len()));
        offset += tseq.len();
    }
    let logits = tape.concat_rows(&logit_parts);

    let loss = if batch.tgt_out.is_empty() {
        None
    } else {
        Some(super::transformer::loss_over_targets(
            &mut tape,
            logits,
            &batch.tgt_out,
            &spans,
        )?)
    };

    Ok(ForwardPass {
        tape,
        logits,
        loss,
        param_vars,
    })
}

/// Additive attention: `score(i, j) = v . tanh(W_dec h_i + W_enc e_j)`,
/// context rows are probability-weighted sums of encoder states.
fn additive_attention(
    model: &Seq2SeqModel,
    tape: &mut Tape,
    vars: &[Var],
    h_dec: Var,
    enc_h: Var,
) -> Var {
    let w_dec = model.var_named(vars, "decoder.attn.w_dec");
    let w_enc = model.var_named(vars, "decoder.attn.w_enc");
    let v = model.var_named(vars, "decoder.attn.v");
    let d = tape.matmul(h_dec, w_dec);
    let e = tape.matmul(enc_h, w_enc);
    let s_len = tape.value(e).rows();
    let mut cols = Vec::with_capacity(s_len);
    for j in 0..s_len {
        let ej = tape.slice_rows(e, j, 1);
        let u = tape.add_bias(d, ej);
        let u = tape.tanh(u);
        cols.push(tape.matmul(u, v));
    }
    let scores = tape.concat_cols(&cols);
    let probs = tape.softmax_rows(scores);
    tape.matmul(probs, enc_h)
}

// ---------------------------------------------------------------------------
// Incremental inference (greedy decoding).
// ---------------------------------------------------------------------------

pub(super) struct InferCtx<'m> {
    model: &'m Seq2SeqModel,
    enc_h: Tensor,
    /// Encoder states premultiplied by `W_enc`.
    enc_proj: Option<Tensor>,
    h: Vec<Tensor>,
    c: Vec<Tensor>,
}

fn lstm_cell(
    x: &Tensor,
    h: &Tensor,
    c: &Tensor,
    w_ih: &Tensor,
    w_hh: &Tensor,
    b: &Tensor,
) -> (Tensor, Tensor) {
    let hid = h.cols();
    let mut z = matmul(x, false, w_ih, false);
    let zh = matmul(h, false, w_hh, false);
    for ((zv, hv), bv) in z
        .data_mut()
        .iter_mut()
        .zip(zh.data())
        .zip(b.data().iter().cycle())
    {
        *zv += hv + bv;
    }
    let sigma = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut h_new = Tensor::zeros(1, hid);
    let mut c_new = Tensor::zeros(1, hid);
    for k in 0..hid {
        let i = sigma(z.at(0, k));
        let f = sigma(z.at(0, hid + k));
        let g = z.at(0, 2 * hid + k).tanh();
        let o = sigma(z.at(0, 3 * hid + k));
        let cv = f * c.at(0, k) + i * g;
        c_new.set(0, k, cv);
        h_new.set(0, k, o * cv.tanh());
    }
    (h_new, c_new)
}

pub(super) fn infer_begin<'m>(
    model: &'m Seq2SeqModel,
    src: &[u32],
) -> Result<InferCtx<'m>, EngineError> {
    let cfg = model.config();
    let hid = cfg.hidden_or_ffn_size;
    let src_ids: Vec<u32> = src.iter().copied().filter(|&t| t != super::PAD).collect();
    if src_ids.is_empty() {
        return Err(EngineError::InvalidConfig("empty source".into()));
    }
    let p = |name: &str| model.param_named(name);
    let table = p("src_embedding.weight");

    let mut h = vec![Tensor::zeros(1, hid); cfg.layers];
    let mut c = vec![Tensor::zeros(1, hid); cfg.layers];
    let mut enc_h = Tensor::zeros(src_ids.len(), hid);
    for (t, &id) in src_ids.iter().enumerate() {
        let mut x = Tensor::zeros(1, cfg.embedding_size);
        x.row_mut(0).copy_from_slice(table.row(id as usize));
        for l in 0..cfg.layers {
            let (hn, cn) = lstm_cell(
                &x,
                &h[l],
                &c[l],
                p(&format!("encoder.l{l}.w_ih")),
                p(&format!("encoder.l{l}.w_hh")),
                p(&format!("encoder.l{l}.b")),
            );
            h[l] = hn;
            c[l] = cn;
            x = h[l].clone();
        }
        enc_h.row_mut(t).copy_from_slice(h[cfg.layers - 1].row(0));
    }
    let enc_proj = cfg
        .attention_enabled
        .then(|| matmul(&enc_h, false, p("decoder.attn.w_enc"), false));
    Ok(InferCtx {
        model,
        enc_h,
        enc_proj,
        h,
        c,
    })
}

/// Batched lockstep decoding: recurrent states advance for every live
/// sequence at once so the gate projections run as GEMMs; the additive
/// attention read-out stays per sequence.
pub(super) fn infer_batch(
    model: &Seq2SeqModel,
    srcs: &[Vec<u32>],
    max_len: usize,
) -> Result<Vec<Vec<u32>>, EngineError> {
    use rayon::prelude::*;
    let cfg = model.config();
    let hid = cfg.hidden_or_ffn_size;
    let e = cfg.embedding_size;
    let layers = cfg.layers;
    let p = |name: &str| model.param_named(name);

    // Per-sequence encoders (cheap relative to decoding; parallel).
    struct EncState {
        enc_h: Tensor,
        enc_proj: Option<Tensor>,
        h: Vec<Tensor>,
        c: Vec<Tensor>,
    }
    let encoded: Vec<EncState> = srcs
        .par_iter()
        .map(|src| {
            let ctx = infer_begin(model, src)?;
            Ok(EncState {
                enc_h: ctx.enc_h,
                enc_proj: ctx.enc_proj,
                h: ctx.h,
                c: ctx.c,
            })
        })
        .collect::<Result<_, EngineError>>()?;

    let n = srcs.len();
    let mut outputs: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut tokens: Vec<u32> = vec![super::BOS; n];

    // Batched decoder state rows, aligned with `active`.
    let mut h: Vec<Tensor> = (0..layers)
        .map(|l| {
            let mut t = Tensor::zeros(n, hid);
            for (row, enc) in encoded.iter().enumerate() {
                t.row_mut(row).copy_from_slice(enc.h[l].row(0));
            }
            t
        })
        .collect();
    let mut c: Vec<Tensor> = (0..layers)
        .map(|l| {
            let mut t = Tensor::zeros(n, hid);
            for (row, enc) in encoded.iter().enumerate() {
                t.row_mut(row).copy_from_slice(enc.c[l].row(0));
            }
            t
        })
        .collect();

    let table = p("tgt_embedding.weight");
    let feat_cols = if cfg.attention_enabled { 2 * hid } else { hid };
    for _t in 0..max_len {
        let a = active.len();
        if a == 0 {
            break;
        }
        let mut x = Tensor::zeros(a, e);
        for (row, &seq) in active.iter().enumerate() {
            x.row_mut(row)
                .copy_from_slice(table.row(tokens[seq] as usize));
        }
        for l in 0..layers {
            let mut z = matmul(&x, false, p(&format!("decoder.l{l}.w_ih")), false);
            let zh = matmul(&h[l], false, p(&format!("decoder.l{l}.w_hh")), false);
            let b = p(&format!("decoder.l{l}.b"));
            for r in 0..a {
                let zrow = z.row_mut(r);
                for ((zv, hv), bv) in zrow.iter_mut().zip(zh.row(r)).zip(b.data()) {
                    *zv += hv + bv;
                }
            }
            let sigma = |v: f64| 1.0 / (1.0 + (-v).exp());
            let mut x_next = Tensor::zeros(a, hid);
            for r in 0..a {
                let zrow = z.row(r);
                let crow = c[l].row(r).to_vec();
                let hrow_out = x_next.row_mut(r);
                for kx in 0..hid {
                    let i = sigma(zrow[kx]);
                    let f = sigma(zrow[hid + kx]);
                    let g = zrow[2 * hid + kx].tanh();
                    let o = sigma(zrow[3 * hid + kx]);
                    let cv = f * crow[kx] + i * g;
                    c[l].set(r, kx, cv);
                    hrow_out[kx] = o * cv.tanh();
                }
            }
            h[l] = x_next.clone();
            x = x_next;
        }

        // Read-out features: top hidden state, plus attention context.
        let top = &h[layers - 1];
        let mut feats = Tensor::zeros(a, feat_cols);
        if cfg.attention_enabled {
            let d_proj = matmul(top, false, p("decoder.attn.w_dec"), false);
            let v = p("decoder.attn.v");
            let feat_rows: Vec<&mut [f64]> = feats.data_mut().chunks_mut(feat_cols).collect();
            active
                .par_iter()
                .zip(feat_rows)
                .enumerate()
                .for_each(|(row, (&seq, frow))| {
                    let enc = &encoded[seq];
                    let enc_proj = enc.enc_proj.as_ref().expect("attention enabled");
                    let s = enc.enc_h.rows();
                    let mut weights = vec![0.0; s];
                    for (j, w) in weights.iter_mut().enumerate() {
                        let mut dot = 0.0;
                        for kx in 0..hid {
                            dot += (d_proj.at(row, kx) + enc_proj.at(j, kx)).tanh() * v.at(kx, 0);
                        }
                        *w = dot;
                    }
                    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for w in weights.iter_mut() {
                        *w = (*w - max).exp();
                        sum += *w;
                    }
                    frow[..hid].copy_from_slice(top.row(row));
                    for (j, w) in weights.iter().enumerate() {
                        let wn = w / sum;
                        for kx in 0..hid {
                            frow[hid + kx] += wn * enc.enc_h.at(j, kx);
                        }
                    }
                });
        } else {
            for r in 0..a {
                feats.row_mut(r).copy_from_slice(top.row(r));
            }
        }

        let mut logits = matmul(&feats, false, p("output_projection.weight"), false);
        let ob = p("output_projection.bias");
        for r in 0..a {
            for (lv, bv) in logits.row_mut(r).iter_mut().zip(ob.data()) {
                *lv += bv;
            }
        }

        let mut still_active = Vec::with_capacity(a);
        let mut keep_rows = Vec::with_capacity(a);
        for (row, &seq) in active.iter().enumerate() {
            let next = argmax_row(logits.row(row));
            if next == super::EOS {
                continue;
            }
            outputs[seq].push(next);
            tokens[seq] = next;
            if outputs[seq].len() < max_len {
                still_active.push(seq);
                keep_rows.push(row);
            }
        }
        if keep_rows.len() != a {
            for l in 0..layers {
                h[l] = compact_rows(&h[l], &keep_rows);
                c[l] = compact_rows(&c[l], &keep_rows);
            }
        }
        active = still_active;
    }
    Ok(outputs)
}

fn compact_rows(t: &Tensor, keep: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(keep.len(), t.cols());
    for (dst, &src) in keep.iter().enumerate() {
        out.row_mut(dst).copy_from_slice(t.row(src));
    }
    out
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

pub(super) fn infer_step(ctx: &mut InferCtx<'_>, token: u32) -> Vec<f64> {
    let model = ctx.model;
    let cfg = model.config();
    let hid = cfg.hidden_or_ffn_size;
    let p = |name: &str| model.param_named(name);
    let table = p("tgt_embedding.weight");

    let mut x = Tensor::zeros(1, cfg.embedding_size);
    x.row_mut(0).copy_from_slice(table.row(token as usize));
    for l in 0..cfg.layers {
        let (hn, cn) = lstm_cell(
            &x,
            &ctx.h[l],
            &ctx.c[l],
            p(&format!("decoder.l{l}.w_ih")),
            p(&format!("decoder.l{l}.w_hh")),
            p(&format!("decoder.l{l}.b")),
        );
        ctx.h[l] = hn;
        ctx.c[l] = cn;
        x = ctx.h[l].clone();
    }
    let top = &ctx.h[cfg.layers - 1];

    let feats = if let Some(enc_proj) = &ctx.enc_proj {
        let d = matmul(top, false, p("decoder.attn.w_dec"), false);
        let v = p("decoder.attn.v");
        let s = ctx.enc_h.rows();
        let mut scores = vec![0.0; s];
        for (j, score) in scores.iter_mut().enumerate() {
            let mut dot = 0.0;
            for k in 0..hid {
                dot += (d.at(0, k) + enc_proj.at(j, k)).tanh() * v.at(k, 0);
            }
            *score = dot;
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for sv in scores.iter_mut() {
            *sv = (*sv - max).exp();
            sum += *sv;
        }
        let mut feats = Tensor::zeros(1, 2 * hid);
        feats.row_mut(0)[..hid].copy_from_slice(top.row(0));
        for (j, sv) in scores.iter().enumerate() {
            let w = sv / sum;
            for k in 0..hid {
                let acc = feats.at(0, hid + k) + w * ctx.enc_h.at(j, k);
                feats.set(0, hid + k, acc);
            }
        }
        feats
    } else {
        top.clone()
    };

    let mut logits = matmul(&feats, false, p("output_projection.weight"), false);
    for (v, b) in logits
        .data_mut()
        .iter_mut()
        .zip(p("output_projection.bias").data())
    {
        *v += b;
    }
    logits.row(0).to_vec()
}
