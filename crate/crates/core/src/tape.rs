//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every forward operation as a node; [`Tape::backward`]
//! walks the nodes in reverse, accumulating vector-Jacobian products. Graphs
//! are rebuilt per forward pass, so parameters enter as fresh leaves each
//! time and their gradients are read back by leaf index.

use crate::tensor::{gemm, matmul, Tensor};
use rand::Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// `(offset, len)` row ranges of sequences packed along tensor rows.
pub type Spans = Vec<(usize, usize)>;

enum Op {
    Leaf,
    Matmul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    /// Broadcasts a `[1, n]` bias over the rows of `a`.
    AddBias {
        a: Var,
        bias: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    /// Elementwise product with a constant mask (dropout, padding masks).
    ConstMul {
        a: Var,
        mask: Tensor,
    },
    /// Elementwise sum with a constant (positional encodings, attention masks).
    AddConst {
        a: Var,
    },
    Scale {
        a: Var,
        c: f64,
    },
    Relu {
        a: Var,
    },
    Tanh {
        a: Var,
    },
    Sigmoid {
        a: Var,
    },
    SoftmaxRows {
        a: Var,
    },
    LogSoftmaxRows {
        a: Var,
    },
    LayerNormRows {
        a: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    /// Rows of `table` selected by token id.
    Gather {
        table: Var,
        ids: Vec<u32>,
    },
    SliceRows {
        a: Var,
        start: usize,
    },
    SliceCols {
        a: Var,
        start: usize,
    },
    ConcatRows {
        parts: Vec<Var>,
    },
    ConcatCols {
        parts: Vec<Var>,
    },
    /// Mean negative log-likelihood of per-row target picks.
    MeanNll {
        logp: Var,
        targets: Vec<u32>,
    },
    SumAll {
        a: Var,
    },
    /// Fused multi-head scaled-dot attention over packed sequences. Queries
    /// row-span `q_spans[i]` attend to keys/values rows `kv_spans[i]`;
    /// softmax rows are cached for the backward pass.
    Attention {
        q: Var,
        k: Var,
        v: Var,
        q_spans: Spans,
        kv_spans: Spans,
        heads: usize,
        /// Cached attention probabilities (pre-dropout), one
        /// `[heads * tq, tk]` tensor per sequence.
        probs: Vec<Tensor>,
        /// Dropout on the attention weights: `(rate, stream seed)`. The mask
        /// is regenerated in the backward pass from the same per-sequence
        /// streams.
        prob_dropout: Option<(f64, u64)>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::with_capacity(1024),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let value = matmul(self.value(a), ta, self.value(b), tb);
        self.push(value, Op::Matmul { a, b, ta, tb })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::from_vec(va.rows(), va.cols(), data);
        self.push(value, Op::Add { a, b })
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(bias));
        assert_eq!(vb.rows(), 1, "bias must be a row vector");
        assert_eq!(va.cols(), vb.cols(), "bias width mismatch");
        let mut value = va.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            for (x, b) in row.iter_mut().zip(vb.data()) {
                *x += b;
            }
        }
        self.push(value, Op::AddBias { a, bias })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::from_vec(va.rows(), va.cols(), data);
        self.push(value, Op::Mul { a, b })
    }

    pub fn const_mul(&mut self, a: Var, mask: Tensor) -> Var {
        let va = self.value(a);
        assert_eq!(va.shape(), mask.shape(), "mask shape mismatch");
        let data = va
            .data()
            .iter()
            .zip(mask.data())
            .map(|(x, m)| x * m)
            .collect();
        let value = Tensor::from_vec(va.rows(), va.cols(), data);
        self.push(value, Op::ConstMul { a, mask })
    }

    pub fn add_const(&mut self, a: Var, t: &Tensor) -> Var {
        let va = self.value(a);
        assert_eq!(va.shape(), t.shape(), "add_const shape mismatch");
        let data = va.data().iter().zip(t.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_vec(va.rows(), va.cols(), data);
        self.push(value, Op::AddConst { a })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::Scale { a, c })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu { a })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh { a })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(value, Op::Sigmoid { a })
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut value = va.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        self.push(value, Op::SoftmaxRows { a })
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut value = va.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max
                + row
                    .iter()
                    .map(|x| (x - max).exp())
                    .sum::<f64>()
                    .ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        self.push(value, Op::LogSoftmaxRows { a })
    }

    /// Row-wise layer norm with learned gain/bias (both `[1, n]`).
    pub fn layer_norm_rows(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let va = self.value(a);
        let (vg, vb) = (self.value(gain).clone(), self.value(bias).clone());
        assert_eq!(vg.shape(), (1, va.cols()));
        assert_eq!(vb.shape(), (1, va.cols()));
        let n = va.cols() as f64;
        let mut xhat = va.clone();
        let mut inv_std = Vec::with_capacity(va.rows());
        for r in 0..xhat.rows() {
            let row = xhat.row_mut(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for x in row.iter_mut() {
                *x = (*x - mean) * is;
            }
        }
        let mut value = xhat.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            for (c, x) in row.iter_mut().enumerate() {
                *x = *x * vg.data()[c] + vb.data()[c];
            }
        }
        self.push(
            value,
            Op::LayerNormRows {
                a,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    pub fn gather(&mut self, table: Var, ids: &[u32]) -> Var {
        let vt = self.value(table);
        let mut value = Tensor::zeros(ids.len(), vt.cols());
        for (i, &id) in ids.iter().enumerate() {
            value.row_mut(i).copy_from_slice(vt.row(id as usize));
        }
        self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let va = self.value(a);
        assert!(start + len <= va.rows());
        let cols = va.cols();
        let data = va.data()[start * cols..(start + len) * cols].to_vec();
        let value = Tensor::from_vec(len, cols, data);
        self.push(value, Op::SliceRows { a, start })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let va = self.value(a);
        assert!(start + len <= va.cols());
        let mut value = Tensor::zeros(va.rows(), len);
        for r in 0..va.rows() {
            value
                .row_mut(r)
                .copy_from_slice(&va.row(r)[start..start + len]);
        }
        self.push(value, Op::SliceCols { a, start })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let rows: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            let vp = self.value(p);
            assert_eq!(vp.cols(), cols);
            data.extend_from_slice(vp.data());
        }
        let value = Tensor::from_vec(rows, cols, data);
        self.push(
            value,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let vp = self.value(p);
            assert_eq!(vp.rows(), rows);
            for r in 0..rows {
                value.row_mut(r)[offset..offset + vp.cols()].copy_from_slice(vp.row(r));
            }
            offset += vp.cols();
        }
        self.push(
            value,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        )
    }

    /// Mean over rows of `-logp[r, targets[r]]`.
    pub fn mean_nll(&mut self, logp: Var, targets: &[u32]) -> Var {
        let vl = self.value(logp);
        assert_eq!(vl.rows(), targets.len());
        let mut sum = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            sum -= vl.at(r, t as usize);
        }
        let value = Tensor::scalar(sum / targets.len() as f64);
        self.push(
            value,
            Op::MeanNll {
                logp,
                targets: targets.to_vec(),
            },
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(value, Op::SumAll { a })
    }

    /// Fused multi-head attention: `softmax(Q K^T / sqrt(dh)) V` per sequence
    /// and head, over packed row spans. Heads live in column blocks of width
    /// `d / heads`. `causal` masks keys beyond the query position;
    /// `prob_dropout` drops attention weights during training.
    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        q_spans: &Spans,
        kv_spans: &Spans,
        heads: usize,
        causal: bool,
        prob_dropout: Option<(f64, u64)>,
    ) -> Var {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        let d = vq.cols();
        assert_eq!(vk.cols(), d);
        assert_eq!(vv.cols(), d);
        assert_eq!(q_spans.len(), kv_spans.len());
        assert_eq!(d % heads, 0, "heads must divide the model width");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let qd = vq.data();
        let kd = vk.data();
        let vd = vv.data();
        let n_q = vq.rows();
        let mut out = Tensor::zeros(n_q, d);
        let out_slices = split_row_spans(out.data_mut(), q_spans, d);

        let probs: Vec<Tensor> = out_slices
            .into_par_iter()
            .zip(q_spans.par_iter().zip(kv_spans.par_iter()))
            .enumerate()
            .map(|(seq_idx, (out_rows, (&(qo, tq), &(ko, tk))))| {
                let mut seq_probs = Tensor::zeros(heads * tq, tk);
                let mut mask_rng = prob_dropout.map(|(_, seed)| seq_stream(seed, seq_idx));
                let mut masked = vec![0.0; tq * tk];
                for h in 0..heads {
                    let col = h * dh;
                    let p = &mut seq_probs.data_mut()[h * tq * tk..(h + 1) * tq * tk];
                    // scores = Q_h K_h^T * scale
                    crate::tensor::gemm_views(
                        (tq, dh, tk),
                        scale,
                        qd,
                        (qo * d + col, d, 1),
                        kd,
                        (ko * d + col, 1, d),
                        0.0,
                        p,
                        (0, tk, 1),
                    );
                    if causal {
                        debug_assert_eq!(tq, tk);
                        for i in 0..tq {
                            for pj in p[i * tk..][..tk].iter_mut().skip(i + 1) {
                                *pj = f64::NEG_INFINITY;
                            }
                        }
                    }
                    for i in 0..tq {
                        let row = &mut p[i * tk..(i + 1) * tk];
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let mut sum = 0.0;
                        for x in row.iter_mut() {
                            *x = (*x - max).exp();
                            sum += *x;
                        }
                        for x in row.iter_mut() {
                            *x /= sum;
                        }
                    }
                    // ctx_h = (dropped) probs V_h, into the head's columns.
                    let ctx_src: &[f64] = match (&mut mask_rng, prob_dropout) {
                        (Some(rng), Some((rate, _))) => {
                            let keep = 1.0 - rate;
                            let inv = 1.0 / keep;
                            for (m, &pv) in masked.iter_mut().zip(p.iter()) {
                                *m = if rng.random::<f64>() < keep {
                                    pv * inv
                                } else {
                                    0.0
                                };
                            }
                            &masked
                        }
                        _ => p,
                    };
                    crate::tensor::gemm_views(
                        (tq, tk, dh),
                        1.0,
                        ctx_src,
                        (0, tk, 1),
                        vd,
                        (ko * d + col, d, 1),
                        0.0,
                        out_rows,
                        (col, d, 1),
                    );
                }
                seq_probs
            })
            .collect();

        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                q_spans: q_spans.clone(),
                kv_spans: kv_spans.clone(),
                heads,
                probs,
                prob_dropout,
            },
        )
    }

    /// Runs reverse-mode accumulation from a scalar loss. Returns per-node
    /// gradients; absent entries never influenced the loss.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.value(loss).shape(),
            (1, 1),
            "backward requires a scalar loss"
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Matmul { a, b, ta, tb } => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let mut da = Tensor::zeros(va.rows(), va.cols());
                    let mut db = Tensor::zeros(vb.rows(), vb.cols());
                    match (ta, tb) {
                        (false, false) => {
                            gemm(1.0, &g, false, vb, true, 0.0, &mut da);
                            gemm(1.0, va, true, &g, false, 0.0, &mut db);
                        }
                        (false, true) => {
                            gemm(1.0, &g, false, vb, false, 0.0, &mut da);
                            gemm(1.0, &g, true, va, false, 0.0, &mut db);
                        }
                        (true, false) => {
                            gemm(1.0, vb, false, &g, true, 0.0, &mut da);
                            gemm(1.0, va, false, &g, false, 0.0, &mut db);
                        }
                        (true, true) => {
                            gemm(1.0, vb, true, &g, true, 0.0, &mut da);
                            gemm(1.0, &g, true, va, true, 0.0, &mut db);
                        }
                    }
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g);
                }
                Op::AddBias { a, bias } => {
                    let mut db = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (acc, x) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                            *acc += x;
                        }
                    }
                    accumulate(&mut grads[bias.0], db);
                    accumulate(&mut grads[a.0], g);
                }
                Op::Mul { a, b } => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let da = elementwise(&g, vb, |g, y| g * y);
                    let db = elementwise(&g, va, |g, x| g * x);
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::ConstMul { a, mask } => {
                    accumulate(&mut grads[a.0], elementwise(&g, mask, |g, m| g * m));
                }
                Op::AddConst { a } => {
                    accumulate(&mut grads[a.0], g);
                }
                Op::Scale { a, c } => {
                    accumulate(&mut grads[a.0], g.map(|x| x * c));
                }
                Op::Relu { a } => {
                    let va = &self.nodes[a.0].value;
                    let da = elementwise(&g, va, |g, x| if x > 0.0 { g } else { 0.0 });
                    accumulate(&mut grads[a.0], da);
                }
                Op::Tanh { a } => {
                    let da = elementwise(&g, &node.value, |g, y| g * (1.0 - y * y));
                    accumulate(&mut grads[a.0], da);
                }
                Op::Sigmoid { a } => {
                    let da = elementwise(&g, &node.value, |g, y| g * y * (1.0 - y));
                    accumulate(&mut grads[a.0], da);
                }
                Op::SoftmaxRows { a } => {
                    let y = &node.value;
                    let mut da = g.clone();
                    for r in 0..da.rows() {
                        let dot: f64 = da.row(r).iter().zip(y.row(r)).map(|(g, y)| g * y).sum();
                        for (d, &yv) in da.row_mut(r).iter_mut().zip(y.row(r)) {
                            *d = (*d - dot) * yv;
                        }
                    }
                    accumulate(&mut grads[a.0], da);
                }
                Op::LogSoftmaxRows { a } => {
                    let y = &node.value;
                    let mut da = g.clone();
                    for r in 0..da.rows() {
                        let gsum: f64 = da.row(r).iter().sum();
                        for (d, &yv) in da.row_mut(r).iter_mut().zip(y.row(r)) {
                            *d -= yv.exp() * gsum;
                        }
                    }
                    accumulate(&mut grads[a.0], da);
                }
                Op::LayerNormRows {
                    a,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let vg = &self.nodes[gain.0].value;
                    let n = g.cols();
                    let mut dgain = Tensor::zeros(1, n);
                    let mut dbias = Tensor::zeros(1, n);
                    let mut da = Tensor::zeros(g.rows(), n);
                    for (r, &is) in inv_std.iter().enumerate().take(g.rows()) {
                        let grow = g.row(r);
                        let xrow = xhat.row(r);
                        for c in 0..n {
                            dgain.row_mut(0)[c] += grow[c] * xrow[c];
                            dbias.row_mut(0)[c] += grow[c];
                        }
                        // dxhat = g * gain; then project out mean and the
                        // xhat component, scaled by inv_std.
                        let mut sum_dx = 0.0;
                        let mut sum_dx_xhat = 0.0;
                        for c in 0..n {
                            let dx = grow[c] * vg.data()[c];
                            sum_dx += dx;
                            sum_dx_xhat += dx * xrow[c];
                        }
                        let nf = n as f64;
                        for c in 0..n {
                            let dx = grow[c] * vg.data()[c];
                            da.row_mut(r)[c] =
                                is * (dx - sum_dx / nf - xrow[c] * sum_dx_xhat / nf);
                        }
                    }
                    accumulate(&mut grads[gain.0], dgain);
                    accumulate(&mut grads[bias.0], dbias);
                    accumulate(&mut grads[a.0], da);
                }
                Op::Gather { table, ids } => {
                    let vt = &self.nodes[table.0].value;
                    let mut dt = Tensor::zeros(vt.rows(), vt.cols());
                    for (i, &id) in ids.iter().enumerate() {
                        for (acc, x) in dt.row_mut(id as usize).iter_mut().zip(g.row(i)) {
                            *acc += x;
                        }
                    }
                    accumulate(&mut grads[table.0], dt);
                }
                Op::SliceRows { a, start } => {
                    let va = &self.nodes[a.0].value;
                    let mut da = Tensor::zeros(va.rows(), va.cols());
                    for r in 0..g.rows() {
                        da.row_mut(start + r).copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads[a.0], da);
                }
                Op::SliceCols { a, start } => {
                    let va = &self.nodes[a.0].value;
                    let mut da = Tensor::zeros(va.rows(), va.cols());
                    for r in 0..g.rows() {
                        da.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads[a.0], da);
                }
                Op::ConcatRows { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.nodes[p.0].value.rows();
                        let cols = g.cols();
                        let slice =
                            g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        accumulate(&mut grads[p.0], Tensor::from_vec(rows, cols, slice));
                        offset += rows;
                    }
                }
                Op::ConcatCols { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let vp = &self.nodes[p.0].value;
                        let mut dp = Tensor::zeros(vp.rows(), vp.cols());
                        for r in 0..vp.rows() {
                            dp.row_mut(r)
                                .copy_from_slice(&g.row(r)[offset..offset + vp.cols()]);
                        }
                        accumulate(&mut grads[p.0], dp);
                        offset += vp.cols();
                    }
                }
                Op::MeanNll { logp, targets } => {
                    let vl = &self.nodes[logp.0].value;
                    let scale = g.item() / targets.len() as f64;
                    let mut dl = Tensor::zeros(vl.rows(), vl.cols());
                    for (r, &t) in targets.iter().enumerate() {
                        dl.row_mut(r)[t as usize] = -scale;
                    }
                    accumulate(&mut grads[logp.0], dl);
                }
                Op::SumAll { a } => {
                    let va = &self.nodes[a.0].value;
                    let gv = g.item();
                    accumulate(
                        &mut grads[a.0],
                        Tensor::from_vec(va.rows(), va.cols(), vec![gv; va.len()]),
                    );
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    q_spans,
                    kv_spans,
                    heads,
                    probs,
                    prob_dropout,
                } => {
                    let heads = *heads;
                    let prob_dropout = *prob_dropout;
                    let (vq, vk, vv) = (
                        &self.nodes[q.0].value,
                        &self.nodes[k.0].value,
                        &self.nodes[v.0].value,
                    );
                    let d = vq.cols();
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Tensor::zeros(vq.rows(), d);
                    let mut dk = Tensor::zeros(vk.rows(), d);
                    let mut dv = Tensor::zeros(vv.rows(), d);
                    {
                        let dq_slices = split_row_spans(dq.data_mut(), q_spans, d);
                        let dkv_slices = split_row_spans_pair(
                            dk.data_mut(),
                            dv.data_mut(),
                            kv_spans,
                            d,
                        );
                        let gd = g.data();
                        let qd = vq.data();
                        let kd = vk.data();
                        let vd = vv.data();
                        dq_slices
                            .into_par_iter()
                            .zip(dkv_slices)
                            .zip(
                                q_spans
                                    .par_iter()
                                    .enumerate()
                                    .zip(kv_spans.par_iter())
                                    .zip(probs.par_iter()),
                            )
                            .for_each(
                                |(
                                    (dq_rows, (dk_rows, dv_rows)),
                                    (((seq_idx, &(qo, tq)), &(ko, tk)), seq_probs),
                                )| {
                                    let mut dprobs = vec![0.0; tq * tk];
                                    let mut mask_rng =
                                        prob_dropout.map(|(_, seed)| seq_stream(seed, seq_idx));
                                    let mut masked = vec![0.0; tq * tk];
                                    for h in 0..heads {
                                        let col = h * dh;
                                        let p = &seq_probs.data()
                                            [h * tq * tk..(h + 1) * tq * tk];
                                        // Replay the forward's dropout mask for
                                        // this (sequence, head).
                                        let (fwd_probs, mask_scale): (&[f64], Option<&[f64]>) =
                                            match (&mut mask_rng, prob_dropout) {
                                                (Some(rng), Some((rate, _))) => {
                                                    let keep = 1.0 - rate;
                                                    let inv = 1.0 / keep;
                                                    for (m, &pv) in
                                                        masked.iter_mut().zip(p.iter())
                                                    {
                                                        *m = if rng.random::<f64>() < keep {
                                                            pv * inv
                                                        } else {
                                                            0.0
                                                        };
                                                    }
                                                    (&masked, Some(&masked))
                                                }
                                                _ => (p, None),
                                            };
                                        // dprobs(dropped) = dCtx_h V_h^T
                                        crate::tensor::gemm_views(
                                            (tq, dh, tk),
                                            1.0,
                                            gd,
                                            (qo * d + col, d, 1),
                                            vd,
                                            (ko * d + col, 1, d),
                                            0.0,
                                            &mut dprobs,
                                            (0, tk, 1),
                                        );
                                        // dV_h = dropped_probs^T dCtx_h
                                        crate::tensor::gemm_views(
                                            (tk, tq, dh),
                                            1.0,
                                            fwd_probs,
                                            (0, 1, tk),
                                            gd,
                                            (qo * d + col, d, 1),
                                            0.0,
                                            dv_rows,
                                            (col, d, 1),
                                        );
                                        // Chain through the dropout mask:
                                        // d(pre-drop probs) entries scale by
                                        // mask/keep, which is masked/probs.
                                        if let (Some(mask), Some((rate, _))) =
                                            (mask_scale, prob_dropout)
                                        {
                                            let keep = 1.0 - rate;
                                            let inv = 1.0 / keep;
                                            for ((dp, &m), &pv) in dprobs
                                                .iter_mut()
                                                .zip(mask.iter())
                                                .zip(p.iter())
                                            {
                                                // m is either pv*inv or 0.
                                                *dp *= if m == 0.0 { 0.0 } else { inv };
                                                let _ = pv;
                                            }
                                        }
                                        // Softmax VJP in place, folding the
                                        // score scale.
                                        for i in 0..tq {
                                            let prow = &p[i * tk..(i + 1) * tk];
                                            let drow = &mut dprobs[i * tk..(i + 1) * tk];
                                            let dot: f64 = drow
                                                .iter()
                                                .zip(prow)
                                                .map(|(a, b)| a * b)
                                                .sum();
                                            for (dx, px) in drow.iter_mut().zip(prow) {
                                                *dx = (*dx - dot) * px * scale;
                                            }
                                        }
                                        // dQ_h = dScores K_h
                                        crate::tensor::gemm_views(
                                            (tq, tk, dh),
                                            1.0,
                                            &dprobs,
                                            (0, tk, 1),
                                            kd,
                                            (ko * d + col, d, 1),
                                            0.0,
                                            dq_rows,
                                            (col, d, 1),
                                        );
                                        // dK_h = dScores^T Q_h
                                        crate::tensor::gemm_views(
                                            (tk, tq, dh),
                                            1.0,
                                            &dprobs,
                                            (0, 1, tk),
                                            qd,
                                            (qo * d + col, d, 1),
                                            0.0,
                                            dk_rows,
                                            (col, d, 1),
                                        );
                                    }
                                },
                            );
                    }
                    accumulate(&mut grads[q.0], dq);
                    accumulate(&mut grads[k.0], dk);
                    accumulate(&mut grads[v.0], dv);
                }
            }
        }
        Gradients { grads }
    }
}

/// Derives the per-sequence dropout stream for the fused attention op.
fn seq_stream(seed: u64, seq_idx: usize) -> rand_chacha::ChaCha12Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(seq_idx as u64 + 1);
    rng
}

/// Splits a packed row-major buffer into per-span mutable row slices.
/// Spans must be ascending and non-overlapping.
fn split_row_spans<'a>(
    mut buf: &'a mut [f64],
    spans: &[(usize, usize)],
    cols: usize,
) -> Vec<&'a mut [f64]> {
    let mut out = Vec::with_capacity(spans.len());
    let mut consumed = 0usize;
    for &(off, len) in spans {
        assert!(off >= consumed, "spans must be ascending and disjoint");
        let skip = (off - consumed) * cols;
        let (_, rest) = buf.split_at_mut(skip);
        let (rows, rest) = rest.split_at_mut(len * cols);
        out.push(rows);
        buf = rest;
        consumed = off + len;
    }
    out
}

fn split_row_spans_pair<'a>(
    a: &'a mut [f64],
    b: &'a mut [f64],
    spans: &[(usize, usize)],
    cols: usize,
) -> Vec<(&'a mut [f64], &'a mut [f64])> {
    split_row_spans(a, spans, cols)
        .into_iter()
        .zip(split_row_spans(b, spans, cols))
        .collect()
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

fn accumulate(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        Some(acc) => {
            debug_assert_eq!(acc.shape(), delta.shape());
            for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                *a += d;
            }
        }
        None => *slot = Some(delta),
    }
}

fn elementwise(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(g.shape(), other.shape());
    let data = g
        .data()
        .iter()
        .zip(other.data())
        .map(|(&a, &b)| f(a, b))
        .collect();
    Tensor::from_vec(g.rows(), g.cols(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// Central-difference gradient of a scalar-valued graph with respect to
    /// one leaf, compared entry-by-entry against the tape.
    fn grad_check<F>(build: F, leaves: &[Tensor], check_leaf: usize)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &vars);
        let grads = tape.backward(loss);
        let analytic = grads.get(vars[check_leaf]).expect("leaf reached").clone();

        let eps = 1e-5;
        let base = &leaves[check_leaf];
        for i in 0..base.len() {
            let eval = |delta: f64| {
                let mut perturbed = leaves.to_vec();
                perturbed[check_leaf].data_mut()[i] += delta;
                let mut t = Tape::new();
                let vs: Vec<Var> = perturbed.iter().map(|t2| t.leaf(t2.clone())).collect();
                let l = build(&mut t, &vs);
                t.value(l).item()
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            assert!(
                (a - numeric).abs() / denom < 1e-4,
                "leaf {check_leaf} entry {i}: analytic {a} vs numeric {numeric}"
            );
        }
    }

    fn randt(rng: &mut ChaCha12Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn matmul_gradients_all_transpositions() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        for (ta, tb) in [(false, false), (false, true), (true, false), (true, true)] {
            let a = if ta {
                randt(&mut rng, 4, 3)
            } else {
                randt(&mut rng, 3, 4)
            };
            let b = if tb {
                randt(&mut rng, 5, 4)
            } else {
                randt(&mut rng, 4, 5)
            };
            for leaf in 0..2 {
                grad_check(
                    |t, vs| {
                        let m = t.matmul_t(vs[0], ta, vs[1], tb);
                        t.sum_all(m)
                    },
                    &[a.clone(), b.clone()],
                    leaf,
                );
            }
        }
    }

    #[test]
    fn elementwise_op_gradients() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let x = randt(&mut rng, 3, 4);
        let y = randt(&mut rng, 3, 4);
        grad_check(
            |t, vs| {
                let m = t.mul(vs[0], vs[1]);
                let r = t.tanh(m);
                t.sum_all(r)
            },
            &[x.clone(), y.clone()],
            0,
        );
        grad_check(
            |t, vs| {
                let s = t.sigmoid(vs[0]);
                let a = t.add(s, vs[1]);
                let r = t.relu(a);
                t.sum_all(r)
            },
            &[x.clone(), y.clone()],
            1,
        );
        grad_check(
            |t, vs| {
                let s = t.scale(vs[0], 2.5);
                t.sum_all(s)
            },
            &[x],
            0,
        );
    }

    #[test]
    fn softmax_and_nll_gradients() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let x = randt(&mut rng, 4, 6);
        // Weighted sum over softmax to exercise off-target entries too.
        let w = randt(&mut rng, 4, 6);
        grad_check(
            |t, vs| {
                let s = t.softmax_rows(vs[0]);
                let m = t.mul(s, vs[1]);
                t.sum_all(m)
            },
            &[x.clone(), w.clone()],
            0,
        );
        grad_check(
            |t, vs| {
                let lp = t.log_softmax_rows(vs[0]);
                t.mean_nll(lp, &[1, 3, 0, 5])
            },
            &[x],
            0,
        );
    }

    #[test]
    fn layer_norm_gradients() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let x = randt(&mut rng, 3, 8);
        let g = randt(&mut rng, 1, 8);
        let b = randt(&mut rng, 1, 8);
        let w = randt(&mut rng, 3, 8);
        for leaf in 0..3 {
            grad_check(
                |t, vs| {
                    let ln = t.layer_norm_rows(vs[0], vs[1], vs[2], 1e-5);
                    let m = t.mul(ln, vs[3]);
                    t.sum_all(m)
                },
                &[x.clone(), g.clone(), b.clone(), w.clone()],
                leaf,
            );
        }
    }

    #[test]
    fn structural_op_gradients() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let table = randt(&mut rng, 5, 4);
        let w = randt(&mut rng, 3, 4);
        grad_check(
            |t, vs| {
                let g = t.gather(vs[0], &[2, 0, 2]);
                let m = t.mul(g, vs[1]);
                t.sum_all(m)
            },
            &[table, w],
            0,
        );

        let x = randt(&mut rng, 6, 4);
        let w2 = randt(&mut rng, 2, 2);
        grad_check(
            |t, vs| {
                let r = t.slice_rows(vs[0], 1, 2);
                let c = t.slice_cols(r, 1, 2);
                let m = t.mul(c, vs[1]);
                t.sum_all(m)
            },
            &[x.clone(), w2],
            0,
        );

        let y = randt(&mut rng, 6, 4);
        grad_check(
            |t, vs| {
                let top = t.slice_rows(vs[0], 0, 3);
                let bot = t.slice_rows(vs[1], 3, 3);
                let cat = t.concat_rows(&[top, bot]);
                let left = t.slice_cols(cat, 0, 2);
                let right = t.slice_cols(cat, 2, 2);
                let wide = t.concat_cols(&[right, left]);
                t.sum_all(wide)
            },
            &[x, y],
            0,
        );
    }

    #[test]
    fn add_bias_and_masks() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let x = randt(&mut rng, 4, 3);
        let b = randt(&mut rng, 1, 3);
        let mask = randt(&mut rng, 4, 3);
        for leaf in 0..2 {
            grad_check(
                |t, vs| {
                    let ab = t.add_bias(vs[0], vs[1]);
                    let cm = t.const_mul(ab, mask.clone());
                    t.sum_all(cm)
                },
                &[x.clone(), b.clone()],
                leaf,
            );
        }
    }

    #[test]
    fn uniform_logits_loss_is_ln_vocab() {
        let vocab = 7;
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(3, vocab));
        let lp = tape.log_softmax_rows(logits);
        let loss = tape.mean_nll(lp, &[0, 3, 6]);
        let expected = (vocab as f64).ln();
        assert!((tape.value(loss).item() - expected).abs() < 1e-12);
    }
}
