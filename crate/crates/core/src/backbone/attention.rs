//! Single-head residual self-attention over the flattened bottleneck grid.
//!
//! Tokens are the columns of the `d × n` feature matrix (channels × pixels).
//! Query and value projections optionally carry LoRA adapters.

use super::lora::{lora_backward, lora_forward, LoraShape};
use super::ops::gemm;

/// Borrowed projection weights for one forward/backward call.
pub struct AttnWeights<'a> {
    pub wq: &'a [f64],
    pub wk: &'a [f64],
    pub wv: &'a [f64],
    pub wo: &'a [f64],
    /// `(A_q, B_q, A_v, B_v)` when adapted.
    pub lora: Option<(&'a [f64], &'a [f64], &'a [f64], &'a [f64])>,
    pub lora_alpha: f64,
    pub lora_rank: usize,
}

#[derive(Debug, Clone, Default)]
pub struct AttnCache {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    hq: Vec<f64>,
    hv: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct AttnGrads {
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
    pub aq: Vec<f64>,
    pub bq: Vec<f64>,
    pub av: Vec<f64>,
    pub bv: Vec<f64>,
}

fn project(w: &[f64], d: usize, x: &[f64], n: usize) -> Vec<f64> {
    let mut y = vec![0.0; d * n];
    gemm(d, d, n, 1.0, w, false, x, false, 0.0, &mut y);
    y
}

/// `x + W_o · (V · softmax(Qᵀ K / √d)ᵀ)`.
pub fn attention_forward(p: &AttnWeights<'_>, x: &[f64], d: usize, n: usize) -> (Vec<f64>, AttnCache) {
    let shape = LoraShape {
        d_in: d,
        d_out: d,
        rank: p.lora_rank,
    };
    let (q, hq, v, hv) = match p.lora {
        Some((aq, bq, av, bv)) => {
            let oq = lora_forward(p.wq, aq, bq, p.lora_alpha, shape, x, n).expect("shapes fixed by arch");
            let ov = lora_forward(p.wv, av, bv, p.lora_alpha, shape, x, n).expect("shapes fixed by arch");
            (oq.y, oq.hidden, ov.y, ov.hidden)
        }
        None => (project(p.wq, d, x, n), Vec::new(), project(p.wv, d, x, n), Vec::new()),
    };
    let k = project(p.wk, d, x, n);

    let scale = 1.0 / (d as f64).sqrt();
    let mut probs = vec![0.0; n * n];
    gemm(n, d, n, scale, &q, true, &k, false, 0.0, &mut probs);
    for row in probs.chunks_exact_mut(n) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    // ctx[c, i] = sum_j v[c, j] * probs[i, j]
    let mut ctx = vec![0.0; d * n];
    gemm(d, n, n, 1.0, &v, false, &probs, true, 0.0, &mut ctx);
    let mut y = x.to_vec();
    gemm(d, d, n, 1.0, p.wo, false, &ctx, false, 1.0, &mut y);
    (
        y,
        AttnCache {
            q,
            k,
            v,
            probs,
            ctx,
            hq,
            hv,
        },
    )
}

/// Backward pass. Accumulates into `dx`; base-weight gradients are computed
/// only when `base_trainable`.
pub fn attention_backward(
    p: &AttnWeights<'_>,
    cache: &AttnCache,
    x: &[f64],
    dy: &[f64],
    d: usize,
    n: usize,
    base_trainable: bool,
    dx: &mut [f64],
) -> AttnGrads {
    let mut g = AttnGrads::default();
    dx.iter_mut().zip(dy).for_each(|(a, b)| *a += b);

    if base_trainable {
        g.wo = vec![0.0; d * d];
        gemm(d, n, d, 1.0, dy, false, &cache.ctx, true, 0.0, &mut g.wo);
    }
    let mut dctx = vec![0.0; d * n];
    gemm(d, d, n, 1.0, p.wo, true, dy, false, 0.0, &mut dctx);

    // dv = dctx · probs ; dprobs = dctxᵀ · v
    let mut dv = vec![0.0; d * n];
    gemm(d, n, n, 1.0, &dctx, false, &cache.probs, false, 0.0, &mut dv);
    let mut ds = vec![0.0; n * n];
    gemm(n, d, n, 1.0, &dctx, true, &cache.v, false, 0.0, &mut ds);
    for (drow, prow) in ds.chunks_exact_mut(n).zip(cache.probs.chunks_exact(n)) {
        let dot: f64 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
        drow.iter_mut().zip(prow).for_each(|(dv, &pv)| *dv = pv * (*dv - dot));
    }
    let scale = 1.0 / (d as f64).sqrt();
    // dq[c, i] = scale * sum_j k[c, j] ds[i, j]; dk[c, j] = scale * sum_i q[c, i] ds[i, j]
    let mut dq = vec![0.0; d * n];
    gemm(d, n, n, scale, &cache.k, false, &ds, true, 0.0, &mut dq);
    let mut dk = vec![0.0; d * n];
    gemm(d, n, n, scale, &cache.q, false, &ds, false, 0.0, &mut dk);

    let shape = LoraShape {
        d_in: d,
        d_out: d,
        rank: p.lora_rank,
    };
    let linear = |w: &[f64], dout: &[f64], gw: &mut Vec<f64>, dx: &mut [f64]| {
        if base_trainable {
            *gw = vec![0.0; d * d];
            gemm(d, n, d, 1.0, dout, false, x, true, 0.0, gw);
        }
        gemm(d, d, n, 1.0, w, true, dout, false, 1.0, dx);
    };
    linear(p.wk, &dk, &mut g.wk, dx);
    match p.lora {
        Some((aq, bq, av, bv)) => {
            if base_trainable {
                g.wq = vec![0.0; d * d];
                gemm(d, n, d, 1.0, &dq, false, x, true, 0.0, &mut g.wq);
                g.wv = vec![0.0; d * d];
                gemm(d, n, d, 1.0, &dv, false, x, true, 0.0, &mut g.wv);
            }
            let lq = lora_backward(p.wq, aq, bq, p.lora_alpha, shape, x, &cache.hq, &dq, n, Some(dx));
            let lv = lora_backward(p.wv, av, bv, p.lora_alpha, shape, x, &cache.hv, &dv, n, Some(dx));
            g.aq = lq.da;
            g.bq = lq.db;
            g.av = lv.da;
            g.bv = lv.db;
        }
        None => {
            linear(p.wq, &dq, &mut g.wq, dx);
            linear(p.wv, &dv, &mut g.wv, dx);
        }
    }
    g
}
