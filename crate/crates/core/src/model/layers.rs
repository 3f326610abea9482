//! Forward and reverse-mode passes for the transformer sublayers.

use ndarray::{Array2, Axis};

use super::{AttentionParams, FeedForwardParams};

pub(crate) struct AttentionCache {
    x: Array2<f64>,
    mem: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Array2<f64>,
    ctx: Array2<f64>,
}

/// Single-head scaled dot-product attention of `x` over `mem`.
pub(crate) fn attention_forward(
    p: &AttentionParams,
    x: &Array2<f64>,
    mem: &Array2<f64>,
) -> (Array2<f64>, AttentionCache) {
    let scale = 1.0 / (p.wq.ncols() as f64).sqrt();
    let q = x.dot(&p.wq);
    let k = mem.dot(&p.wk);
    let v = mem.dot(&p.wv);
    let mut probs = q.dot(&k.t());
    probs.mapv_inplace(|s| s * scale);
    softmax_rows_inplace(&mut probs);
    let ctx = probs.dot(&v);
    let out = ctx.dot(&p.wo);
    let cache = AttentionCache {
        x: x.clone(),
        mem: mem.clone(),
        q,
        k,
        v,
        probs,
        ctx,
    };
    (out, cache)
}

/// Returns `(d_x, d_mem)` and accumulates weight gradients into `g`.
pub(crate) fn attention_backward(
    p: &AttentionParams,
    c: &AttentionCache,
    d_out: &Array2<f64>,
    g: &mut AttentionParams,
) -> (Array2<f64>, Array2<f64>) {
    let scale = 1.0 / (p.wq.ncols() as f64).sqrt();
    g.wo += &c.ctx.t().dot(d_out);
    let d_ctx = d_out.dot(&p.wo.t());
    let d_probs = d_ctx.dot(&c.v.t());
    let d_v = c.probs.t().dot(&d_ctx);
    let mut d_scores = softmax_rows_backward(&c.probs, &d_probs);
    d_scores.mapv_inplace(|s| s * scale);
    let d_q = d_scores.dot(&c.k);
    let d_k = d_scores.t().dot(&c.q);
    g.wq += &c.x.t().dot(&d_q);
    g.wk += &c.mem.t().dot(&d_k);
    g.wv += &c.mem.t().dot(&d_v);
    let d_x = d_q.dot(&p.wq.t());
    let mut d_mem = d_k.dot(&p.wk.t());
    d_mem += &d_v.dot(&p.wv.t());
    (d_x, d_mem)
}

pub(crate) struct FeedForwardCache {
    x: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

pub(crate) fn feed_forward(p: &FeedForwardParams, x: &Array2<f64>) -> (Array2<f64>, FeedForwardCache) {
    let pre = x.dot(&p.w1) + &p.b1;
    let act = pre.mapv(gelu);
    let out = act.dot(&p.w2) + &p.b2;
    (
        out,
        FeedForwardCache {
            x: x.clone(),
            pre,
            act,
        },
    )
}

pub(crate) fn feed_forward_backward(
    p: &FeedForwardParams,
    c: &FeedForwardCache,
    d_out: &Array2<f64>,
    g: &mut FeedForwardParams,
) -> Array2<f64> {
    g.w2 += &c.act.t().dot(d_out);
    g.b2 += &d_out.sum_axis(Axis(0)).insert_axis(Axis(0));
    let mut d_pre = d_out.dot(&p.w2.t());
    d_pre.zip_mut_with(&c.pre, |d, &z| *d *= gelu_grad(z));
    g.w1 += &c.x.t().dot(&d_pre);
    g.b1 += &d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
    d_pre.dot(&p.w1.t())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Row-wise softmax; `-inf` entries receive exactly zero mass.
pub(crate) fn softmax_rows_inplace(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        row.mapv_inplace(|v| {
            let e = (v - max).exp();
            sum += e;
            e
        });
        row.mapv_inplace(|v| v / sum);
    }
}

/// Gradient w.r.t. softmax inputs given probabilities and output gradient.
pub(crate) fn softmax_rows_backward(probs: &Array2<f64>, d_probs: &Array2<f64>) -> Array2<f64> {
    let mut out = d_probs.clone();
    for (mut row, p) in out.rows_mut().into_iter().zip(probs.rows()) {
        let dot = row.dot(&p);
        row.zip_mut_with(&p, |d, &pi| *d = pi * (*d - dot));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((num - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn softmax_masks_negative_infinity() {
        let mut m = array![[0.0, f64::NEG_INFINITY, 0.0], [1.0, 2.0, 3.0]];
        softmax_rows_inplace(&mut m);
        assert_eq!(m[[0, 1]], 0.0);
        assert!((m[[0, 0]] - 0.5).abs() < 1e-15);
        for row in m.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
