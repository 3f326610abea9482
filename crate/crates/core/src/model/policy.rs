//! Encoder/decoder passes and the three policy heads.
//!
//! * reposition: `softmax(h_i . [b, e_1, .., e_n])`, where `e_j` is the
//!   target-embedding row of the `j`-th current token;
//! * placeholder: `softmax([h_i ; h_{i+1}] . W_plh)` per gap;
//! * token: `softmax(h_i . W_tok)` per placeholder position.

use ndarray::{s, Array2, ArrayView1, Axis};

use super::layers::{
    attention_backward, attention_forward, feed_forward, feed_forward_backward,
    softmax_rows_inplace, AttentionCache, FeedForwardCache,
};
use super::Parameters;
use crate::types::{Sequence, TokenId, BOS, EOS, PLH};

pub const NEG_INF: f64 = f64::NEG_INFINITY;

pub(crate) struct EncoderCache {
    ids: Vec<TokenId>,
    layers: Vec<(AttentionCache, FeedForwardCache)>,
}

pub(crate) struct DecoderCache {
    ids: Vec<TokenId>,
    layers: Vec<(AttentionCache, AttentionCache, FeedForwardCache)>,
}

fn embed(table: &Array2<f64>, positions: &Array2<f64>, ids: &[TokenId]) -> Array2<f64> {
    let d = table.ncols();
    let mut x = Array2::zeros((ids.len(), d));
    for (i, &id) in ids.iter().enumerate() {
        let mut row = x.row_mut(i);
        row.assign(&table.row(id as usize));
        row += &positions.row(i);
    }
    x
}

fn embed_backward(
    table_grad: &mut Array2<f64>,
    pos_grad: &mut Array2<f64>,
    ids: &[TokenId],
    d_x: &Array2<f64>,
) {
    for (i, &id) in ids.iter().enumerate() {
        let g = d_x.row(i);
        let mut t = table_grad.row_mut(id as usize);
        t += &g;
        let mut p = pos_grad.row_mut(i);
        p += &g;
    }
}

pub(crate) fn encoder_forward(params: &Parameters, src: &[TokenId]) -> (Array2<f64>, EncoderCache) {
    let mut x = embed(&params.src_embed, &params.positions, src);
    let mut layers = Vec::with_capacity(params.encoder.len());
    for layer in &params.encoder {
        let (a, ac) = attention_forward(&layer.self_attn, &x, &x);
        x += &a;
        let (f, fc) = feed_forward(&layer.ffn, &x);
        x += &f;
        layers.push((ac, fc));
    }
    (
        x,
        EncoderCache {
            ids: src.to_vec(),
            layers,
        },
    )
}

pub(crate) fn encoder_backward(
    params: &Parameters,
    cache: &EncoderCache,
    d_out: Array2<f64>,
    grads: &mut Parameters,
) {
    let mut d_x = d_out;
    for (l, (ac, fc)) in cache.layers.iter().enumerate().rev() {
        let layer = &params.encoder[l];
        let g = &mut grads.encoder[l];
        let d_f = feed_forward_backward(&layer.ffn, fc, &d_x, &mut g.ffn);
        d_x += &d_f;
        let (d_q, d_mem) = attention_backward(&layer.self_attn, ac, &d_x, &mut g.self_attn);
        d_x += &d_q;
        d_x += &d_mem;
    }
    embed_backward(&mut grads.src_embed, &mut grads.positions, &cache.ids, &d_x);
}

pub(crate) fn decoder_forward(
    params: &Parameters,
    ids: &[TokenId],
    enc: &Array2<f64>,
) -> (Array2<f64>, DecoderCache) {
    let mut z = embed(&params.tgt_embed, &params.positions, ids);
    let mut layers = Vec::with_capacity(params.decoder.len());
    for layer in &params.decoder {
        let (a, sc) = attention_forward(&layer.self_attn, &z, &z);
        z += &a;
        let (c, cc) = attention_forward(&layer.cross_attn, &z, enc);
        z += &c;
        let (f, fc) = feed_forward(&layer.ffn, &z);
        z += &f;
        layers.push((sc, cc, fc));
    }
    (
        z,
        DecoderCache {
            ids: ids.to_vec(),
            layers,
        },
    )
}

/// Backpropagates `d_h` through the decoder; the cross-attention gradient
/// w.r.t. the encoder output is accumulated into `d_enc`.
pub(crate) fn decoder_backward(
    params: &Parameters,
    cache: &DecoderCache,
    d_h: Array2<f64>,
    grads: &mut Parameters,
    d_enc: &mut Array2<f64>,
) {
    let mut d_z = d_h;
    for (l, (sc, cc, fc)) in cache.layers.iter().enumerate().rev() {
        let layer = &params.decoder[l];
        let g = &mut grads.decoder[l];
        let d_f = feed_forward_backward(&layer.ffn, fc, &d_z, &mut g.ffn);
        d_z += &d_f;
        let (d_q, d_mem) = attention_backward(&layer.cross_attn, cc, &d_z, &mut g.cross_attn);
        d_z += &d_q;
        *d_enc += &d_mem;
        let (d_q, d_kv) = attention_backward(&layer.self_attn, sc, &d_z, &mut g.self_attn);
        d_z += &d_q;
        d_z += &d_kv;
    }
    embed_backward(&mut grads.tgt_embed, &mut grads.positions, &cache.ids, &d_z);
}

/// Reposition logits, `n x (n + 1)`: column 0 is delete, column `j` places
/// input token `j`. Boundary slots may only keep their own boundary, and
/// interior slots may not receive a boundary token.
pub(crate) fn rps_logits(params: &Parameters, ids: &[TokenId], h: &Array2<f64>) -> Array2<f64> {
    let n = ids.len();
    let mut logits = Array2::zeros((n, n + 1));
    let del = h.dot(&params.delete_vec.row(0));
    logits.column_mut(0).assign(&del);
    let mut e = Array2::zeros((n, h.ncols()));
    for (j, &id) in ids.iter().enumerate() {
        e.row_mut(j).assign(&params.tgt_embed.row(id as usize));
    }
    logits.slice_mut(s![.., 1..]).assign(&h.dot(&e.t()));
    mask_boundaries(&mut logits);
    logits
}

fn mask_boundaries(logits: &mut Array2<f64>) {
    let n = logits.nrows();
    for i in 0..n {
        let boundary = i == 0 || i == n - 1;
        for j in 0..=n {
            let keep = if boundary {
                j == i + 1
            } else {
                j != 1 && j != n
            };
            if !keep {
                logits[[i, j]] = NEG_INF;
            }
        }
    }
}

/// Placeholder-count logits, `(n - 1) x (K_max + 1)`.
pub(crate) fn plh_logits(params: &Parameters, h: &Array2<f64>) -> Array2<f64> {
    let n = h.nrows();
    let d = h.ncols();
    let top = params.plh_head.slice(s![..d, ..]);
    let bottom = params.plh_head.slice(s![d.., ..]);
    h.slice(s![..n - 1, ..]).dot(&top) + h.slice(s![1.., ..]).dot(&bottom)
}

/// Token logits for the rows of `h` at `positions`; reserved boundary and
/// placeholder symbols are masked.
pub(crate) fn tok_logits(params: &Parameters, h: &Array2<f64>, positions: &[usize]) -> Array2<f64> {
    let sel = h.select(Axis(0), positions);
    let mut logits = sel.dot(&params.tok_head);
    for mut row in logits.rows_mut() {
        row[BOS as usize] = NEG_INF;
        row[EOS as usize] = NEG_INF;
        row[PLH as usize] = NEG_INF;
    }
    logits
}

/// Softmax of a single logit row; `-inf` entries get zero mass.
pub fn masked_softmax(logits: ArrayView1<f64>) -> Vec<f64> {
    let max = logits.fold(NEG_INF, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn softmax(mut logits: Array2<f64>) -> Array2<f64> {
    softmax_rows_inplace(&mut logits);
    logits
}

pub(crate) fn placeholder_positions(ids: &[TokenId]) -> Vec<usize> {
    ids.iter()
        .enumerate()
        .filter(|(_, &t)| t == PLH)
        .map(|(i, _)| i)
        .collect()
}

/// Per-position categorical distributions of all three heads for one state.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    /// Decoder states, `n x d_model`.
    pub h: Array2<f64>,
    /// `n x (n + 1)`: `[delete, index 1..n]` per slot.
    pub rps_dist: Array2<f64>,
    /// `(n - 1) x (K_max + 1)`.
    pub plh_dist: Array2<f64>,
    /// 0-based positions of the placeholders that `tok_dist` rows refer to.
    pub tok_positions: Vec<usize>,
    /// `#PLH x |V_tgt|`.
    pub tok_dist: Array2<f64>,
}

/// Source encoding reused across every refinement step of one sentence.
pub struct Encoded {
    pub(crate) out: Array2<f64>,
}

/// Inference-time access to the policy heads for a fixed source sentence.
pub struct PolicyRunner<'a> {
    params: &'a Parameters,
    encoded: Encoded,
}

impl<'a> PolicyRunner<'a> {
    pub fn new(params: &'a Parameters, source: &Sequence) -> Self {
        let (out, _) = encoder_forward(params, source.ids());
        PolicyRunner {
            params,
            encoded: Encoded { out },
        }
    }

    pub fn params(&self) -> &Parameters {
        self.params
    }

    pub fn states(&self, y: &Sequence) -> Array2<f64> {
        decoder_forward(self.params, y.ids(), &self.encoded.out).0
    }

    pub fn rps_logits(&self, y: &Sequence, h: &Array2<f64>) -> Array2<f64> {
        rps_logits(self.params, y.ids(), h)
    }

    pub fn plh_logits(&self, h: &Array2<f64>) -> Array2<f64> {
        plh_logits(self.params, h)
    }

    pub fn tok_logits(&self, h: &Array2<f64>, positions: &[usize]) -> Array2<f64> {
        tok_logits(self.params, h, positions)
    }

    pub fn output(&self, y: &Sequence) -> PolicyOutput {
        let h = self.states(y);
        let tok_positions = placeholder_positions(y.ids());
        PolicyOutput {
            rps_dist: softmax(self.rps_logits(y, &h)),
            plh_dist: softmax(self.plh_logits(&h)),
            tok_dist: softmax(self.tok_logits(&h, &tok_positions)),
            tok_positions,
            h,
        }
    }
}

/// Evaluates all three heads on state `y` given `source`.
pub fn forward_policy(params: &Parameters, source: &Sequence, y: &Sequence) -> PolicyOutput {
    PolicyRunner::new(params, source).output(y)
}
