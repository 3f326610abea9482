//! Imitation loss against one-hot oracle targets and its exact gradient.
//!
//! With a one-hot oracle policy the KL cost reduces (up to a constant) to the
//! negative log-likelihood of the oracle choice, summed over supervised
//! positions.

use ndarray::{s, Array2, Axis};

use super::policy::{
    decoder_backward, decoder_forward, encoder_backward, encoder_forward, placeholder_positions,
    plh_logits, rps_logits, tok_logits, NEG_INF,
};
use super::Parameters;
use crate::edit::K_MAX;
use crate::error::{Error, Result};
use crate::types::{Sequence, TokenId, BOS, EOS, PLH};

/// Per-head one-hot targets for one state. Heads set to `None` are not
/// supervised.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HeadTargets {
    /// One reposition label per slot (1-based index, 0 = delete). Boundary
    /// slots are never supervised.
    pub reposition: Option<Vec<usize>>,
    /// One placeholder count per gap.
    pub placeholders: Option<Vec<usize>>,
    /// One token per placeholder in the state.
    pub tokens: Option<Vec<TokenId>>,
}

#[derive(Debug, Clone)]
pub struct SupervisedSequence {
    pub y: Sequence,
    pub targets: HeadTargets,
}

/// Summed negative log-likelihoods and supervised-position counts per head.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HeadLosses {
    pub rps: f64,
    pub plh: f64,
    pub tok: f64,
    pub n_rps: usize,
    pub n_plh: usize,
    pub n_tok: usize,
}

impl HeadLosses {
    pub fn total(&self) -> f64 {
        self.rps + self.plh + self.tok
    }

    pub fn add(&mut self, other: &HeadLosses) {
        self.rps += other.rps;
        self.plh += other.plh;
        self.tok += other.tok;
        self.n_rps += other.n_rps;
        self.n_plh += other.n_plh;
        self.n_tok += other.n_tok;
    }
}

fn validate(y: &Sequence, targets: &HeadTargets, vocab: usize) -> Result<()> {
    let n = y.len();
    if let Some(r) = &targets.reposition {
        if r.len() != n {
            return Err(Error::Target(format!("{} reposition targets for length {n}", r.len())));
        }
        for (i, &v) in r.iter().enumerate().take(n - 1).skip(1) {
            if v > n || v == 1 || v == n {
                return Err(Error::Target(format!("reposition target {v} at slot {}", i + 1)));
            }
        }
    }
    if let Some(p) = &targets.placeholders {
        if p.len() + 1 != n {
            return Err(Error::Target(format!("{} placeholder targets for length {n}", p.len())));
        }
        if let Some(&bad) = p.iter().find(|&&c| c > K_MAX) {
            return Err(Error::Target(format!("placeholder target {bad} exceeds {K_MAX}")));
        }
    }
    if let Some(t) = &targets.tokens {
        let holes = y.count_placeholders();
        if t.len() != holes {
            return Err(Error::Target(format!("{} token targets for {holes} placeholders", t.len())));
        }
        if let Some(&bad) = t
            .iter()
            .find(|&&v| v as usize >= vocab || v == BOS || v == EOS || v == PLH)
        {
            return Err(Error::Target(format!("token target {bad}")));
        }
    }
    Ok(())
}

/// Cross-entropy of each `(row, target)` pair. Replaces `logits` with
/// `scale * (softmax - onehot)` on the supervised rows and zero elsewhere.
fn cross_entropy(logits: &mut Array2<f64>, targets: &[(usize, usize)], scale: f64) -> f64 {
    let mut grad = Array2::zeros(logits.dim());
    let mut loss = 0.0;
    for &(row, target) in targets {
        let l = logits.row(row);
        let max = l.fold(NEG_INF, |a, &b| a.max(b));
        let sum: f64 = l.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - l[target];
        let mut g = grad.row_mut(row);
        for (gj, &lj) in g.iter_mut().zip(l.iter()) {
            *gj = scale * (lj - lse).exp();
        }
        g[target] -= scale;
    }
    *logits = grad;
    loss
}

/// Loss for every supervised state of one source sentence, sharing a
/// single encoder pass. Gradients are scaled by `scale` and accumulated
/// into `grads`.
pub(crate) fn accumulate_loss_and_gradients(
    params: &Parameters,
    source: &Sequence,
    items: &[SupervisedSequence],
    scale: f64,
    grads: &mut Parameters,
) -> Result<HeadLosses> {
    let vocab = params.tok_head.ncols();
    for item in items {
        validate(&item.y, &item.targets, vocab)?;
    }
    let (enc, enc_cache) = encoder_forward(params, source.ids());
    let mut d_enc = Array2::zeros(enc.dim());
    let mut losses = HeadLosses::default();
    let d = params.delete_vec.ncols();

    for item in items {
        let ids = item.y.ids();
        let n = ids.len();
        let (h, cache) = decoder_forward(params, ids, &enc);
        let mut d_h = Array2::<f64>::zeros(h.dim());

        if let Some(r) = &item.targets.reposition {
            let mut logits = rps_logits(params, ids, &h);
            let rows: Vec<(usize, usize)> = (1..n - 1).map(|i| (i, r[i])).collect();
            losses.rps += cross_entropy(&mut logits, &rows, scale);
            losses.n_rps += rows.len();
            let d_del = logits.column(0).to_owned();
            let d_idx = logits.slice(s![.., 1..]).to_owned();
            // logits[i, 0] = h_i . b ; logits[i, j] = h_i . e_j
            grads.delete_vec.row_mut(0).scaled_add(1.0, &h.t().dot(&d_del));
            for i in 0..n {
                d_h.row_mut(i).scaled_add(d_del[i], &params.delete_vec.row(0));
            }
            let mut e = Array2::zeros((n, d));
            for (j, &id) in ids.iter().enumerate() {
                e.row_mut(j).assign(&params.tgt_embed.row(id as usize));
            }
            d_h += &d_idx.dot(&e);
            let d_e = d_idx.t().dot(&h);
            for (j, &id) in ids.iter().enumerate() {
                grads.tgt_embed.row_mut(id as usize).scaled_add(1.0, &d_e.row(j));
            }
        }

        if let Some(p) = &item.targets.placeholders {
            let mut logits = plh_logits(params, &h);
            let rows: Vec<(usize, usize)> = p.iter().copied().enumerate().collect();
            losses.plh += cross_entropy(&mut logits, &rows, scale);
            losses.n_plh += rows.len();
            let top = params.plh_head.slice(s![..d, ..]);
            let bottom = params.plh_head.slice(s![d.., ..]);
            let h_left = h.slice(s![..n - 1, ..]);
            let h_right = h.slice(s![1.., ..]);
            {
                let mut g_top = grads.plh_head.slice_mut(s![..d, ..]);
                g_top += &h_left.t().dot(&logits);
            }
            {
                let mut g_bottom = grads.plh_head.slice_mut(s![d.., ..]);
                g_bottom += &h_right.t().dot(&logits);
            }
            let mut left = d_h.slice_mut(s![..n - 1, ..]);
            left += &logits.dot(&top.t());
            let mut right = d_h.slice_mut(s![1.., ..]);
            right += &logits.dot(&bottom.t());
        }

        if let Some(t) = &item.targets.tokens {
            let positions = placeholder_positions(ids);
            if !positions.is_empty() {
                let mut logits = tok_logits(params, &h, &positions);
                let rows: Vec<(usize, usize)> =
                    t.iter().enumerate().map(|(k, &tok)| (k, tok as usize)).collect();
                losses.tok += cross_entropy(&mut logits, &rows, scale);
                losses.n_tok += rows.len();
                let h_sel = h.select(Axis(0), &positions);
                grads.tok_head += &h_sel.t().dot(&logits);
                let d_sel = logits.dot(&params.tok_head.t());
                for (k, &pos) in positions.iter().enumerate() {
                    d_h.row_mut(pos).scaled_add(1.0, &d_sel.row(k));
                }
            }
        }

        decoder_backward(params, &cache, d_h, grads, &mut d_enc);
    }
    encoder_backward(params, &enc_cache, d_enc, grads);
    Ok(losses)
}

/// Total negative log-likelihood of the targets on state `y` and its exact
/// gradient w.r.t. every parameter.
pub fn loss_and_gradients(
    params: &Parameters,
    source: &Sequence,
    y: &Sequence,
    targets: &HeadTargets,
) -> Result<(f64, Parameters)> {
    let mut grads = params.zeros_like();
    let items = [SupervisedSequence {
        y: y.clone(),
        targets: targets.clone(),
    }];
    let losses = accumulate_loss_and_gradients(params, source, &items, 1.0, &mut grads)?;
    Ok((losses.total(), grads))
}

/// Loss only, without building gradients.
pub(crate) fn loss_only(
    params: &Parameters,
    source: &Sequence,
    items: &[SupervisedSequence],
) -> Result<HeadLosses> {
    let vocab = params.tok_head.ncols();
    let (enc, _) = encoder_forward(params, source.ids());
    let mut losses = HeadLosses::default();
    for item in items {
        validate(&item.y, &item.targets, vocab)?;
        let ids = item.y.ids();
        let n = ids.len();
        let (h, _) = decoder_forward(params, ids, &enc);
        let nll = |logits: &Array2<f64>, row: usize, target: usize| {
            let l = logits.row(row);
            let max = l.fold(NEG_INF, |a, &b| a.max(b));
            max + l.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() - l[target]
        };
        if let Some(r) = &item.targets.reposition {
            let logits = rps_logits(params, ids, &h);
            for (i, &target) in r.iter().enumerate().take(n - 1).skip(1) {
                losses.rps += nll(&logits, i, target);
                losses.n_rps += 1;
            }
        }
        if let Some(p) = &item.targets.placeholders {
            let logits = plh_logits(params, &h);
            for (i, &c) in p.iter().enumerate() {
                losses.plh += nll(&logits, i, c);
                losses.n_plh += 1;
            }
        }
        if let Some(t) = &item.targets.tokens {
            let positions = placeholder_positions(ids);
            if !positions.is_empty() {
                let logits = tok_logits(params, &h, &positions);
                for (k, &tok) in t.iter().enumerate() {
                    losses.tok += nll(&logits, k, tok as usize);
                    losses.n_tok += 1;
                }
            }
        }
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward_policy, init_params, ModelConfig};

    fn cfg() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            d_ff: 16,
            n_layers_enc: 1,
            n_layers_dec: 1,
            src_vocab_size: 8,
            tgt_vocab_size: 8,
            max_len: 12,
            seed: 4,
            ..ModelConfig::default()
        }
    }

    fn full_targets() -> (Sequence, Sequence, HeadTargets) {
        let src = Sequence::from_content(&[4, 5, 6]).unwrap();
        let y = Sequence::new(vec![BOS, 5, PLH, 4, EOS]).unwrap();
        let t = HeadTargets {
            reposition: Some(vec![1, 4, 0, 2, 5]),
            placeholders: Some(vec![0, 1, 0, 2]),
            tokens: Some(vec![6]),
        };
        (src, y, t)
    }

    #[test]
    fn loss_equals_negative_log_probability() {
        let params = init_params(&cfg()).unwrap();
        let (src, y, t) = full_targets();
        let (loss, _) = loss_and_gradients(&params, &src, &y, &t).unwrap();
        let out = forward_policy(&params, &src, &y);
        let mut expect = 0.0;
        for (i, &r) in [4usize, 0, 2].iter().enumerate() {
            expect -= out.rps_dist[[i + 1, r]].ln();
        }
        for (i, &c) in [0usize, 1, 0, 2].iter().enumerate() {
            expect -= out.plh_dist[[i, c]].ln();
        }
        expect -= out.tok_dist[[0, 6]].ln();
        assert!((loss - expect).abs() < 1e-10, "{loss} vs {expect}");
    }

    #[test]
    fn duplicated_supervision_doubles_loss() {
        let params = init_params(&cfg()).unwrap();
        let (src, y, t) = full_targets();
        let single = [SupervisedSequence { y: y.clone(), targets: t.clone() }];
        let double = [single[0].clone(), single[0].clone()];
        let a = loss_only(&params, &src, &single).unwrap();
        let b = loss_only(&params, &src, &double).unwrap();
        assert_eq!(2.0 * a.total(), b.total());
        assert_eq!(2 * a.n_plh, b.n_plh);
    }

    #[test]
    fn saturated_logits_give_near_zero_loss() {
        let mut params = init_params(&cfg()).unwrap();
        let src = Sequence::from_content(&[4]).unwrap();
        let y = Sequence::new(vec![BOS, PLH, EOS]).unwrap();
        // make the token head overwhelmingly favour token 7 for any state
        let h = crate::model::PolicyRunner::new(&params, &src).states(&y);
        let hv = h.row(1).to_owned();
        let norm = hv.dot(&hv);
        params.tok_head.column_mut(7).assign(&(&hv * (100.0 / norm)));
        let targets = HeadTargets {
            tokens: Some(vec![7]),
            ..Default::default()
        };
        let (loss, _) = loss_and_gradients(&params, &src, &y, &targets).unwrap();
        assert!(loss <= 1e-6, "loss {loss}");
    }

    #[test]
    fn rejects_bad_targets() {
        let params = init_params(&cfg()).unwrap();
        let (src, y, _) = full_targets();
        let bad = |t: HeadTargets| loss_and_gradients(&params, &src, &y, &t).is_err();
        assert!(bad(HeadTargets { reposition: Some(vec![1, 9, 0, 2, 5]), ..Default::default() }));
        assert!(bad(HeadTargets { reposition: Some(vec![1, 5, 0, 2, 5]), ..Default::default() }));
        assert!(bad(HeadTargets { placeholders: Some(vec![0, 256, 0, 0]), ..Default::default() }));
        assert!(bad(HeadTargets { placeholders: Some(vec![0]), ..Default::default() }));
        assert!(bad(HeadTargets { tokens: Some(vec![PLH]), ..Default::default() }));
        assert!(bad(HeadTargets { tokens: Some(vec![99]), ..Default::default() }));
        assert!(bad(HeadTargets { tokens: Some(vec![4, 5]), ..Default::default() }));
    }

    #[test]
    fn boundary_slots_get_no_gradient_from_masking() {
        let params = init_params(&cfg()).unwrap();
        let src = Sequence::from_content(&[4]).unwrap();
        let y = Sequence::empty();
        let t = HeadTargets {
            reposition: Some(vec![1, 2]),
            ..Default::default()
        };
        let (loss, grads) = loss_and_gradients(&params, &src, &y, &t).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.l2_norm(), 0.0);
    }
}
