//! Dual-path imitation learning.
//!
//! Every training pair yields two roll-in states built from a noised copy
//! `y0` of the reference. The reposition head is trained on states produced
//! by (oracle) insertion, and the placeholder and token heads on states
//! produced by the model's own reposition policy. Targets always come from
//! the edit-distance oracle against the reference.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::decoder::{decode, DecodeConfig};
use crate::edit::{apply_placeholders, apply_reposition, fill_tokens, RepositionAction, TokenFill};
use crate::error::{Error, Result};
use crate::eval::bleu;
use crate::model::{
    accumulate_loss_and_gradients, adam_step, masked_softmax, save_checkpoint, AdamConfig, AdamState,
    EditorModel, HeadLosses, HeadTargets, ModelConfig, Parameters, PolicyRunner, SupervisedSequence,
};
use crate::oracle::{insertions_on_input, oracle_action, OracleResult};
use crate::types::{Sequence, TokenId, TrainingPair, BOS, EOS, PLH};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub drop_prob: f64,
    /// Maximum shuffle distance.
    pub shuffle_k: usize,
    /// Draw fresh noise every time a pair is visited; otherwise each
    /// distinct pair always gets the same `y0`.
    pub renoise: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            drop_prob: 0.5,
            shuffle_k: 3,
            renoise: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RollInConfig {
    /// Probability that the insertion path starts from `y0` itself.
    pub alpha: f64,
    /// Probability that the reposition path starts from `y0` itself.
    pub beta: f64,
    /// Take argmax model actions during roll-in instead of sampling.
    pub greedy: bool,
}

impl Default for RollInConfig {
    fn default() -> Self {
        RollInConfig {
            alpha: 0.5,
            beta: 0.5,
            greedy: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RollInPath {
    Reposition,
    Insertion,
}

#[derive(Debug, Clone)]
pub struct RollInSample {
    pub path: RollInPath,
    pub rollin_seq: Sequence,
    /// Full oracle result for `(rollin_seq, y*)`.
    pub oracle: OracleResult,
    /// The states and head targets this sample supervises.
    pub supervised: Vec<SupervisedSequence>,
}

/// Mean per-pair losses for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub rps_loss: f64,
    pub plh_loss: f64,
    pub tok_loss: f64,
    pub total: f64,
    pub n_rps: usize,
    pub n_plh: usize,
    pub n_tok: usize,
    /// Global L2 norm of the batch gradient before clipping.
    pub grad_norm: f64,
}

impl LossReport {
    fn from_losses(l: &HeadLosses, batch: usize) -> Self {
        let b = batch as f64;
        let (rps, plh, tok) = (l.rps / b, l.plh / b, l.tok / b);
        LossReport {
            rps_loss: rps,
            plh_loss: plh,
            tok_loss: tok,
            total: rps + plh + tok,
            n_rps: l.n_rps,
            n_plh: l.n_plh,
            n_tok: l.n_tok,
            grad_norm: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_interval: usize,
    /// Steps of linear learning-rate warmup.
    pub warmup_steps: usize,
    /// Learning rate at `max_steps`, as a fraction of `adam.lr`; the rate
    /// decays linearly after warmup.
    pub final_lr_frac: f64,
    /// Gradients whose global L2 norm exceeds this are rescaled to it;
    /// 0 disables clipping.
    pub clip_norm: f64,
    pub noise: NoiseConfig,
    pub rollin: RollInConfig,
    pub decode: DecodeConfig,
    pub seed: u64,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            adam: AdamConfig { lr: 8e-3, ..AdamConfig::default() },
            batch_size: 96,
            max_steps: 2000,
            eval_interval: 250,
            warmup_steps: 100,
            final_lr_frac: 0.1,
            clip_norm: 20.0,
            noise: NoiseConfig::default(),
            rollin: RollInConfig::default(),
            decode: DecodeConfig::default(),
            seed: 1,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        prob("drop_prob", self.noise.drop_prob)?;
        prob("alpha", self.rollin.alpha)?;
        prob("beta", self.rollin.beta)?;
        prob("final_lr_frac", self.final_lr_frac)?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("eval_interval must be >= 1".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config("clip_norm must be >= 0".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        self.decode.validate()?;
        self.model.validate_architecture()
    }

    /// Learning rate for the 1-based `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let step = step as f64;
        let warm = self.warmup_steps as f64;
        if step < warm {
            return self.adam.lr * step.max(1.0) / warm;
        }
        let span = (self.max_steps as f64 - warm).max(1.0);
        let done = ((step - warm) / span).min(1.0);
        self.adam.lr * (1.0 - (1.0 - self.final_lr_frac) * done)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic stream seed from a list of keys.
pub fn derive_seed(keys: &[u64]) -> u64 {
    keys.iter().fold(0x5eed, |acc, &k| splitmix(acc ^ splitmix(k)))
}

fn pair_key(pair: &TrainingPair) -> u64 {
    let ids = pair.source.ids().iter().chain([&u32::MAX]).chain(pair.target.ids());
    ids.fold(0, |acc, &t| splitmix(acc ^ t as u64))
}

/// Word dropping followed by a local shuffle where every survivor's key is
/// its original index plus `Uniform[0, k]` noise.
pub fn noise_reference<R: Rng + ?Sized>(y_star: &Sequence, cfg: &NoiseConfig, rng: &mut R) -> Sequence {
    let mut keyed: Vec<(f64, TokenId)> = Vec::new();
    for (i, &tok) in y_star.content().iter().enumerate() {
        if rng.gen::<f64>() < cfg.drop_prob {
            continue;
        }
        let u = if cfg.shuffle_k == 0 {
            0.0
        } else {
            rng.gen_range(0.0..=cfg.shuffle_k as f64)
        };
        keyed.push((i as f64 + u, tok));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let content: Vec<TokenId> = keyed.into_iter().map(|(_, t)| t).collect();
    let mut ids = Vec::with_capacity(content.len() + 2);
    ids.push(BOS);
    ids.extend(content);
    ids.push(EOS);
    Sequence::new(ids).expect("noise keeps a valid sequence")
}

fn choose<R: Rng + ?Sized>(probs: &[f64], greedy: bool, rng: &mut R) -> usize {
    if greedy {
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        return best;
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    // rounding left u above the cumulative sum
    last
}

fn rollin_reposition<R: Rng + ?Sized>(
    runner: &PolicyRunner<'_>,
    y_star: &Sequence,
    y0: &Sequence,
    cfg: &RollInConfig,
    rng: &mut R,
) -> Result<RollInSample> {
    let rollin_seq = if rng.gen::<f64>() < cfg.beta {
        y0.clone()
    } else {
        let script = oracle_action(y0, y_star).script;
        let with_holes = apply_placeholders(y0, &insertions_on_input(y0, &script))?;
        let positions: Vec<usize> = (0..with_holes.len()).filter(|&i| with_holes.ids()[i] == PLH).collect();
        if positions.is_empty() {
            with_holes
        } else {
            let h = runner.states(&with_holes);
            let logits = runner.tok_logits(&h, &positions);
            let fill = logits
                .rows()
                .into_iter()
                .map(|row| choose(&masked_softmax(row), cfg.greedy, rng) as TokenId)
                .collect();
            fill_tokens(&with_holes, &TokenFill(fill))?
        }
    };
    let oracle = oracle_action(&rollin_seq, y_star);
    let supervised = vec![SupervisedSequence {
        y: rollin_seq.clone(),
        targets: HeadTargets {
            reposition: Some(oracle.r_target().to_vec()),
            ..HeadTargets::default()
        },
    }];
    Ok(RollInSample {
        path: RollInPath::Reposition,
        rollin_seq,
        oracle,
        supervised,
    })
}

fn rollin_insertion<R: Rng + ?Sized>(
    runner: &PolicyRunner<'_>,
    y_star: &Sequence,
    y0: &Sequence,
    cfg: &RollInConfig,
    rng: &mut R,
) -> Result<RollInSample> {
    let rollin_seq = if rng.gen::<f64>() < cfg.alpha {
        y0.clone()
    } else {
        let h = runner.states(y0);
        let logits = runner.rps_logits(y0, &h);
        let r = logits
            .rows()
            .into_iter()
            .map(|row| choose(&masked_softmax(row), cfg.greedy, rng))
            .collect();
        apply_reposition(y0, &RepositionAction(r))?
    };
    let oracle = oracle_action(&rollin_seq, y_star);
    let repositioned = apply_reposition(&rollin_seq, &oracle.action.r)?;
    let with_holes = apply_placeholders(&repositioned, &oracle.action.p)?;
    let mut supervised = vec![SupervisedSequence {
        y: repositioned,
        targets: HeadTargets {
            placeholders: Some(oracle.p_target().to_vec()),
            ..HeadTargets::default()
        },
    }];
    if !oracle.t_target().is_empty() {
        supervised.push(SupervisedSequence {
            y: with_holes,
            targets: HeadTargets {
                tokens: Some(oracle.t_target().to_vec()),
                ..HeadTargets::default()
            },
        });
    }
    Ok(RollInSample {
        path: RollInPath::Insertion,
        rollin_seq,
        oracle,
        supervised,
    })
}

/// Roll-in for the reposition head: with probability `beta` the noised
/// reference itself, otherwise `y0` after oracle placeholder insertion and
/// model token prediction.
pub fn make_rollin_reposition<R: Rng + ?Sized>(
    params: &Parameters,
    pair: &TrainingPair,
    y0: &Sequence,
    cfg: &RollInConfig,
    rng: &mut R,
) -> Result<RollInSample> {
    let runner = PolicyRunner::new(params, &pair.source);
    rollin_reposition(&runner, &pair.target, y0, cfg, rng)
}

/// Roll-in for the insertion heads: with probability `alpha` the noised
/// reference itself, otherwise `y0` after one sampled model reposition.
pub fn make_rollin_insertion<R: Rng + ?Sized>(
    params: &Parameters,
    pair: &TrainingPair,
    y0: &Sequence,
    cfg: &RollInConfig,
    rng: &mut R,
) -> Result<RollInSample> {
    let runner = PolicyRunner::new(params, &pair.source);
    rollin_insertion(&runner, &pair.target, y0, cfg, rng)
}

fn pair_states(params: &Parameters, pair: &TrainingPair, cfg: &TrainConfig, step: u64, slot: u64) -> Result<Vec<SupervisedSequence>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, step, slot]));
    let y0 = if cfg.noise.renoise {
        noise_reference(&pair.target, &cfg.noise, &mut rng)
    } else {
        let mut fixed = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, pair_key(pair)]));
        noise_reference(&pair.target, &cfg.noise, &mut fixed)
    };
    let runner = PolicyRunner::new(params, &pair.source);
    let mut items = rollin_reposition(&runner, &pair.target, &y0, &cfg.rollin, &mut rng)?.supervised;
    items.extend(rollin_insertion(&runner, &pair.target, &y0, &cfg.rollin, &mut rng)?.supervised);
    Ok(items)
}

fn accumulate_chunk(
    params: &Parameters,
    pairs: &[TrainingPair],
    first_slot: usize,
    cfg: &TrainConfig,
    step: u64,
    scale: f64,
) -> Result<(Parameters, HeadLosses)> {
    let mut grads = params.zeros_like();
    let mut losses = HeadLosses::default();
    for (k, pair) in pairs.iter().enumerate() {
        let items = pair_states(params, pair, cfg, step, (first_slot + k) as u64)?;
        let l = accumulate_loss_and_gradients(params, &pair.source, &items, scale, &mut grads)?;
        losses.add(&l);
    }
    Ok((grads, losses))
}

/// Builds both roll-ins for every pair, sums the head losses (averaged over
/// the batch), backpropagates and applies one Adam update. Randomness for
/// each pair is derived from `(seed, step, position in batch)`, so results
/// depend on the thread count only through floating-point summation order.
pub fn train_step(
    params: &mut Parameters,
    state: &mut AdamState,
    batch: &[TrainingPair],
    cfg: &TrainConfig,
    step: u64,
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let scale = 1.0 / batch.len() as f64;
    let threads = cfg.threads.max(1).min(batch.len());
    let (grads, losses) = if threads == 1 {
        accumulate_chunk(params, batch, 0, cfg, step, scale)?
    } else {
        let chunk = batch.len().div_ceil(threads);
        let frozen: &Parameters = params;
        let parts: Vec<Result<(Parameters, HeadLosses)>> = batch
            .par_chunks(chunk)
            .enumerate()
            .map(|(c, pairs)| accumulate_chunk(frozen, pairs, c * chunk, cfg, step, scale))
            .collect();
        let mut grads = params.zeros_like();
        let mut losses = HeadLosses::default();
        for part in parts {
            let (g, l) = part?;
            grads.add_scaled(&g, 1.0);
            losses.add(&l);
        }
        (grads, losses)
    };
    let mut grads = grads;
    let norm = grads.l2_norm();
    if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
        grads.scale(cfg.clip_norm / norm);
    }
    let adam = AdamConfig {
        lr: cfg.lr_at(step),
        ..cfg.adam
    };
    adam_step(params, &grads, state, &adam);
    Ok(LossReport {
        grad_norm: norm,
        ..LossReport::from_losses(&losses, batch.len())
    })
}

/// Greedy decode of every source from the empty hypothesis.
pub fn validate_model(params: &Parameters, valid: &[TrainingPair], cfg: &DecodeConfig) -> Result<(f64, f64)> {
    let mut exact = 0;
    let mut hyps = Vec::with_capacity(valid.len());
    let mut refs = Vec::with_capacity(valid.len());
    for pair in valid {
        let (out, _) = decode(params, &pair.source, &Sequence::empty(), cfg)?;
        if out == pair.target {
            exact += 1;
        }
        hyps.push(out.content().iter().map(|t| t.to_string()).collect::<Vec<_>>());
        refs.push(pair.target.content().iter().map(|t| t.to_string()).collect::<Vec<_>>());
    }
    Ok((bleu(&hyps, &refs)?, exact as f64 / valid.len().max(1) as f64))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The model with the best validation BLEU (the initial model if no
    /// evaluation ran).
    pub model: EditorModel,
    /// One `step<TAB>train_loss<TAB>valid_bleu<TAB>valid_exact` line per
    /// evaluation.
    pub log: Vec<String>,
    pub best_step: Option<usize>,
    pub best_bleu: Option<f64>,
    pub best_exact: Option<f64>,
}

/// Runs `max_steps` updates, evaluating every `eval_interval` steps and
/// keeping the parameters with the best validation BLEU (ties go to exact
/// match, then to the earlier step). The best model is written to
/// `checkpoint` whenever it improves, and once at the end if it never did.
pub fn train(
    mut model: EditorModel,
    train_set: &[TrainingPair],
    valid_set: &[TrainingPair],
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let mut state = AdamState::new(&model.params);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, u64::MAX]));
    let mut cursor = order.len();
    let mut best: Option<(f64, f64, usize, Parameters)> = None;
    let mut saved = false;
    let mut log = Vec::new();
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    let mut head_sums = [0.0f64; 3];
    let (mut norm_sum, mut norm_max) = (0.0f64, 0.0f64);
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for step in 1..=cfg.max_steps {
        batch.clear();
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            batch.push(train_set[order[cursor]].clone());
            cursor += 1;
        }
        let report = pool.install(|| train_step(&mut model.params, &mut state, &batch, cfg, step as u64))?;
        loss_sum += report.total;
        loss_count += 1;
        head_sums[0] += report.rps_loss;
        head_sums[1] += report.plh_loss;
        head_sums[2] += report.tok_loss;
        norm_sum += report.grad_norm;
        norm_max = norm_max.max(report.grad_norm);

        if step % cfg.eval_interval == 0 {
            let (bleu, exact) = pool.install(|| validate_model(&model.params, valid_set, &cfg.decode))?;
            let line = format!("{step}\t{:.6}\t{bleu:.4}\t{exact:.4}", loss_sum / loss_count as f64);
            let k = loss_count as f64;
            log::info!(
                "eval {line} (reposition {:.4}, placeholder {:.4}, token {:.4}; gradient norm mean {:.3} max {:.3})",
                head_sums[0] / k,
                head_sums[1] / k,
                head_sums[2] / k,
                norm_sum / k,
                norm_max
            );
            head_sums = [0.0; 3];
            (norm_sum, norm_max) = (0.0, 0.0);
            log.push(line);
            loss_sum = 0.0;
            loss_count = 0;
            let better = match &best {
                None => true,
                Some((b, e, _, _)) => bleu > *b || (bleu == *b && exact > *e),
            };
            if better {
                best = Some((bleu, exact, step, model.params.clone()));
                if let Some(path) = checkpoint {
                    let snapshot = EditorModel {
                        params: model.params.clone(),
                        ..model.clone()
                    };
                    save_checkpoint(&snapshot, path)?;
                    saved = true;
                }
            }
        }
    }

    let (best_bleu, best_exact, best_step) = match best {
        Some((b, e, s, params)) => {
            model.params = params;
            (Some(b), Some(e), Some(s))
        }
        None => (None, None, None),
    };
    if let (Some(path), false) = (checkpoint, saved) {
        save_checkpoint(&model, path)?;
    }
    Ok(TrainOutcome {
        model,
        log,
        best_step,
        best_bleu,
        best_exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edit::apply_action;
    use crate::model::init_params;
    use crate::types::Vocabulary;
    use proptest::prelude::{prop, prop_assert, proptest};

    fn small_model(seed: u64) -> ModelConfig {
        ModelConfig {
            d_model: 16,
            d_ff: 16,
            n_layers_enc: 1,
            n_layers_dec: 1,
            src_vocab_size: 12,
            tgt_vocab_size: 12,
            max_len: 64,
            seed,
            ..ModelConfig::default()
        }
    }

    fn pair(content: &[TokenId]) -> TrainingPair {
        let s = Sequence::from_content(content).unwrap();
        TrainingPair {
            source: s.clone(),
            target: s,
        }
    }

    #[test]
    fn lr_warms_up_then_decays() {
        let cfg = TrainConfig {
            max_steps: 1100,
            ..TrainConfig::default()
        };
        let lr = cfg.adam.lr;
        assert!((cfg.lr_at(1) - lr / 100.0).abs() < 1e-15);
        assert!((cfg.lr_at(50) - lr / 2.0).abs() < 1e-15);
        assert!((cfg.lr_at(100) - lr).abs() < 1e-15);
        assert!((cfg.lr_at(600) - 0.55 * lr).abs() < 1e-12);
        assert!((cfg.lr_at(1100) - 0.1 * lr).abs() < 1e-12);
        assert!((cfg.lr_at(5000) - 0.1 * lr).abs() < 1e-12);
        let flat = TrainConfig {
            warmup_steps: 0,
            final_lr_frac: 1.0,
            ..cfg
        };
        assert!((1..2000).all(|s| flat.lr_at(s) == lr));
    }

    #[test]
    fn noise_extremes() {
        let y = Sequence::from_content(&[4, 5, 6, 7]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let none = NoiseConfig {
            drop_prob: 0.0,
            shuffle_k: 0,
            renoise: true,
        };
        assert_eq!(noise_reference(&y, &none, &mut rng), y);
        let all = NoiseConfig {
            drop_prob: 1.0,
            ..none
        };
        assert_eq!(noise_reference(&y, &all, &mut rng), Sequence::empty());
    }

    #[test]
    fn shuffle_never_swaps_distant_tokens() {
        let content: Vec<TokenId> = (4..16).collect();
        let y = Sequence::from_content(&content).unwrap();
        let cfg = NoiseConfig {
            drop_prob: 0.0,
            shuffle_k: 3,
            renoise: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let out = noise_reference(&y, &cfg, &mut rng);
            // token value - 4 is its original index
            let idx: Vec<i64> = out.content().iter().map(|&t| t as i64 - 4).collect();
            for a in 0..idx.len() {
                for b in a + 1..idx.len() {
                    if idx[a] - idx[b] >= 3 {
                        panic!("tokens {} and {} swapped", idx[b], idx[a]);
                    }
                }
            }
        }
    }

    #[test]
    fn insertion_mixture_law() {
        let params = init_params(&small_model(2)).unwrap();
        let p = pair(&[4, 5, 6, 7, 8, 9]);
        let cfg = RollInConfig {
            alpha: 0.3,
            ..RollInConfig::default()
        };
        let runner = PolicyRunner::new(&params, &p.source);
        // y0 without its first token, so that any sampled reposition of a
        // random policy almost surely changes it
        let y0 = Sequence::from_content(&[5, 6, 7, 8, 9]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let mut same = 0;
        let mut unchanged_by_model = 0;
        for _ in 0..draws {
            let before = rng.clone();
            let s = rollin_insertion(&runner, &p.target, &y0, &cfg, &mut rng).unwrap();
            let mut replay = before;
            let took_y0 = replay.gen::<f64>() < cfg.alpha;
            if s.rollin_seq == y0 {
                same += 1;
                if !took_y0 {
                    unchanged_by_model += 1;
                }
            }
        }
        let frac = (same - unchanged_by_model) as f64 / draws as f64;
        assert!((frac - 0.3).abs() <= 0.02, "fraction {frac}");
    }

    #[test]
    fn rollin_targets_round_trip() {
        let params = init_params(&small_model(3)).unwrap();
        let p = pair(&[4, 5, 4, 6, 7]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = RollInConfig {
            alpha: 0.0,
            beta: 0.0,
            greedy: false,
        };
        for _ in 0..50 {
            let y0 = noise_reference(&p.target, &NoiseConfig::default(), &mut rng);
            for s in [
                make_rollin_reposition(&params, &p, &y0, &cfg, &mut rng).unwrap(),
                make_rollin_insertion(&params, &p, &y0, &cfg, &mut rng).unwrap(),
            ] {
                assert_eq!(apply_action(&s.rollin_seq, &s.oracle.action).unwrap(), p.target);
            }
        }
    }

    #[test]
    fn beta_one_keeps_y0() {
        let params = init_params(&small_model(3)).unwrap();
        let p = pair(&[4, 5, 6]);
        let y0 = Sequence::from_content(&[6, 4]).unwrap();
        let cfg = RollInConfig {
            alpha: 1.0,
            beta: 1.0,
            greedy: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(make_rollin_reposition(&params, &p, &y0, &cfg, &mut rng).unwrap().rollin_seq, y0);
            assert_eq!(make_rollin_insertion(&params, &p, &y0, &cfg, &mut rng).unwrap().rollin_seq, y0);
        }
    }

    #[test]
    fn saturated_token_head_reaches_reference() {
        // token head that always predicts token 4; reference is all 4s
        let mut params = init_params(&small_model(4)).unwrap();
        params.tok_head.fill(0.0);
        params.tok_head.column_mut(4).fill(1e3);
        for layer in &mut params.decoder {
            layer.ffn.w2.fill(0.0);
            layer.self_attn.wo.fill(0.0);
            layer.cross_attn.wo.fill(0.0);
        }
        params.tgt_embed.fill(0.0);
        params.positions.fill(0.0);
        params.tgt_embed[[PLH as usize, 0]] = 1.0;
        let p = pair(&[4, 4, 4]);
        let cfg = RollInConfig {
            alpha: 1.0,
            beta: 0.0,
            greedy: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = make_rollin_reposition(&params, &p, &Sequence::empty(), &cfg, &mut rng).unwrap();
        assert_eq!(s.rollin_seq, p.target);
        assert!(s.oracle.action.r.is_identity());
    }

    fn quiet_config() -> TrainConfig {
        TrainConfig {
            model: small_model(1),
            noise: NoiseConfig {
                drop_prob: 0.0,
                shuffle_k: 0,
                renoise: true,
            },
            rollin: RollInConfig {
                alpha: 1.0,
                beta: 1.0,
                greedy: false,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn identical_batch_equals_single_pair() {
        let cfg = quiet_config();
        let p = pair(&[4, 5, 6]);
        let run = |batch: Vec<TrainingPair>| {
            let mut params = init_params(&cfg.model).unwrap();
            let mut st = AdamState::new(&params);
            let r = train_step(&mut params, &mut st, &batch, &cfg, 1).unwrap();
            (r, params)
        };
        let (one, p1) = run(vec![p.clone()]);
        let (four, p4) = run(vec![p.clone(); 4]);
        assert!((one.total - four.total).abs() < 1e-12);
        assert!((one.rps_loss + one.plh_loss + one.tok_loss - one.total).abs() < 1e-12);
        // Adam normalizes, so identical mean gradients give identical steps
        let diff: f64 = p1
            .named()
            .iter()
            .zip(p4.named())
            .map(|((_, a), (_, b))| (*a - b).mapv(f64::abs).sum())
            .sum();
        assert!(diff < 1e-9);
    }

    #[test]
    fn steps_are_deterministic_and_thread_count_only_reorders_sums() {
        let mut cfg = TrainConfig {
            model: small_model(1),
            ..TrainConfig::default()
        };
        let batch: Vec<TrainingPair> = (0..6).map(|i| pair(&[4 + i, 5, 6, 4 + i])).collect();
        let run = |cfg: &TrainConfig| {
            let mut params = init_params(&cfg.model).unwrap();
            let mut st = AdamState::new(&params);
            (0..3)
                .map(|s| train_step(&mut params, &mut st, &batch, cfg, s).unwrap())
                .collect::<Vec<_>>()
        };
        let a = run(&cfg);
        assert_eq!(a, run(&cfg));
        cfg.threads = 3;
        let b = run(&cfg);
        for (x, y) in a.iter().zip(&b) {
            assert!((x.total - y.total).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_decreases_on_small_copy_task() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<TrainingPair> = (0..50)
            .map(|_| {
                let len = rng.gen_range(2..6);
                pair(&(0..len).map(|_| rng.gen_range(4..12)).collect::<Vec<_>>())
            })
            .collect();
        let cfg = TrainConfig {
            model: small_model(1),
            batch_size: 8,
            ..TrainConfig::default()
        };
        let mut params = init_params(&cfg.model).unwrap();
        let mut st = AdamState::new(&params);
        let mut first = 0.0;
        let mut last = 0.0;
        for step in 0..200u64 {
            let start = (step as usize * 8) % 48;
            let r = train_step(&mut params, &mut st, &data[start..start + 8], &cfg, step).unwrap();
            if step < 10 {
                first += r.total;
            }
            if step >= 190 {
                last += r.total;
            }
        }
        assert!(last < first, "first {first} last {last}");
    }

    #[test]
    fn zero_steps_returns_initial_model() {
        let v = Vocabulary::from_tokens(["a", "b"]).unwrap();
        let model = EditorModel::new(small_model(1), v.clone(), v).unwrap();
        let cfg = TrainConfig {
            model: model.config.clone(),
            max_steps: 0,
            ..TrainConfig::default()
        };
        let data = vec![pair(&[4, 5])];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let out = train(model.clone(), &data, &data, &cfg, Some(&path)).unwrap();
        assert_eq!(out.model, model);
        assert!(out.log.is_empty());
        assert!(path.exists());
    }

    #[test]
    fn one_log_line_per_evaluation() {
        let v = Vocabulary::from_tokens(["a", "b"]).unwrap();
        let model = EditorModel::new(small_model(1), v.clone(), v).unwrap();
        let cfg = TrainConfig {
            model: model.config.clone(),
            max_steps: 7,
            eval_interval: 3,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let data = vec![pair(&[4, 5]), pair(&[5])];
        let out = train(model, &data, &data, &cfg, None).unwrap();
        assert_eq!(out.log.len(), 2);
        assert!(out.log[0].starts_with("3\t"));
        assert_eq!(out.log[0].split('\t').count(), 4);
    }

    proptest! {
        #[test]
        fn noise_is_a_sub_multiset(content in prop::collection::vec(4u32..9, 0..12), seed in 0u64..1000) {
            let y = Sequence::from_content(&content).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = noise_reference(&y, &NoiseConfig::default(), &mut rng);
            let mut remaining = content.clone();
            for t in out.content() {
                let at = remaining.iter().position(|x| x == t);
                prop_assert!(at.is_some());
                remaining.swap_remove(at.unwrap());
            }
        }
    }
}
