use super::loss::{loss_and_gradients, loss_only, HeadTargets, SupervisedSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{init_params, ModelConfig, Parameters};
use crate::error::{Error, Result};
use crate::types::{Sequence, TokenId, BOS, EOS, NUM_RESERVED, PLH};

/// Largest model the exhaustive finite-difference check accepts.
pub const GRAD_CHECK_MAX_PARAMS: usize = 50_000;

/// Denominator floor for relative errors, so that parameters with (near)
/// zero gradient compare on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(tensor, flat index, analytic, numeric, relative error)` for each
    /// entry at or above the tolerance.
    pub failures: Vec<(String, usize, f64, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the analytic gradient of the imitation loss with central
/// differences `(f(x+h) - f(x-h)) / 2h` for every parameter entry.
pub fn finite_diff_check(
    params: &Parameters,
    source: &Sequence,
    y: &Sequence,
    targets: &HeadTargets,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = loss_and_gradients(params, source, y, targets)?;
    compare_with_finite_differences(params, source, y, targets, &analytic, step, tol)
}

/// Like [`finite_diff_check`] but against a caller-supplied gradient.
pub fn compare_with_finite_differences(
    params: &Parameters,
    source: &Sequence,
    y: &Sequence,
    targets: &HeadTargets,
    analytic: &Parameters,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let total = params.num_parameters();
    if total > GRAD_CHECK_MAX_PARAMS {
        return Err(Error::Config(format!(
            "{total} parameters exceed the gradient-check limit of {GRAD_CHECK_MAX_PARAMS}"
        )));
    }
    let items = [SupervisedSequence {
        y: y.clone(),
        targets: targets.clone(),
    }];
    let mut probe = params.clone();
    let mut report = GradCheckReport::default();
    let analytic = analytic.named();
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    for (t_idx, name) in names.iter().enumerate() {
        let len = analytic[t_idx].1.len();
        for k in 0..len {
            let original = get(&mut probe, t_idx, k);
            set(&mut probe, t_idx, k, original + step);
            let plus = loss_only(&probe, source, &items)?.total();
            set(&mut probe, t_idx, k, original - step);
            let minus = loss_only(&probe, source, &items)?.total();
            set(&mut probe, t_idx, k, original);

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[t_idx].1.as_slice().expect("standard layout")[k];
            let rel = relative_error(a, numeric);
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(rel);
            if !(rel < tol) {
                report.failures.push((name.clone(), k, a, numeric, rel));
            }
        }
    }
    Ok(report)
}

/// Options for [`random_grad_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tol: f64,
    /// Perturb one analytic gradient entry before comparing; the check must
    /// then fail. Exists to test the checker itself.
    pub corrupt: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tol: 1e-4,
            corrupt: false,
        }
    }
}

/// Model configuration used when no other is given: `d_model = 8`, one
/// encoder and one decoder layer, eight-token vocabularies.
pub fn small_grad_check_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        d_ff: 16,
        n_layers_enc: 1,
        n_layers_dec: 1,
        src_vocab_size: 8,
        tgt_vocab_size: 8,
        max_len: 8,
        ..ModelConfig::default()
    }
}

/// Finite-difference check on a random model, source, state and targets
/// for all three heads, all drawn from `seed`.
pub fn random_grad_check(cfg: &ModelConfig, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let cfg = ModelConfig { seed, ..cfg.clone() };
    cfg.validate()?;
    let params = init_params(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_content = cfg.max_len.saturating_sub(2).clamp(1, 5);
    let content = |rng: &mut ChaCha8Rng, vocab: usize, with_plh: bool| -> Vec<TokenId> {
        let len = rng.gen_range(1..=max_content);
        (0..len)
            .map(|_| {
                if with_plh && rng.gen_bool(0.3) {
                    PLH
                } else {
                    rng.gen_range(NUM_RESERVED as TokenId..vocab as TokenId)
                }
            })
            .collect()
    };
    let source = Sequence::from_content(&content(&mut rng, cfg.src_vocab_size, false))?;
    let mut y_content = content(&mut rng, cfg.tgt_vocab_size, true);
    if !y_content.contains(&PLH) {
        y_content[0] = PLH;
    }
    let y = Sequence::new([&[BOS][..], &y_content, &[EOS]].concat())?;
    let n = y.len();
    let mut reposition = vec![0; n];
    reposition[0] = 1;
    reposition[n - 1] = n;
    for r in reposition.iter_mut().take(n - 1).skip(1) {
        // delete, or any interior index
        let pick = rng.gen_range(0..n - 1);
        *r = if pick == 0 { 0 } else { pick + 1 };
    }
    let targets = HeadTargets {
        reposition: Some(reposition),
        placeholders: Some((0..n - 1).map(|_| rng.gen_range(0..4)).collect()),
        tokens: Some(
            (0..y.count_placeholders())
                .map(|_| rng.gen_range(NUM_RESERVED as TokenId..cfg.tgt_vocab_size as TokenId))
                .collect(),
        ),
    };
    let (_, mut analytic) = loss_and_gradients(&params, &source, &y, &targets)?;
    if opts.corrupt {
        analytic.plh_head[[0, 0]] += 1e-2;
    }
    compare_with_finite_differences(&params, &source, &y, &targets, &analytic, opts.step, opts.tol)
}

fn get(p: &mut Parameters, tensor: usize, k: usize) -> f64 {
    p.named_mut()[tensor].1.as_slice().expect("standard layout")[k]
}

fn set(p: &mut Parameters, tensor: usize, k: usize, value: f64) {
    p.named_mut().swap_remove(tensor).1.as_slice_mut().expect("standard layout")[k] = value;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(seed: u64) -> (Parameters, Sequence, Sequence, HeadTargets) {
        let cfg = ModelConfig {
            d_model: 8,
            d_ff: 12,
            n_layers_enc: 1,
            n_layers_dec: 1,
            src_vocab_size: 7,
            tgt_vocab_size: 7,
            max_len: 8,
            seed,
            ..ModelConfig::default()
        };
        let params = init_params(&cfg).unwrap();
        let src = Sequence::from_content(&[4, 5]).unwrap();
        let y = Sequence::new(vec![BOS, 5, PLH, 4, EOS]).unwrap();
        let t = HeadTargets {
            reposition: Some(vec![1, 4, 0, 2, 5]),
            placeholders: Some(vec![0, 2, 0, 1]),
            tokens: Some(vec![5]),
        };
        (params, src, y, t)
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let (params, src, y, t) = setup(1);
        let report = finite_diff_check(&params, &src, &y, &t, 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "max rel error {}", report.max_rel_error);
        assert_eq!(report.checked, params.num_parameters());
    }

    #[test]
    fn unused_rows_have_zero_gradient() {
        let (params, src, y, t) = setup(2);
        let (_, grads) = loss_and_gradients(&params, &src, &y, &t).unwrap();
        // token 6 appears in neither sequence; only the token head may touch it
        assert!(grads.src_embed.row(6).iter().all(|&g| g == 0.0));
        assert!(grads.tgt_embed.row(6).iter().all(|&g| g == 0.0));
        assert!(grads.positions.row(7).iter().all(|&g| g == 0.0));
        let report = finite_diff_check(&params, &src, &y, &t, 1e-5, 1e-4).unwrap();
        assert!(report.passed());
    }

    #[test]
    fn zero_tolerance_always_fails() {
        let (params, src, y, t) = setup(3);
        let report = finite_diff_check(&params, &src, &y, &t, 1e-5, 0.0).unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures.len(), report.checked);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let (params, src, y, t) = setup(4);
        let (_, mut grads) = loss_and_gradients(&params, &src, &y, &t).unwrap();
        grads.plh_head[[0, 0]] += 0.01;
        let report =
            compare_with_finite_differences(&params, &src, &y, &t, &grads, 1e-5, 1e-4).unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn random_checks_pass_and_detect_corruption() {
        let cfg = small_grad_check_config();
        for seed in 1..=3 {
            let r = random_grad_check(&cfg, seed, &GradCheckOptions::default()).unwrap();
            assert!(r.passed(), "seed {seed}: {}", r.max_rel_error);
        }
        let bad = GradCheckOptions {
            corrupt: true,
            ..GradCheckOptions::default()
        };
        assert!(!random_grad_check(&cfg, 1, &bad).unwrap().passed());
    }
}
