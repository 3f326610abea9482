//! Trains a small model, then decodes the test split three ways: from the
//! empty hypothesis, seeded with sampled constraints (soft), and with the
//! constraints protected from deletion (hard).
//!
//! ```text
//! cargo run --release --example constrained_decoding -- swap_translate 600
//! ```

use anyhow::Result;
use editor_core::decoder::{decode_batch, DecodeConfig, DecodeMode};
use editor_core::eval::{bleu, cpr, cpr_counts};
use editor_core::model::EditorModel;
use editor_core::tasks::{generate_splits, TaskKind, TaskSpec};
use editor_core::train::{derive_seed, train, TrainConfig};
use editor_core::types::{sample_constraints, ConstraintMode, Sequence, Vocabulary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn words(vocab: &Vocabulary, y: &Sequence) -> Vec<String> {
    vocab.decode(y)
}

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let kind: TaskKind = args.next().unwrap_or_else(|| "swap_translate".into()).parse()?;
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(600);

    let cfg = TrainConfig {
        max_steps: steps,
        eval_interval: steps.max(1),
        ..TrainConfig::default()
    };
    let [train_set, valid, test] = generate_splits(&TaskSpec::new(kind, 0, cfg.seed), 2000, 100, 200)?;
    let model = EditorModel::new(cfg.model.clone(), train_set.src_vocab.clone(), train_set.tgt_vocab.clone())?;
    let model = train(model, &train_set.pairs, &valid.pairs, &cfg, None)?.model;
    let vocab = &model.tgt_vocab;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 8]));
    let mut constraints = Vec::new();
    for pair in &test.pairs {
        constraints.push(sample_constraints(pair, 1, 2, &mut rng)?);
    }
    let phrases: Vec<Vec<Vec<String>>> = constraints
        .iter()
        .map(|c| c.phrases().iter().map(|p| p.iter().map(|&t| vocab.token(t).to_string()).collect()).collect())
        .collect();
    let sources: Vec<_> = test.pairs.iter().map(|p| p.source.clone()).collect();
    let refs: Vec<_> = test.pairs.iter().map(|p| words(vocab, &p.target)).collect();

    for mode in [DecodeMode::Unconstrained, DecodeMode::Soft, DecodeMode::Hard] {
        let dcfg = DecodeConfig { mode, ..DecodeConfig::default() };
        let sets: Vec<_> = constraints
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.mode = if mode == DecodeMode::Hard { ConstraintMode::Hard } else { ConstraintMode::Soft };
                c
            })
            .collect();
        let out = decode_batch(&model.params, &sources, Some(&sets), &dcfg)?;
        let hyps: Vec<_> = out.iter().map(|(y, _)| words(vocab, y)).collect();
        let full = hyps
            .iter()
            .zip(&phrases)
            .filter(|(h, p)| {
                let (kept, total) = cpr_counts(h, p);
                kept == total
            })
            .count();
        println!(
            "{:<13} BLEU {:6.2}  CPR {:.4}  sentences keeping every constraint {full}/{}",
            format!("{mode:?}"),
            bleu(&hyps, &refs)?,
            cpr(&hyps, &phrases)?.unwrap_or(1.0),
            hyps.len()
        );
    }
    Ok(())
}
