//! Trains on one of the synthetic tasks and reports held-out accuracy.
//!
//! ```text
//! cargo run --release --example train_toy_task -- copy
//! cargo run --release --example train_toy_task -- swap_translate my.conf
//! ```

use std::time::Instant;

use anyhow::Result;
use editor_core::config::RunConfig;
use editor_core::decoder::{decode_batch, DecodeConfig};
use editor_core::eval::op_stats;
use editor_core::model::EditorModel;
use editor_core::tasks::{generate_splits, TaskKind, TaskSpec};
use editor_core::train::{train, TrainConfig};

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let kind: TaskKind = args.next().unwrap_or_else(|| "copy".into()).parse()?;
    let mut cfg = match args.next() {
        Some(path) => RunConfig::load(path.as_ref())?.train,
        None => TrainConfig::default(),
    };

    let [train_set, valid, test] = generate_splits(&TaskSpec::new(kind, 0, cfg.seed), 2000, 200, 200)?;
    let model = EditorModel::new(cfg.model.clone(), train_set.src_vocab.clone(), train_set.tgt_vocab.clone())?;
    cfg.model = model.config.clone();

    let start = Instant::now();
    let outcome = train(model, &train_set.pairs, &valid.pairs, &cfg, None)?;
    println!("trained {} steps in {:.1}s", cfg.max_steps, start.elapsed().as_secs_f64());
    for line in &outcome.log {
        println!("{line}");
    }

    let sources: Vec<_> = test.pairs.iter().map(|p| p.source.clone()).collect();
    let out = decode_batch(&outcome.model.params, &sources, None, &DecodeConfig::default())?;
    let exact = out.iter().zip(&test.pairs).filter(|((y, _), p)| *y == p.target).count();
    let traces: Vec<_> = out.iter().map(|(_, t)| *t).collect();
    let ops = op_stats(&traces)?;
    println!("test exact match {:.3}", exact as f64 / test.pairs.len() as f64);
    println!(
        "mean per sentence: repositions {:.2} deletions {:.2} insertions {:.2} iterations {:.2}",
        ops.repositions, ops.deletions, ops.insertions, ops.iterations
    );
    Ok(())
}
