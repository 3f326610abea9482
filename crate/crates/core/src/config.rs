//! `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::train::TrainConfig;

pub const KEYS: &[&str] = &[
    "d_model",
    "d_ff",
    "n_layers_enc",
    "n_layers_dec",
    "seed",
    "lr",
    "batch_size",
    "max_steps",
    "eval_interval",
    "warmup_steps",
    "final_lr_frac",
    "clip_norm",
    "drop_prob",
    "shuffle_k",
    "renoise",
    "alpha",
    "beta",
    "greedy_rollin",
    "max_iters",
    "gamma",
    "L_max",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
}

fn value<T: FromStr>(line_no: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("line {line_no}: invalid value {raw:?} for {key}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line_no}: expected `key = value`, found {line:?}")))?;
            cfg.set(line_no, key.trim(), raw.trim())?;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    fn set(&mut self, line_no: usize, key: &str, raw: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "d_model" => t.model.d_model = value(line_no, key, raw)?,
            "d_ff" => t.model.d_ff = value(line_no, key, raw)?,
            "n_layers_enc" => t.model.n_layers_enc = value(line_no, key, raw)?,
            "n_layers_dec" => t.model.n_layers_dec = value(line_no, key, raw)?,
            "seed" => {
                t.seed = value(line_no, key, raw)?;
                t.model.seed = t.seed;
            }
            "lr" => t.adam.lr = value(line_no, key, raw)?,
            "batch_size" => t.batch_size = value(line_no, key, raw)?,
            "max_steps" => t.max_steps = value(line_no, key, raw)?,
            "eval_interval" => t.eval_interval = value(line_no, key, raw)?,
            "warmup_steps" => t.warmup_steps = value(line_no, key, raw)?,
            "final_lr_frac" => t.final_lr_frac = value(line_no, key, raw)?,
            "clip_norm" => t.clip_norm = value(line_no, key, raw)?,
            "drop_prob" => t.noise.drop_prob = value(line_no, key, raw)?,
            "shuffle_k" => t.noise.shuffle_k = value(line_no, key, raw)?,
            "renoise" => t.noise.renoise = value(line_no, key, raw)?,
            "alpha" => t.rollin.alpha = value(line_no, key, raw)?,
            "beta" => t.rollin.beta = value(line_no, key, raw)?,
            "greedy_rollin" => t.rollin.greedy = value(line_no, key, raw)?,
            "max_iters" => t.decode.max_iters = value(line_no, key, raw)?,
            "gamma" => t.decode.gamma = value(line_no, key, raw)?,
            "L_max" => t.model.max_len = value(line_no, key, raw)?,
            other => {
                return Err(Error::Config(format!(
                    "line {line_no}: unknown key {other:?} (known keys: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Renders every key, so that `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut out = String::new();
        let mut put = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        put("d_model", t.model.d_model.to_string());
        put("d_ff", t.model.d_ff.to_string());
        put("n_layers_enc", t.model.n_layers_enc.to_string());
        put("n_layers_dec", t.model.n_layers_dec.to_string());
        put("seed", t.seed.to_string());
        put("lr", format!("{:?}", t.adam.lr));
        put("batch_size", t.batch_size.to_string());
        put("max_steps", t.max_steps.to_string());
        put("eval_interval", t.eval_interval.to_string());
        put("warmup_steps", t.warmup_steps.to_string());
        put("final_lr_frac", format!("{:?}", t.final_lr_frac));
        put("clip_norm", format!("{:?}", t.clip_norm));
        put("drop_prob", format!("{:?}", t.noise.drop_prob));
        put("shuffle_k", t.noise.shuffle_k.to_string());
        put("renoise", t.noise.renoise.to_string());
        put("alpha", format!("{:?}", t.rollin.alpha));
        put("beta", format!("{:?}", t.rollin.beta));
        put("greedy_rollin", t.rollin.greedy.to_string());
        put("max_iters", t.decode.max_iters.to_string());
        put("gamma", format!("{:?}", t.decode.gamma));
        put("L_max", t.model.max_len.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_when_empty() {
        let c = RunConfig::parse("# nothing\n\n").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn keys_are_applied() {
        let c = RunConfig::parse("d_model = 32\nlr=0.01\nalpha = 0.25\nL_max = 64\nseed = 9\n").unwrap();
        assert_eq!(c.train.model.d_model, 32);
        assert_eq!(c.train.adam.lr, 0.01);
        assert_eq!(c.train.rollin.alpha, 0.25);
        assert_eq!(c.train.model.max_len, 64);
        assert_eq!((c.train.seed, c.train.model.seed), (9, 9));
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let e = RunConfig::parse("d_model = 8\nwarmup = 4000\n").unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("warmup"), "{e}");
        assert!(RunConfig::parse("d_model 8").is_err());
        assert!(RunConfig::parse("batch_size = many").is_err());
        assert!(RunConfig::parse("alpha = 1.5").is_err());
        assert!(RunConfig::parse("gamma = 4").is_err());
    }

    #[test]
    fn text_round_trip() {
        let c = RunConfig::parse("lr = 0.003\nbeta = 0.1\nrenoise = false\n").unwrap();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        for k in KEYS {
            assert!(c.to_text().contains(&format!("{k} = ")));
        }
    }
}
