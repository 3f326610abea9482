//! Versioned plain-text checkpoints.
//!
//! ```text
//! EDITOR-CKPT v1
//! d_model = 64
//! ...
//! src_vocab = <s> </s> <unk> <plh> a b ...
//! tgt_vocab = ...
//! tensor src_embed
//! shape 24 64
//! <row values, space separated>
//! ...
//! ```
//!
//! Values use the shortest representation that parses back to the same
//! `f64`, so save/load is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{EditorModel, ModelConfig, Parameters};
use crate::error::{Error, Result};
use crate::types::{Vocabulary, NUM_RESERVED};

pub const CHECKPOINT_HEADER: &str = "EDITOR-CKPT v1";

pub fn save_checkpoint(model: &EditorModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let c = &model.config;
    let mut out = String::new();
    out.push_str(CHECKPOINT_HEADER);
    out.push('\n');
    for (k, v) in [
        ("d_model", c.d_model as u64),
        ("d_ff", c.d_ff as u64),
        ("n_layers_enc", c.n_layers_enc as u64),
        ("n_layers_dec", c.n_layers_dec as u64),
        ("src_vocab_size", c.src_vocab_size as u64),
        ("tgt_vocab_size", c.tgt_vocab_size as u64),
        ("max_len", c.max_len as u64),
        ("k_max", c.k_max as u64),
        ("seed", c.seed),
    ] {
        writeln!(out, "{k} = {v}").unwrap();
    }
    writeln!(out, "src_vocab = {}", model.src_vocab.tokens().join(" ")).unwrap();
    writeln!(out, "tgt_vocab = {}", model.tgt_vocab.tokens().join(" ")).unwrap();
    for (name, t) in model.params.named() {
        writeln!(out, "tensor {name}").unwrap();
        writeln!(out, "shape {} {}", t.nrows(), t.ncols()).unwrap();
        for row in t.rows() {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                write!(out, "{v:?}").unwrap();
            }
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<EditorModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(path, &text, None)
}

/// Loads a checkpoint and checks every tensor against the shapes implied by
/// `expected` rather than by the file's own header.
pub fn load_checkpoint_expecting(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<EditorModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(path, &text, Some(expected))
}

fn parse(path: &Path, text: &str, expected: Option<&ModelConfig>) -> Result<EditorModel> {
    let err = |msg: String| Error::Checkpoint {
        path: path.to_path_buf(),
        msg,
    };
    let mut lines = text.lines().peekable();
    match lines.next() {
        Some(CHECKPOINT_HEADER) => {}
        Some(other) => return Err(err(format!("unsupported header {other:?}"))),
        None => return Err(err("empty file".into())),
    }

    let mut cfg = ModelConfig::default();
    let mut src_vocab = None;
    let mut tgt_vocab = None;
    while let Some(line) = lines.next_if(|l| !l.starts_with("tensor ")) {
        let (key, value) = line
            .split_once(" = ")
            .ok_or_else(|| err(format!("malformed config line {line:?}")))?;
        let num = || {
            value
                .parse::<u64>()
                .map_err(|_| err(format!("bad value for {key}: {value:?}")))
        };
        match key {
            "d_model" => cfg.d_model = num()? as usize,
            "d_ff" => cfg.d_ff = num()? as usize,
            "n_layers_enc" => cfg.n_layers_enc = num()? as usize,
            "n_layers_dec" => cfg.n_layers_dec = num()? as usize,
            "src_vocab_size" => cfg.src_vocab_size = num()? as usize,
            "tgt_vocab_size" => cfg.tgt_vocab_size = num()? as usize,
            "max_len" => cfg.max_len = num()? as usize,
            "k_max" => cfg.k_max = num()? as usize,
            "seed" => cfg.seed = num()?,
            "src_vocab" => src_vocab = Some(parse_vocab(value).map_err(|e| err(e.to_string()))?),
            "tgt_vocab" => tgt_vocab = Some(parse_vocab(value).map_err(|e| err(e.to_string()))?),
            other => return Err(err(format!("unknown config key {other:?}"))),
        }
    }
    let src_vocab = src_vocab.ok_or_else(|| err("missing src_vocab".into()))?;
    let tgt_vocab = tgt_vocab.ok_or_else(|| err("missing tgt_vocab".into()))?;
    let shape_cfg = expected.unwrap_or(&cfg);

    let mut params = Parameters::zeros(shape_cfg);
    for (name, tensor) in params.named_mut() {
        let header = lines
            .next()
            .ok_or_else(|| err(format!("truncated before tensor {name}")))?;
        if header != format!("tensor {name}") {
            return Err(err(format!("expected tensor {name}, found {header:?}")));
        }
        let shape_line = lines
            .next()
            .ok_or_else(|| err(format!("truncated in tensor {name}")))?;
        let dims: Vec<usize> = shape_line
            .strip_prefix("shape ")
            .map(|s| s.split_whitespace().filter_map(|d| d.parse().ok()).collect())
            .unwrap_or_default();
        if dims.len() != 2 {
            return Err(err(format!("bad shape line for {name}: {shape_line:?}")));
        }
        let found = (dims[0], dims[1]);
        if found != tensor.dim() {
            return Err(Error::Shape {
                block: name,
                expected: tensor.dim(),
                found,
            });
        }
        for r in 0..found.0 {
            let row = lines
                .next()
                .ok_or_else(|| err(format!("truncated in tensor {name}")))?;
            let mut count = 0;
            for (c, tok) in row.split_whitespace().enumerate() {
                if c >= found.1 {
                    return Err(err(format!("too many values in {name} row {r}")));
                }
                tensor[[r, c]] = tok
                    .parse::<f64>()
                    .map_err(|_| err(format!("bad value {tok:?} in {name}")))?;
                count += 1;
            }
            if count != found.1 {
                return Err(err(format!("truncated row {r} in tensor {name}")));
            }
        }
    }
    if let Some(extra) = lines.find(|l| !l.trim().is_empty()) {
        return Err(err(format!("unexpected trailing content {extra:?}")));
    }
    if src_vocab.len() != shape_cfg.src_vocab_size || tgt_vocab.len() != shape_cfg.tgt_vocab_size {
        return Err(err("vocabulary sizes disagree with config".into()));
    }
    Ok(EditorModel {
        config: shape_cfg.clone(),
        params,
        src_vocab,
        tgt_vocab,
    })
}

fn parse_vocab(line: &str) -> Result<Vocabulary> {
    let tokens: Vec<&str> = line.split(' ').collect();
    if tokens.len() < NUM_RESERVED {
        return Err(Error::Config("vocabulary line lacks reserved tokens".into()));
    }
    Vocabulary::from_tokens(tokens[NUM_RESERVED..].iter().copied())
}
