//! The learnable policy: a small encoder-decoder whose decoder states feed
//! the reposition, placeholder and token heads.

mod adam;
mod checkpoint;
mod gradcheck;
mod layers;
mod loss;
mod policy;

use ndarray::Array2;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::edit::K_MAX;
use crate::error::{Error, Result};
use crate::types::{Vocabulary, DEFAULT_MAX_LEN};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, CHECKPOINT_HEADER};
pub use gradcheck::{
    compare_with_finite_differences, finite_diff_check, random_grad_check, relative_error, small_grad_check_config,
    GradCheckOptions, GradCheckReport, GRAD_CHECK_MAX_PARAMS, REL_ERROR_FLOOR,
};
pub use loss::{loss_and_gradients, HeadLosses, HeadTargets, SupervisedSequence};
pub(crate) use loss::accumulate_loss_and_gradients;
pub use policy::{
    forward_policy, masked_softmax, Encoded, PolicyOutput, PolicyRunner, NEG_INF,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_model: usize,
    /// Hidden width of the position-wise feed-forward sublayer.
    pub d_ff: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub max_len: usize,
    pub k_max: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            d_ff: 128,
            n_layers_enc: 2,
            n_layers_dec: 2,
            src_vocab_size: 0,
            tgt_vocab_size: 0,
            max_len: DEFAULT_MAX_LEN,
            k_max: K_MAX,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.validate_architecture()?;
        if self.src_vocab_size < 5 || self.tgt_vocab_size < 5 {
            return Err(Error::Config("vocabularies need at least one content token".into()));
        }
        Ok(())
    }

    /// Checks everything except the vocabulary sizes, which are only known
    /// once data is loaded.
    pub fn validate_architecture(&self) -> Result<()> {
        if self.d_model < 8 {
            return Err(Error::Config(format!("d_model must be >= 8, got {}", self.d_model)));
        }
        if self.d_ff == 0 {
            return Err(Error::Config("d_ff must be positive".into()));
        }
        if self.k_max != K_MAX {
            return Err(Error::Config(format!("k_max must be {K_MAX}, got {}", self.k_max)));
        }
        if self.max_len < 2 {
            return Err(Error::Config("max_len must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardParams {
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams {
    pub self_attn: AttentionParams,
    pub ffn: FeedForwardParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayerParams {
    pub self_attn: AttentionParams,
    pub cross_attn: AttentionParams,
    pub ffn: FeedForwardParams,
}

/// Every learnable tensor. Vectors are stored as `1 x d` matrices so that all
/// tensors share one representation.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub src_embed: Array2<f64>,
    pub tgt_embed: Array2<f64>,
    pub positions: Array2<f64>,
    pub encoder: Vec<EncoderLayerParams>,
    pub decoder: Vec<DecoderLayerParams>,
    /// Deletion vector `b` of the reposition head.
    pub delete_vec: Array2<f64>,
    /// `(2 d_model) x (K_max + 1)`.
    pub plh_head: Array2<f64>,
    /// `d_model x |V_tgt|`.
    pub tok_head: Array2<f64>,
}

impl AttentionParams {
    fn zeros(d: usize) -> Self {
        AttentionParams {
            wq: Array2::zeros((d, d)),
            wk: Array2::zeros((d, d)),
            wv: Array2::zeros((d, d)),
            wo: Array2::zeros((d, d)),
        }
    }

    fn tensors(&self) -> [(&'static str, &Array2<f64>); 4] {
        [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv), ("wo", &self.wo)]
    }

    fn tensors_mut(&mut self) -> [(&'static str, &mut Array2<f64>); 4] {
        [
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("wo", &mut self.wo),
        ]
    }
}

impl FeedForwardParams {
    fn zeros(d: usize, f: usize) -> Self {
        FeedForwardParams {
            w1: Array2::zeros((d, f)),
            b1: Array2::zeros((1, f)),
            w2: Array2::zeros((f, d)),
            b2: Array2::zeros((1, d)),
        }
    }

    fn tensors(&self) -> [(&'static str, &Array2<f64>); 4] {
        [("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2), ("b2", &self.b2)]
    }

    fn tensors_mut(&mut self) -> [(&'static str, &mut Array2<f64>); 4] {
        [
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ]
    }
}

impl Parameters {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        Parameters {
            src_embed: Array2::zeros((cfg.src_vocab_size, d)),
            tgt_embed: Array2::zeros((cfg.tgt_vocab_size, d)),
            positions: Array2::zeros((cfg.max_len, d)),
            encoder: (0..cfg.n_layers_enc)
                .map(|_| EncoderLayerParams {
                    self_attn: AttentionParams::zeros(d),
                    ffn: FeedForwardParams::zeros(d, cfg.d_ff),
                })
                .collect(),
            decoder: (0..cfg.n_layers_dec)
                .map(|_| DecoderLayerParams {
                    self_attn: AttentionParams::zeros(d),
                    cross_attn: AttentionParams::zeros(d),
                    ffn: FeedForwardParams::zeros(d, cfg.d_ff),
                })
                .collect(),
            delete_vec: Array2::zeros((1, d)),
            plh_head: Array2::zeros((2 * d, cfg.k_max + 1)),
            tok_head: Array2::zeros((d, cfg.tgt_vocab_size)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.for_each_mut(|_, t| t.fill(0.0));
        out
    }

    /// All tensors with stable names, in serialization order.
    pub fn named(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> = vec![
            ("src_embed".into(), &self.src_embed),
            ("tgt_embed".into(), &self.tgt_embed),
            ("positions".into(), &self.positions),
        ];
        for (l, layer) in self.encoder.iter().enumerate() {
            for (n, t) in layer.self_attn.tensors() {
                out.push((format!("enc.{l}.self_attn.{n}"), t));
            }
            for (n, t) in layer.ffn.tensors() {
                out.push((format!("enc.{l}.ffn.{n}"), t));
            }
        }
        for (l, layer) in self.decoder.iter().enumerate() {
            for (n, t) in layer.self_attn.tensors() {
                out.push((format!("dec.{l}.self_attn.{n}"), t));
            }
            for (n, t) in layer.cross_attn.tensors() {
                out.push((format!("dec.{l}.cross_attn.{n}"), t));
            }
            for (n, t) in layer.ffn.tensors() {
                out.push((format!("dec.{l}.ffn.{n}"), t));
            }
        }
        out.push(("delete_vec".into(), &self.delete_vec));
        out.push(("plh_head".into(), &self.plh_head));
        out.push(("tok_head".into(), &self.tok_head));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out: Vec<(String, &mut Array2<f64>)> = vec![
            ("src_embed".into(), &mut self.src_embed),
            ("tgt_embed".into(), &mut self.tgt_embed),
            ("positions".into(), &mut self.positions),
        ];
        for (l, layer) in self.encoder.iter_mut().enumerate() {
            for (n, t) in layer.self_attn.tensors_mut() {
                out.push((format!("enc.{l}.self_attn.{n}"), t));
            }
            for (n, t) in layer.ffn.tensors_mut() {
                out.push((format!("enc.{l}.ffn.{n}"), t));
            }
        }
        for (l, layer) in self.decoder.iter_mut().enumerate() {
            for (n, t) in layer.self_attn.tensors_mut() {
                out.push((format!("dec.{l}.self_attn.{n}"), t));
            }
            for (n, t) in layer.cross_attn.tensors_mut() {
                out.push((format!("dec.{l}.cross_attn.{n}"), t));
            }
            for (n, t) in layer.ffn.tensors_mut() {
                out.push((format!("dec.{l}.ffn.{n}"), t));
            }
        }
        out.push(("delete_vec".into(), &mut self.delete_vec));
        out.push(("plh_head".into(), &mut self.plh_head));
        out.push(("tok_head".into(), &mut self.tok_head));
        out
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut Array2<f64>)) {
        for (name, t) in self.named_mut() {
            f(&name, t);
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Parameters, scale: f64) {
        let src = other.named();
        for ((_, dst), (_, s)) in self.named_mut().into_iter().zip(src) {
            dst.scaled_add(scale, s);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.for_each_mut(|_, t| t.mapv_inplace(|v| v * factor));
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.named()
            .iter()
            .map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Seeded Glorot-uniform initialization; biases and the deletion vector
/// start at zero.
pub fn init_params(cfg: &ModelConfig) -> Result<Parameters> {
    cfg.validate()?;
    let mut params = Parameters::zeros(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    params.for_each_mut(|name, t| {
        if name == "delete_vec" || name.ends_with(".b1") || name.ends_with(".b2") {
            return;
        }
        let (rows, cols) = t.dim();
        let s = (6.0 / (rows + cols) as f64).sqrt();
        let dist = Uniform::new_inclusive(-s, s);
        t.mapv_inplace(|_| dist.sample(&mut rng));
    });
    sinusoid_init(&mut params.positions, POSITION_INIT_SCALE);
    Ok(params)
}

const POSITION_INIT_SCALE: f64 = 0.5;

/// Fills a position table with scaled sine/cosine waves. The table is still
/// trained; the waves only give it a smooth starting geometry in which
/// offsets between positions are linearly readable.
fn sinusoid_init(table: &mut Array2<f64>, scale: f64) {
    let d = table.ncols();
    for ((pos, col), v) in table.indexed_iter_mut() {
        let freq = 10_000f64.powf(-((col / 2 * 2) as f64) / d as f64);
        let angle = pos as f64 * freq;
        *v = scale * if col % 2 == 0 { angle.sin() } else { angle.cos() };
    }
}

/// A trained policy together with its configuration and vocabularies.
#[derive(Debug, Clone, PartialEq)]
pub struct EditorModel {
    pub config: ModelConfig,
    pub params: Parameters,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
}

impl EditorModel {
    /// Freshly initialized model sized for the given vocabularies.
    pub fn new(mut config: ModelConfig, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> Result<Self> {
        config.src_vocab_size = src_vocab.len();
        config.tgt_vocab_size = tgt_vocab.len();
        let params = init_params(&config)?;
        Ok(EditorModel {
            config,
            params,
            src_vocab,
            tgt_vocab,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config(seed: u64) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            d_ff: 16,
            n_layers_enc: 1,
            n_layers_dec: 1,
            src_vocab_size: 7,
            tgt_vocab_size: 8,
            max_len: 12,
            k_max: K_MAX,
            seed,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params(&small_config(3)).unwrap();
        let b = init_params(&small_config(3)).unwrap();
        assert_eq!(a, b);
        let c = init_params(&small_config(4)).unwrap();
        assert_ne!(a.src_embed, c.src_embed);
    }

    #[test]
    fn deletion_vector_starts_at_zero() {
        let p = init_params(&small_config(3)).unwrap();
        assert!(p.delete_vec.iter().all(|&v| v == 0.0));
        assert!(p.encoder[0].ffn.b1.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_respects_glorot_bound() {
        let p = init_params(&small_config(9)).unwrap();
        let s = (6.0f64 / (16.0 + 256.0)).sqrt();
        assert!(p.plh_head.iter().all(|v| v.abs() <= s));
        assert_eq!(p.plh_head.dim(), (16, 256));
        assert_eq!(p.tok_head.dim(), (8, 8));
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_config(1);
        cfg.d_model = 4;
        assert!(init_params(&cfg).is_err());
        let mut cfg = small_config(1);
        cfg.k_max = 10;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn named_tensors_are_unique_and_ordered() {
        let p = init_params(&small_config(1)).unwrap();
        let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert_eq!(names[0], "src_embed");
        assert_eq!(names.last().unwrap(), "tok_head");
    }
}
