//! Convolution-tokenizer transformer classifier and its training objectives.
//!
//! A `6×T` window is tokenized by a same-padded temporal convolution into
//! `T×d_model`, a learned positional table is added, and `N` pre-norm encoder
//! blocks (`x + MHA(LN(x))`, then `x + FFN(LN(x))`) produce per-timestep
//! embeddings. Mean pooling over time feeds a linear classifier.
//!
//! Pretraining heads (contrastive projection, CPC predictors, reconstruction
//! projection) share the parameter store but are not part of the classifier
//! path and are not exported.

mod augment;
mod losses;
mod params;

use serde::{Deserialize, Serialize};

pub use augment::{augment, jitter, rotate, scale_channels, time_shift, AugmentKind};
pub use losses::{
    cpc_from_embeddings, cross_entropy, masked_positions, nt_xent, pretrain_loss, triplet,
    LossParams, Strategy, PROB_FLOOR,
};
pub use params::{BoundParams, ParamGroup, ParamSpec, ParamStore};

use crate::signal::{Window, CHANNELS};
use crate::tensorad::{Graph, Tensor, TensorError, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub channels: usize,
    pub window: usize,
    pub kernel: usize,
    pub stride: usize,
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_classes: usize,
    pub proj_dim: usize,
    pub cpc_horizon: usize,
    pub mask_frac: f64,
    pub activation: Activation,
}

impl ModelConfig {
    /// `d_model=128`, 3 blocks, 4 heads, `d_ff=512`, kernel 8, `T=120`.
    pub fn paper(n_classes: usize) -> Self {
        Self {
            channels: CHANNELS,
            window: 120,
            kernel: 8,
            stride: 1,
            d_model: 128,
            n_blocks: 3,
            n_heads: 4,
            d_ff: 512,
            n_classes,
            proj_dim: 64,
            cpc_horizon: 16,
            mask_frac: 0.15,
            activation: Activation::Gelu,
        }
    }

    /// Same architecture at a width that trains quickly on one CPU core.
    pub fn desk(n_classes: usize) -> Self {
        Self {
            d_model: 32,
            n_blocks: 2,
            d_ff: 64,
            proj_dim: 32,
            ..Self::paper(n_classes)
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.channels != CHANNELS {
            return fail(format!("expected {CHANNELS} input channels, got {}", self.channels));
        }
        if self.stride != 1 {
            return fail(format!("only stride 1 is supported, got {}", self.stride));
        }
        if self.window == 0 || self.kernel == 0 || self.kernel > self.window {
            return fail(format!("kernel {} does not fit window {}", self.kernel, self.window));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.n_heads
            ));
        }
        if self.d_ff == 0 || self.proj_dim == 0 {
            return fail("d_ff and proj_dim must be positive".into());
        }
        if self.n_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.cpc_horizon >= self.window {
            return fail(format!(
                "CPC horizon {} must be below the window length {}",
                self.cpc_horizon, self.window
            ));
        }
        if !(self.mask_frac > 0.0 && self.mask_frac < 1.0) {
            return fail(format!("mask fraction {} outside (0, 1)", self.mask_frac));
        }
        Ok(())
    }

    /// Number of masked timesteps per window.
    pub fn mask_count(&self) -> usize {
        ((self.mask_frac * self.window as f64).round() as usize).clamp(1, self.window)
    }
}

/// Closed-form size of the classifier path (tokenizer, positional table,
/// encoder blocks, classifier); pretraining heads excluded.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let d = cfg.d_model;
    let conv = d * cfg.channels * cfg.kernel + d;
    let positions = cfg.window * d;
    let attention = 4 * (d * d + d);
    let ffn = d * cfg.d_ff + cfg.d_ff + cfg.d_ff * d + d;
    let norms = 4 * d;
    let classifier = d * cfg.n_classes + cfg.n_classes;
    conv + positions + cfg.n_blocks * (attention + ffn + norms) + classifier
}

/// Graph handles produced by encoding a batch of `B` windows.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// `B·T × d_model`, window-major.
    pub tokens: Var,
    /// `B × d_model` time-averaged embeddings.
    pub pooled: Var,
    /// One attention node per block; read the weights with
    /// [`Graph::attention_weights`].
    pub attention: Vec<Var>,
    pub batch: usize,
}

/// Per-timestep embeddings of one window and their time average.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSequence {
    pub timesteps: Tensor,
    pub pooled: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl TransformerModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let params = ParamStore::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> BoundParams {
        self.params.bind(g, requires_grad)
    }

    fn check_window(&self, w: &Window) -> Result<(), ModelError> {
        if w.len() != self.config.window {
            return Err(ModelError::Data(format!(
                "window {} has {} timesteps, model expects {}",
                w.id(),
                w.len(),
                self.config.window
            )));
        }
        Ok(())
    }

    /// Encodes normalized windows into a graph.
    pub fn encode_graph(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        windows: &[&Window],
    ) -> Result<Encoded, ModelError> {
        if windows.is_empty() {
            return Err(ModelError::Data("empty batch".into()));
        }
        let cfg = &self.config;
        let lay = &self.params.layout;
        let (t_len, heads) = (cfg.window, cfg.n_heads);
        let batch = windows.len();

        let mut tokens = Vec::with_capacity(batch);
        for w in windows {
            self.check_window(w)?;
            let x = g.constant(Tensor::new(vec![CHANNELS, t_len], w.data().to_vec())?);
            let conv = g.conv1d_same(x, p.var(lay.conv_w), p.var(lay.conv_b))?;
            tokens.push(g.transpose(conv)?);
        }
        let mut x = if batch == 1 { tokens[0] } else { g.concat_rows(&tokens)? };
        let pos_rows: Vec<usize> = (0..batch).flat_map(|_| 0..t_len).collect();
        let pos = g.select_rows(p.var(lay.pos), &pos_rows)?;
        x = g.add(x, pos)?;

        let mut attention = Vec::with_capacity(lay.blocks.len());
        for blk in &lay.blocks {
            let h = g.layernorm(x, p.var(blk.ln1_g), p.var(blk.ln1_b), LN_EPS)?;
            let proj = |g: &mut Graph, w: usize, b: usize| -> Result<Var, TensorError> {
                let m = g.matmul(h, p.var(w))?;
                g.add_bias(m, p.var(b))
            };
            let q = proj(g, blk.wq, blk.bq)?;
            let k = proj(g, blk.wk, blk.bk)?;
            let v = proj(g, blk.wv, blk.bv)?;
            let merged = g.attention(q, k, v, batch, heads)?;
            attention.push(merged);
            let o = g.matmul(merged, p.var(blk.wo))?;
            let o = g.add_bias(o, p.var(blk.bo))?;
            x = g.add(x, o)?;

            let h2 = g.layernorm(x, p.var(blk.ln2_g), p.var(blk.ln2_b), LN_EPS)?;
            let f = g.matmul(h2, p.var(blk.w1))?;
            let f = g.add_bias(f, p.var(blk.b1))?;
            let f = match cfg.activation {
                Activation::Gelu => g.gelu(f),
                Activation::Relu => g.relu(f),
            };
            let f = g.matmul(f, p.var(blk.w2))?;
            let f = g.add_bias(f, p.var(blk.b2))?;
            x = g.add(x, f)?;
        }

        let pooled = g.group_mean_rows(x, batch)?;
        Ok(Encoded {
            tokens: x,
            pooled,
            attention,
            batch,
        })
    }

    /// Class logits `B × N_g` from pooled embeddings.
    pub fn logits_graph(&self, g: &mut Graph, p: &BoundParams, pooled: Var) -> Result<Var, ModelError> {
        let lay = &self.params.layout;
        let z = g.matmul(pooled, p.var(lay.cls_w))?;
        Ok(g.add_bias(z, p.var(lay.cls_b))?)
    }

    /// Contrastive projection `B × proj_dim` of pooled embeddings.
    pub fn project_graph(&self, g: &mut Graph, p: &BoundParams, pooled: Var) -> Result<Var, ModelError> {
        let lay = &self.params.layout;
        let z = g.matmul(pooled, p.var(lay.proj_w))?;
        Ok(g.add_bias(z, p.var(lay.proj_b))?)
    }

    /// Per-timestep embeddings and pooled embedding of one normalized window.
    pub fn encode(&self, w: &Window) -> Result<EmbeddingSequence, ModelError> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let enc = self.encode_graph(&mut g, &p, &[w])?;
        Ok(EmbeddingSequence {
            timesteps: g.value(enc.tokens).clone(),
            pooled: g.value(enc.pooled).data().to_vec(),
        })
    }

    /// Pooled embeddings, one row per window.
    pub fn embed(&self, windows: &[&Window]) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let enc = self.encode_graph(&mut g, &p, windows)?;
        let pooled = g.value(enc.pooled);
        Ok((0..windows.len()).map(|b| pooled.row(b).to_vec()).collect())
    }

    /// Class probabilities for each normalized window.
    pub fn classify(&self, windows: &[&Window]) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let enc = self.encode_graph(&mut g, &p, windows)?;
        let logits = self.logits_graph(&mut g, &p, enc.pooled)?;
        let probs = g.softmax(logits);
        let probs = g.value(probs);
        Ok((0..windows.len()).map(|b| probs.row(b).to_vec()).collect())
    }

    /// Class probabilities for one normalized window.
    pub fn forward_classify(&self, w: &Window) -> Result<Vec<f64>, ModelError> {
        Ok(self.classify(&[w])?.remove(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_config_count() {
        assert_eq!(param_count(&ModelConfig::paper(5)), 617_093);
        let store = ParamStore::init(&ModelConfig::paper(5), 0).unwrap();
        assert_eq!(store.total_len(Some(ParamGroup::Classifier)), 617_093);
    }

    #[test]
    fn degenerate_config_count() {
        let cfg = ModelConfig {
            window: 1,
            kernel: 1,
            d_model: 1,
            n_blocks: 0,
            n_heads: 1,
            d_ff: 1,
            n_classes: 2,
            cpc_horizon: 0,
            ..ModelConfig::paper(2)
        };
        // conv 6·1·1 + 1, positions 1, classifier 1·2 + 2
        assert_eq!(param_count(&cfg), 12);
        let store = ParamStore::init(&cfg, 0).unwrap();
        assert_eq!(store.total_len(Some(ParamGroup::Classifier)), 12);
    }

    #[test]
    fn each_block_adds_the_same_amount() {
        let base = ModelConfig::paper(5);
        let counts: Vec<usize> = (0..5)
            .map(|n| param_count(&ModelConfig { n_blocks: n, ..base.clone() }))
            .collect();
        for pair in counts.windows(2) {
            assert_eq!(pair[1] - pair[0], 198_272);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = ModelConfig::paper(5);
        for bad in [
            ModelConfig { n_heads: 3, ..base.clone() },
            ModelConfig { n_classes: 1, ..base.clone() },
            ModelConfig { cpc_horizon: 120, ..base.clone() },
            ModelConfig { mask_frac: 1.0, ..base.clone() },
            ModelConfig { kernel: 121, ..base.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(ModelError::Config(_))), "{bad:?}");
        }
        assert_eq!(base.mask_count(), 18);
    }
}
