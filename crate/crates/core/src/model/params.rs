use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError};
use crate::signal::CHANNELS;
use crate::tensorad::{Graph, Tensor, Var};

/// Whether a tensor belongs to the exported classifier or to a pretraining head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    Classifier,
    Head,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Zeros,
    Ones,
    /// Glorot uniform with the given fan-in and fan-out.
    Glorot(usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct BlockLayout {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Positions of every named tensor inside a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub conv_w: usize,
    pub conv_b: usize,
    pub pos: usize,
    pub blocks: Vec<BlockLayout>,
    pub cls_w: usize,
    pub cls_b: usize,
    pub proj_w: usize,
    pub proj_b: usize,
    pub cpc: Vec<usize>,
    pub recon_w: usize,
    pub recon_b: usize,
}

struct Builder {
    specs: Vec<ParamSpec>,
    inits: Vec<Init>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, group: ParamGroup, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, group });
        self.inits.push(init);
        self.specs.len() - 1
    }
}

fn build(cfg: &ModelConfig) -> (Vec<ParamSpec>, Vec<Init>, Layout) {
    use ParamGroup::{Classifier as C, Head as H};
    let d = cfg.d_model;
    let mut b = Builder {
        specs: Vec::new(),
        inits: Vec::new(),
    };
    let conv_w = b.add(
        "conv.weight".into(),
        vec![d, CHANNELS, cfg.kernel],
        C,
        Init::Glorot(CHANNELS * cfg.kernel, d * cfg.kernel),
    );
    let conv_b = b.add("conv.bias".into(), vec![d], C, Init::Zeros);
    let pos = b.add("positional".into(), vec![cfg.window, d], C, Init::Zeros);
    let blocks = (0..cfg.n_blocks)
        .map(|i| {
            let mut add = |part: &str, shape: Vec<usize>, init| {
                b.add(format!("block{i}.{part}"), shape, C, init)
            };
            BlockLayout {
                ln1_g: add("ln1.gain", vec![d], Init::Ones),
                ln1_b: add("ln1.shift", vec![d], Init::Zeros),
                wq: add("attn.wq", vec![d, d], Init::Glorot(d, d)),
                bq: add("attn.bq", vec![d], Init::Zeros),
                wk: add("attn.wk", vec![d, d], Init::Glorot(d, d)),
                bk: add("attn.bk", vec![d], Init::Zeros),
                wv: add("attn.wv", vec![d, d], Init::Glorot(d, d)),
                bv: add("attn.bv", vec![d], Init::Zeros),
                wo: add("attn.wo", vec![d, d], Init::Glorot(d, d)),
                bo: add("attn.bo", vec![d], Init::Zeros),
                ln2_g: add("ln2.gain", vec![d], Init::Ones),
                ln2_b: add("ln2.shift", vec![d], Init::Zeros),
                w1: add("ffn.w1", vec![d, cfg.d_ff], Init::Glorot(d, cfg.d_ff)),
                b1: add("ffn.b1", vec![cfg.d_ff], Init::Zeros),
                w2: add("ffn.w2", vec![cfg.d_ff, d], Init::Glorot(cfg.d_ff, d)),
                b2: add("ffn.b2", vec![d], Init::Zeros),
            }
        })
        .collect();
    let n = cfg.n_classes;
    let cls_w = b.add("classifier.weight".into(), vec![d, n], C, Init::Glorot(d, n));
    let cls_b = b.add("classifier.bias".into(), vec![n], C, Init::Zeros);
    let p = cfg.proj_dim;
    let proj_w = b.add("head.projection.weight".into(), vec![d, p], H, Init::Glorot(d, p));
    let proj_b = b.add("head.projection.bias".into(), vec![p], H, Init::Zeros);
    let cpc = (1..=cfg.cpc_horizon)
        .map(|l| b.add(format!("head.cpc.w{l}"), vec![d, d], H, Init::Glorot(d, d)))
        .collect();
    let recon_w = b.add("head.recon.weight".into(), vec![d, CHANNELS], H, Init::Zeros);
    let recon_b = b.add("head.recon.bias".into(), vec![CHANNELS], H, Init::Zeros);
    let layout = Layout {
        conv_w,
        conv_b,
        pos,
        blocks,
        cls_w,
        cls_b,
        proj_w,
        proj_b,
        cpc,
        recon_w,
        recon_b,
    };
    (b.specs, b.inits, layout)
}

/// Every named tensor of a model, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    specs: Vec<ParamSpec>,
    values: Vec<Tensor>,
    pub(crate) layout: Layout,
}

impl ParamStore {
    /// Freshly initialized parameters: Glorot-uniform weights, zero biases,
    /// unit layernorm gains, zero positional table and reconstruction head.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let (specs, inits, layout) = build(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = specs
            .iter()
            .zip(&inits)
            .map(|(spec, init)| match *init {
                Init::Zeros => Tensor::zeros(&spec.shape),
                Init::Ones => Tensor::filled(&spec.shape, 1.0),
                Init::Glorot(fan_in, fan_out) => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
                    let data = (0..spec.len()).map(|_| dist.sample(&mut rng)).collect();
                    Tensor::new(spec.shape.clone(), data).expect("spec shape")
                }
            })
            .collect();
        Ok(Self {
            specs,
            values,
            layout,
        })
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(|i| &mut self.values[i])
    }

    pub fn total_len(&self, group: Option<ParamGroup>) -> usize {
        self.specs
            .iter()
            .filter(|s| group.is_none_or(|g| s.group == g))
            .map(ParamSpec::len)
            .sum()
    }

    /// Classifier-path values concatenated in layout order.
    pub fn classifier_flat(&self) -> Vec<f64> {
        self.specs
            .iter()
            .zip(&self.values)
            .filter(|(s, _)| s.group == ParamGroup::Classifier)
            .flat_map(|(_, v)| v.data().iter().copied())
            .collect()
    }

    /// Inverse of [`classifier_flat`](Self::classifier_flat).
    pub fn set_classifier_flat(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        let expected = self.total_len(Some(ParamGroup::Classifier));
        if flat.len() != expected {
            return Err(ModelError::Data(format!(
                "expected {expected} classifier parameters, got {}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for (spec, value) in self.specs.iter().zip(self.values.iter_mut()) {
            if spec.group != ParamGroup::Classifier {
                continue;
            }
            let n = spec.len();
            value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Adds every tensor to `g` as a leaf.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> BoundParams {
        BoundParams {
            vars: self
                .values
                .iter()
                .map(|v| g.leaf(v.clone(), requires_grad))
                .collect(),
        }
    }
}

/// Graph handles for every tensor of a [`ParamStore`], same order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, index: usize) -> Var {
        self.vars[index]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
