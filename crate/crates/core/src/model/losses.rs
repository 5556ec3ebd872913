use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{augment, ModelError, TransformerModel};
use crate::signal::{Window, CHANNELS};
use crate::tensorad::{Graph, Tensor, Var};

/// Probabilities are clamped here before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;
/// Added to self-similarities so they drop out of the softmax.
const SELF_MASK: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "contrastive-ntxent")]
    NtXent,
    #[serde(rename = "contrastive-triplet")]
    Triplet,
    #[serde(rename = "cpc")]
    Cpc,
    #[serde(rename = "masked-recon")]
    MaskedRecon,
    #[serde(rename = "none")]
    None,
}

impl Strategy {
    pub const PRETRAINING: [Strategy; 4] = [
        Strategy::NtXent,
        Strategy::Triplet,
        Strategy::Cpc,
        Strategy::MaskedRecon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::NtXent => "contrastive-ntxent",
            Self::Triplet => "contrastive-triplet",
            Self::Cpc => "cpc",
            Self::MaskedRecon => "masked-recon",
            Self::None => "none",
        }
    }

    /// Strategies that contrast windows within a batch.
    pub fn needs_pairs(self) -> bool {
        matches!(self, Self::NtXent | Self::Triplet | Self::Cpc)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Self::PRETRAINING.as_slice(), &[Self::None]]
            .concat()
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown strategy `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub temperature: f64,
    pub margin: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            margin: 1.0,
        }
    }
}

/// Weighted mean negative log probability of the true classes. `probs` is
/// `B × N_g`; `weights` are per class, and the mean is taken with the
/// weights as the normalizer.
pub fn cross_entropy(
    g: &mut Graph,
    probs: Var,
    labels: &[usize],
    weights: Option<&[f64]>,
) -> Result<Var, ModelError> {
    let (b, n) = g.value(probs).as_matrix_dims();
    if labels.len() != b {
        return Err(ModelError::Data(format!("{} labels for a batch of {b}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
        return Err(ModelError::Data(format!("label {bad} out of range for {n} classes")));
    }
    let w = |c: usize| weights.map_or(1.0, |ws| ws[c]);
    let total: f64 = labels.iter().map(|&l| w(l)).sum();
    if total <= 0.0 {
        return Err(ModelError::Data("class weights sum to zero".into()));
    }
    let mut select = vec![0.0; b * n];
    for (i, &l) in labels.iter().enumerate() {
        select[i * n + l] = -w(l) / total;
    }
    let select = g.constant(Tensor::new(vec![b, n], select)?);
    let logp = g.clamp_log(probs, PROB_FLOOR);
    let picked = g.mul(logp, select)?;
    Ok(g.sum(picked))
}

/// NT-Xent over `2B` embeddings where rows `i` and `i+B` are positives.
pub fn nt_xent(g: &mut Graph, z: Var, temperature: f64) -> Result<Var, ModelError> {
    let (rows, _) = g.value(z).as_matrix_dims();
    if rows < 4 || rows % 2 != 0 {
        return Err(ModelError::Config(format!(
            "NT-Xent needs an even number of at least 4 embeddings, got {rows}"
        )));
    }
    let half = rows / 2;
    let zn = g.normalize_rows(z)?;
    let zt = g.transpose(zn)?;
    let sim = g.matmul(zn, zt)?;
    let sim = g.scale(sim, 1.0 / temperature);
    let mut mask = vec![0.0; rows * rows];
    for i in 0..rows {
        mask[i * rows + i] = SELF_MASK;
    }
    let mask = g.constant(Tensor::new(vec![rows, rows], mask)?);
    let sim = g.add(sim, mask)?;
    let logp = g.log_softmax(sim);
    let mut select = vec![0.0; rows * rows];
    for i in 0..rows {
        let j = (i + half) % rows;
        select[i * rows + j] = -1.0 / rows as f64;
    }
    let select = g.constant(Tensor::new(vec![rows, rows], select)?);
    let picked = g.mul(logp, select)?;
    Ok(g.sum(picked))
}

/// `mean(max(0, ‖a−p‖ − ‖a−n‖ + margin))` over rows.
pub fn triplet(g: &mut Graph, a: Var, p: Var, n: Var, margin: f64) -> Result<Var, ModelError> {
    let dp = g.sub(a, p)?;
    let dp = g.row_norms(dp)?;
    let dn = g.sub(a, n)?;
    let dn = g.row_norms(dn)?;
    let gap = g.sub(dp, dn)?;
    let m = g.constant(Tensor::filled(g.value(gap).shape(), margin));
    let hinge = g.add(gap, m)?;
    let hinge = g.relu(hinge);
    Ok(g.mean(hinge))
}

/// InfoNCE for contrastive predictive coding. `tokens` holds `batch`
/// sequences of `t_len` rows; `contexts[b]` is the context timestep of
/// sequence `b`. For each offset `l`, the context predicts
/// `z[contexts[b] + l]` through `predictors[l-1]`, scored against the same
/// offset of every sequence in the batch.
pub fn cpc_from_embeddings(
    g: &mut Graph,
    tokens: Var,
    batch: usize,
    t_len: usize,
    predictors: &[Var],
    contexts: &[usize],
) -> Result<Var, ModelError> {
    if batch < 2 {
        return Err(ModelError::Config("CPC needs a batch of at least 2".into()));
    }
    if contexts.len() != batch {
        return Err(ModelError::Data(format!("{} contexts for a batch of {batch}", contexts.len())));
    }
    let horizon = predictors.len();
    if horizon == 0 {
        return Err(ModelError::Config("CPC needs at least one predictor".into()));
    }
    if let Some(&t) = contexts.iter().find(|&&t| t + horizon >= t_len) {
        return Err(ModelError::Data(format!(
            "context {t} leaves fewer than {horizon} future steps in {t_len}"
        )));
    }
    let ctx_rows: Vec<usize> = contexts.iter().enumerate().map(|(b, t)| b * t_len + t).collect();
    let ctx = g.select_rows(tokens, &ctx_rows)?;
    let mut diag = vec![0.0; batch * batch];
    for b in 0..batch {
        diag[b * batch + b] = -1.0 / (horizon * batch) as f64;
    }
    let diag = g.constant(Tensor::new(vec![batch, batch], diag)?);
    let mut total: Option<Var> = None;
    for (l, &w) in predictors.iter().enumerate() {
        let rows: Vec<usize> = ctx_rows.iter().map(|r| r + l + 1).collect();
        let future = g.select_rows(tokens, &rows)?;
        let pred = g.matmul(ctx, w)?;
        let ft = g.transpose(future)?;
        let scores = g.matmul(pred, ft)?;
        let logp = g.log_softmax(scores);
        let picked = g.mul(logp, diag)?;
        let s = g.sum(picked);
        total = Some(match total {
            Some(acc) => g.add(acc, s)?,
            None => s,
        });
    }
    Ok(total.expect("horizon is positive"))
}

/// `count` distinct timesteps in `0..t_len`, sorted.
pub fn masked_positions(t_len: usize, count: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut v = index::sample(rng, t_len, count).into_vec();
    v.sort_unstable();
    v
}

fn masked_recon(
    model: &TransformerModel,
    g: &mut Graph,
    p: &super::BoundParams,
    windows: &[&Window],
    rng: &mut impl Rng,
) -> Result<Var, ModelError> {
    let t_len = model.config.window;
    let count = model.config.mask_count();
    let mut masked = Vec::with_capacity(windows.len());
    let mut rows = Vec::with_capacity(windows.len() * count);
    let mut targets = Vec::with_capacity(windows.len() * count * CHANNELS);
    for (b, w) in windows.iter().enumerate() {
        let positions = masked_positions(t_len, count, rng);
        let mut m = (*w).clone();
        for &t in &positions {
            targets.extend(w.timestep(t));
            for c in 0..CHANNELS {
                m.channel_mut(c)[t] = 0.0;
            }
            rows.push(b * t_len + t);
        }
        masked.push(m);
    }
    let refs: Vec<&Window> = masked.iter().collect();
    let enc = model.encode_graph(g, p, &refs)?;
    let lay = &model.params.layout;
    let picked = g.select_rows(enc.tokens, &rows)?;
    let recon = g.matmul(picked, p.var(lay.recon_w))?;
    let recon = g.add_bias(recon, p.var(lay.recon_b))?;
    let target = g.constant(Tensor::new(vec![rows.len(), CHANNELS], targets)?);
    let diff = g.sub(recon, target)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.mean(sq))
}

/// Self-supervised loss of `strategy` on a batch of normalized windows.
/// Augmentation seeds, CPC contexts and mask positions are drawn from `rng`.
pub fn pretrain_loss(
    model: &TransformerModel,
    g: &mut Graph,
    p: &super::BoundParams,
    windows: &[&Window],
    strategy: Strategy,
    params: &LossParams,
    rng: &mut impl Rng,
) -> Result<Var, ModelError> {
    let batch = windows.len();
    if strategy.needs_pairs() && batch < 2 {
        return Err(ModelError::Config(format!(
            "strategy {strategy} needs a batch of at least 2, got {batch}"
        )));
    }
    match strategy {
        Strategy::None => Err(ModelError::Config("no pretraining objective for strategy none".into())),
        Strategy::NtXent | Strategy::Triplet => {
            let mut views: Vec<Window> = windows.iter().map(|w| augment(w, rng.random()).0).collect();
            views.extend(windows.iter().map(|w| augment(w, rng.random()).0));
            let refs: Vec<&Window> = views.iter().collect();
            let enc = model.encode_graph(g, p, &refs)?;
            let z = model.project_graph(g, p, enc.pooled)?;
            if strategy == Strategy::NtXent {
                return nt_xent(g, z, params.temperature);
            }
            let anchors: Vec<usize> = (0..batch).collect();
            let positives: Vec<usize> = (batch..2 * batch).collect();
            let negatives: Vec<usize> = (0..batch).map(|i| batch + (i + 1) % batch).collect();
            let a = g.select_rows(z, &anchors)?;
            let pos = g.select_rows(z, &positives)?;
            let neg = g.select_rows(z, &negatives)?;
            triplet(g, a, pos, neg, params.margin)
        }
        Strategy::Cpc => {
            let t_len = model.config.window;
            let horizon = model.config.cpc_horizon;
            let lo = t_len / 4;
            if t_len < horizon + 1 || t_len - horizon - 1 < lo {
                return Err(ModelError::Config(format!(
                    "window {t_len} too short for CPC horizon {horizon}"
                )));
            }
            let hi = t_len - horizon - 1;
            let contexts: Vec<usize> = (0..batch).map(|_| rng.random_range(lo..=hi)).collect();
            let enc = model.encode_graph(g, p, windows)?;
            let predictors: Vec<Var> = model.params.layout.cpc.iter().map(|&i| p.var(i)).collect();
            cpc_from_embeddings(g, enc.tokens, batch, t_len, &predictors, &contexts)
        }
        Strategy::MaskedRecon => masked_recon(model, g, p, windows, rng),
    }
}
