//! Two-stage training (self-supervised pretraining, then supervised
//! fine-tuning), the Adam optimizer, checkpoints and the portable bundle.

mod adam;
mod bundle;
mod checkpoint;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use bundle::{
    bundle_from_bytes, bundle_to_bytes, export_bundle, import_bundle, BundleMetadata, Seeds,
    BUNDLE_FORMAT_VERSION, BUNDLE_MAGIC,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use crate::eval::{macro_f1, ConfusionMatrix};
use crate::model::{
    cross_entropy, pretrain_loss, LossParams, ModelError, ParamGroup, Strategy, TransformerModel,
};
use crate::signal::{GestureClass, Window, IDLE};
use crate::tensorad::Graph;

/// Windows that a single forward pass handles during evaluation.
const EVAL_CHUNK: usize = 64;
/// Fewest labeled windows accepted for any gesture class.
pub const MIN_CLASS_WINDOWS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("incompatible bundle: {0}")]
    IncompatibleBundle(String),
    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Hyperparameters of both training stages. Every field has a default, so
/// config files only need the fields they change.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    /// Upper bound; a smaller dataset uses its own size.
    pub batch_size: usize,
    pub pretrain_lr: f64,
    pub finetune_lr: f64,
    pub seed: u64,
    /// Idle windows are capped at this multiple of the largest gesture class.
    pub idle_cap_ratio: f64,
    pub temperature: f64,
    pub margin: f64,
    /// Pretraining writes a checkpoint every this many epochs.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::MaskedRecon,
            pretrain_epochs: 200,
            finetune_epochs: 25,
            batch_size: 32,
            pretrain_lr: 1e-3,
            finetune_lr: 5e-4,
            seed: 0,
            idle_cap_ratio: 2.0,
            temperature: 0.1,
            margin: 1.0,
            checkpoint_every: 25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if self.pretrain_epochs == 0 || self.finetune_epochs == 0 {
            return fail("epoch counts must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.strategy.needs_pairs() && self.batch_size < 2 {
            return fail(format!(
                "strategy {} needs batch_size >= 2, got {}",
                self.strategy, self.batch_size
            ));
        }
        for (name, v) in [("pretrain_lr", self.pretrain_lr), ("finetune_lr", self.finetune_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.idle_cap_ratio >= 0.0) {
            return fail(format!("idle_cap_ratio must be >= 0, got {}", self.idle_cap_ratio));
        }
        if !(self.temperature > 0.0) || !(self.margin >= 0.0) {
            return fail("temperature must be positive and margin non-negative".into());
        }
        if self.checkpoint_every == 0 {
            return fail("checkpoint_every must be at least 1".into());
        }
        Ok(())
    }

    /// Reads a JSON or (by `.toml` extension) TOML config file.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text)
                .map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn loss_params(&self) -> LossParams {
        LossParams {
            temperature: self.temperature,
            margin: self.margin,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub strategy: Strategy,
    /// Mean batch loss of each epoch.
    pub epoch_loss: Vec<f64>,
    pub checkpoints: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub classes: Vec<String>,
    /// Windows per class actually used, after idle capping.
    pub class_counts: BTreeMap<String, usize>,
    pub idle_dropped: usize,
    pub class_weights: Vec<f64>,
    /// Mean batch loss of each epoch.
    pub epoch_loss: Vec<f64>,
    /// Training-set macro-F1 before the first update and after the last.
    pub train_macro_f1: [f64; 2],
    /// Validation macro-F1 before training (entry 0) and after each epoch;
    /// empty without a validation set.
    pub val_macro_f1: Vec<f64>,
}

/// Shuffled index batches of at most `size`.
fn shuffled_batches(n: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(size).map(<[usize]>::to_vec).collect()
}

/// Self-supervised pretraining of the encoder and the strategy's head on
/// normalized, unlabeled windows. Deterministic in `cfg.seed`. When
/// `checkpoint_dir` is given, a checkpoint is written there every
/// `cfg.checkpoint_every` epochs.
pub fn pretrain(
    model: &mut TransformerModel,
    windows: &[Window],
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<PretrainReport, TrainError> {
    cfg.validate()?;
    if cfg.strategy == Strategy::None {
        return Err(TrainError::Config("pretraining needs a strategy other than none".into()));
    }
    let min = if cfg.strategy.needs_pairs() { 2 } else { 1 };
    if windows.len() < min {
        return Err(TrainError::Data(format!(
            "strategy {} needs at least {min} windows, got {}",
            cfg.strategy,
            windows.len()
        )));
    }
    let batch = cfg.batch_size.min(windows.len());
    let params = cfg.loss_params();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params);
    let mut report = PretrainReport {
        strategy: cfg.strategy,
        epoch_loss: Vec::with_capacity(cfg.pretrain_epochs),
        checkpoints: Vec::new(),
    };
    for epoch in 1..=cfg.pretrain_epochs {
        let mut total = 0.0;
        let mut steps = 0;
        for idx in shuffled_batches(windows.len(), batch, &mut rng) {
            // a trailing singleton cannot form pairs
            if idx.len() < min {
                continue;
            }
            let refs: Vec<&Window> = idx.iter().map(|&i| &windows[i]).collect();
            let mut g = Graph::new();
            let p = model.bind(&mut g, true);
            let loss = pretrain_loss(model, &mut g, &p, &refs, cfg.strategy, &params, &mut rng)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(TrainError::Data(format!("non-finite pretraining loss at epoch {epoch}")));
            }
            let grads = g.backward(loss).map_err(ModelError::from)?;
            adam.step(&mut model.params, &grads, p.vars(), cfg.pretrain_lr);
            total += value;
            steps += 1;
        }
        report.epoch_loss.push(total / steps as f64);
        if let Some(dir) = checkpoint_dir {
            if epoch % cfg.checkpoint_every == 0 {
                let path = dir.join(format!("pretrain-{}-epoch{epoch:04}.json", cfg.strategy));
                save_checkpoint(&Checkpoint::capture(model, cfg.strategy, epoch), &path)?;
                report.checkpoints.push(path);
            }
        }
    }
    Ok(report)
}

/// Index of each window's label in `classes`.
fn label_indices(windows: &[Window], classes: &[GestureClass]) -> Result<Vec<usize>, TrainError> {
    windows
        .iter()
        .map(|w| {
            let label = w
                .label
                .as_deref()
                .ok_or_else(|| TrainError::Data(format!("window {} has no label", w.id())))?;
            classes
                .iter()
                .position(|c| c.id == label)
                .ok_or_else(|| TrainError::Data(format!("window {} has unknown label `{label}`", w.id())))
        })
        .collect()
}

/// Most probable class index for each normalized window.
pub fn predict_indices(model: &TransformerModel, windows: &[Window]) -> Result<Vec<usize>, TrainError> {
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(EVAL_CHUNK) {
        let refs: Vec<&Window> = chunk.iter().collect();
        for probs in model.classify(&refs)? {
            out.push(argmax(&probs));
        }
    }
    Ok(out)
}

/// First index of the largest value.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Confusion matrix of the model's argmax predictions on labeled windows.
pub fn confusion(
    model: &TransformerModel,
    windows: &[Window],
    classes: &[GestureClass],
) -> Result<ConfusionMatrix, TrainError> {
    let truth = label_indices(windows, classes)?;
    let pred = predict_indices(model, windows)?;
    let mut cm = ConfusionMatrix::new(classes.iter().map(|c| c.id.clone()).collect());
    for (t, p) in truth.into_iter().zip(pred) {
        cm.record(t, p);
    }
    Ok(cm)
}

/// Keeps every gesture window and at most `ratio × (largest gesture class)`
/// idle windows, drawn uniformly. Returns the kept windows in their
/// original order and the number of idle windows dropped.
fn cap_idle(
    windows: &[Window],
    labels: &[usize],
    idle: Option<usize>,
    n_classes: usize,
    ratio: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, usize) {
    let mut counts = vec![0usize; n_classes];
    labels.iter().for_each(|&l| counts[l] += 1);
    let Some(idle) = idle else {
        return ((0..windows.len()).collect(), 0);
    };
    let max_gesture = counts
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != idle)
        .map(|(_, &n)| n)
        .max()
        .unwrap_or(0);
    let cap = (ratio * max_gesture as f64).floor() as usize;
    let mut idle_pos: Vec<usize> = (0..windows.len()).filter(|&i| labels[i] == idle).collect();
    let dropped = idle_pos.len().saturating_sub(cap);
    idle_pos.shuffle(rng);
    idle_pos.truncate(cap);
    let mut keep: Vec<usize> = (0..windows.len())
        .filter(|&i| labels[i] != idle)
        .chain(idle_pos)
        .collect();
    keep.sort_unstable();
    (keep, dropped)
}

/// Supervised fine-tuning of the classifier path on normalized, labeled
/// windows with inverse-frequency class weights.
///
/// `classes` lists the model outputs in order (gestures, then [`IDLE`]).
/// Every gesture class needs at least [`MIN_CLASS_WINDOWS`] windows.
pub fn finetune(
    model: &mut TransformerModel,
    train: &[Window],
    val: Option<&[Window]>,
    classes: &[GestureClass],
    cfg: &TrainConfig,
) -> Result<FinetuneReport, TrainError> {
    cfg.validate()?;
    let n = classes.len();
    if n != model.config.n_classes {
        return Err(TrainError::Config(format!(
            "{n} classes given, model has {} outputs",
            model.config.n_classes
        )));
    }
    let labels = label_indices(train, classes)?;
    let idle = classes.iter().position(|c| c.id == IDLE);
    for (c, class) in classes.iter().enumerate() {
        if Some(c) == idle {
            continue;
        }
        let count = labels.iter().filter(|&&l| l == c).count();
        if count < MIN_CLASS_WINDOWS {
            return Err(TrainError::Data(format!(
                "class `{}` has {count} labeled windows, at least {MIN_CLASS_WINDOWS} required",
                class.id
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let (keep, idle_dropped) = cap_idle(train, &labels, idle, n, cfg.idle_cap_ratio, &mut rng);
    let windows: Vec<Window> = keep.iter().map(|&i| train[i].clone()).collect();
    let labels: Vec<usize> = keep.iter().map(|&i| labels[i]).collect();

    let mut counts = vec![0usize; n];
    labels.iter().for_each(|&l| counts[l] += 1);
    let present = counts.iter().filter(|&&c| c > 0).count();
    let weights: Vec<f64> = counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { windows.len() as f64 / (present * c) as f64 })
        .collect();

    let mut report = FinetuneReport {
        classes: classes.iter().map(|c| c.id.clone()).collect(),
        class_counts: classes.iter().zip(&counts).map(|(c, &k)| (c.id.clone(), k)).collect(),
        idle_dropped,
        class_weights: weights.clone(),
        epoch_loss: Vec::with_capacity(cfg.finetune_epochs),
        train_macro_f1: [macro_f1(&confusion(model, &windows, classes)?), 0.0],
        val_macro_f1: Vec::new(),
    };
    let record_val = |model: &TransformerModel, report: &mut FinetuneReport| -> Result<(), TrainError> {
        if let Some(val) = val {
            report.val_macro_f1.push(macro_f1(&confusion(model, val, classes)?));
        }
        Ok(())
    };
    record_val(model, &mut report)?;

    let batch = cfg.batch_size.min(windows.len());
    let mut adam = Adam::new(&model.params);
    let classifier: Vec<bool> = model
        .params
        .specs()
        .iter()
        .map(|s| s.group == ParamGroup::Classifier)
        .collect();
    for epoch in 1..=cfg.finetune_epochs {
        let mut total = 0.0;
        let mut steps = 0;
        for idx in shuffled_batches(windows.len(), batch, &mut rng) {
            let refs: Vec<&Window> = idx.iter().map(|&i| &windows[i]).collect();
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let p = model.bind(&mut g, true);
            let enc = model.encode_graph(&mut g, &p, &refs)?;
            let logits = model.logits_graph(&mut g, &p, enc.pooled)?;
            let probs = g.softmax(logits);
            let loss = cross_entropy(&mut g, probs, &y, Some(&weights))?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(TrainError::Data(format!("non-finite fine-tuning loss at epoch {epoch}")));
            }
            let grads = g.backward(loss).map_err(ModelError::from)?;
            let vars: Vec<_> = p
                .vars()
                .iter()
                .zip(&classifier)
                .map(|(&v, &c)| c.then_some(v))
                .collect();
            adam.step_some(&mut model.params, &grads, &vars, cfg.finetune_lr);
            total += value;
            steps += 1;
        }
        report.epoch_loss.push(total / steps as f64);
        record_val(model, &mut report)?;
    }
    report.train_macro_f1[1] = macro_f1(&confusion(model, &windows, classes)?);
    Ok(report)
}
