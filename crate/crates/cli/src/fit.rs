use std::path::PathBuf;

use clap::Args;
use gesturewire::baseline::{BaselineModel, BaselineParams, DEFAULT_K, DEFAULT_THETA};
use gesturewire::model::{Strategy, TransformerModel};
use gesturewire::signal::{
    compute_norm_stats, normalize, segment_window, slide_windows, NormStats, Segment, Window, IDLE, WINDOW_HOP,
    WINDOW_LEN,
};
use gesturewire::train::{
    export_bundle, finetune as run_finetune, load_checkpoint, pretrain as run_pretrain, save_checkpoint,
    BundleMetadata, Checkpoint, TrainConfig,
};
use serde_json::json;

use crate::project::{report, LabeledRecording, Project, MODELS};
use crate::{CliError, Preset};

/// Desk-scale epoch counts; `--paper-epochs` switches pretraining to 200.
pub const DESK_PRETRAIN_EPOCHS: usize = 50;
pub const PAPER_PRETRAIN_EPOCHS: usize = 200;
pub const FINETUNE_EPOCHS: usize = 25;

/// Keeps the first `limit` gesture segments of each class, in time order.
fn limit_instances(segments: &[Segment], limit: Option<usize>) -> Vec<Segment> {
    let mut kept: Vec<Segment> = Vec::new();
    for s in segments.iter().filter(|s| !s.is_idle()) {
        let n = kept.iter().filter(|k| k.label == s.label).count();
        if limit.is_none_or(|l| n < l) {
            kept.push(s.clone());
        }
    }
    kept
}

/// Windows labeled IDLE, plus gesture windows overlapping a kept segment of
/// their own class.
fn windows_for_segments(lr: &LabeledRecording, kept: &[Segment]) -> Vec<Window> {
    lr.windows
        .iter()
        .filter(|w| {
            let label = w.label.as_deref().unwrap_or(IDLE);
            if label == IDLE {
                return true;
            }
            let start = lr.rec.samples[w.start_index].t_ms;
            let end = lr.rec.samples[w.start_index + w.len() - 1].t_ms;
            kept.iter()
                .any(|s| s.label == label && s.recording == lr.rec.id && s.start_ms <= end && s.end_ms > start)
        })
        .cloned()
        .collect()
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    /// Training split name or recording ids.
    #[arg(long, default_value = "train")]
    split: String,
    /// Codebook size.
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    /// Minimum normalized LCSS score for a gesture.
    #[arg(long, default_value_t = DEFAULT_THETA)]
    theta: f64,
    /// Templates per class (default: every annotated instance).
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model file, relative to the project.
    #[arg(long, default_value = "models/baseline.json")]
    out: PathBuf,
}

pub fn train_baseline(project: &Project, a: BaselineArgs) -> Result<(), CliError> {
    let out = project.output(&a.out)?;
    let gestures = project.gestures()?;
    let data = project.labeled_windows(&project.resolve_split(&a.split)?)?;
    let mut instances = Vec::new();
    let mut codebook_windows = Vec::new();
    for lr in &data {
        for seg in limit_instances(&lr.segments, a.instances) {
            instances.extend(segment_window(&lr.rec, &seg));
        }
        codebook_windows.extend(lr.windows.iter().cloned());
    }
    let norm = compute_norm_stats(&codebook_windows)?;
    let params = BaselineParams {
        k: a.k,
        theta: a.theta,
        seed: a.seed,
    };
    let model = BaselineModel::train(&instances, &codebook_windows, &gestures, norm, &params)?;
    model.save(&out)?;
    let config = json!({ "split": a.split, "k": a.k, "theta": a.theta, "instances": a.instances });
    let path = project.write_json(
        "reports/train-baseline.json",
        &report(
            "train-baseline",
            Some(a.seed),
            &config,
            json!({ "model": out, "templates": model.templates.len() }),
        ),
    )?;
    println!("baseline with {} templates -> {}; report {}", model.templates.len(), out.display(), path.display());
    Ok(())
}

/// Options shared by both training stages.
#[derive(Args, Debug)]
pub struct TrainOpts {
    /// TrainConfig file (JSON, or TOML by extension); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "desk")]
    model_config: Preset,
}

impl TrainOpts {
    fn load(&self, project: &Project) -> Result<TrainConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::from_path(project.input(&p.to_string_lossy())?)?,
            None => TrainConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    /// Split name or recording ids; annotations are not needed.
    #[arg(long, default_value = "train")]
    split: String,
    #[arg(long, value_parser = parse_strategy, default_value = "masked-recon")]
    strategy: Strategy,
    /// Pretraining epochs (default 50).
    #[arg(long, conflicts_with = "paper_epochs")]
    epochs: Option<usize>,
    /// Use the full 200 pretraining epochs.
    #[arg(long)]
    paper_epochs: bool,
    #[command(flatten)]
    opts: TrainOpts,
    /// Output checkpoint, relative to the project.
    #[arg(long, default_value = "models/pretrained.json")]
    out: PathBuf,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse::<Strategy>().map_err(|e| e.to_string())
}

pub fn pretrain(project: &Project, a: PretrainArgs) -> Result<(), CliError> {
    if a.strategy == Strategy::None {
        return Err(CliError::Usage("pretraining needs a strategy other than none".into()));
    }
    let out = project.output(&a.out)?;
    let mut cfg = a.opts.load(project)?;
    cfg.strategy = a.strategy;
    cfg.pretrain_epochs = match (a.epochs, a.paper_epochs) {
        (Some(e), _) => e,
        (None, true) => PAPER_PRETRAIN_EPOCHS,
        (None, false) if a.opts.config.is_some() => cfg.pretrain_epochs,
        (None, false) => DESK_PRETRAIN_EPOCHS,
    };
    cfg.validate()?;
    let classes = project.model_classes()?;
    let mut raw = Vec::new();
    for id in project.resolve_split(&a.split)? {
        raw.extend(slide_windows(&project.load_recording(&id)?, WINDOW_LEN, WINDOW_HOP));
    }
    let norm = compute_norm_stats(&raw)?;
    let windows: Vec<Window> = raw.iter().map(|w| normalize(w, &norm)).collect();
    let mut model = TransformerModel::new(a.opts.model_config.model_config(classes.len()), cfg.seed)?;
    let ckpt_dir = project.output(PathBuf::from(MODELS).join("checkpoints").join("x"))?;
    let ckpt_dir = ckpt_dir.parent().expect("joined above");
    let rep = run_pretrain(&mut model, &windows, &cfg, Some(ckpt_dir))?;
    let mut ckpt = Checkpoint::capture(&model, cfg.strategy, cfg.pretrain_epochs);
    ckpt.norm = Some(norm);
    save_checkpoint(&ckpt, &out)?;
    let config = json!({ "split": a.split, "train": cfg, "model": model.config });
    let path = project.write_json(
        format!("reports/pretrain-{}.json", cfg.strategy),
        &report(
            "pretrain",
            Some(cfg.seed),
            &config,
            json!({ "windows": windows.len(), "epoch_loss": rep.epoch_loss, "checkpoints": rep.checkpoints, "out": out }),
        ),
    )?;
    println!(
        "pretrained {} for {} epochs on {} windows (loss {:.4} -> {:.4}) -> {}; report {}",
        cfg.strategy,
        cfg.pretrain_epochs,
        windows.len(),
        rep.epoch_loss.first().copied().unwrap_or(f64::NAN),
        rep.epoch_loss.last().copied().unwrap_or(f64::NAN),
        out.display(),
        path.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    /// Labeled training split name or recording ids.
    #[arg(long, default_value = "train")]
    split: String,
    /// Validation split, scored after every epoch.
    #[arg(long)]
    val: Option<String>,
    /// Pretrained checkpoint to start from (default: from scratch).
    #[arg(long)]
    init: Option<String>,
    /// Labeled instances per gesture class (default: all).
    #[arg(long)]
    instances: Option<usize>,
    /// Fine-tuning epochs (default 25).
    #[arg(long)]
    epochs: Option<usize>,
    /// Accepted for symmetry with `pretrain`; fine-tuning runs 25 epochs either way.
    #[arg(long)]
    paper_epochs: bool,
    #[command(flatten)]
    opts: TrainOpts,
    /// Output bundle, relative to the project.
    #[arg(long, default_value = "models/model.zip")]
    out: PathBuf,
}

fn normalized(ws: &[Window], norm: &NormStats) -> Vec<Window> {
    ws.iter().map(|w| normalize(w, norm)).collect()
}

pub fn finetune(project: &Project, a: FinetuneArgs) -> Result<(), CliError> {
    let out = project.output(&a.out)?;
    let mut cfg = a.opts.load(project)?;
    cfg.finetune_epochs = match a.epochs {
        Some(e) => e,
        None if a.opts.config.is_some() && !a.paper_epochs => cfg.finetune_epochs,
        None => FINETUNE_EPOCHS,
    };
    if a.instances.is_some_and(|n| n == 0) {
        return Err(CliError::Usage("--instances must be positive".into()));
    }
    let classes = project.model_classes()?;
    let data = project.labeled_windows(&project.resolve_split(&a.split)?)?;
    let mut train_raw = Vec::new();
    let mut all_raw = Vec::new();
    for lr in &data {
        train_raw.extend(windows_for_segments(lr, &limit_instances(&lr.segments, a.instances)));
        all_raw.extend(lr.windows.iter().cloned());
    }
    let (mut model, norm, model_seed) = match &a.init {
        Some(init) => {
            let ckpt = load_checkpoint(project.input(init)?)?;
            cfg.strategy = ckpt.strategy;
            let model = ckpt.restore()?;
            if model.config.n_classes != classes.len() {
                return Err(CliError::Data(format!(
                    "checkpoint has {} outputs, project has {} classes",
                    model.config.n_classes,
                    classes.len()
                )));
            }
            let norm = match ckpt.norm {
                Some(n) => n,
                None => {
                    log::warn!("checkpoint carries no normalization; using the training windows'");
                    compute_norm_stats(&all_raw)?
                }
            };
            (model, norm, cfg.seed)
        }
        None => {
            cfg.strategy = Strategy::None;
            let model = TransformerModel::new(a.opts.model_config.model_config(classes.len()), cfg.seed)?;
            (model, compute_norm_stats(&all_raw)?, cfg.seed)
        }
    };
    cfg.validate()?;
    let train = normalized(&train_raw, &norm);
    let val = match &a.val {
        Some(v) => {
            let vdata = project.labeled_windows(&project.resolve_split(v)?)?;
            let raw: Vec<Window> = vdata.iter().flat_map(|lr| lr.windows.iter().cloned()).collect();
            Some(normalized(&raw, &norm))
        }
        None => None,
    };
    let rep = run_finetune(&mut model, &train, val.as_deref(), &classes, &cfg)?;
    let meta = BundleMetadata::new(&model, classes, norm, Some(cfg.clone()), model_seed);
    export_bundle(&model, &meta, &out)?;
    let config = json!({
        "split": a.split, "val": a.val, "init": a.init, "instances": a.instances,
        "train": cfg, "model": model.config,
    });
    let path = project.write_json(
        "reports/finetune.json",
        &report(
            "finetune",
            Some(cfg.seed),
            &config,
            json!({ "windows": train.len(), "report": rep, "bundle": out }),
        ),
    )?;
    println!(
        "fine-tuned on {} windows: train macro-F1 {:.3} -> {:.3}{}; bundle {}; report {}",
        train.len(),
        rep.train_macro_f1[0],
        rep.train_macro_f1[1],
        rep.val_macro_f1
            .last()
            .map(|v| format!(", val macro-F1 {v:.3}"))
            .unwrap_or_default(),
        out.display(),
        path.display()
    );
    Ok(())
}
