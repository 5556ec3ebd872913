use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use gesturewire::eval::match_f1;
use gesturewire::signal::{
    alternating_script, auto_segment, load_annotations, load_recording, resample_50hz, save_annotations,
    save_recording, synth_generate, validate_annotations, GestureClass, Recording, Segment, SegmentParams,
    SynthConfig, IDLE,
};
use serde_json::json;

use crate::project::{report, Project, CLASSES_FILE, SPLITS_FILE};
use crate::CliError;

/// Validation recordings use the generator seed plus this offset.
pub const VAL_SEED_OFFSET: u64 = 500;
/// Idle margin around each gesture in generated coarse regions; exceeds the
/// 500 ms segmentation uses to estimate rest statistics.
const COARSE_PAD_MS: u64 = 600;
const IOU_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    /// Well-separated classes, one axis and frequency each.
    Desk,
    /// Four classes, two sharing a motion prefix, with per-instance jitter.
    Hard,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Gesture classes (the hard suite always has 4).
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "desk")]
    suite: Suite,
    /// Gaussian noise on every channel.
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    /// Instances per class in the training recording.
    #[arg(long, default_value_t = 10)]
    instances: usize,
    /// Instances per class in the validation recording.
    #[arg(long, default_value_t = 5)]
    val_instances: usize,
    /// Recording id prefix: writes `<prefix>-train` and `<prefix>-val`.
    #[arg(long, default_value = "synth")]
    prefix: String,
}

/// Coarse regions around each ground-truth gesture, padded with idle,
/// clipped to the recording and never overlapping.
fn coarse_regions(rec: &Recording, truth: &[Segment]) -> Vec<Segment> {
    let (first, last) = (rec.samples[0].t_ms, rec.end_ms());
    let gestures: Vec<&Segment> = truth.iter().filter(|s| !s.is_idle()).collect();
    gestures
        .iter()
        .enumerate()
        .map(|(i, s)| {
            // neighbouring regions split the idle gap between them
            let lo = i.checked_sub(1).map_or(first, |p| (gestures[p].end_ms + s.start_ms) / 2);
            let hi = gestures.get(i + 1).map_or(last, |n| (s.end_ms + n.start_ms) / 2);
            Segment {
                recording: rec.id.clone(),
                start_ms: s.start_ms.saturating_sub(COARSE_PAD_MS).max(lo).max(first),
                end_ms: (s.end_ms + COARSE_PAD_MS).min(hi).min(last),
                label: s.label.clone(),
            }
        })
        .collect()
}

pub fn synth(project: &Project, a: SynthArgs) -> Result<(), CliError> {
    if a.instances == 0 || a.val_instances == 0 {
        return Err(CliError::Usage("--instances and --val-instances must be positive".into()));
    }
    let cfg = match a.suite {
        Suite::Desk if a.classes == 0 => return Err(CliError::Usage("--classes must be positive".into())),
        Suite::Desk => SynthConfig::desk(a.classes, a.noise, a.seed),
        Suite::Hard if a.classes != 4 => {
            return Err(CliError::Usage("the hard suite has exactly 4 classes".into()))
        }
        Suite::Hard => SynthConfig::hard(a.noise, a.seed),
    };
    let config = json!({
        "suite": a.suite, "classes": a.classes, "noise": a.noise,
        "instances": a.instances, "val_instances": a.val_instances, "prefix": a.prefix,
    });
    let mut recordings = Vec::new();
    for (split, instances, seed) in [
        ("train", a.instances, a.seed),
        ("val", a.val_instances, a.seed + VAL_SEED_OFFSET),
    ] {
        let cfg = SynthConfig { seed, ..cfg.clone() };
        let id = format!("{}-{split}", a.prefix);
        let script = alternating_script(&cfg, instances, (1000, 3000), 1000, seed);
        let (rec, truth) = synth_generate(&cfg, &script, &id)?;
        save_recording(&rec, project.output(project.recording_path(&id)?)?)?;
        let truth_rel = PathBuf::from(crate::project::ANNOTATIONS).join(format!("{id}.truth.json"));
        save_annotations(&truth, project.output(&truth_rel)?)?;
        save_annotations(&coarse_regions(&rec, &truth), project.output(project.coarse_path(&id)?)?)?;
        recordings.push(json!({
            "id": id, "split": split, "samples": rec.len(), "gestures": truth.len(),
            "duration_ms": rec.end_ms(),
        }));
        let mut splits = project.splits()?;
        splits.0.insert(split.to_string(), vec![id]);
        project.write_json(SPLITS_FILE, &splits)?;
    }
    let classes: Vec<GestureClass> = cfg.classes.iter().map(|c| GestureClass::new(&c.id, &c.message)).collect();
    project.write_json(CLASSES_FILE, &classes)?;
    project.write_json(
        PathBuf::from(crate::project::RECORDINGS).join(format!("{}.synth.json", a.prefix)),
        &cfg,
    )?;
    let path = project.write_json(
        "reports/synth.json",
        &report("synth", Some(a.seed), &config, json!({ "recordings": recordings })),
    )?;
    println!("wrote {} recordings; report {}", recordings.len(), path.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Recording CSV (`t_ms,acc_x,acc_y,acc_z,gyro_x,gyro_y,gyro_z`).
    #[arg(long)]
    csv: PathBuf,
    /// Recording id inside the project; defaults to the file stem.
    #[arg(long)]
    id: Option<String>,
    /// Annotation JSON for this recording (fine segments).
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Annotation JSON of coarse regions, for `segment`.
    #[arg(long)]
    coarse: Option<PathBuf>,
    /// Add the recording to this split.
    #[arg(long)]
    split: Option<String>,
    /// Gesture class with its message, as `id=message`; repeatable.
    #[arg(long = "class", value_parser = parse_class)]
    classes: Vec<GestureClass>,
}

fn parse_class(s: &str) -> Result<GestureClass, String> {
    let (id, message) = s.split_once('=').ok_or_else(|| format!("`{s}` is not id=message"))?;
    if id.is_empty() || id == IDLE {
        return Err(format!("invalid class id `{id}`"));
    }
    Ok(GestureClass::new(id, message))
}

/// Loads an annotation file and rebinds its segments to recording `id`.
/// The file may only describe one recording.
fn rebind(path: &PathBuf, id: &str) -> Result<Vec<Segment>, CliError> {
    let segs = load_annotations(path)?;
    let mut sources: Vec<&str> = segs.iter().map(|s| s.recording.as_str()).collect();
    sources.sort_unstable();
    sources.dedup();
    if sources.len() > 1 {
        return Err(CliError::Data(format!(
            "{} annotates several recordings ({}); split it per recording",
            path.display(),
            sources.join(", ")
        )));
    }
    let segs: Vec<Segment> = segs
        .into_iter()
        .map(|s| Segment {
            recording: id.to_string(),
            ..s
        })
        .collect();
    validate_annotations(&segs)?;
    Ok(segs)
}

pub fn ingest(project: &Project, a: IngestArgs) -> Result<(), CliError> {
    let raw = load_recording(&a.csv)?;
    let id = a.id.clone().unwrap_or_else(|| raw.id.clone());
    if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
        return Err(CliError::Usage(format!("invalid recording id `{id}`")));
    }
    let mut rec = resample_50hz(&raw)?;
    rec.id = id.clone();
    save_recording(&rec, project.output(project.recording_path(&id)?)?)?;
    let mut annotated = 0;
    if let Some(p) = &a.annotations {
        let segs = rebind(p, &id)?;
        if let Some(s) = segs.iter().find(|s| s.end_ms > rec.end_ms() + 20) {
            return Err(CliError::Data(format!(
                "segment {}..{} ends after the recording ({} ms)",
                s.start_ms,
                s.end_ms,
                rec.end_ms()
            )));
        }
        annotated = segs.len();
        save_annotations(&segs, project.output(project.annotation_path(&id)?)?)?;
    }
    if let Some(p) = &a.coarse {
        save_annotations(&rebind(p, &id)?, project.output(project.coarse_path(&id)?)?)?;
    }
    if let Some(split) = &a.split {
        let mut splits = project.splits()?;
        let ids = splits.0.entry(split.clone()).or_default();
        if !ids.contains(&id) {
            ids.push(id.clone());
        }
        project.write_json(SPLITS_FILE, &splits)?;
    }
    if !a.classes.is_empty() {
        let mut classes: Vec<GestureClass> = if project.path(CLASSES_FILE)?.exists() {
            project.gestures()?
        } else {
            Vec::new()
        };
        for c in &a.classes {
            match classes.iter_mut().find(|k| k.id == c.id) {
                Some(k) => k.message = c.message.clone(),
                None => classes.push(c.clone()),
            }
        }
        project.write_json(CLASSES_FILE, &classes)?;
    }
    let config = json!({ "csv": a.csv, "id": id, "split": a.split });
    let path = project.write_json(
        format!("reports/ingest-{id}.json"),
        &report(
            "ingest",
            None,
            &config,
            json!({ "samples_in": raw.len(), "samples_out": rec.len(), "segments": annotated }),
        ),
    )?;
    println!("ingested {id}: {} samples at 50 Hz; report {}", rec.len(), path.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    /// Split name(s) or recording id(s), comma-separated.
    #[arg(long, default_value = "train,val")]
    split: String,
    /// Fixed activation threshold on smoothed gyro energy (default: from rest).
    #[arg(long)]
    theta_on: Option<f64>,
    /// Fixed release threshold (default: from rest).
    #[arg(long)]
    theta_off: Option<f64>,
}

pub fn segment(project: &Project, a: SegmentArgs) -> Result<(), CliError> {
    let params = SegmentParams {
        theta_on: a.theta_on,
        theta_off: a.theta_off,
        ..SegmentParams::default()
    };
    let mut results = BTreeMap::new();
    for id in project.resolve_split(&a.split)? {
        let rec = project.load_recording(&id)?;
        let coarse_path = project.coarse_path(&id)?;
        if !coarse_path.exists() {
            return Err(CliError::Data(format!("no coarse regions for `{id}` at {}", coarse_path.display())));
        }
        let coarse = rebind(&coarse_path, &id)?;
        let mut found = Vec::new();
        for region in coarse.iter().filter(|r| !r.is_idle()) {
            let segs = auto_segment(&rec, (region.start_ms, region.end_ms), &region.label, &params)?;
            found.extend(segs.into_iter().filter(|s| !s.is_idle()));
        }
        save_annotations(&found, project.output(project.annotation_path(&id)?)?)?;
        let truth_path = project.path(format!("annotations/{id}.truth.json"))?;
        let quality = if truth_path.exists() {
            let truth: Vec<Segment> = load_annotations(&truth_path)?.into_iter().filter(|s| !s.is_idle()).collect();
            let m = match_f1(&found, &truth, IOU_THRESHOLD);
            json!({ "f1": m.f1, "mean_iou": m.mean_iou, "iou_threshold": IOU_THRESHOLD })
        } else {
            serde_json::Value::Null
        };
        println!("{id}: {} regions -> {} segments", coarse.len(), found.len());
        results.insert(id, json!({ "regions": coarse.len(), "segments": found.len(), "vs_truth": quality }));
    }
    let config = json!({ "split": a.split, "params": params });
    let path = project.write_json("reports/segment.json", &report("segment", None, &config, json!({ "recordings": results })))?;
    println!("report {}", path.display());
    Ok(())
}
