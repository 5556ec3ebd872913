//! Project directory layout, split and class files, and JSON reports.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};

use gesturewire::signal::{
    load_annotations, load_recording, slide_labeled_windows, GestureClass, Recording, Segment, Window, IDLE,
    WINDOW_HOP, WINDOW_LEN,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const RECORDINGS: &str = "recordings";
pub const ANNOTATIONS: &str = "annotations";
pub const MODELS: &str = "models";
pub const CLASSES_FILE: &str = "classes.json";
pub const SPLITS_FILE: &str = "splits.json";

/// Recording ids assigned to each named split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits(pub BTreeMap<String, Vec<String>>);

pub struct Project {
    root: PathBuf,
}

impl Project {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CliError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
        Ok(Self { root })
    }

    /// Resolves a project-relative path, refusing anything that would land
    /// outside the project directory.
    pub fn path(&self, rel: impl AsRef<Path>) -> Result<PathBuf, CliError> {
        let rel = rel.as_ref();
        let escapes = rel.is_absolute()
            || rel
                .components()
                .any(|c| matches!(c, Component::ParentDir | Component::Prefix(_) | Component::RootDir));
        if escapes {
            return Err(CliError::Usage(format!(
                "{} must be a path inside the project directory",
                rel.display()
            )));
        }
        Ok(self.root.join(rel))
    }

    /// Like [`path`](Self::path), creating the parent directory. Accepts
    /// paths already resolved against the project root.
    pub fn output(&self, rel: impl AsRef<Path>) -> Result<PathBuf, CliError> {
        let rel = rel.as_ref();
        let p = match rel.strip_prefix(&self.root) {
            Ok(inner) if rel.is_absolute() == self.root.is_absolute() => self.path(inner)?,
            _ => self.path(rel)?,
        };
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        Ok(p)
    }

    /// An input file: absolute, relative to the project, or a bare file
    /// name under `models/`.
    pub fn input(&self, name: &str) -> Result<PathBuf, CliError> {
        let p = Path::new(name);
        let candidates = if p.is_absolute() {
            vec![p.to_path_buf()]
        } else {
            vec![self.root.join(p), self.root.join(MODELS).join(p)]
        };
        candidates
            .into_iter()
            .find(|c| c.is_file())
            .ok_or_else(|| CliError::Data(format!("{name}: no such file in project {}", self.root.display())))
    }

    pub fn recording_path(&self, id: &str) -> Result<PathBuf, CliError> {
        self.path(Path::new(RECORDINGS).join(format!("{id}.csv")))
    }

    pub fn annotation_path(&self, id: &str) -> Result<PathBuf, CliError> {
        self.path(Path::new(ANNOTATIONS).join(format!("{id}.json")))
    }

    pub fn coarse_path(&self, id: &str) -> Result<PathBuf, CliError> {
        self.path(Path::new(ANNOTATIONS).join(format!("{id}.coarse.json")))
    }

    pub fn load_recording(&self, id: &str) -> Result<Recording, CliError> {
        let mut rec = load_recording(self.recording_path(id)?)?;
        rec.id = id.to_string();
        Ok(rec)
    }

    pub fn load_annotations(&self, id: &str) -> Result<Vec<Segment>, CliError> {
        let path = self.annotation_path(id)?;
        if !path.exists() {
            return Err(CliError::Data(format!(
                "recording `{id}` has no annotations at {}",
                path.display()
            )));
        }
        Ok(load_annotations(path)?
            .into_iter()
            .filter(|s| s.recording == id)
            .collect())
    }

    pub fn read_json<T: for<'de> Deserialize<'de>>(&self, rel: &str) -> Result<T, CliError> {
        let path = self.path(rel)?;
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    pub fn write_json<T: Serialize>(&self, rel: impl AsRef<Path>, value: &T) -> Result<PathBuf, CliError> {
        let path = self.output(rel)?;
        let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    /// Gesture classes in model order (declaration order), without IDLE.
    pub fn gestures(&self) -> Result<Vec<GestureClass>, CliError> {
        let classes: Vec<GestureClass> = self.read_json(CLASSES_FILE)?;
        if classes.is_empty() {
            return Err(CliError::Data(format!("{CLASSES_FILE} lists no classes")));
        }
        Ok(classes.into_iter().filter(|c| c.id != IDLE).collect())
    }

    /// Gestures followed by IDLE: the output classes of a model.
    pub fn model_classes(&self) -> Result<Vec<GestureClass>, CliError> {
        let mut classes = self.gestures()?;
        classes.push(GestureClass::idle());
        Ok(classes)
    }

    pub fn splits(&self) -> Result<Splits, CliError> {
        if !self.path(SPLITS_FILE)?.exists() {
            return Ok(Splits::default());
        }
        self.read_json(SPLITS_FILE)
    }

    /// Comma-separated split names from `splits.json` or recording ids, in
    /// order and without duplicates.
    pub fn resolve_split(&self, split: &str) -> Result<Vec<String>, CliError> {
        let splits = self.splits()?;
        let mut ids: Vec<String> = Vec::new();
        for part in split.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let found = match splits.0.get(part) {
                Some(members) if members.is_empty() => {
                    return Err(CliError::Data(format!("split `{part}` is empty")))
                }
                Some(members) => members.clone(),
                None if self.recording_path(part)?.exists() => vec![part.to_string()],
                None => {
                    return Err(CliError::Data(format!(
                        "`{part}` is neither a split in {SPLITS_FILE} nor a recording id"
                    )))
                }
            };
            for id in found {
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
        }
        if ids.is_empty() {
            return Err(CliError::Usage("empty split".into()));
        }
        Ok(ids)
    }

    /// Sliding windows labeled from each recording's annotations.
    pub fn labeled_windows(&self, ids: &[String]) -> Result<Vec<LabeledRecording>, CliError> {
        ids.iter()
            .map(|id| {
                let rec = self.load_recording(id)?;
                let segments = self.load_annotations(id)?;
                let windows = slide_labeled_windows(&rec, WINDOW_LEN, WINDOW_HOP, &segments);
                Ok(LabeledRecording { rec, segments, windows })
            })
            .collect()
    }
}

pub struct LabeledRecording {
    pub rec: Recording,
    pub segments: Vec<Segment>,
    pub windows: Vec<Window>,
}

/// Short digest identifying the effective configuration of a run.
pub fn config_hash(config: &serde_json::Value) -> String {
    let canonical = serde_json::to_vec(config).expect("JSON values serialize");
    hex::encode(Sha256::digest(&canonical))[..16].to_string()
}

/// A report body plus the fields every report carries.
pub fn report(command: &str, seed: Option<u64>, config: &serde_json::Value, body: serde_json::Value) -> serde_json::Value {
    let mut out = serde_json::json!({
        "command": command,
        "seed": seed,
        "config_hash": config_hash(config),
        "config": config,
    });
    if let (Some(out), serde_json::Value::Object(body)) = (out.as_object_mut(), body) {
        out.extend(body);
    }
    out
}
