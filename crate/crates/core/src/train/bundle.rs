//! Portable model archive: `model.bin` holds the config and the classifier
//! path parameters as little-endian `f32`; `metadata.json` holds shapes,
//! classes with their messages, normalization factors, seeds and training settings.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use zip::write::SimpleFileOptions;

use super::checkpoint::write_atomic;
use super::{TrainConfig, TrainError};
use crate::model::{param_count, ModelConfig, Strategy, TransformerModel};
use crate::signal::{GestureClass, NormStats, CHANNELS};

pub const BUNDLE_MAGIC: &[u8; 4] = b"GWM1";
pub const BUNDLE_FORMAT_VERSION: u32 = 1;
const MODEL_ENTRY: &str = "model.bin";
const METADATA_ENTRY: &str = "metadata.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub model_init: u64,
    pub training: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleMetadata {
    /// `[channels, timesteps]`.
    pub input_shape: [usize; 2],
    /// Output classes in model order, each with its spoken message.
    pub classes: Vec<GestureClass>,
    pub norm: NormStats,
    pub strategy: Strategy,
    pub seeds: Seeds,
    pub param_count: usize,
    pub train_config: Option<TrainConfig>,
    /// Behavioral choices baked into the model, keyed by topic.
    pub design_choices: BTreeMap<String, String>,
}

impl BundleMetadata {
    pub fn new(
        model: &TransformerModel,
        classes: Vec<GestureClass>,
        norm: NormStats,
        train_config: Option<TrainConfig>,
        model_seed: u64,
    ) -> Self {
        let strategy = train_config.as_ref().map_or(Strategy::None, |c| c.strategy);
        let training = train_config.as_ref().map_or(0, |c| c.seed);
        let mut design_choices = BTreeMap::new();
        for (k, v) in [
            ("tokenizer", "conv1d stride 1, zero padding floor((k-1)/2) left, rest right"),
            ("positional", "learned table added after the tokenizer"),
            ("encoder", "pre-norm blocks, no final layer norm"),
            ("activation", "GELU, tanh approximation"),
            ("pooling", "mean over timesteps"),
            ("window_label_rule", "gesture if >= 50% of timesteps inside its segment, else IDLE"),
            ("class_weighting", "inverse frequency, weighted mean normalized by total weight"),
            ("idle_cap", "idle windows <= idle_cap_ratio x largest gesture class"),
        ] {
            design_choices.insert(k.to_string(), v.to_string());
        }
        Self {
            input_shape: [CHANNELS, model.config.window],
            classes,
            norm,
            strategy,
            seeds: Seeds {
                model_init: model_seed,
                training,
            },
            param_count: param_count(&model.config),
            train_config,
            design_choices,
        }
    }
}

fn model_bin(model: &TransformerModel) -> Result<Vec<u8>, TrainError> {
    let config = serde_json::to_vec(&model.config).map_err(|e| TrainError::Data(e.to_string()))?;
    let values = model.params.classifier_flat();
    let mut out = Vec::with_capacity(20 + config.len() + 4 * values.len());
    out.extend_from_slice(BUNDLE_MAGIC);
    out.extend_from_slice(&BUNDLE_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

fn parse_model_bin(bytes: &[u8]) -> Result<TransformerModel, TrainError> {
    let corrupt = |m: &str| TrainError::CorruptBundle(format!("{MODEL_ENTRY}: {m}"));
    let mut rest = bytes;
    let mut take = |n: usize| -> Result<&[u8], TrainError> {
        if rest.len() < n {
            return Err(corrupt("truncated"));
        }
        let (head, tail) = rest.split_at(n);
        rest = tail;
        Ok(head)
    };
    let magic = take(4)?;
    if magic != BUNDLE_MAGIC {
        return Err(TrainError::IncompatibleBundle(format!(
            "magic {:?}, expected {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(BUNDLE_MAGIC)
        )));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
    if version != BUNDLE_FORMAT_VERSION {
        return Err(TrainError::IncompatibleBundle(format!(
            "format version {version}, this build reads {BUNDLE_FORMAT_VERSION}"
        )));
    }
    let config_len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
    let config: ModelConfig = serde_json::from_slice(take(config_len)?)
        .map_err(|e| corrupt(&format!("config: {e}")))?;
    config.validate().map_err(|e| corrupt(&e.to_string()))?;
    let count = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
    let expected = param_count(&config);
    if count != expected {
        return Err(corrupt(&format!("{count} parameters, config implies {expected}")));
    }
    let raw = take(4 * count)?;
    if !rest.is_empty() {
        return Err(corrupt(&format!("{} trailing bytes", rest.len())));
    }
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let mut model = TransformerModel::new(config, 0)?;
    model
        .params
        .set_classifier_flat(&values)
        .map_err(|e| corrupt(&e.to_string()))?;
    Ok(model)
}

/// Serializes the archive in memory. The output is a pure function of the
/// inputs: entries carry a fixed timestamp.
pub fn bundle_to_bytes(model: &TransformerModel, meta: &BundleMetadata) -> Result<Vec<u8>, TrainError> {
    let zip_err = |e: zip::result::ZipError| TrainError::Data(format!("writing bundle: {e}"));
    let io_err = |e: std::io::Error| TrainError::Data(format!("writing bundle: {e}"));
    let metadata = serde_json::to_vec_pretty(meta).map_err(|e| TrainError::Data(e.to_string()))?;
    let options = SimpleFileOptions::default()
        .compression_method(zip::CompressionMethod::Deflated)
        .last_modified_time(zip::DateTime::default());
    let mut writer = zip::ZipWriter::new(Cursor::new(Vec::new()));
    writer.start_file(MODEL_ENTRY, options).map_err(zip_err)?;
    writer.write_all(&model_bin(model)?).map_err(io_err)?;
    writer.start_file(METADATA_ENTRY, options).map_err(zip_err)?;
    writer.write_all(&metadata).map_err(io_err)?;
    Ok(writer.finish().map_err(zip_err)?.into_inner())
}

pub fn bundle_from_bytes(bytes: &[u8]) -> Result<(TransformerModel, BundleMetadata), TrainError> {
    let corrupt = |m: String| TrainError::CorruptBundle(m);
    let mut archive =
        zip::ZipArchive::new(Cursor::new(bytes)).map_err(|e| corrupt(format!("not a ZIP archive: {e}")))?;
    let mut read_entry = |name: &str| -> Result<Vec<u8>, TrainError> {
        let mut entry = archive
            .by_name(name)
            .map_err(|e| corrupt(format!("missing {name}: {e}")))?;
        let mut out = Vec::new();
        entry
            .read_to_end(&mut out)
            .map_err(|e| corrupt(format!("reading {name}: {e}")))?;
        Ok(out)
    };
    let model_bytes = read_entry(MODEL_ENTRY)?;
    let meta_bytes = read_entry(METADATA_ENTRY)?;
    let model = parse_model_bin(&model_bytes)?;
    let meta: BundleMetadata = serde_json::from_slice(&meta_bytes)
        .map_err(|e| corrupt(format!("{METADATA_ENTRY}: {e}")))?;
    if meta.classes.len() != model.config.n_classes {
        return Err(corrupt(format!(
            "metadata lists {} classes, model has {} outputs",
            meta.classes.len(),
            model.config.n_classes
        )));
    }
    if meta.input_shape != [CHANNELS, model.config.window] {
        return Err(corrupt(format!(
            "metadata input shape {:?} does not match model [{CHANNELS}, {}]",
            meta.input_shape, model.config.window
        )));
    }
    if meta.param_count != param_count(&model.config) {
        return Err(corrupt(format!(
            "metadata parameter count {} does not match model {}",
            meta.param_count,
            param_count(&model.config)
        )));
    }
    Ok((model, meta))
}

/// Writes the archive atomically.
pub fn export_bundle(
    model: &TransformerModel,
    meta: &BundleMetadata,
    path: impl AsRef<Path>,
) -> Result<(), TrainError> {
    write_atomic(path.as_ref(), &bundle_to_bytes(model, meta)?)
}

pub fn import_bundle(path: impl AsRef<Path>) -> Result<(TransformerModel, BundleMetadata), TrainError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| TrainError::io(path, e))?;
    bundle_from_bytes(&bytes)
}
