//! IMU recordings, windowing, normalization and segmentation.

mod recording;
mod segment;
pub mod synth;
mod window;

use std::path::Path;

pub use recording::{load_recording, resample_50hz, save_recording, ImuSample, Recording, CSV_HEADER};
pub use segment::{
    auto_segment, load_annotations, save_annotations, validate_annotations, Segment,
    SegmentParams,
};
pub use synth::{alternating_script, synth_generate, ScriptEntry, SynthConfig};
pub use window::{
    compute_norm_stats, denormalize, normalize, overlap_label, slide_labeled_windows,
    segment_window, slide_windows, NormStats, Window, WINDOW_HOP, WINDOW_LEN,
};

/// acc_x, acc_y, acc_z, gyro_x, gyro_y, gyro_z.
pub const CHANNELS: usize = 6;
pub const SAMPLE_PERIOD_MS: u64 = 20;
/// Label of the rest / no-gesture class.
pub const IDLE: &str = "IDLE";

/// A recognizable class and the message spoken when it is detected.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GestureClass {
    pub id: String,
    #[serde(default)]
    pub message: String,
}

impl GestureClass {
    pub fn new(id: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            message: message.into(),
        }
    }

    pub fn idle() -> Self {
        Self::new(IDLE, "")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SignalError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: timestamp {current} does not follow {previous}")]
    Ordering {
        line: usize,
        previous: u64,
        current: u64,
    },
    #[error("need at least {needed} samples, found {found}")]
    InsufficientData { needed: usize, found: usize },
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("annotation error: {0}")]
    Annotation(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl SignalError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
