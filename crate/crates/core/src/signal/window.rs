use serde::{Deserialize, Serialize};

use super::{Recording, Segment, SignalError, CHANNELS, IDLE};

/// Window length in samples (≈2.4 s at 50 Hz).
pub const WINDOW_LEN: usize = 120;
/// Hop between consecutive windows (50% overlap).
pub const WINDOW_HOP: usize = 60;

const STD_FLOOR: f64 = 1e-6;

/// A `6×T` slice of a recording, stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    channels: Vec<f64>,
    len: usize,
    pub source_recording: String,
    pub start_index: usize,
    pub label: Option<String>,
}

impl Window {
    /// `channels` is channel-major: all of channel 0, then channel 1, ...
    pub fn new(
        channels: Vec<f64>,
        source_recording: impl Into<String>,
        start_index: usize,
    ) -> Result<Self, SignalError> {
        if channels.is_empty() || channels.len() % CHANNELS != 0 {
            return Err(SignalError::Shape(format!(
                "window data length {} is not a positive multiple of {CHANNELS}",
                channels.len()
            )));
        }
        let len = channels.len() / CHANNELS;
        Ok(Self {
            channels,
            len,
            source_recording: source_recording.into(),
            start_index,
            label: None,
        })
    }

    /// Builds a window from consecutive samples.
    pub fn from_samples(rec: &Recording, start: usize, len: usize) -> Self {
        let mut channels = vec![0.0; CHANNELS * len];
        for (t, s) in rec.samples[start..start + len].iter().enumerate() {
            for (c, v) in s.channels().into_iter().enumerate() {
                channels[c * len + t] = v;
            }
        }
        Self {
            channels,
            len,
            source_recording: rec.id.clone(),
            start_index: start,
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    /// Number of timesteps.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c * self.len..(c + 1) * self.len]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let len = self.len;
        &mut self.channels[c * len..(c + 1) * len]
    }

    pub fn timestep(&self, t: usize) -> [f64; CHANNELS] {
        std::array::from_fn(|c| self.channels[c * self.len + t])
    }

    /// Channel-major data, `6×T`.
    pub fn data(&self) -> &[f64] {
        &self.channels
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.channels
    }

    pub fn id(&self) -> String {
        format!("{}@{}", self.source_recording, self.start_index)
    }
}

/// Windows of length `len` starting at `0, hop, 2·hop, ...`.
///
/// Returns an empty list when the recording is shorter than one window.
pub fn slide_windows(rec: &Recording, len: usize, hop: usize) -> Vec<Window> {
    assert!(len > 0 && hop > 0, "window length and hop must be positive");
    if rec.samples.len() < len {
        log::warn!(
            "recording {} has {} samples, fewer than one window of {len}",
            rec.id,
            rec.samples.len()
        );
        return Vec::new();
    }
    let count = (rec.samples.len() - len) / hop + 1;
    (0..count)
        .map(|i| Window::from_samples(rec, i * hop, len))
        .collect()
}

/// Label for samples `start..start+len`: the gesture covering at least half
/// of the timesteps, else [`IDLE`]. Only segments of this recording count.
pub fn overlap_label(rec: &Recording, start: usize, len: usize, segments: &[Segment]) -> String {
    let mut best: Option<(&str, usize)> = None;
    for seg in segments
        .iter()
        .filter(|s| s.recording == rec.id && s.label != IDLE)
    {
        let inside = rec.samples[start..start + len]
            .iter()
            .filter(|s| s.t_ms >= seg.start_ms && s.t_ms < seg.end_ms)
            .count();
        if 2 * inside >= len && best.is_none_or(|(_, n)| inside > n) {
            best = Some((&seg.label, inside));
        }
    }
    best.map_or_else(|| IDLE.to_string(), |(l, _)| l.to_string())
}

/// The samples of `rec` inside `seg`, labeled with the segment label.
/// `None` when the segment covers no samples.
pub fn segment_window(rec: &Recording, seg: &Segment) -> Option<Window> {
    let start = rec.samples.partition_point(|s| s.t_ms < seg.start_ms);
    let end = rec.samples.partition_point(|s| s.t_ms < seg.end_ms);
    (end > start).then(|| Window::from_samples(rec, start, end - start).with_label(&seg.label))
}

/// [`slide_windows`] with each window labeled by [`overlap_label`].
pub fn slide_labeled_windows(
    rec: &Recording,
    len: usize,
    hop: usize,
    segments: &[Segment],
) -> Vec<Window> {
    slide_windows(rec, len, hop)
        .into_iter()
        .map(|w| {
            let label = overlap_label(rec, w.start_index, len, segments);
            w.with_label(label)
        })
        .collect()
}

/// Per-channel normalization factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; CHANNELS],
            std: [1.0; CHANNELS],
        }
    }

    pub fn normalize_sample(&self, ch: [f64; CHANNELS]) -> [f64; CHANNELS] {
        std::array::from_fn(|c| (ch[c] - self.mean[c]) / self.std[c])
    }
}

/// Mean and population standard deviation per channel over every timestep
/// of the given windows; std is floored at 1e-6.
pub fn compute_norm_stats(windows: &[Window]) -> Result<NormStats, SignalError> {
    if windows.is_empty() {
        return Err(SignalError::InsufficientData {
            needed: 1,
            found: 0,
        });
    }
    let mut mean = [0.0; CHANNELS];
    let mut std = [0.0; CHANNELS];
    let total: usize = windows.iter().map(Window::len).sum();
    for c in 0..CHANNELS {
        let sum: f64 = windows.iter().flat_map(|w| w.channel(c)).sum();
        let m = sum / total as f64;
        let ss: f64 = windows
            .iter()
            .flat_map(|w| w.channel(c))
            .map(|v| (v - m) * (v - m))
            .sum();
        mean[c] = m;
        std[c] = (ss / total as f64).sqrt().max(STD_FLOOR);
    }
    Ok(NormStats { mean, std })
}

pub fn normalize(w: &Window, stats: &NormStats) -> Window {
    let mut out = w.clone();
    for c in 0..CHANNELS {
        let (m, s) = (stats.mean[c], stats.std[c]);
        out.channel_mut(c).iter_mut().for_each(|v| *v = (*v - m) / s);
    }
    out
}

pub fn denormalize(w: &Window, stats: &NormStats) -> Window {
    let mut out = w.clone();
    for c in 0..CHANNELS {
        let (m, s) = (stats.mean[c], stats.std[c]);
        out.channel_mut(c).iter_mut().for_each(|v| *v = *v * s + m);
    }
    out
}
