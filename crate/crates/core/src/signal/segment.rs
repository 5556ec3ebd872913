use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Recording, SignalError, IDLE, SAMPLE_PERIOD_MS};

/// A labeled half-open interval `[start_ms, end_ms)` of one recording.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub recording: String,
    pub start_ms: u64,
    pub end_ms: u64,
    pub label: String,
}

impl Segment {
    pub fn duration_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }

    pub fn is_idle(&self) -> bool {
        self.label == IDLE
    }
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<Segment>, SignalError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| SignalError::io(path, e))?;
    let segs: Vec<Segment> = serde_json::from_str(&text)?;
    validate_annotations(&segs)?;
    Ok(segs)
}

pub fn save_annotations(segs: &[Segment], path: impl AsRef<Path>) -> Result<(), SignalError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(segs)?;
    fs::write(path, text).map_err(|e| SignalError::io(path, e))
}

/// Every segment is non-empty and segments of one recording do not overlap.
pub fn validate_annotations(segs: &[Segment]) -> Result<(), SignalError> {
    for s in segs {
        if s.start_ms >= s.end_ms {
            return Err(SignalError::Annotation(format!(
                "segment {}..{} of {} is empty",
                s.start_ms, s.end_ms, s.recording
            )));
        }
    }
    let mut sorted: Vec<&Segment> = segs.iter().collect();
    sorted.sort_by(|a, b| (&a.recording, a.start_ms).cmp(&(&b.recording, b.start_ms)));
    for pair in sorted.windows(2) {
        if pair[0].recording == pair[1].recording && pair[1].start_ms < pair[0].end_ms {
            return Err(SignalError::Annotation(format!(
                "segments {}..{} and {}..{} of {} overlap",
                pair[0].start_ms, pair[0].end_ms, pair[1].start_ms, pair[1].end_ms, pair[0].recording
            )));
        }
    }
    Ok(())
}

/// Motion-energy segmentation parameters.
///
/// Thresholds left as `None` are derived from the first `idle_ms` of the
/// coarse region: `on = mean + 4·std`, `off = mean + 2·std` of the per-sample
/// gyro magnitude.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    pub theta_on: Option<f64>,
    pub theta_off: Option<f64>,
    pub smooth_samples: usize,
    pub refine_samples: usize,
    pub idle_ms: u64,
    pub merge_gap_ms: u64,
    pub min_active_ms: u64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            theta_on: None,
            theta_off: None,
            smooth_samples: 25,
            refine_samples: 5,
            idle_ms: 500,
            merge_gap_ms: 300,
            min_active_ms: 400,
        }
    }
}

/// Centered moving RMS, truncated at the slice edges.
fn moving_rms(mag: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut prefix = vec![0.0; mag.len() + 1];
    for (i, m) in mag.iter().enumerate() {
        prefix[i + 1] = prefix[i] + m * m;
    }
    (0..mag.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(mag.len());
            ((prefix[hi] - prefix[lo]) / (hi - lo) as f64).max(0.0).sqrt()
        })
        .collect()
}

/// Splits the coarse region `[start_ms, end_ms)` into alternating active and
/// idle segments. Active segments carry `label`.
///
/// Expects a 50 Hz recording.
pub fn auto_segment(
    rec: &Recording,
    coarse: (u64, u64),
    label: &str,
    params: &SegmentParams,
) -> Result<Vec<Segment>, SignalError> {
    let (start_ms, end_ms) = coarse;
    if end_ms <= start_ms || end_ms - start_ms < 1000 {
        return Err(SignalError::InvalidRegion(format!(
            "coarse region {start_ms}..{end_ms} is shorter than 1 s"
        )));
    }
    if rec.is_empty() || start_ms < rec.samples[0].t_ms || end_ms > rec.end_ms() {
        return Err(SignalError::InvalidRegion(format!(
            "coarse region {start_ms}..{end_ms} lies outside recording {}",
            rec.id
        )));
    }
    let first = rec.samples.partition_point(|s| s.t_ms < start_ms);
    let last = rec.samples.partition_point(|s| s.t_ms < end_ms);
    let region = &rec.samples[first..last];
    let n = region.len();
    let mag: Vec<f64> = region.iter().map(|s| s.gyro_magnitude()).collect();

    let idle_n = ((params.idle_ms / SAMPLE_PERIOD_MS) as usize).clamp(1, n);
    let idle_mean = mag[..idle_n].iter().sum::<f64>() / idle_n as f64;
    let idle_std = (mag[..idle_n]
        .iter()
        .map(|m| (m - idle_mean) * (m - idle_mean))
        .sum::<f64>()
        / idle_n as f64)
        .sqrt();
    let theta_on = params.theta_on.unwrap_or(idle_mean + 4.0 * idle_std);
    let theta_off = params.theta_off.unwrap_or(idle_mean + 2.0 * idle_std);

    let energy = moving_rms(&mag, params.smooth_samples);
    let fine = moving_rms(&mag, params.refine_samples);

    // hysteresis on the smoothed energy: runs of [begin, end) sample indices
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut active_from: Option<usize> = None;
    for (i, &e) in energy.iter().enumerate() {
        match active_from {
            None if e > theta_on => active_from = Some(i),
            Some(a) if e <= theta_off => {
                runs.push((a, i));
                active_from = None;
            }
            _ => {}
        }
    }
    if let Some(a) = active_from {
        runs.push((a, n));
    }

    let gap_samples = (params.merge_gap_ms / SAMPLE_PERIOD_MS) as usize;
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for run in runs {
        match merged.last_mut() {
            Some(prev) if run.0 - prev.1 < gap_samples => prev.1 = run.1,
            _ => merged.push(run),
        }
    }

    // pull each boundary to where the lightly smoothed energy crosses the
    // release threshold, searching within half a smoothing window
    let reach = params.smooth_samples / 2;
    let mut refined: Vec<(usize, usize)> = Vec::with_capacity(merged.len());
    for (idx, &(a, b)) in merged.iter().enumerate() {
        let lower = refined.last().map_or(0, |r: &(usize, usize)| r.1);
        let upper = merged.get(idx + 1).map_or(n, |next| next.0);
        let lo = a.saturating_sub(reach).max(lower);
        let hi = (b + reach).min(upper);
        let begin = (lo..b).find(|&i| fine[i] > theta_off).unwrap_or(a);
        let end = (begin..hi)
            .rev()
            .find(|&i| fine[i] > theta_off)
            .map_or(b, |i| i + 1);
        refined.push((begin, end.max(begin + 1)));
    }

    let min_samples = (params.min_active_ms / SAMPLE_PERIOD_MS) as usize;
    refined.retain(|&(a, b)| b - a >= min_samples);

    let t_at = |i: usize| {
        if i < n {
            region[i].t_ms
        } else {
            (region[n - 1].t_ms + SAMPLE_PERIOD_MS).min(end_ms)
        }
    };
    let mut out = Vec::new();
    let mut cursor = start_ms;
    for (a, b) in refined {
        let (s, e) = (t_at(a), t_at(b));
        if s > cursor {
            out.push(Segment {
                recording: rec.id.clone(),
                start_ms: cursor,
                end_ms: s,
                label: IDLE.into(),
            });
        }
        out.push(Segment {
            recording: rec.id.clone(),
            start_ms: s,
            end_ms: e,
            label: label.into(),
        });
        cursor = e;
    }
    if cursor < end_ms {
        out.push(Segment {
            recording: rec.id.clone(),
            start_ms: cursor,
            end_ms,
            label: IDLE.into(),
        });
    }
    Ok(out)
}
