use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SignalError, CHANNELS, SAMPLE_PERIOD_MS};

pub const CSV_HEADER: &str = "t_ms,acc_x,acc_y,acc_z,gyro_x,gyro_y,gyro_z";

/// One accelerometer (m/s²) + gyroscope (°/s) reading.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t_ms: u64,
    pub acc: [f64; 3],
    pub gyro: [f64; 3],
}

impl ImuSample {
    /// Channels in the order acc_x, acc_y, acc_z, gyro_x, gyro_y, gyro_z.
    pub fn channels(&self) -> [f64; CHANNELS] {
        [
            self.acc[0],
            self.acc[1],
            self.acc[2],
            self.gyro[0],
            self.gyro[1],
            self.gyro[2],
        ]
    }

    pub fn from_channels(t_ms: u64, ch: [f64; CHANNELS]) -> Self {
        Self {
            t_ms,
            acc: [ch[0], ch[1], ch[2]],
            gyro: [ch[3], ch[4], ch[5]],
        }
    }

    pub fn gyro_magnitude(&self) -> f64 {
        self.gyro.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.channels().iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub id: String,
    pub samples: Vec<ImuSample>,
    pub nominal_rate_hz: f64,
}

impl Recording {
    pub fn new(id: impl Into<String>, samples: Vec<ImuSample>) -> Self {
        Self {
            id: id.into(),
            samples,
            nominal_rate_hz: 50.0,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration covered by the samples, counting the last sample period.
    pub fn end_ms(&self) -> u64 {
        self.samples.last().map_or(0, |s| s.t_ms + SAMPLE_PERIOD_MS)
    }

    /// Parses the recording CSV format. The id defaults to the file stem.
    pub fn from_csv_str(id: impl Into<String>, text: &str) -> Result<Self, SignalError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == CSV_HEADER => {}
            Some((_, header)) => {
                return Err(SignalError::Parse {
                    line: 1,
                    message: format!("expected header `{CSV_HEADER}`, found `{header}`"),
                })
            }
            None => {
                return Err(SignalError::Parse {
                    line: 1,
                    message: "empty file".into(),
                })
            }
        }
        let mut samples: Vec<ImuSample> = Vec::new();
        for (idx, raw) in lines {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
            if fields.len() != 7 {
                return Err(SignalError::Parse {
                    line,
                    message: format!("expected 7 fields, found {}", fields.len()),
                });
            }
            let t_ms: u64 = fields[0].parse().map_err(|e| SignalError::Parse {
                line,
                message: format!("bad t_ms `{}`: {e}", fields[0]),
            })?;
            let mut ch = [0.0f64; CHANNELS];
            for (slot, f) in ch.iter_mut().zip(&fields[1..]) {
                *slot = f.parse().map_err(|e| SignalError::Parse {
                    line,
                    message: format!("bad value `{f}`: {e}"),
                })?;
                if !slot.is_finite() {
                    return Err(SignalError::Parse {
                        line,
                        message: format!("non-finite value `{f}`"),
                    });
                }
            }
            if let Some(prev) = samples.last() {
                if t_ms <= prev.t_ms {
                    return Err(SignalError::Ordering {
                        line,
                        previous: prev.t_ms,
                        current: t_ms,
                    });
                }
            }
            samples.push(ImuSample::from_channels(t_ms, ch));
        }
        Ok(Self::new(id, samples))
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(64 * (self.samples.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for s in &self.samples {
            write!(out, "{}", s.t_ms).unwrap();
            for v in s.channels() {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

pub fn load_recording(path: impl AsRef<Path>) -> Result<Recording, SignalError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| SignalError::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Recording::from_csv_str(id, &text)
}

pub fn save_recording(rec: &Recording, path: impl AsRef<Path>) -> Result<(), SignalError> {
    let path = path.as_ref();
    fs::write(path, rec.to_csv_string()).map_err(|e| SignalError::io(path, e))
}

/// Linear interpolation onto a 20 ms grid anchored at the first timestamp.
pub fn resample_50hz(rec: &Recording) -> Result<Recording, SignalError> {
    if rec.samples.len() < 2 {
        return Err(SignalError::InsufficientData {
            needed: 2,
            found: rec.samples.len(),
        });
    }
    let first = rec.samples[0].t_ms;
    let last = rec.samples[rec.samples.len() - 1].t_ms;
    let mut out = Vec::with_capacity(((last - first) / SAMPLE_PERIOD_MS + 1) as usize);
    let mut seg = 0;
    let mut t = first;
    while t <= last {
        while rec.samples[seg + 1].t_ms < t {
            seg += 1;
        }
        let (a, b) = (&rec.samples[seg], &rec.samples[seg + 1]);
        let sample = if t == a.t_ms {
            ImuSample { t_ms: t, ..*a }
        } else if t == b.t_ms {
            ImuSample { t_ms: t, ..*b }
        } else {
            let frac = (t - a.t_ms) as f64 / (b.t_ms - a.t_ms) as f64;
            let (ca, cb) = (a.channels(), b.channels());
            let mut ch = [0.0; CHANNELS];
            for i in 0..CHANNELS {
                ch[i] = ca[i] + frac * (cb[i] - ca[i]);
            }
            ImuSample::from_channels(t, ch)
        };
        out.push(sample);
        t += SAMPLE_PERIOD_MS;
    }
    Ok(Recording {
        id: rec.id.clone(),
        samples: out,
        nominal_rate_hz: 50.0,
    })
}
