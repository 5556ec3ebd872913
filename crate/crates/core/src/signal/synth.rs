//! Deterministic synthetic gesture recordings with exact ground truth.
//!
//! A gesture class emits `amplitude·sin(2π·f·t)` on a weighted set of
//! channels, optionally preceded by a shared prefix motion. Every sample gets
//! independent Gaussian noise and acc_z carries a constant −9.8 gravity
//! offset.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ImuSample, Recording, Segment, SignalError, CHANNELS, IDLE, SAMPLE_PERIOD_MS};

pub const GRAVITY: f64 = -9.8;
const MIN_GESTURE_MS: u64 = 400;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisGain {
    pub channel: usize,
    pub gain: f64,
}

/// A sinusoidal motion on some channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub axes: Vec<AxisGain>,
    pub freq_hz: f64,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixMotion {
    #[serde(flatten)]
    pub motion: Motion,
    /// Share of the gesture duration spent in the prefix, in (0, 1).
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub id: String,
    #[serde(default)]
    pub message: String,
    #[serde(flatten)]
    pub motion: Motion,
    pub duration_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefix: Option<PrefixMotion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: Vec<ClassSpec>,
    pub noise_std: f64,
    pub seed: u64,
    /// Relative per-instance jitter of amplitude and frequency.
    #[serde(default)]
    pub variability: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub label: String,
    pub duration_ms: u64,
}

impl ScriptEntry {
    pub fn gesture(label: impl Into<String>, duration_ms: u64) -> Self {
        Self {
            label: label.into(),
            duration_ms,
        }
    }

    pub fn idle(duration_ms: u64) -> Self {
        Self::gesture(IDLE, duration_ms)
    }
}

fn check_motion(owner: &str, m: &Motion) -> Result<(), SignalError> {
    if !(m.freq_hz > 0.0 && m.freq_hz < 25.0) {
        return Err(SignalError::Config(format!(
            "class {owner}: frequency {} Hz outside (0, 25)",
            m.freq_hz
        )));
    }
    if let Some(a) = m.axes.iter().find(|a| a.channel >= CHANNELS) {
        return Err(SignalError::Config(format!(
            "class {owner}: channel {} out of range",
            a.channel
        )));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SignalError> {
        for c in &self.classes {
            check_motion(&c.id, &c.motion)?;
            if c.duration_ms < MIN_GESTURE_MS {
                return Err(SignalError::Config(format!(
                    "class {}: duration {} ms below {MIN_GESTURE_MS} ms",
                    c.id, c.duration_ms
                )));
            }
            if let Some(p) = &c.prefix {
                check_motion(&c.id, &p.motion)?;
                if !(p.fraction > 0.0 && p.fraction < 1.0) {
                    return Err(SignalError::Config(format!(
                        "class {}: prefix fraction {} outside (0, 1)",
                        c.id, p.fraction
                    )));
                }
            }
            if c.id == IDLE {
                return Err(SignalError::Config(format!("class id {IDLE} is reserved")));
            }
        }
        if self.noise_std < 0.0 || !self.noise_std.is_finite() {
            return Err(SignalError::Config("noise_std must be >= 0".into()));
        }
        Ok(())
    }

    pub fn class(&self, id: &str) -> Option<&ClassSpec> {
        self.classes.iter().find(|c| c.id == id)
    }

    /// Well-separated classes: each drives its own gyro axis (and a matching
    /// acc axis) at its own frequency.
    pub fn desk(n_classes: usize, noise_std: f64, seed: u64) -> Self {
        let classes = (0..n_classes)
            .map(|i| {
                let gyro = 3 + i % 3;
                let acc = i % 3;
                let sign = if (i / 3) % 2 == 0 { 1.0 } else { -1.0 };
                ClassSpec {
                    id: format!("g{i}"),
                    message: format!("Message {i}"),
                    motion: Motion {
                        axes: vec![
                            AxisGain { channel: gyro, gain: 1.0 },
                            AxisGain { channel: acc, gain: 0.5 * sign },
                        ],
                        freq_hz: 0.75 + 0.5 * i as f64,
                        amplitude: 3.0,
                    },
                    duration_ms: 2000,
                    prefix: None,
                }
            })
            .collect();
        Self {
            classes,
            noise_std,
            seed,
            variability: 0.0,
        }
    }

    /// Four classes where `g0` and `g1` open with the same motion and only
    /// differ in their second half; `g2` and `g3` share an axis and differ
    /// in sign and rate. Instances jitter in amplitude and frequency.
    pub fn hard(noise_std: f64, seed: u64) -> Self {
        let motion = |axes: &[(usize, f64)], freq_hz, amplitude| Motion {
            axes: axes
                .iter()
                .map(|&(channel, gain)| AxisGain { channel, gain })
                .collect(),
            freq_hz,
            amplitude,
        };
        let shared = PrefixMotion {
            motion: motion(&[(3, 1.0), (1, 0.4)], 1.0, 2.0),
            fraction: 0.5,
        };
        let classes = vec![
            ClassSpec {
                id: "g0".into(),
                message: "Hello".into(),
                motion: motion(&[(4, 1.0), (0, 0.4)], 1.5, 2.0),
                duration_ms: 2000,
                prefix: Some(shared.clone()),
            },
            ClassSpec {
                id: "g1".into(),
                message: "Look at that".into(),
                motion: motion(&[(5, 1.0), (2, 0.4)], 1.5, 2.0),
                duration_ms: 2000,
                prefix: Some(shared),
            },
            ClassSpec {
                id: "g2".into(),
                message: "Drink".into(),
                motion: motion(&[(3, 1.0), (4, 0.6), (0, 0.4)], 1.25, 2.0),
                duration_ms: 2000,
                prefix: None,
            },
            ClassSpec {
                id: "g3".into(),
                message: "Yes".into(),
                motion: motion(&[(3, -1.0), (4, 0.6), (1, -0.4)], 1.75, 2.0),
                duration_ms: 2000,
                prefix: None,
            },
        ];
        Self {
            classes,
            noise_std,
            seed,
            variability: 0.15,
        }
    }
}

/// Alternating gesture/idle script: every class appears `instances` times in
/// shuffled order, each gesture followed by an idle gap drawn from
/// `idle_ms`. The script opens with `lead_ms` of idle.
pub fn alternating_script(
    cfg: &SynthConfig,
    instances: usize,
    idle_ms: (u64, u64),
    lead_ms: u64,
    seed: u64,
) -> Vec<ScriptEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<&ClassSpec> = cfg
        .classes
        .iter()
        .flat_map(|c| std::iter::repeat_n(c, instances))
        .collect();
    order.shuffle(&mut rng);
    let mut script = vec![ScriptEntry::idle(lead_ms)];
    for c in order {
        let gap = rng.random_range(idle_ms.0..=idle_ms.1);
        let gap = gap - gap % SAMPLE_PERIOD_MS;
        script.push(ScriptEntry::gesture(&c.id, c.duration_ms));
        script.push(ScriptEntry::idle(gap));
    }
    script
}

fn emit(m: &Motion, amp_scale: f64, freq_scale: f64, t_s: f64, ch: &mut [f64; CHANNELS]) {
    let v = m.amplitude * amp_scale * (2.0 * PI * m.freq_hz * freq_scale * t_s).sin();
    for a in &m.axes {
        ch[a.channel] += a.gain * v;
    }
}

/// Renders `script` at 50 Hz. Returns the recording and one ground-truth
/// segment per gesture entry.
pub fn synth_generate(
    cfg: &SynthConfig,
    script: &[ScriptEntry],
    recording_id: &str,
) -> Result<(Recording, Vec<Segment>), SignalError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = if cfg.noise_std > 0.0 {
        Some(Normal::new(0.0, cfg.noise_std).map_err(|e| SignalError::Config(e.to_string()))?)
    } else {
        None
    };
    let mut samples = Vec::new();
    let mut truth = Vec::new();
    let mut t_ms = 0u64;
    for entry in script {
        let n = (entry.duration_ms / SAMPLE_PERIOD_MS) as usize;
        let class = if entry.label == IDLE {
            None
        } else {
            let c = cfg.class(&entry.label).ok_or_else(|| {
                SignalError::Config(format!("unknown class id `{}`", entry.label))
            })?;
            if entry.duration_ms < MIN_GESTURE_MS {
                return Err(SignalError::Config(format!(
                    "gesture entry `{}` lasts {} ms, below {MIN_GESTURE_MS} ms",
                    entry.label, entry.duration_ms
                )));
            }
            Some(c)
        };
        let (amp_scale, freq_scale) = match class {
            Some(_) if cfg.variability > 0.0 => (
                1.0 + cfg.variability * rng.random_range(-1.0..1.0),
                1.0 + cfg.variability * rng.random_range(-1.0..1.0),
            ),
            _ => (1.0, 1.0),
        };
        let start_ms = t_ms;
        let prefix_n = class
            .and_then(|c| c.prefix.as_ref())
            .map_or(0, |p| (n as f64 * p.fraction).round() as usize);
        for i in 0..n {
            let mut ch = [0.0; CHANNELS];
            ch[2] = GRAVITY;
            if let Some(c) = class {
                match &c.prefix {
                    Some(p) if i < prefix_n => {
                        emit(&p.motion, amp_scale, freq_scale, i as f64 * 0.02, &mut ch)
                    }
                    _ => {
                        let local = (i - prefix_n) as f64 * 0.02;
                        emit(&c.motion, amp_scale, freq_scale, local, &mut ch)
                    }
                }
            }
            if let Some(dist) = &noise {
                for v in ch.iter_mut() {
                    *v += dist.sample(&mut rng);
                }
            }
            samples.push(ImuSample::from_channels(t_ms, ch));
            t_ms += SAMPLE_PERIOD_MS;
        }
        if let Some(c) = class {
            truth.push(Segment {
                recording: recording_id.to_string(),
                start_ms,
                end_ms: t_ms,
                label: c.id.clone(),
            });
        }
    }
    Ok((Recording::new(recording_id, samples), truth))
}
