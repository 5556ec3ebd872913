//! Streaming recognition: a per-connection session that buffers samples,
//! classifies every hop, and turns confident non-idle predictions into
//! gesture events, gated by the clutch and debounced per label.

mod protocol;
mod replay;
mod server;

use std::collections::VecDeque;
use std::path::Path;
use std::time::{Duration, Instant};

pub use protocol::{parse_inbound, Inbound, Outbound, SampleMsg};
pub use replay::{replay_lines, replay_local, replay_tcp, ClutchSpan, ReplayRate};
pub use server::{Server, ServerHandle};

use crate::baseline::{BaselineError, BaselineModel};
use crate::model::{ModelError, TransformerModel};
use crate::signal::{GestureClass, ImuSample, NormStats, SignalError, Window, CHANNELS, IDLE, WINDOW_HOP, WINDOW_LEN};
use crate::train::{import_bundle, TrainError};

pub const DEFAULT_PORT: u16 = 7071;
/// Minimum probability for a transformer prediction to become an event.
pub const DEFAULT_THETA_CONF: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bundle(#[from] TrainError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("config error: {0}")]
    Config(String),
}

/// The model a session classifies with. Shared read-only across sessions.
#[derive(Clone, Debug)]
pub enum Classifier {
    Transformer {
        model: TransformerModel,
        classes: Vec<GestureClass>,
        norm: NormStats,
    },
    Baseline(BaselineModel),
}

impl Classifier {
    pub fn from_bundle(path: impl AsRef<Path>) -> Result<Self, ServeError> {
        let (model, meta) = import_bundle(path)?;
        Ok(Self::Transformer {
            model,
            classes: meta.classes,
            norm: meta.norm,
        })
    }

    pub fn from_baseline(path: impl AsRef<Path>) -> Result<Self, ServeError> {
        Ok(Self::Baseline(BaselineModel::load(path)?))
    }

    pub fn classes(&self) -> &[GestureClass] {
        match self {
            Self::Transformer { classes, .. } => classes,
            Self::Baseline(b) => &b.classes,
        }
    }

    pub fn norm(&self) -> &NormStats {
        match self {
            Self::Transformer { norm, .. } => norm,
            Self::Baseline(b) => &b.norm,
        }
    }

    pub fn window_len(&self) -> usize {
        match self {
            Self::Transformer { model, .. } => model.config.window,
            Self::Baseline(_) => WINDOW_LEN,
        }
    }

    /// θ_conf for the transformer; the baseline's own idle threshold.
    pub fn default_theta(&self) -> f64 {
        match self {
            Self::Transformer { .. } => DEFAULT_THETA_CONF,
            Self::Baseline(b) => b.theta,
        }
    }

    /// Predicted class id and its confidence for a normalized window.
    pub fn predict(&self, w: &Window) -> Result<(String, f64), ServeError> {
        match self {
            Self::Transformer { model, classes, .. } => {
                let probs = model.forward_classify(w)?;
                let (i, p) = probs
                    .iter()
                    .copied()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, p)| if p > best.1 { (i, p) } else { best });
                Ok((classes[i].id.clone(), p))
            }
            Self::Baseline(b) => Ok(b.classify(w)),
        }
    }

    fn message(&self, label: &str) -> String {
        self.classes()
            .iter()
            .find(|c| c.id == label)
            .map(|c| c.message.clone())
            .unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionConfig {
    pub hop: usize,
    pub theta_conf: f64,
    /// A repeated label is suppressed until this many samples have passed
    /// since its last event.
    pub debounce_samples: usize,
}

impl SessionConfig {
    pub fn for_classifier(c: &Classifier) -> Self {
        Self {
            hop: WINDOW_HOP,
            theta_conf: c.default_theta(),
            debounce_samples: c.window_len(),
        }
    }
}

/// Inference timing of one session.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LatencyStats {
    pub count: usize,
    pub total: Duration,
    pub max: Duration,
}

impl LatencyStats {
    pub fn mean(&self) -> Duration {
        if self.count == 0 {
            Duration::ZERO
        } else {
            self.total / self.count as u32
        }
    }

    fn record(&mut self, d: Duration) {
        self.count += 1;
        self.total += d;
        self.max = self.max.max(d);
    }
}

pub struct SessionState<'a> {
    classifier: &'a Classifier,
    config: SessionConfig,
    window_len: usize,
    buffer: VecDeque<[f64; CHANNELS]>,
    since_inference: usize,
    /// Samples received since the session started or was last reset.
    received: u64,
    clutch_engaged: bool,
    last_emitted: Option<(String, u64)>,
    inferences: usize,
    latency: LatencyStats,
}

impl<'a> SessionState<'a> {
    pub fn new(classifier: &'a Classifier, config: SessionConfig) -> Self {
        let window_len = classifier.window_len();
        Self {
            classifier,
            config,
            window_len,
            buffer: VecDeque::with_capacity(window_len),
            since_inference: 0,
            received: 0,
            clutch_engaged: false,
            last_emitted: None,
            inferences: 0,
            latency: LatencyStats::default(),
        }
    }

    pub fn clutch_engaged(&self) -> bool {
        self.clutch_engaged
    }

    pub fn inferences(&self) -> usize {
        self.inferences
    }

    pub fn latency(&self) -> &LatencyStats {
        &self.latency
    }

    /// Handles one protocol line and returns the frames to send back.
    pub fn handle_line(&mut self, line: &str) -> Vec<Outbound> {
        match parse_inbound(line) {
            Ok(msg) => self.handle_message(msg),
            Err(e) => vec![e],
        }
    }

    pub fn handle_message(&mut self, msg: Inbound) -> Vec<Outbound> {
        match msg {
            Inbound::Sample(s) => match self.push_sample(&s.into()) {
                Ok(ev) => ev.into_iter().collect(),
                Err(e) => vec![Outbound::error("inference", e.to_string())],
            },
            Inbound::Clutch(on) => {
                self.clutch_engaged = on;
                vec![Outbound::Clutch { on }]
            }
            Inbound::Reset => {
                self.buffer.clear();
                self.since_inference = 0;
                self.received = 0;
                self.last_emitted = None;
                Vec::new()
            }
        }
    }

    /// Appends one raw sample; classifies when the buffer is full and a hop
    /// has passed since the last inference.
    pub fn push_sample(&mut self, s: &ImuSample) -> Result<Option<Outbound>, ServeError> {
        if self.buffer.len() == self.window_len {
            self.buffer.pop_front();
        }
        self.buffer.push_back(self.classifier.norm().normalize_sample(s.channels()));
        self.received += 1;
        self.since_inference += 1;
        if self.buffer.len() < self.window_len || self.since_inference < self.config.hop {
            return Ok(None);
        }
        self.since_inference = 0;
        let window = self.current_window()?;
        let started = Instant::now();
        let (label, confidence) = self.classifier.predict(&window)?;
        let elapsed = started.elapsed();
        self.latency.record(elapsed);
        self.inferences += 1;
        log::debug!(
            "window_end={} label={label} confidence={confidence:.3} latency_ms={:.3}",
            self.received,
            elapsed.as_secs_f64() * 1e3
        );
        if label == IDLE || confidence < self.config.theta_conf || self.clutch_engaged {
            return Ok(None);
        }
        let window_end = self.received;
        if let Some((last, at)) = &self.last_emitted {
            if *last == label && window_end - at < self.config.debounce_samples as u64 {
                return Ok(None);
            }
        }
        self.last_emitted = Some((label.clone(), window_end));
        Ok(Some(Outbound::Gesture {
            message: self.classifier.message(&label),
            label,
            confidence,
            window_end,
        }))
    }

    fn current_window(&self) -> Result<Window, ServeError> {
        let n = self.buffer.len();
        let mut data = vec![0.0; CHANNELS * n];
        for (t, s) in self.buffer.iter().enumerate() {
            for c in 0..CHANNELS {
                data[c * n + t] = s[c];
            }
        }
        let start = (self.received - n as u64) as usize;
        Ok(Window::new(data, "stream", start)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn classifier() -> Classifier {
        Classifier::Transformer {
            model: TransformerModel::new(ModelConfig::desk(2), 0).unwrap(),
            classes: vec![GestureClass::new("wave", "Hello"), GestureClass::idle()],
            norm: NormStats::identity(),
        }
    }

    fn sample(i: u64) -> Inbound {
        Inbound::Sample(SampleMsg {
            t_ms: i * 20,
            acc: [0.0, 0.0, -9.8],
            gyro: [(i as f64).sin(), 0.0, 0.0],
        })
    }

    #[test]
    fn inference_fires_every_hop_once_full() {
        let c = classifier();
        let mut s = SessionState::new(&c, SessionConfig::for_classifier(&c));
        for i in 0..179 {
            s.handle_message(sample(i));
        }
        assert_eq!(s.inferences(), 1);
        s.handle_message(sample(179));
        assert_eq!(s.inferences(), 2);
        assert_eq!(s.latency().count, 2);
    }

    #[test]
    fn reset_clears_buffer() {
        let c = classifier();
        let mut s = SessionState::new(&c, SessionConfig::for_classifier(&c));
        for i in 0..100 {
            s.handle_message(sample(i));
        }
        s.handle_message(Inbound::Reset);
        for i in 0..119 {
            s.handle_message(sample(i));
        }
        assert_eq!(s.inferences(), 0);
    }

    #[test]
    fn clutch_is_acknowledged() {
        let c = classifier();
        let mut s = SessionState::new(&c, SessionConfig::for_classifier(&c));
        assert_eq!(s.handle_line(r#"{"cmd":"clutch","on":true}"#), vec![Outbound::Clutch { on: true }]);
        assert!(s.clutch_engaged());
    }
}
