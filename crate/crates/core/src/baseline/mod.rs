//! Rule-based recognizer: K-means symbolization plus LCSS template matching.
//!
//! Every timestep of a normalized window is mapped to its nearest codebook
//! centroid. A class scores the best `lcss / template_len` over its templates
//! and the top class wins when it clears the idle threshold θ.

mod kmeans;
mod lcss;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use kmeans::{fit_codebook, Codebook, KMeansFit, Point};
pub use lcss::lcss_len;

use crate::signal::{normalize, GestureClass, NormStats, Window, IDLE};

pub const DEFAULT_K: usize = 16;
pub const DEFAULT_THETA: f64 = 0.6;

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GestureTemplate {
    pub class: String,
    pub symbols: Vec<u16>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineParams {
    pub k: usize,
    pub theta: f64,
    pub seed: u64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            theta: DEFAULT_THETA,
            seed: 0,
        }
    }
}

/// Codebook, templates, threshold, classes (gestures then [`IDLE`]) and the
/// normalization used at training time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub codebook: Codebook,
    pub templates: Vec<GestureTemplate>,
    pub theta: f64,
    pub classes: Vec<GestureClass>,
    pub norm: NormStats,
}

/// Nearest-centroid index for each timestep of a normalized window.
pub fn symbolize(w: &Window, cb: &Codebook) -> Vec<u16> {
    (0..w.len())
        .map(|t| cb.nearest(&w.timestep(t)) as u16)
        .collect()
}

impl BaselineModel {
    /// Builds a model from raw labeled gesture instances (one template each)
    /// and raw codebook material, typically the same instances plus idle
    /// windows. Every gesture class must have at least one instance.
    pub fn train(
        instances: &[Window],
        codebook_windows: &[Window],
        gestures: &[GestureClass],
        norm: NormStats,
        params: &BaselineParams,
    ) -> Result<Self, BaselineError> {
        if !(params.theta > 0.0 && params.theta <= 1.0) {
            return Err(BaselineError::Config(format!(
                "idle threshold {} outside (0, 1]",
                params.theta
            )));
        }
        let points: Vec<Point> = codebook_windows
            .iter()
            .map(|w| normalize(w, &norm))
            .flat_map(|w| (0..w.len()).map(move |t| w.timestep(t)))
            .collect();
        let codebook = fit_codebook(&points, params.k, params.seed)?.codebook;
        let mut templates = Vec::with_capacity(instances.len());
        for w in instances {
            let label = w
                .label
                .as_deref()
                .ok_or_else(|| BaselineError::Data(format!("instance {} is unlabeled", w.id())))?;
            if !gestures.iter().any(|g| g.id == label) {
                return Err(BaselineError::Data(format!("instance label `{label}` is not a gesture class")));
            }
            templates.push(GestureTemplate {
                class: label.to_string(),
                symbols: symbolize(&normalize(w, &norm), &codebook),
            });
        }
        let mut classes = gestures.to_vec();
        classes.push(GestureClass::idle());
        let model = Self {
            codebook,
            templates,
            theta: params.theta,
            classes,
            norm,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), BaselineError> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(BaselineError::Config(format!("idle threshold {} outside (0, 1]", self.theta)));
        }
        let k = self.codebook.k();
        if k == 0 {
            return Err(BaselineError::Data("empty codebook".into()));
        }
        for c in self.gesture_ids() {
            if !self.templates.iter().any(|t| t.class == c) {
                return Err(BaselineError::Data(format!("class `{c}` has no template")));
            }
        }
        for t in &self.templates {
            if t.symbols.is_empty() || t.symbols.iter().any(|&s| s as usize >= k) {
                return Err(BaselineError::Data(format!("template of `{}` is malformed", t.class)));
            }
        }
        Ok(())
    }

    fn gesture_ids(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(|c| c.id.as_str()).filter(|c| *c != IDLE)
    }

    /// Best normalized LCSS score per gesture class, in declaration order.
    pub fn scores(&self, w: &Window) -> Vec<(String, f64)> {
        let symbols = symbolize(w, &self.codebook);
        self.gesture_ids()
            .map(|c| {
                let best = self
                    .templates
                    .iter()
                    .filter(|t| t.class == c)
                    .map(|t| {
                        // both sides are nonempty by construction
                        lcss_len(&symbols, &t.symbols).unwrap_or(0) as f64 / t.symbols.len() as f64
                    })
                    .fold(0.0, f64::max);
                (c.to_string(), best)
            })
            .collect()
    }

    /// Predicted class and the winning gesture score for a normalized window.
    /// Returns [`IDLE`] when no gesture reaches θ.
    pub fn classify(&self, w: &Window) -> (String, f64) {
        let mut best: Option<(String, f64)> = None;
        for (c, s) in self.scores(w) {
            if best.as_ref().is_none_or(|(_, b)| s > *b) {
                best = Some((c, s));
            }
        }
        match best {
            Some((c, s)) if s >= self.theta => (c, s),
            Some((_, s)) => (IDLE.to_string(), s),
            None => (IDLE.to_string(), 0.0),
        }
    }

    /// [`classify`](Self::classify) for a raw window.
    pub fn classify_raw(&self, w: &Window) -> (String, f64) {
        self.classify(&normalize(w, &self.norm))
    }

    pub fn message(&self, class: &str) -> Option<&str> {
        self.classes.iter().find(|c| c.id == class).map(|c| c.message.as_str())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BaselineError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| BaselineError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BaselineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| BaselineError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let model: Self = serde_json::from_str(&text)?;
        model.validate()?;
        Ok(model)
    }
}
