//! Evaluation metrics: window-level macro-F1, segment IoU matching,
//! majority-vote precision and Gwet's AC1 over human rating sheets, plus
//! embedding export for external inspection.

mod embeddings;
mod ratings;

pub use embeddings::{embeddings_to_csv, export_embeddings, write_embeddings_csv, EmbeddingRow};
pub use ratings::{gwet_ac1, majority_precision, RatedItem, RatingSheet, WindowId};

use serde::{Deserialize, Serialize};

use crate::signal::Segment;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("data error: {0}")]
    Data(String),
    #[error("undefined: {0}")]
    Undefined(String),
}

/// Counts indexed `[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let n = classes.len();
        Self {
            classes,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Self {
        let classes = (0..counts.len()).map(|i| i.to_string()).collect();
        Self { classes, counts }
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    /// Records by label; unknown labels are a data error.
    pub fn record_labels(&mut self, truth: &str, predicted: &str) -> Result<(), EvalError> {
        let idx = |l: &str| {
            self.classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| EvalError::Data(format!("unknown class `{l}`")))
        };
        let (t, p) = (idx(truth)?, idx(predicted)?);
        self.record(t, p);
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..self.n_classes()).map(|i| self.counts[i][i]).sum();
        diag as f64 / self.total().max(1) as f64
    }

    /// Per-class F1; 0 when the class has no true positives.
    pub fn per_class_f1(&self) -> Vec<f64> {
        let n = self.n_classes();
        (0..n)
            .map(|c| {
                let tp = self.counts[c][c] as f64;
                let actual: u64 = self.counts[c].iter().sum();
                let predicted: u64 = (0..n).map(|r| self.counts[r][c]).sum();
                let denom = (actual + predicted) as f64;
                if denom == 0.0 {
                    0.0
                } else {
                    2.0 * tp / denom
                }
            })
            .collect()
    }
}

/// Unweighted mean of per-class F1 over all classes, including classes that
/// never occur.
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    let f1 = cm.per_class_f1();
    f1.iter().sum::<f64>() / f1.len().max(1) as f64
}

pub fn segment_iou(a: &Segment, b: &Segment) -> f64 {
    let inter = a.end_ms.min(b.end_ms).saturating_sub(a.start_ms.max(b.start_ms));
    let union = a.end_ms.max(b.end_ms) - a.start_ms.min(b.start_ms);
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub f1: f64,
    pub mean_iou: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Greedy one-to-one matching in descending IoU; pairs at or above
/// `threshold` are true positives. Disjoint pairs never match. Idle segments
/// are ignored.
pub fn match_f1(pred: &[Segment], truth: &[Segment], threshold: f64) -> MatchReport {
    let pred: Vec<&Segment> = pred.iter().filter(|s| !s.is_idle()).collect();
    let truth: Vec<&Segment> = truth.iter().filter(|s| !s.is_idle()).collect();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            if p.recording != t.recording {
                continue;
            }
            let iou = segment_iou(p, t);
            if iou > 0.0 && iou >= threshold {
                pairs.push((iou, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; pred.len()];
    let mut used_t = vec![false; truth.len()];
    let mut matched = Vec::new();
    for (iou, i, j) in pairs {
        if !used_p[i] && !used_t[j] {
            used_p[i] = true;
            used_t[j] = true;
            matched.push(iou);
        }
    }
    let tp = matched.len();
    let fp = pred.len() - tp;
    let fneg = truth.len() - tp;
    let f1 = if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    };
    let mean_iou = if tp == 0 {
        0.0
    } else {
        matched.iter().sum::<f64>() / tp as f64
    };
    MatchReport {
        f1,
        mean_iou,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fneg,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg(a: u64, b: u64) -> Segment {
        Segment {
            recording: "r".into(),
            start_ms: a,
            end_ms: b,
            label: "g".into(),
        }
    }

    #[test]
    fn macro_f1_hand_cases() {
        let diag = ConfusionMatrix::from_counts(vec![vec![3, 0, 0], vec![0, 4, 0], vec![0, 0, 1]]);
        assert_eq!(macro_f1(&diag), 1.0);
        let even = ConfusionMatrix::from_counts(vec![vec![5, 5], vec![5, 5]]);
        assert_eq!(even.per_class_f1(), vec![0.5, 0.5]);
        assert_eq!(macro_f1(&even), 0.5);
        let one_sided = ConfusionMatrix::from_counts(vec![vec![10, 0], vec![10, 0]]);
        assert!((macro_f1(&one_sided) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn iou_and_matching_hand_cases() {
        assert!((segment_iou(&seg(10, 20), &seg(15, 25)) - 1.0 / 3.0).abs() < 1e-15);
        let same = [seg(0, 10), seg(20, 30)];
        let r = match_f1(&same, &same, 0.5);
        assert_eq!((r.f1, r.mean_iou), (1.0, 1.0));
        let r = match_f1(&[seg(0, 10), seg(20, 30)], &[seg(0, 10), seg(40, 50)], 0.5);
        assert_eq!((r.true_positives, r.false_positives, r.false_negatives), (1, 1, 1));
        assert_eq!(r.f1, 0.5);
    }

    /// Brute-force precision/recall per class straight from the matrix.
    fn brute_macro_f1(counts: &[Vec<u64>]) -> f64 {
        let n = counts.len();
        let mut total = 0.0;
        for c in 0..n {
            let tp = counts[c][c] as f64;
            let fp: f64 = (0..n).filter(|&r| r != c).map(|r| counts[r][c] as f64).sum();
            let fneg: f64 = (0..n).filter(|&k| k != c).map(|k| counts[c][k] as f64).sum();
            let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let recall = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
            total += if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
        }
        total / n as f64
    }

    proptest! {
        #[test]
        fn macro_f1_matches_brute_force(n in 1usize..=6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let counts: Vec<Vec<u64>> = (0..n)
                .map(|_| (0..n).map(|_| if rng.random_bool(0.3) { 0 } else { rng.random_range(0..20) }).collect())
                .collect();
            let cm = ConfusionMatrix::from_counts(counts.clone());
            prop_assert!((macro_f1(&cm) - brute_macro_f1(&counts)).abs() < 1e-12);
        }

        #[test]
        fn lowering_threshold_never_lowers_f1(
            spans in proptest::collection::vec((0u64..1000, 1u64..200), 1..6),
            gts in proptest::collection::vec((0u64..1000, 1u64..200), 1..6),
            hi in 0.0f64..1.0, lo_frac in 0.0f64..1.0,
        ) {
            let pred: Vec<Segment> = spans.iter().map(|&(a, d)| seg(a, a + d)).collect();
            let truth: Vec<Segment> = gts.iter().map(|&(a, d)| seg(a, a + d)).collect();
            let lo = hi * lo_frac;
            prop_assert!(match_f1(&pred, &truth, lo).f1 >= match_f1(&pred, &truth, hi).f1);
        }

        #[test]
        fn zero_threshold_perfect_overlap(
            gts in proptest::collection::vec((0u64..100, 1u64..50), 1..6),
        ) {
            // disjoint by construction
            let truth: Vec<Segment> = gts.iter().enumerate()
                .map(|(i, &(a, d))| seg(i as u64 * 1000 + a, i as u64 * 1000 + a + d)).collect();
            prop_assert_eq!(match_f1(&truth, &truth, 0.0).f1, 1.0);
        }
    }
}
