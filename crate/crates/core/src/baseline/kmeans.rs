use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BaselineError;
use crate::signal::CHANNELS;

pub type Point = [f64; CHANNELS];

const MAX_ITERATIONS: usize = 100;
const SHIFT_TOLERANCE: f64 = 1e-6;

/// K centroids in normalized channel space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub centroids: Vec<Point>,
}

fn sq_dist(a: &Point, b: &Point) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Codebook {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn nearest(&self, p: &Point) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.centroids.iter().enumerate() {
            let d = sq_dist(p, c);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    /// Sum of squared distances from each point to its nearest centroid.
    pub fn inertia(&self, points: &[Point]) -> f64 {
        points
            .iter()
            .map(|p| sq_dist(p, &self.centroids[self.nearest(p)]))
            .sum()
    }
}

/// Result of a k-means run, with the inertia after every Lloyd iteration.
#[derive(Clone, Debug)]
pub struct KMeansFit {
    pub codebook: Codebook,
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn distinct_count(points: &[Point]) -> usize {
    points
        .iter()
        .map(|p| p.map(f64::to_bits))
        .collect::<HashSet<_>>()
        .len()
}

fn plus_plus_init(points: &[Point], k: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        // at least k distinct points guarantee a positive total weight
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => points[dist.sample(rng)],
            Err(_) => break,
        };
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &next));
        }
        centroids.push(next);
    }
    centroids
}

/// k-means++ seeding followed by Lloyd iterations until no centroid moves
/// by more than 1e-6 or 100 iterations have run. With fewer distinct points
/// than `k`, `k` is reduced to the distinct count.
pub fn fit_codebook(points: &[Point], k: usize, seed: u64) -> Result<KMeansFit, BaselineError> {
    if k == 0 {
        return Err(BaselineError::Config("codebook size must be at least 1".into()));
    }
    if points.is_empty() {
        return Err(BaselineError::Data("no points to cluster".into()));
    }
    if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(BaselineError::Data("non-finite point".into()));
    }
    let distinct = distinct_count(points);
    let k = if distinct < k {
        log::warn!("only {distinct} distinct points; reducing codebook size from {k} to {distinct}");
        distinct
    } else {
        k
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut codebook = Codebook {
        centroids: plus_plus_init(points, k, &mut rng),
    };
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut sums = vec![[0.0; CHANNELS]; k];
        let mut counts = vec![0usize; k];
        for p in points {
            let c = codebook.nearest(p);
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for (c, centroid) in codebook.centroids.iter_mut().enumerate() {
            // an empty cluster keeps its centroid
            if counts[c] == 0 {
                continue;
            }
            let mean = sums[c].map(|s| s / counts[c] as f64);
            shift = shift.max(sq_dist(centroid, &mean).sqrt());
            *centroid = mean;
        }
        history.push(codebook.inertia(points));
        if shift < SHIFT_TOLERANCE {
            break;
        }
    }
    Ok(KMeansFit {
        codebook,
        inertia_history: history,
        iterations,
    })
}
