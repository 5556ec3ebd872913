use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::signal::{Window, CHANNELS};

pub const JITTER_STD: f64 = 0.05;
pub const SCALE_RANGE: (f64, f64) = (0.8, 1.2);
pub const MAX_SHIFT: i64 = 10;
pub const MAX_ROTATION_DEG: f64 = 15.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AugmentKind {
    Jitter,
    Scale,
    Shift,
    Rotate,
}

pub fn jitter(w: &Window, std: f64, rng: &mut impl Rng) -> Window {
    let noise = Normal::new(0.0, std).expect("nonnegative std");
    let mut out = w.clone();
    out.data_mut().iter_mut().for_each(|v| *v += noise.sample(rng));
    out
}

/// Multiplies each channel by its own factor from `U(0.8, 1.2)`.
pub fn scale_channels(w: &Window, rng: &mut impl Rng) -> Window {
    let mut out = w.clone();
    for c in 0..CHANNELS {
        let f = rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1);
        out.channel_mut(c).iter_mut().for_each(|v| *v *= f);
    }
    out
}

/// Moves the signal `shift` samples later (earlier when negative), filling
/// the vacated timesteps with zeros.
pub fn time_shift(w: &Window, shift: i64) -> Window {
    let mut out = w.clone();
    let n = w.len() as i64;
    for c in 0..CHANNELS {
        let src = w.channel(c);
        let dst = out.channel_mut(c);
        for t in 0..n {
            let from = t - shift;
            dst[t as usize] = if (0..n).contains(&from) { src[from as usize] } else { 0.0 };
        }
    }
    out
}

/// Rotation matrix for `angle` radians about a unit `axis` (Rodrigues).
fn rotation_matrix(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let [x, y, z] = axis;
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Applies one rotation to the accelerometer and gyroscope triplets alike.
pub fn rotate(w: &Window, axis: [f64; 3], angle: f64) -> Window {
    let r = rotation_matrix(axis, angle);
    let mut out = w.clone();
    let len = w.len();
    for base in [0, 3] {
        for t in 0..len {
            let v = [
                w.channel(base)[t],
                w.channel(base + 1)[t],
                w.channel(base + 2)[t],
            ];
            for (i, row) in r.iter().enumerate() {
                out.channel_mut(base + i)[t] = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
            }
        }
    }
    out
}

/// Random composition of jitter, per-channel scaling, time shift and a small
/// joint rotation. Each transform is included with probability 1/2 and at
/// least one always applies. Deterministic in `seed`.
pub fn augment(w: &Window, seed: u64) -> (Window, Vec<AugmentKind>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kinds: Vec<AugmentKind> = [
        AugmentKind::Jitter,
        AugmentKind::Scale,
        AugmentKind::Shift,
        AugmentKind::Rotate,
    ]
    .into_iter()
    .filter(|_| rng.random_bool(0.5))
    .collect();
    if kinds.is_empty() {
        kinds.push(AugmentKind::Jitter);
    }
    let mut out = w.clone();
    for kind in &kinds {
        out = match kind {
            AugmentKind::Jitter => jitter(&out, JITTER_STD, &mut rng),
            AugmentKind::Scale => scale_channels(&out, &mut rng),
            AugmentKind::Shift => time_shift(&out, rng.random_range(-MAX_SHIFT..=MAX_SHIFT)),
            AugmentKind::Rotate => {
                let axis: [f64; 3] = UnitSphere.sample(&mut rng);
                let max = MAX_ROTATION_DEG.to_radians();
                rotate(&out, axis, rng.random_range(-max..=max))
            }
        };
    }
    (out, kinds)
}
