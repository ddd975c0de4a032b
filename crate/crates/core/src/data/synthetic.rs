//! Small labelled datasets whose classes differ only in how far apart in
//! time two joint groups move.
//!
//! Joints are split into a lower and an upper half. Every joint jitters
//! smoothly around a rest pose, and each half performs one brief swing (a
//! raised-cosine displacement along a random direction per joint). Class `k`
//! fixes the gap between the two swings. Time is treated as circular: the
//! first swing starts at a uniformly random frame, the second follows after
//! the gap modulo the sequence length, and a swing running past the last frame
//! continues from frame 0. Which half swings first is random. Each swing on
//! its own is therefore distributed identically for every class.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::sequence::{CaptureInfo, SkeletonSequence};

const SWING_FRAMES: usize = 4;
const SWING_AMP: f64 = 1.0;
const JITTER_AMP: f64 = 0.15;
const JITTER_FREQ: (f64, f64) = (0.05, 0.2);
const NOISE: f64 = 0.03;
const MIN_GAP: usize = 2;

/// Frames between the two swings for class `k` of `num_classes` in a sequence
/// of `t_raw` frames. Gaps are spread evenly over `2..=t_raw/2`; they are
/// distinct whenever that range holds at least `num_classes` values.
pub fn class_gap(k: usize, num_classes: usize, t_raw: usize) -> usize {
    let top = (t_raw / 2).max(MIN_GAP);
    if num_classes <= 1 {
        return MIN_GAP;
    }
    let span = (top - MIN_GAP) as f64;
    MIN_GAP + ((k as f64 * span / (num_classes - 1) as f64).round() as usize).min(top - MIN_GAP)
}

fn swing(t: usize, start: usize, t_raw: usize) -> f64 {
    let u = ((t + t_raw - start % t_raw) % t_raw) as f64 / SWING_FRAMES as f64;
    if u <= 1.0 {
        SWING_AMP * 0.5 * (1.0 - (2.0 * PI * u).cos())
    } else {
        0.0
    }
}

/// `samples_per_class` single-person sequences per class, ordered sample-major
/// (`label = index % num_classes`).
pub fn make_synthetic_dataset(
    num_classes: usize,
    samples_per_class: usize,
    t_raw: usize,
    v0: usize,
    seed: u64,
) -> Vec<SkeletonSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NOISE).expect("valid sigma");
    let half = v0.div_ceil(2);
    let mut out = Vec::with_capacity(num_classes * samples_per_class);
    for i in 0..samples_per_class {
        for k in 0..num_classes {
            let idx = out.len();
            let gap = class_gap(k, num_classes, t_raw);
            let first = rng.random_range(0..t_raw);
            let (lower_at, upper_at) = if rng.random_bool(0.5) {
                (first, first + gap)
            } else {
                (first + gap, first)
            };
            let mut seq = SkeletonSequence::zeros(t_raw, v0, 1, k).expect("non-empty");
            for v in 0..v0 {
                let start = if v < half { lower_at } else { upper_at };
                let dir = unit_vector(&mut rng);
                let jitter: [(f64, f64); 3] = std::array::from_fn(|_| {
                    let f = rng.random_range(JITTER_FREQ.0..JITTER_FREQ.1);
                    (2.0 * PI * f, rng.random_range(0.0..2.0 * PI))
                });
                let rest = [0.1 * v as f64, 0.0, 0.05 * (v % 3) as f64];
                for t in 0..t_raw {
                    let s = swing(t, start, t_raw);
                    let p: [f64; 3] = std::array::from_fn(|a| {
                        let (w, ph) = jitter[a];
                        rest[a] + s * dir[a] + JITTER_AMP * (w * t as f64 + ph).sin() + noise.sample(&mut rng)
                    });
                    seq.set_joint(t, v, 0, p);
                }
            }
            out.push(seq.with_info(CaptureInfo {
                subject_id: (i % 40) as u32 + 1,
                camera_id: (idx % 3) as u32 + 1,
                setup_id: (i % 32) as u32 + 1,
            }));
        }
    }
    out
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let g = Normal::new(0.0, 1.0).expect("valid sigma");
    loop {
        let d: [f64; 3] = std::array::from_fn(|_| g.sample(rng));
        let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return d.map(|x| x / n);
        }
    }
}
