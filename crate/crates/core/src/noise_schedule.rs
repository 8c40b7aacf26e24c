//! Rescheduled initial noise for long videos.
//!
//! Only `n_train` frames of noise are sampled. Frame `i >= n_train` reuses base
//! frame `i mod n_train`, and the order is shuffled inside consecutive units of
//! `unit` frames. Because `unit` divides `n_train`, every window of `n_train`
//! frames starting at a multiple of `unit` holds each base frame exactly once.

use crate::error::{Error, Result};
use crate::numerics::{rng_normal, rng_permutation, stream, Array, Rng};

/// Frame-to-base-noise mapping.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShufflePlan {
    pub n_train: usize,
    pub unit: usize,
    pub total: usize,
    pub seed: u64,
    /// `mapping[i]` is the base-noise frame copied into output frame `i`.
    pub mapping: Vec<usize>,
}

/// `n_train` frames of i.i.d. standard normal noise, `[C, n_train, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseNoise {
    pub frames: Array,
}

impl BaseNoise {
    /// Draws from the noise stream of `seed`. For `n_train == total` this is
    /// the same draw as plain i.i.d. noise for the whole video.
    pub fn sample(seed: u64, channels: usize, n_train: usize, height: usize, width: usize) -> Self {
        let mut rng = Rng::new(seed, stream::NOISE);
        Self {
            frames: rng_normal(&mut rng, &[channels, n_train, height, width]),
        }
    }
}

pub fn build_shuffle_plan(
    n_train: usize,
    unit_size: usize,
    total: usize,
    seed: u64,
) -> Result<ShufflePlan> {
    if n_train == 0 {
        return Err(Error::config("n_train", "must be at least 1"));
    }
    if unit_size == 0 || n_train % unit_size != 0 {
        return Err(Error::config(
            "unit",
            format!("shuffle unit {unit_size} must divide n_train {n_train}"),
        ));
    }
    if total < n_train {
        return Err(Error::config(
            "frames",
            format!("total frames {total} is smaller than n_train {n_train}"),
        ));
    }
    let mut mapping: Vec<usize> = (0..n_train).collect();
    let mut start = n_train;
    let mut unit_index = 0u64;
    while start < total {
        let len = unit_size.min(total - start);
        // each unit draws from its own stream so appending frames never
        // reshuffles earlier units
        let mut rng = Rng::new(seed, stream::indexed(stream::SHUFFLE, unit_index));
        let perm = rng_permutation(&mut rng, len);
        mapping.extend(perm.iter().map(|&j| (start + j) % n_train));
        start += len;
        unit_index += 1;
    }
    Ok(ShufflePlan {
        n_train,
        unit: unit_size,
        total,
        seed,
        mapping,
    })
}

/// Expands base noise into the full `[C, total, H, W]` initial latent.
pub fn materialize_noise(plan: &ShufflePlan, base: &BaseNoise) -> Result<Array> {
    if base.frames.ndim() != 4 || base.frames.frames() != plan.n_train {
        return Err(Error::dim(format!(
            "base noise {:?} does not have {} frames",
            base.frames.shape(),
            plan.n_train
        )));
    }
    base.frames.gather_frames(&plan.mapping)
}

/// True iff every window of `window` frames starting at a multiple of
/// `stride` (up to `total - window`) holds each base index exactly once.
pub fn verify_window_coverage(plan: &ShufflePlan, window: usize, stride: usize) -> bool {
    if stride != plan.unit || window != plan.n_train || plan.mapping.len() != plan.total {
        return false;
    }
    let mut seen = vec![0usize; plan.n_train];
    let mut start = 0;
    while start + window <= plan.total {
        seen.fill(0);
        for &b in &plan.mapping[start..start + window] {
            if b >= plan.n_train {
                return false;
            }
            seen[b] += 1;
        }
        if seen.iter().any(|&c| c != 1) {
            return false;
        }
        start += stride;
    }
    true
}
