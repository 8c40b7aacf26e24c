//! Frame features and the toy consistency and Fréchet metrics.

use crate::error::{Error, Result};
use crate::numerics::{stream, Array, Rng};

pub const FEATURE_GRID: usize = 8;
pub const FEATURE_DIM: usize = FEATURE_GRID * FEATURE_GRID;

/// Seeded orthogonal projection of an 8×8 grayscale thumbnail.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    /// Row-major `[FEATURE_DIM, FEATURE_DIM]`, orthonormal rows.
    projection: Vec<f64>,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::new(0)
    }
}

impl FeatureExtractor {
    pub fn new(seed: u64) -> Self {
        let mut rng = Rng::new(seed, stream::FEATURES);
        let mut p: Vec<f64> = (0..FEATURE_DIM * FEATURE_DIM).map(|_| rng.normal()).collect();
        // modified Gram-Schmidt over rows
        for i in 0..FEATURE_DIM {
            for j in 0..i {
                let dot: f64 = (0..FEATURE_DIM)
                    .map(|c| p[i * FEATURE_DIM + c] * p[j * FEATURE_DIM + c])
                    .sum();
                for c in 0..FEATURE_DIM {
                    p[i * FEATURE_DIM + c] -= dot * p[j * FEATURE_DIM + c];
                }
            }
            let norm = p[i * FEATURE_DIM..(i + 1) * FEATURE_DIM]
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            for x in &mut p[i * FEATURE_DIM..(i + 1) * FEATURE_DIM] {
                *x /= norm;
            }
        }
        Self { projection: p }
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    /// Unit-norm feature of one thumbnail. An all-zero thumbnail maps to zero.
    pub fn project(&self, thumb: &[f64]) -> Vec<f64> {
        let mut f: Vec<f64> = self
            .projection
            .chunks_exact(FEATURE_DIM)
            .map(|row| row.iter().zip(thumb).map(|(a, b)| a * b).sum())
            .collect();
        let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut f {
                *x /= norm;
            }
        }
        f
    }

    /// One feature per frame of a `[C, M, H, W]` video.
    pub fn video_features(&self, video: &Array) -> Result<Vec<Vec<f64>>> {
        Ok(thumbnails(video)?.iter().map(|t| self.project(t)).collect())
    }
}

/// 8×8 area-averaged grayscale thumbnails of every frame. Three-channel
/// videos use Rec. 601 luma, others the channel mean.
pub fn thumbnails(video: &Array) -> Result<Vec<Vec<f64>>> {
    if video.ndim() != 4 {
        return Err(Error::dim(format!("expected a [C, M, H, W] video, got {:?}", video.shape())));
    }
    let (c, m, h, w) = (video.shape()[0], video.shape()[1], video.shape()[2], video.shape()[3]);
    if h < FEATURE_GRID || w < FEATURE_GRID {
        return Err(Error::dim(format!(
            "frames must be at least {FEATURE_GRID}x{FEATURE_GRID}, got {h}x{w}"
        )));
    }
    let weights: Vec<f64> = if c == 3 {
        vec![0.299, 0.587, 0.114]
    } else {
        vec![1.0 / c as f64; c]
    };
    let mut out = Vec::with_capacity(m);
    for f in 0..m {
        let mut gray = vec![0.0f64; h * w];
        for (ch, &cw) in weights.iter().enumerate() {
            for (g, &v) in gray.iter_mut().zip(video.frame_plane(ch, f)) {
                *g += cw * v as f64;
            }
        }
        let mut thumb = vec![0.0f64; FEATURE_DIM];
        for by in 0..FEATURE_GRID {
            let (y0, y1) = (by * h / FEATURE_GRID, (by + 1) * h / FEATURE_GRID);
            for bx in 0..FEATURE_GRID {
                let (x0, x1) = (bx * w / FEATURE_GRID, (bx + 1) * w / FEATURE_GRID);
                let mut sum = 0.0;
                for y in y0..y1 {
                    sum += gray[y * w + x0..y * w + x1].iter().sum::<f64>();
                }
                thumb[by * FEATURE_GRID + bx] = sum / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
        out.push(thumb);
    }
    Ok(out)
}

/// Cosine similarity; identical vectors give exactly 1.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Mean cosine similarity of adjacent frame features.
pub fn consistency_sim(video: &Array) -> Result<f64> {
    consistency_sim_with(&FeatureExtractor::default(), video)
}

pub fn consistency_sim_with(extractor: &FeatureExtractor, video: &Array) -> Result<f64> {
    if video.ndim() != 4 || video.shape()[1] < 2 {
        return Err(Error::Input(format!(
            "consistency needs a video with at least 2 frames, got shape {:?}",
            video.shape()
        )));
    }
    let feats = extractor.video_features(video)?;
    let mut sims: Vec<f64> = feats.windows(2).map(|p| cosine(&p[0], &p[1])).collect();
    // sorted summation keeps the mean independent of traversal direction
    sims.sort_by(f64::total_cmp);
    Ok(sims.iter().sum::<f64>() / sims.len() as f64)
}

/// Squared Fréchet distance between diagonal Gaussians fitted to the pooled
/// per-frame features of two video sets.
pub fn frechet_feature_distance(set_a: &[Array], set_b: &[Array]) -> Result<f64> {
    let extractor = FeatureExtractor::default();
    let pool = |set: &[Array], name: &str| -> Result<Vec<Vec<f64>>> {
        if set.len() < 2 {
            return Err(Error::Input(format!(
                "set {name} needs at least 2 videos, got {}",
                set.len()
            )));
        }
        let mut all = Vec::new();
        for v in set {
            all.extend(extractor.video_features(v)?);
        }
        Ok(all)
    };
    frechet_from_features(&pool(set_a, "A")?, &pool(set_b, "B")?)
}

/// Diagonal Fréchet distance on raw feature vectors (population variance).
pub fn frechet_from_features(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (ma, va) = moments(a)?;
    let (mb, vb) = moments(b)?;
    if ma.len() != mb.len() {
        return Err(Error::dim("feature sets differ in dimension"));
    }
    let mut d2 = 0.0;
    for i in 0..ma.len() {
        let dm = ma[i] - mb[i];
        let ds = va[i].sqrt() - vb[i].sqrt();
        d2 += dm * dm + ds * ds;
    }
    Ok(d2)
}

fn moments(xs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = xs.first().ok_or_else(|| Error::Input("empty feature set".into()))?;
    let dim = first.len();
    if xs.iter().any(|x| x.len() != dim) {
        return Err(Error::dim("features differ in dimension"));
    }
    let n = xs.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|i| xs.iter().map(|x| x[i]).sum::<f64>() / n).collect();
    let var = (0..dim)
        .map(|i| xs.iter().map(|x| (x[i] - mean[i]).powi(2)).sum::<f64>() / n)
        .collect();
    Ok((mean, var))
}
