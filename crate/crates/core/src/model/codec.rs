//! Exactly invertible toy latent codec: 2x2 space-to-depth.
//!
//! An RGB image `[3, H, W]` becomes a `[12, H/2, W/2]` latent where channel
//! `4c + 2dy + dx` holds pixel `(2y + dy, 2x + dx)` of colour channel `c`.

use crate::error::{Error, Result};
use crate::numerics::Array;

pub const LATENT_CHANNELS: usize = 12;

pub fn encode(rgb: &Array) -> Result<Array> {
    if rgb.ndim() != 3 || rgb.shape()[0] != 3 {
        return Err(Error::dim(format!("expected [3, H, W], got {:?}", rgb.shape())));
    }
    let video = rgb.clone().reshape(&[3, 1, rgb.shape()[1], rgb.shape()[2]])?;
    let z = encode_video(&video)?;
    let s = z.shape().to_vec();
    z.reshape(&[s[0], s[2], s[3]])
}

pub fn decode(z: &Array) -> Result<Array> {
    if z.ndim() != 3 || z.shape()[0] != LATENT_CHANNELS {
        return Err(Error::dim(format!("expected [12, h, w], got {:?}", z.shape())));
    }
    let video = z.clone().reshape(&[LATENT_CHANNELS, 1, z.shape()[1], z.shape()[2]])?;
    let x = decode_video(&video)?;
    let s = x.shape().to_vec();
    x.reshape(&[s[0], s[2], s[3]])
}

/// Frame-wise [`encode`] of a `[3, M, H, W]` video.
pub fn encode_video(rgb: &Array) -> Result<Array> {
    let s = rgb.shape();
    if rgb.ndim() != 4 || s[0] != 3 {
        return Err(Error::dim(format!("expected [3, M, H, W], got {s:?}")));
    }
    let (m, h, w) = (s[1], s[2], s[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!("height and width must be even, got {h}x{w}")));
    }
    let (lh, lw) = (h / 2, w / 2);
    let src = rgb.data();
    let mut out = vec![0.0f32; src.len()];
    for c in 0..3 {
        for f in 0..m {
            for y in 0..h {
                for x in 0..w {
                    let lc = 4 * c + 2 * (y % 2) + x % 2;
                    out[((lc * m + f) * lh + y / 2) * lw + x / 2] = src[((c * m + f) * h + y) * w + x];
                }
            }
        }
    }
    Array::from_vec(&[LATENT_CHANNELS, m, lh, lw], out)
}

/// Frame-wise [`decode`] of a `[12, M, h, w]` latent video.
pub fn decode_video(z: &Array) -> Result<Array> {
    let s = z.shape();
    if z.ndim() != 4 || s[0] != LATENT_CHANNELS {
        return Err(Error::dim(format!("expected [12, M, h, w], got {s:?}")));
    }
    let (m, lh, lw) = (s[1], s[2], s[3]);
    let (h, w) = (lh * 2, lw * 2);
    let src = z.data();
    let mut out = vec![0.0f32; src.len()];
    for c in 0..3 {
        for f in 0..m {
            for y in 0..h {
                for x in 0..w {
                    let lc = 4 * c + 2 * (y % 2) + x % 2;
                    out[((c * m + f) * h + y) * w + x] = src[((lc * m + f) * lh + y / 2) * lw + x / 2];
                }
            }
        }
    }
    Array::from_vec(&[3, m, h, w], out)
}
