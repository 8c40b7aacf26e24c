//! The `FNV1` video container and binary PPM frame export.
//!
//! ```text
//! "FNV1"
//! u32 frames, channels, height, width   (little-endian)
//! f32 payload, frame-major, then channel, then row-major pixels
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::Array;

pub const VIDEO_MAGIC: &[u8; 4] = b"FNV1";
const HEADER_LEN: usize = 20;

/// Serializes a `[C, M, H, W]` video.
pub fn encode_container(video: &Array) -> Result<Vec<u8>> {
    if video.ndim() != 4 || video.is_empty() {
        return Err(Error::dim(format!(
            "container needs a non-empty [C, M, H, W] video, got {:?}",
            video.shape()
        )));
    }
    let (c, m, h, w) = (video.shape()[0], video.shape()[1], video.shape()[2], video.shape()[3]);
    let mut out = Vec::with_capacity(HEADER_LEN + video.len() * 4);
    out.extend_from_slice(VIDEO_MAGIC);
    for v in [m, c, h, w] {
        let v = u32::try_from(v).map_err(|_| Error::dim("dimension exceeds u32"))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for f in 0..m {
        for ch in 0..c {
            for &x in video.frame_plane(ch, f) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_container(bytes: &[u8]) -> Result<Array> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated header, need {HEADER_LEN} bytes"),
        });
    }
    if &bytes[..4] != VIDEO_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected FNV1".into(),
        });
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (m, c, h, w) = (field(0), field(1), field(2), field(3));
    for (i, (name, v)) in [("frames", m), ("channels", c), ("height", h), ("width", w)].iter().enumerate() {
        if *v == 0 {
            return Err(Error::Format {
                offset: 4 + 4 * i as u64,
                message: format!("{name} must be non-zero"),
            });
        }
    }
    let count = m
        .checked_mul(c)
        .and_then(|x| x.checked_mul(h))
        .and_then(|x| x.checked_mul(w))
        .filter(|&n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::Format {
            offset: 4,
            message: "header dimensions overflow".into(),
        })?;
    let expected = HEADER_LEN as u64 + count as u64 * 4;
    if (bytes.len() as u64) < expected {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated payload, expected {expected} bytes in total"),
        });
    }
    if bytes.len() as u64 > expected {
        return Err(Error::Format {
            offset: expected,
            message: "trailing bytes after payload".into(),
        });
    }
    let plane = h * w;
    let mut data = vec![0f32; count];
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        // file order is (frame, channel, pixel); memory order is (channel, frame, pixel)
        let (f, rest) = (i / (c * plane), i % (c * plane));
        let (ch, p) = (rest / plane, rest % plane);
        data[(ch * m + f) * plane + p] = f32::from_le_bytes(chunk.try_into().unwrap());
    }
    Array::from_vec(&[c, m, h, w], data)
}

pub fn write_container(video: &Array, path: &Path) -> Result<()> {
    fs::write(path, encode_container(video)?)?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<Array> {
    decode_container(&fs::read(path)?)
}

/// Writes one binary PPM per frame of a 3-channel video, using a single
/// min-max range for the whole video. Returns the written paths.
pub fn export_frames(video: &Array, dir: &Path) -> Result<Vec<PathBuf>> {
    if video.ndim() != 4 || video.shape()[0] != 3 {
        return Err(Error::dim(format!(
            "frame export needs a [3, M, H, W] video, got {:?}",
            video.shape()
        )));
    }
    let (m, h, w) = (video.shape()[1], video.shape()[2], video.shape()[3]);
    let lo = video.data().iter().copied().fold(f32::INFINITY, f32::min);
    let hi = video.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let range = hi - lo;
    let to_byte = |x: f32| -> u8 {
        let v = if range > 0.0 { (x - lo) / range } else { 0.0 };
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    };
    fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(m);
    for f in 0..m {
        let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
        let planes = [video.frame_plane(0, f), video.frame_plane(1, f), video.frame_plane(2, f)];
        for p in 0..h * w {
            bytes.extend(planes.iter().map(|pl| to_byte(pl[p])));
        }
        let path = dir.join(format!("frame_{f:04}.ppm"));
        fs::write(&path, bytes)?;
        paths.push(path);
    }
    Ok(paths)
}
