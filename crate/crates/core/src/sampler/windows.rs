//! Overlapping temporal windows and center-distance weighted fusion.

use crate::error::{Error, Result};
use crate::numerics::Array;

#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub start: usize,
    /// `start + (U - 1) / 2`; fractional for even `U`.
    pub center: f64,
    /// Exclusive.
    pub end: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameWeight {
    pub window: usize,
    /// `U/2 - floor(|i - c|)`.
    pub raw: f64,
    /// `raw` divided by the sum of raw weights at this frame.
    pub weight: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowPlan {
    pub total: usize,
    pub window: usize,
    pub stride: usize,
    pub windows: Vec<Window>,
    /// Covering windows of every frame, in ascending window order.
    pub frame_weights: Vec<Vec<FrameWeight>>,
}

impl WindowPlan {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Query-key pairs evaluated per spatial site by one windowed attention layer.
    pub fn attention_pairs(&self) -> u64 {
        self.windows.len() as u64 * (self.window as u64).pow(2)
    }
}

pub fn plan_windows(total: usize, window: usize, stride: usize) -> Result<WindowPlan> {
    if window == 0 {
        return Err(Error::config("window", "window size must be at least 1"));
    }
    if stride == 0 {
        return Err(Error::config("stride", "stride must be at least 1"));
    }
    if total < window {
        return Err(Error::config(
            "frames",
            format!("{total} frames is shorter than the window of {window}"),
        ));
    }
    if (total - window) % stride != 0 {
        return Err(Error::config(
            "frames",
            format!(
                "alignment constraint violated: (frames {total} - window {window}) must be a multiple of stride {stride}"
            ),
        ));
    }
    let half = window as f64 / 2.0;
    let windows: Vec<Window> = (0..=total - window)
        .step_by(stride)
        .map(|start| Window {
            start,
            center: start as f64 + (window as f64 - 1.0) / 2.0,
            end: start + window,
        })
        .collect();
    let mut frame_weights = vec![Vec::new(); total];
    for (j, w) in windows.iter().enumerate() {
        for (i, slot) in frame_weights.iter_mut().enumerate().take(w.end).skip(w.start) {
            let raw = half - (i as f64 - w.center).abs().floor();
            slot.push(FrameWeight {
                window: j,
                raw,
                weight: 0.0,
            });
        }
    }
    for (i, ws) in frame_weights.iter_mut().enumerate() {
        let sum: f64 = ws.iter().map(|w| w.raw).sum();
        if ws.is_empty() || sum <= 0.0 {
            return Err(Error::config(
                "window",
                format!("frame {i} has no positive fusion weight"),
            ));
        }
        for w in ws.iter_mut() {
            w.weight = (w.raw / sum) as f32;
        }
    }
    Ok(WindowPlan {
        total,
        window,
        stride,
        windows,
        frame_weights,
    })
}

/// Weighted fusion of per-window outputs (each `[C, U, H, W]`) into a
/// `[C, M, H, W]` video. Frames covered by a single window are copied.
pub fn fuse_windows(outputs: &[Array], plan: &WindowPlan) -> Result<Array> {
    if outputs.len() != plan.windows.len() {
        return Err(Error::dim(format!(
            "{} window outputs for a plan with {} windows",
            outputs.len(),
            plan.windows.len()
        )));
    }
    let first = &outputs[0];
    if first.ndim() != 4 {
        return Err(Error::dim("window outputs must be [C, U, H, W]"));
    }
    let (c, h, w) = (first.shape()[0], first.shape()[2], first.shape()[3]);
    let want = [c, plan.window, h, w];
    for o in outputs {
        o.expect_shape(&want)?;
    }
    let site = h * w;
    let m = plan.total;
    let mut out = vec![0.0f32; c * m * site];
    for (i, ws) in plan.frame_weights.iter().enumerate() {
        for ch in 0..c {
            let dst = &mut out[(ch * m + i) * site..(ch * m + i + 1) * site];
            if let [only] = ws.as_slice() {
                let local = i - plan.windows[only.window].start;
                dst.copy_from_slice(outputs[only.window].frame_plane(ch, local));
                continue;
            }
            for fw in ws {
                let local = i - plan.windows[fw.window].start;
                let src = outputs[fw.window].frame_plane(ch, local);
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += fw.weight * s;
                }
            }
        }
    }
    Array::from_vec(&[c, m, h, w], out)
}
