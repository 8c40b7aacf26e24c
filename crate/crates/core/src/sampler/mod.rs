//! Denoising loop with classifier-free guidance and the long-video modes.

mod schedule;
mod windows;

use std::fmt;
use std::str::FromStr;

pub use schedule::{
    cfg_combine, ddim_step, make_diffusion_schedule, q_sample, DiffusionSchedule,
    DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_DDIM_STEPS, DEFAULT_TRAIN_STEPS,
};
pub use windows::{fuse_windows, plan_windows, FrameWeight, Window, WindowPlan};

use crate::error::{Error, Result};
use crate::model::{AttentionMode, CondSource, FrameOffset, PassStats, PromptEmbedding, ToyVideoLdm};
use crate::motion_injection::{ConditionResolver, PromptTimeline, RoutingRecord};
use crate::noise_schedule::{build_shuffle_plan, materialize_noise, BaseNoise};
use crate::numerics::{rng_normal, stream, Array, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SamplingMode {
    /// One pass over all frames with global temporal attention.
    Direct,
    /// i.i.d. noise with window-fused temporal attention.
    Sliding,
    /// Independent overlapping segments, predictions averaged.
    GenL,
    /// Rescheduled noise with window-fused temporal attention.
    FreeNoise,
}

impl SamplingMode {
    pub const ALL: [SamplingMode; 4] = [Self::Direct, Self::Sliding, Self::GenL, Self::FreeNoise];

    pub fn name(self) -> &'static str {
        match self {
            Self::Direct => "direct",
            Self::Sliding => "sliding",
            Self::GenL => "genl",
            Self::FreeNoise => "freenoise",
        }
    }
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                Error::config("mode", format!("unknown mode '{s}' (direct, sliding, genl, freenoise)"))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub mode: SamplingMode,
    /// Frames the model was trained on; also the attention window.
    pub n_train: usize,
    pub total_frames: usize,
    /// Shuffle unit and window stride.
    pub unit: usize,
    pub guidance: f32,
    pub seed: u64,
    /// Segment stride for GenL.
    pub genl_stride: usize,
    /// Sliding mode with non-overlapping windows instead of stride `unit`.
    pub sliding_disjoint: bool,
    pub latent_height: usize,
    pub latent_width: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            mode: SamplingMode::FreeNoise,
            n_train: 16,
            total_frames: 64,
            unit: 4,
            guidance: 15.0,
            seed: 0,
            genl_stride: 4,
            sliding_disjoint: false,
            latent_height: 8,
            latent_width: 8,
        }
    }
}

impl SamplerConfig {
    /// Stride between windows or segments for the configured mode.
    pub fn stride(&self) -> usize {
        match self.mode {
            SamplingMode::Direct => self.total_frames,
            SamplingMode::Sliding if self.sliding_disjoint => self.n_train,
            SamplingMode::Sliding | SamplingMode::FreeNoise => self.unit,
            SamplingMode::GenL => self.genl_stride,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_frames == 0 {
            return Err(Error::config("frames", "must be at least 1"));
        }
        if self.latent_height == 0 || self.latent_width == 0 {
            return Err(Error::config("latent_size", "must be at least 1"));
        }
        if !self.guidance.is_finite() {
            return Err(Error::config("guidance", "must be finite"));
        }
        if self.mode == SamplingMode::Direct {
            return Ok(());
        }
        if self.n_train == 0 {
            return Err(Error::config("n_train", "must be at least 1"));
        }
        if self.unit == 0 || self.n_train % self.unit != 0 {
            return Err(Error::config(
                "unit",
                format!("unit {} must divide n_train {}", self.unit, self.n_train),
            ));
        }
        if self.total_frames < self.n_train {
            return Err(Error::config(
                "frames",
                format!(
                    "{} mode needs at least n_train = {} frames, got {}",
                    self.mode, self.n_train, self.total_frames
                ),
            ));
        }
        let stride = self.stride();
        if stride == 0 {
            return Err(Error::config("genl_stride", "must be at least 1"));
        }
        if (self.total_frames - self.n_train) % stride != 0 {
            return Err(Error::config(
                "frames",
                format!(
                    "alignment constraint violated: (frames {} - window {}) is not a multiple of stride {}",
                    self.total_frames, self.n_train, stride
                ),
            ));
        }
        Ok(())
    }

    pub fn attention_mode(&self) -> Result<AttentionMode> {
        Ok(match self.mode {
            SamplingMode::Direct | SamplingMode::GenL => AttentionMode::Global,
            SamplingMode::Sliding | SamplingMode::FreeNoise => {
                AttentionMode::Windowed(plan_windows(self.total_frames, self.n_train, self.stride())?)
            }
        })
    }

    /// Start frames of the GenL segments.
    pub fn segment_starts(&self) -> Vec<usize> {
        (0..=self.total_frames - self.n_train)
            .step_by(self.genl_stride.max(1))
            .collect()
    }
}

/// Initial latent noise for the configured mode, `[channels, M, H, W]`.
pub fn initial_noise(config: &SamplerConfig, channels: usize) -> Result<Array> {
    config.validate()?;
    let (h, w) = (config.latent_height, config.latent_width);
    match config.mode {
        SamplingMode::FreeNoise => {
            let base = BaseNoise::sample(config.seed, channels, config.n_train, h, w);
            let plan = build_shuffle_plan(config.n_train, config.unit, config.total_frames, config.seed)?;
            materialize_noise(&plan, &base)
        }
        _ => Ok(rng_normal(
            &mut Rng::new(config.seed, stream::NOISE),
            &[channels, config.total_frames, h, w],
        )),
    }
}

#[derive(Clone, Debug)]
pub struct SampleOutput {
    /// Denoised latent `[C, M, H, W]`.
    pub latent: Array,
    pub stats: PassStats,
    pub routing: Vec<RoutingRecord>,
}

/// Samples a video latent from the configured mode's initial noise.
pub fn sample_video(
    config: &SamplerConfig,
    timeline: &PromptTimeline,
    model: &ToyVideoLdm,
    schedule: &DiffusionSchedule,
) -> Result<SampleOutput> {
    let noise = initial_noise(config, model.config().latent_channels)?;
    sample_from_noise(config, timeline, model, schedule, noise)
}

/// Runs the denoising loop from a given `x_T`.
pub fn sample_from_noise(
    config: &SamplerConfig,
    timeline: &PromptTimeline,
    model: &ToyVideoLdm,
    schedule: &DiffusionSchedule,
    noise: Array,
) -> Result<SampleOutput> {
    config.validate()?;
    let mc = model.config();
    let expected = [mc.latent_channels, config.total_frames, config.latent_height, config.latent_width];
    noise.expect_shape(&expected)?;
    if timeline.total_frames != config.total_frames {
        return Err(Error::config(
            "frames",
            format!(
                "prompt timeline covers {} frames, sampler expects {}",
                timeline.total_frames, config.total_frames
            ),
        ));
    }
    let mut resolver =
        ConditionResolver::new(timeline.clone(), schedule.train_steps, mc.cross_attention_layers())?;
    let mut uncond = PromptEmbedding::unconditional(mc.text_tokens, mc.text_dim);
    let attention = config.attention_mode()?;
    let mut stats = PassStats::default();
    let mut x = noise;
    for (step, (t, t_prev)) in schedule.sampling_pairs().into_iter().enumerate() {
        let eps = guided_eps(config, model, &x, t, &mut resolver, &mut uncond, &attention, &mut stats)?;
        let z = (schedule.eta > 0.0).then(|| {
            rng_normal(
                &mut Rng::new(config.seed, stream::indexed(stream::DDIM_ETA, step as u64)),
                x.shape(),
            )
        });
        x = ddim_step(&x, &eps, t, t_prev, schedule, z.as_ref())?;
    }
    Ok(SampleOutput {
        latent: x,
        stats,
        routing: resolver.into_log(),
    })
}

/// Guided noise estimate for one denoising step of the configured mode.
#[allow(clippy::too_many_arguments)]
pub fn guided_eps(
    config: &SamplerConfig,
    model: &ToyVideoLdm,
    x: &Array,
    t: usize,
    cond: &mut dyn CondSource,
    uncond: &mut dyn CondSource,
    attention: &AttentionMode,
    stats: &mut PassStats,
) -> Result<Array> {
    if config.mode == SamplingMode::GenL {
        let segments = genl_segment_eps(config, model, x, t, cond, uncond, stats)?;
        return merge_segments(&segments, config.total_frames);
    }
    let c = model.predict_noise(x, t, cond, attention, stats)?;
    let u = model.predict_noise(x, t, uncond, attention, stats)?;
    cfg_combine(&u, &c, config.guidance)
}

/// Guided predictions of every GenL segment, keyed by start frame.
pub fn genl_segment_eps(
    config: &SamplerConfig,
    model: &ToyVideoLdm,
    x: &Array,
    t: usize,
    cond: &mut dyn CondSource,
    uncond: &mut dyn CondSource,
    stats: &mut PassStats,
) -> Result<Vec<(usize, Array)>> {
    let mut out = Vec::new();
    for start in config.segment_starts() {
        let seg = x.slice_frames(start, config.n_train)?;
        let c = model.predict_noise(
            &seg,
            t,
            &mut FrameOffset { inner: &mut *cond, offset: start },
            &AttentionMode::Global,
            stats,
        )?;
        let u = model.predict_noise(
            &seg,
            t,
            &mut FrameOffset { inner: &mut *uncond, offset: start },
            &AttentionMode::Global,
            stats,
        )?;
        out.push((start, cfg_combine(&u, &c, config.guidance)?));
    }
    Ok(out)
}

/// Averages overlapping segment predictions frame by frame. A frame covered
/// by one segment is copied unchanged.
pub fn merge_segments(segments: &[(usize, Array)], total: usize) -> Result<Array> {
    let first = &segments
        .first()
        .ok_or_else(|| Error::Input("no segments to merge".into()))?
        .1;
    if first.ndim() != 4 {
        return Err(Error::dim(format!("expected [C, U, H, W] segments, got {:?}", first.shape())));
    }
    let (c, h, w) = (first.shape()[0], first.shape()[2], first.shape()[3]);
    let plane = h * w;
    let mut sums = vec![0f32; c * total * plane];
    let mut counts = vec![0u32; total];
    for (start, seg) in segments {
        let len = seg.frames();
        if seg.shape() != [c, len, h, w] || start + len > total {
            return Err(Error::dim(format!(
                "segment at {start} with shape {:?} does not fit {total} frames",
                seg.shape()
            )));
        }
        for f in 0..len {
            counts[start + f] += 1;
        }
        for ch in 0..c {
            for f in 0..len {
                let src = seg.frame_plane(ch, f);
                let dst = &mut sums[(ch * total + start + f) * plane..][..plane];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    }
    if let Some(f) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Input(format!("frame {f} is not covered by any segment")));
    }
    for ch in 0..c {
        for (f, &n) in counts.iter().enumerate() {
            if n > 1 {
                let inv = n as f32;
                for v in &mut sums[(ch * total + f) * plane..][..plane] {
                    *v /= inv;
                }
            }
        }
    }
    Array::from_vec(&[c, total, h, w], sums)
}
