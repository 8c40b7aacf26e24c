//! A small seeded video U-Net with the VideoLDM block layout.
//!
//! Every resolution level is a stack of
//! `TT(ST(Tconv(Conv(h, t)), y))`: a residual conv block conditioned on the
//! timestep, a temporal conv, a frame-wise spatial transformer with text
//! cross-attention, and a temporal transformer. The weights are random and
//! untrained. Temporal attention carries no positional encoding, so without
//! temporal convs the network is exactly equivariant to frame permutations.

mod attention;
mod blocks;
pub mod codec;
mod text;
mod weights;

use std::path::Path;

pub use codec::{decode, decode_video, encode, encode_video};
pub use text::{embed_prompt, PromptEmbedding};
pub use weights::{ModelWeights, Param, ParamId, WEIGHT_MAGIC};

use blocks::{Conv2d, Linear, Norm, ResBlock, SpatialTransformer, TemporalConv, TemporalTransformer};
use weights::WeightBuilder;

use crate::error::{Error, Result};
use crate::numerics::{silu, Array, Exec};
use crate::sampler::WindowPlan;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub latent_channels: usize,
    pub hidden_channels: usize,
    /// Stages per resolution level.
    pub num_blocks: usize,
    /// Number of down plus up levels; must be even. `2` is one down level, a
    /// middle stage at half resolution, and one up level.
    pub levels: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub text_dim: usize,
    pub text_tokens: usize,
    pub weight_seed: u64,
    /// When false every temporal convolution is replaced by the identity.
    pub temporal_conv: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_channels: codec::LATENT_CHANNELS,
            hidden_channels: 32,
            num_blocks: 1,
            levels: 2,
            heads: 2,
            head_dim: 16,
            text_dim: 32,
            text_tokens: 8,
            weight_seed: 0,
            temporal_conv: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("latent_channels", self.latent_channels),
            ("hidden_channels", self.hidden_channels),
            ("num_blocks", self.num_blocks),
            ("levels", self.levels),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("text_dim", self.text_dim),
            ("text_tokens", self.text_tokens),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if self.levels % 2 != 0 {
            return Err(Error::config("levels", "must be even (down and up levels pair up)"));
        }
        Ok(())
    }

    pub fn attention_width(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Number of down-sampling steps.
    pub fn depth(&self) -> usize {
        self.levels / 2
    }

    pub fn cross_attention_layers(&self) -> usize {
        2 * self.depth() * self.num_blocks + 1
    }

    /// Index of the last encoder-side cross-attention layer (the middle
    /// stage). Layers with a larger index form the decoder.
    pub fn last_encoder_layer(&self) -> usize {
        self.depth() * self.num_blocks
    }

    /// Spatial extents of a latent must be divisible by this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth()
    }
}

/// Scope of temporal self-attention.
#[derive(Clone, Debug, PartialEq)]
pub enum AttentionMode {
    /// Every frame attends to every frame.
    Global,
    /// Attention inside each window of the plan, fused by center distance.
    Windowed(WindowPlan),
}

/// Supplies the text embedding for every cross-attention call.
pub trait CondSource {
    fn condition(&mut self, t: usize, layer: usize, frame: usize) -> &PromptEmbedding;
}

impl CondSource for PromptEmbedding {
    fn condition(&mut self, _t: usize, _layer: usize, _frame: usize) -> &PromptEmbedding {
        self
    }
}

/// Shifts frame indices, so a sub-segment of a video sees the conditioning
/// of its absolute frames.
pub struct FrameOffset<'a> {
    pub inner: &'a mut dyn CondSource,
    pub offset: usize,
}

impl CondSource for FrameOffset<'_> {
    fn condition(&mut self, t: usize, layer: usize, frame: usize) -> &PromptEmbedding {
        self.inner.condition(t, layer, frame + self.offset)
    }
}

/// Exact counters collected during forward passes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PassStats {
    pub unet_passes: u64,
    pub temporal_attention_layers: u64,
    /// Query-key pairs per spatial site, summed over temporal attention layers.
    pub temporal_attention_pairs: u64,
    /// Largest frame count fed to a single pass.
    pub peak_frames: usize,
}

impl PassStats {
    pub fn merge(&mut self, other: &PassStats) {
        self.unet_passes += other.unet_passes;
        self.temporal_attention_layers += other.temporal_attention_layers;
        self.temporal_attention_pairs += other.temporal_attention_pairs;
        self.peak_frames = self.peak_frames.max(other.peak_frames);
    }
}

struct Stage {
    res: ResBlock,
    tconv: TemporalConv,
    st: SpatialTransformer,
    tt: TemporalTransformer,
}

impl Stage {
    fn new(b: &mut WeightBuilder, name: &str, cfg: &ModelConfig, inp: usize, cross_layer: usize) -> Self {
        let c = cfg.hidden_channels;
        Self {
            res: ResBlock::new(b, &format!("{name}.res"), inp, c, c),
            tconv: TemporalConv::new(b, &format!("{name}.tconv"), c),
            st: SpatialTransformer::new(
                b,
                &format!("{name}.st"),
                c,
                cfg.heads,
                cfg.head_dim,
                cfg.text_dim,
                cross_layer,
            ),
            tt: TemporalTransformer::new(b, &format!("{name}.tt"), c, cfg.heads, cfg.head_dim),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn forward(
        &self,
        model: &ToyVideoLdm,
        h: &Array,
        temb: &Array,
        t: usize,
        cond: &mut dyn CondSource,
        mode: &AttentionMode,
        stats: &mut PassStats,
    ) -> Result<Array> {
        let w = &model.weights;
        let exec = model.exec;
        let mut h = self.res.forward(w, h, temb, exec)?;
        if model.config.temporal_conv {
            h = self.tconv.forward(w, &h)?;
        }
        let h = self.st.forward(w, &h, t, cond, exec)?;
        self.tt.forward(w, &h, mode, stats, exec)
    }
}

struct Arch {
    conv_in: Conv2d,
    time_in: Linear,
    time_out: Linear,
    down: Vec<Vec<Stage>>,
    mid: Stage,
    up: Vec<Vec<Stage>>,
    out_norm: Norm,
    conv_out: Conv2d,
}

impl Arch {
    fn build(cfg: &ModelConfig, b: &mut WeightBuilder) -> Self {
        let c = cfg.hidden_channels;
        let conv_in = Conv2d::new(b, "conv_in", cfg.latent_channels, c, 1.0);
        let time_in = Linear::new(b, "time.in", c, c);
        let time_out = Linear::new(b, "time.out", c, c);
        let mut layer = 0;
        let mut down = Vec::new();
        for d in 0..cfg.depth() {
            let stages = (0..cfg.num_blocks)
                .map(|s| {
                    let st = Stage::new(b, &format!("down{d}.{s}"), cfg, c, layer);
                    layer += 1;
                    st
                })
                .collect();
            down.push(stages);
        }
        let mid = Stage::new(b, "mid", cfg, c, layer);
        layer += 1;
        let mut up = Vec::new();
        for u in 0..cfg.depth() {
            let stages = (0..cfg.num_blocks)
                .map(|s| {
                    // the first stage of an up level takes the concatenated skip
                    let inp = if s == 0 { 2 * c } else { c };
                    let st = Stage::new(b, &format!("up{u}.{s}"), cfg, inp, layer);
                    layer += 1;
                    st
                })
                .collect();
            up.push(stages);
        }
        let out_norm = Norm::new(b, "out.norm", c);
        let conv_out = Conv2d::new(b, "conv_out", c, cfg.latent_channels, 1.0);
        Self {
            conv_in,
            time_in,
            time_out,
            down,
            mid,
            up,
            out_norm,
            conv_out,
        }
    }
}

/// The noise-prediction network.
pub struct ToyVideoLdm {
    config: ModelConfig,
    weights: ModelWeights,
    arch: Arch,
    exec: Exec,
}

impl ToyVideoLdm {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut b = WeightBuilder::new(config.weight_seed);
        let arch = Arch::build(&config, &mut b);
        let weights = b.finish();
        if !weights.all_finite() {
            return Err(Error::Model("non-finite initial weights".into()));
        }
        Ok(Self {
            config,
            weights,
            arch,
            exec: Exec::SERIAL,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut ModelWeights {
        &mut self.weights
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn set_exec(&mut self, exec: Exec) {
        self.exec = exec;
    }

    /// Toggles the temporal convolutions without touching the weights.
    pub fn set_temporal_conv(&mut self, enabled: bool) {
        self.config.temporal_conv = enabled;
    }

    /// Sinusoidal features of `t` passed through the two-layer time MLP.
    pub fn time_embedding(&self, t: usize) -> Result<Array> {
        let dim = self.config.hidden_channels;
        let half = dim / 2;
        let mut feats = vec![0.0f32; dim];
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
            let arg = t as f64 * freq;
            feats[i] = arg.sin() as f32;
            feats[half + i] = arg.cos() as f32;
        }
        let x = Array::from_vec(&[1, dim], feats)?;
        let x = silu(&self.arch.time_in.apply(&self.weights, &x)?);
        let x = self.arch.time_out.apply(&self.weights, &x)?;
        x.reshape(&[dim])
    }

    /// Predicts the noise in `z_t` (`[C, M, H, W]`) at timestep `t`.
    pub fn predict_noise(
        &self,
        z: &Array,
        t: usize,
        cond: &mut dyn CondSource,
        mode: &AttentionMode,
        stats: &mut PassStats,
    ) -> Result<Array> {
        let cfg = &self.config;
        if z.ndim() != 4 || z.shape()[0] != cfg.latent_channels {
            return Err(Error::dim(format!(
                "expected a [{}, M, H, W] latent, got {:?}",
                cfg.latent_channels,
                z.shape()
            )));
        }
        let mult = cfg.spatial_multiple();
        if z.shape()[2] % mult != 0 || z.shape()[3] % mult != 0 {
            return Err(Error::dim(format!(
                "latent height and width must be multiples of {mult}, got {:?}",
                z.shape()
            )));
        }
        if let AttentionMode::Windowed(plan) = mode {
            if plan.total != z.frames() {
                return Err(Error::dim(format!(
                    "window plan covers {} frames, latent has {}",
                    plan.total,
                    z.frames()
                )));
            }
        }

        let w = &self.weights;
        let temb = silu(&self.time_embedding(t)?.reshape(&[1, cfg.hidden_channels])?);
        let mut h = self.arch.conv_in.apply(w, z, self.exec)?;
        let mut skips = Vec::with_capacity(cfg.depth());
        for level in &self.arch.down {
            for stage in level {
                h = stage.forward(self, &h, &temb, t, cond, mode, stats)?;
            }
            skips.push(h.clone());
            h = avg_pool2(&h);
        }
        h = self.arch.mid.forward(self, &h, &temb, t, cond, mode, stats)?;
        for level in &self.arch.up {
            let skip = skips.pop().expect("one skip per level");
            h = concat_channels(&upsample2(&h), &skip)?;
            for stage in level {
                h = stage.forward(self, &h, &temb, t, cond, mode, stats)?;
            }
        }
        let h = silu(&self.arch.out_norm.apply(w, &h)?);
        let eps = self.arch.conv_out.apply(w, &h, self.exec)?;

        stats.unet_passes += 1;
        stats.peak_frames = stats.peak_frames.max(z.frames());
        if !eps.all_finite() {
            return Err(Error::Model(format!("non-finite noise prediction at t={t}")));
        }
        Ok(eps)
    }

    /// Rebuilds a model from a weight file written by [`ToyVideoLdm::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (config, values) = weights::decode_weight_file(bytes)?;
        let mut model = Self::new(config)?;
        model.weights.fill_from(&values)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        weights::encode_weight_file(&self.config, &self.weights)
    }
}

fn avg_pool2(x: &Array) -> Array {
    let s = x.shape();
    let (c, m, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h / 2, w / 2);
    let src = x.data();
    let mut out = Vec::with_capacity(c * m * oh * ow);
    for plane in src.chunks(h * w) {
        for y in 0..oh {
            for xx in 0..ow {
                let i = 2 * y * w + 2 * xx;
                out.push((plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) * 0.25);
            }
        }
    }
    Array::from_vec(&[c, m, oh, ow], out).expect("pooled shape")
}

fn upsample2(x: &Array) -> Array {
    let s = x.shape();
    let (c, m, h, w) = (s[0], s[1], s[2], s[3]);
    let mut out = Vec::with_capacity(x.len() * 4);
    for plane in x.data().chunks(h * w) {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                out.push(plane[(y / 2) * w + xx / 2]);
            }
        }
    }
    Array::from_vec(&[c, m, 2 * h, 2 * w], out).expect("upsampled shape")
}

fn concat_channels(a: &Array, b: &Array) -> Result<Array> {
    if a.shape()[1..] != b.shape()[1..] {
        return Err(Error::dim(format!(
            "cannot concatenate {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    let mut shape = a.shape().to_vec();
    shape[0] += b.shape()[0];
    Array::from_vec(&shape, data)
}
