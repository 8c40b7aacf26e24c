//! Network blocks: residual conv, temporal conv, spatial and temporal transformers.

use super::attention::{cross_attention_frame, spatial_self_attention, temporal_attention};
use super::weights::{Init, ModelWeights, ParamId, WeightBuilder};
use super::{AttentionMode, CondSource, PassStats};
use crate::error::{Error, Result};
use crate::numerics::{
    add_channel_bias, channel_mix, conv_spatial_with, conv_temporal, layer_norm, linear, silu,
    Array, Exec,
};
use crate::sampler::fuse_windows;

/// Gain applied to the last layer of every residual branch.
pub(crate) const RESIDUAL_GAIN: f32 = 0.2;

pub(crate) struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    pub(crate) fn new(b: &mut WeightBuilder, name: &str, channels: usize) -> Self {
        Self {
            gain: b.add(format!("{name}.gain"), &[channels], Init::Ones),
            bias: b.add(format!("{name}.bias"), &[channels], Init::Zeros),
        }
    }

    /// Layer norm over the channel axis at every (frame, site).
    pub(crate) fn apply(&self, w: &ModelWeights, x: &Array) -> Result<Array> {
        layer_norm(x, 0, Some(w.get(self.gain)), Some(w.get(self.bias)))
    }
}

/// 1x1 channel mixing.
pub(crate) struct Dense {
    weight: ParamId,
    bias: ParamId,
}

impl Dense {
    pub(crate) fn new(b: &mut WeightBuilder, name: &str, inp: usize, out: usize, gain: f32) -> Self {
        Self {
            weight: b.add(
                format!("{name}.weight"),
                &[out, inp],
                Init::Normal { fan_in: inp, gain },
            ),
            bias: b.add(format!("{name}.bias"), &[out], Init::Zeros),
        }
    }

    pub(crate) fn apply(&self, w: &ModelWeights, x: &Array, exec: Exec) -> Result<Array> {
        channel_mix(x, w.get(self.weight), Some(w.get(self.bias)), exec)
    }
}

/// Linear layer on the last axis (text tokens, time embedding).
pub(crate) struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    pub(crate) fn new(b: &mut WeightBuilder, name: &str, inp: usize, out: usize) -> Self {
        Self {
            weight: b.add(
                format!("{name}.weight"),
                &[out, inp],
                Init::Normal { fan_in: inp, gain: 1.0 },
            ),
            bias: b.add(format!("{name}.bias"), &[out], Init::Zeros),
        }
    }

    pub(crate) fn apply(&self, w: &ModelWeights, x: &Array) -> Result<Array> {
        linear(x, w.get(self.weight), Some(w.get(self.bias)))
    }
}

pub(crate) struct Conv2d {
    weight: ParamId,
    bias: ParamId,
}

impl Conv2d {
    pub(crate) fn new(b: &mut WeightBuilder, name: &str, inp: usize, out: usize, gain: f32) -> Self {
        Self {
            weight: b.add(
                format!("{name}.weight"),
                &[out, inp, 3, 3],
                Init::Normal { fan_in: inp * 9, gain },
            ),
            bias: b.add(format!("{name}.bias"), &[out], Init::Zeros),
        }
    }

    pub(crate) fn apply(&self, w: &ModelWeights, x: &Array, exec: Exec) -> Result<Array> {
        conv_spatial_with(x, w.get(self.weight), Some(w.get(self.bias)), exec)
    }
}

/// `Conv(h, t)`: two 3x3 convolutions with the timestep embedding added in between.
pub(crate) struct ResBlock {
    norm1: Norm,
    conv1: Conv2d,
    time_proj: Linear,
    norm2: Norm,
    conv2: Conv2d,
    skip: Option<Dense>,
}

impl ResBlock {
    pub(crate) fn new(b: &mut WeightBuilder, name: &str, inp: usize, out: usize, temb: usize) -> Self {
        Self {
            norm1: Norm::new(b, &format!("{name}.norm1"), inp),
            conv1: Conv2d::new(b, &format!("{name}.conv1"), inp, out, 1.0),
            time_proj: Linear::new(b, &format!("{name}.time_proj"), temb, out),
            norm2: Norm::new(b, &format!("{name}.norm2"), out),
            conv2: Conv2d::new(b, &format!("{name}.conv2"), out, out, RESIDUAL_GAIN),
            skip: (inp != out).then(|| Dense::new(b, &format!("{name}.skip"), inp, out, 1.0)),
        }
    }

    pub(crate) fn forward(&self, w: &ModelWeights, h: &Array, temb: &Array, exec: Exec) -> Result<Array> {
        let a = silu(&self.norm1.apply(w, h)?);
        let mut a = self.conv1.apply(w, &a, exec)?;
        let tb = self.time_proj.apply(w, temb)?;
        add_channel_bias(&mut a, &tb)?;
        let a = silu(&self.norm2.apply(w, &a)?);
        let a = self.conv2.apply(w, &a, exec)?;
        let skip = match &self.skip {
            Some(d) => d.apply(w, h, exec)?,
            None => h.clone(),
        };
        skip.add(&a)
    }
}

/// `Tconv`: residual kernel-3 convolution along frames, replicate padded.
pub(crate) struct TemporalConv {
    norm: Norm,
    weight: ParamId,
    bias: ParamId,
}

impl TemporalConv {
    pub(crate) fn new(b: &mut WeightBuilder, name: &str, channels: usize) -> Self {
        Self {
            norm: Norm::new(b, &format!("{name}.norm"), channels),
            weight: b.add(
                format!("{name}.weight"),
                &[channels, channels, 3],
                Init::Normal {
                    fan_in: channels * 3,
                    gain: RESIDUAL_GAIN,
                },
            ),
            bias: b.add(format!("{name}.bias"), &[channels], Init::Zeros),
        }
    }

    pub(crate) fn forward(&self, w: &ModelWeights, h: &Array) -> Result<Array> {
        let a = silu(&self.norm.apply(w, h)?);
        let a = conv_temporal(&a, w.get(self.weight), Some(w.get(self.bias)))?;
        h.add(&a)
    }
}

pub(crate) struct Mlp {
    up: Dense,
    down: Dense,
}

impl Mlp {
    fn new(b: &mut WeightBuilder, name: &str, width: usize) -> Self {
        Self {
            up: Dense::new(b, &format!("{name}.up"), width, 2 * width, 1.0),
            down: Dense::new(b, &format!("{name}.down"), 2 * width, width, RESIDUAL_GAIN),
        }
    }

    fn forward(&self, w: &ModelWeights, x: &Array, exec: Exec) -> Result<Array> {
        let a = silu(&self.up.apply(w, x, exec)?);
        self.down.apply(w, &a, exec)
    }
}

struct QkvOut {
    q: Dense,
    k: Dense,
    v: Dense,
    out: Dense,
}

impl QkvOut {
    fn new(b: &mut WeightBuilder, name: &str, width: usize) -> Self {
        Self {
            q: Dense::new(b, &format!("{name}.q"), width, width, 1.0),
            k: Dense::new(b, &format!("{name}.k"), width, width, 1.0),
            v: Dense::new(b, &format!("{name}.v"), width, width, 1.0),
            out: Dense::new(b, &format!("{name}.out"), width, width, RESIDUAL_GAIN),
        }
    }
}

struct CrossAttn {
    q: Dense,
    k: Linear,
    v: Linear,
    out: Dense,
}

/// `ST = Proj_in -> Attn_self -> Attn_cross -> MLP -> Proj_out`, applied frame-wise.
pub(crate) struct SpatialTransformer {
    proj_in: Dense,
    norm_self: Norm,
    attn_self: QkvOut,
    norm_cross: Norm,
    attn_cross: CrossAttn,
    norm_mlp: Norm,
    mlp: Mlp,
    proj_out: Dense,
    heads: usize,
    /// Index of this block's cross-attention layer in the whole U-Net.
    pub(crate) cross_layer: usize,
}

impl SpatialTransformer {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        b: &mut WeightBuilder,
        name: &str,
        channels: usize,
        heads: usize,
        head_dim: usize,
        text_dim: usize,
        cross_layer: usize,
    ) -> Self {
        let width = heads * head_dim;
        Self {
            proj_in: Dense::new(b, &format!("{name}.proj_in"), channels, width, 1.0),
            norm_self: Norm::new(b, &format!("{name}.norm_self"), width),
            attn_self: QkvOut::new(b, &format!("{name}.attn_self"), width),
            norm_cross: Norm::new(b, &format!("{name}.norm_cross"), width),
            attn_cross: CrossAttn {
                q: Dense::new(b, &format!("{name}.attn_cross.q"), width, width, 1.0),
                k: Linear::new(b, &format!("{name}.attn_cross.k"), text_dim, width),
                v: Linear::new(b, &format!("{name}.attn_cross.v"), text_dim, width),
                out: Dense::new(b, &format!("{name}.attn_cross.out"), width, width, RESIDUAL_GAIN),
            },
            norm_mlp: Norm::new(b, &format!("{name}.norm_mlp"), width),
            mlp: Mlp::new(b, &format!("{name}.mlp"), width),
            proj_out: Dense::new(b, &format!("{name}.proj_out"), width, channels, RESIDUAL_GAIN),
            heads,
            cross_layer,
        }
    }

    pub(crate) fn forward(
        &self,
        w: &ModelWeights,
        h: &Array,
        t: usize,
        cond: &mut dyn CondSource,
        exec: Exec,
    ) -> Result<Array> {
        let mut x = self.proj_in.apply(w, h, exec)?;

        let n = self.norm_self.apply(w, &x)?;
        let a = &self.attn_self;
        let attn = spatial_self_attention(
            &a.q.apply(w, &n, exec)?,
            &a.k.apply(w, &n, exec)?,
            &a.v.apply(w, &n, exec)?,
            self.heads,
        );
        x.add_assign(&a.out.apply(w, &attn, exec)?)?;

        let n = self.norm_cross.apply(w, &x)?;
        let c = &self.attn_cross;
        let q = c.q.apply(w, &n, exec)?;
        let mut attn = Array::zeros(q.shape());
        let mut cached: Option<(Array, Array, Array)> = None;
        for frame in 0..q.frames() {
            let emb = cond.condition(t, self.cross_layer, frame);
            let hit = matches!(&cached, Some((tokens, _, _)) if tokens.bitwise_eq(&emb.tokens));
            if !hit {
                let keys = c.k.apply(w, &emb.tokens)?;
                let values = c.v.apply(w, &emb.tokens)?;
                cached = Some((emb.tokens.clone(), keys, values));
            }
            let (_, keys, values) = cached.as_ref().expect("filled above");
            cross_attention_frame(&q, frame, keys, values, self.heads, attn.data_mut());
        }
        x.add_assign(&c.out.apply(w, &attn, exec)?)?;

        let n = self.norm_mlp.apply(w, &x)?;
        x.add_assign(&self.mlp.forward(w, &n, exec)?)?;

        h.add(&self.proj_out.apply(w, &x, exec)?)
    }
}

/// `TT = Proj_in -> Attn_temp -> Attn_temp -> MLP -> Proj_out`, applied per site.
pub(crate) struct TemporalTransformer {
    proj_in: Dense,
    layers: [(Norm, QkvOut); 2],
    norm_mlp: Norm,
    mlp: Mlp,
    proj_out: Dense,
    heads: usize,
}

impl TemporalTransformer {
    pub(crate) fn new(b: &mut WeightBuilder, name: &str, channels: usize, heads: usize, head_dim: usize) -> Self {
        let width = heads * head_dim;
        let proj_in = Dense::new(b, &format!("{name}.proj_in"), channels, width, 1.0);
        let mut layer = |i: usize| {
            (
                Norm::new(b, &format!("{name}.norm_temp{i}"), width),
                QkvOut::new(b, &format!("{name}.attn_temp{i}"), width),
            )
        };
        let layers = [layer(0), layer(1)];
        Self {
            proj_in,
            layers,
            norm_mlp: Norm::new(b, &format!("{name}.norm_mlp"), width),
            mlp: Mlp::new(b, &format!("{name}.mlp"), width),
            proj_out: Dense::new(b, &format!("{name}.proj_out"), width, channels, RESIDUAL_GAIN),
            heads,
        }
    }

    pub(crate) fn forward(
        &self,
        w: &ModelWeights,
        h: &Array,
        mode: &AttentionMode,
        stats: &mut PassStats,
        exec: Exec,
    ) -> Result<Array> {
        let mut x = self.proj_in.apply(w, h, exec)?;
        let frames = x.frames();
        for (norm, a) in &self.layers {
            let n = norm.apply(w, &x)?;
            let q = a.q.apply(w, &n, exec)?;
            let k = a.k.apply(w, &n, exec)?;
            let v = a.v.apply(w, &n, exec)?;
            let attn = match mode {
                AttentionMode::Global => {
                    stats.temporal_attention_pairs += (frames * frames) as u64;
                    temporal_attention(&q, &k, &v, self.heads, 0, frames)
                }
                AttentionMode::Windowed(plan) => {
                    if plan.total != frames {
                        return Err(Error::dim(format!(
                            "window plan covers {} frames, features have {frames}",
                            plan.total
                        )));
                    }
                    stats.temporal_attention_pairs += plan.attention_pairs();
                    let outputs: Vec<Array> = plan
                        .windows
                        .iter()
                        .map(|win| temporal_attention(&q, &k, &v, self.heads, win.start, plan.window))
                        .collect();
                    fuse_windows(&outputs, plan)?
                }
            };
            stats.temporal_attention_layers += 1;
            x.add_assign(&a.out.apply(w, &attn, exec)?)?;
        }
        let n = self.norm_mlp.apply(w, &x)?;
        x.add_assign(&self.mlp.forward(w, &n, exec)?)?;
        h.add(&self.proj_out.apply(w, &x, exec)?)
    }
}
