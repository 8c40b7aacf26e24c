//! Multi-prompt conditioning with motion injection.
//!
//! Between two prompts the condition is linearly interpolated over a band of
//! frames. The interpolated condition only reaches the layout-forming
//! computation: timesteps strictly inside `(t_alpha, t_beta)` and decoder
//! cross-attention layers above `decoder_layer`. Every other
//! (timestep, layer) pair sees the first prompt of the active pair, which
//! keeps the object's appearance fixed.

use crate::error::{Error, Result};
use crate::model::{embed_prompt, CondSource, ModelConfig, PromptEmbedding};
use crate::numerics::Array;

/// Interpolation band `[gamma, tau]` between prompt `k` and `k + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transition {
    pub gamma: usize,
    pub tau: usize,
}

/// Where the interpolated condition is routed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InjectionBand {
    pub t_alpha: usize,
    pub t_beta: usize,
    /// Cross-attention layers with a larger index always get the interpolated condition.
    pub decoder_layer: usize,
}

pub const DEFAULT_BAND: (f64, f64) = (0.3, 0.7);

impl InjectionBand {
    /// Band from fractions of the training horizon, e.g. `(0.3, 0.7)`.
    pub fn from_fractions(
        train_steps: usize,
        alpha: f64,
        beta: f64,
        decoder_layer: usize,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) || !(0.0..=1.0).contains(&beta) || alpha >= beta {
            return Err(Error::config(
                "inject_band",
                format!("need 0 <= alpha < beta <= 1, got {alpha},{beta}"),
            ));
        }
        let band = Self {
            t_alpha: (alpha * train_steps as f64).round() as usize,
            t_beta: (beta * train_steps as f64).round() as usize,
            decoder_layer,
        };
        if band.t_alpha >= band.t_beta {
            return Err(Error::config("inject_band", "band is empty at this horizon"));
        }
        Ok(band)
    }

    pub fn injects(&self, t: usize, layer: usize) -> bool {
        (self.t_alpha < t && t < self.t_beta) || layer > self.decoder_layer
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptTimeline {
    pub prompts: Vec<PromptEmbedding>,
    /// One transition per adjacent prompt pair.
    pub transitions: Vec<Transition>,
    pub total_frames: usize,
    pub band: InjectionBand,
}

impl PromptTimeline {
    pub fn single(prompt: PromptEmbedding, total_frames: usize, band: InjectionBand) -> Self {
        Self {
            prompts: vec![prompt],
            transitions: Vec::new(),
            total_frames,
            band,
        }
    }

    pub fn validate(&self, train_steps: usize, layer_count: usize) -> Result<()> {
        if self.prompts.is_empty() {
            return Err(Error::config("prompt", "at least one prompt is required"));
        }
        if self.transitions.len() + 1 != self.prompts.len() {
            return Err(Error::config(
                "transition",
                format!(
                    "{} prompts need {} transitions, got {}",
                    self.prompts.len(),
                    self.prompts.len() - 1,
                    self.transitions.len()
                ),
            ));
        }
        let shape = self.prompts[0].tokens.shape();
        if self.prompts.iter().any(|p| p.tokens.shape() != shape) {
            return Err(Error::dim("prompt embeddings differ in shape"));
        }
        if self.total_frames == 0 {
            return Err(Error::config("frames", "must be at least 1"));
        }
        let mut prev_tau = 0;
        for (k, tr) in self.transitions.iter().enumerate() {
            if tr.gamma >= tr.tau {
                return Err(Error::config(
                    "transition",
                    format!("transition {k} has gamma {} >= tau {}", tr.gamma, tr.tau),
                ));
            }
            if k > 0 && tr.gamma < prev_tau {
                return Err(Error::config(
                    "transition",
                    format!("transition {k} overlaps the previous one"),
                ));
            }
            if tr.tau > self.total_frames {
                return Err(Error::config(
                    "transition",
                    format!("transition {k} ends past frame {}", self.total_frames),
                ));
            }
            prev_tau = tr.tau;
        }
        let b = &self.band;
        if b.t_alpha >= b.t_beta || b.t_beta > train_steps {
            return Err(Error::config(
                "inject_band",
                format!(
                    "need t_alpha < t_beta <= {train_steps}, got {} and {}",
                    b.t_alpha, b.t_beta
                ),
            ));
        }
        if b.decoder_layer >= layer_count {
            return Err(Error::config(
                "decoder_layer",
                format!("must be below the layer count {layer_count}, got {}", b.decoder_layer),
            ));
        }
        Ok(())
    }

    /// Index of the active prompt pair for frame `n` (the first prompt of that pair).
    pub fn active_pair(&self, frame: usize) -> usize {
        if self.transitions.is_empty() {
            return 0;
        }
        let passed = self.transitions.iter().filter(|tr| tr.tau <= frame).count();
        passed.min(self.transitions.len() - 1)
    }
}

/// Embeds `prompts` and places a transition of `transition_len` frames
/// centered on every segment boundary.
pub fn build_timeline(
    prompts: &[&str],
    segment_frames: &[usize],
    transition_len: usize,
    band: InjectionBand,
    model: &ModelConfig,
) -> Result<PromptTimeline> {
    if prompts.is_empty() || prompts.len() != segment_frames.len() {
        return Err(Error::config(
            "prompt",
            format!(
                "need one segment length per prompt, got {} prompts and {} segments",
                prompts.len(),
                segment_frames.len()
            ),
        ));
    }
    if segment_frames.contains(&0) {
        return Err(Error::config("prompt", "segments must be at least one frame long"));
    }
    if prompts.len() > 1 && transition_len == 0 {
        return Err(Error::config("transition", "must be at least 1 frame"));
    }
    let embeddings = prompts
        .iter()
        .map(|p| embed_prompt(p, model.text_tokens, model.text_dim))
        .collect::<Result<Vec<_>>>()?;
    let mut transitions = Vec::new();
    let mut start = 0;
    for k in 0..prompts.len() - 1 {
        let boundary = start + segment_frames[k];
        let next_end = boundary + segment_frames[k + 1];
        let half = transition_len / 2;
        if half > boundary - start || transition_len - half > next_end - boundary {
            return Err(Error::config(
                "transition",
                format!("transition of {transition_len} frames does not fit around frame {boundary}"),
            ));
        }
        transitions.push(Transition {
            gamma: boundary - half,
            tau: boundary - half + transition_len,
        });
        start = boundary;
    }
    let timeline = PromptTimeline {
        prompts: embeddings,
        transitions,
        total_frames: segment_frames.iter().sum(),
        band,
    };
    timeline.validate(usize::MAX, model.cross_attention_layers())?;
    Ok(timeline)
}

/// Linear interpolation from `p1` (frames `<= gamma`) to `p2` (frames `>= tau`).
pub fn interpolate_prompt(
    p1: &PromptEmbedding,
    p2: &PromptEmbedding,
    frame: usize,
    gamma: usize,
    tau: usize,
) -> Result<PromptEmbedding> {
    if gamma >= tau {
        return Err(Error::config(
            "transition",
            format!("gamma {gamma} must be below tau {tau}"),
        ));
    }
    if p1.tokens.shape() != p2.tokens.shape() {
        return Err(Error::dim("prompt embeddings differ in shape"));
    }
    if frame <= gamma {
        return Ok(p1.clone());
    }
    if frame >= tau {
        return Ok(p2.clone());
    }
    let w = (tau - frame) as f64 / (tau - gamma) as f64;
    let data = p1
        .tokens
        .data()
        .iter()
        .zip(p2.tokens.data())
        .map(|(&a, &b)| (w * a as f64 + (1.0 - w) * b as f64) as f32)
        .collect();
    Ok(PromptEmbedding {
        tokens: Array::from_vec(p1.tokens.shape(), data)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// The interpolated per-frame condition.
    Injected,
    /// The first prompt of the active pair.
    First,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoutingRecord {
    pub timestep: usize,
    pub layer: usize,
    pub frame: usize,
    pub branch: Branch,
}

/// Per-frame conditions with the routing rule, logging every decision.
#[derive(Clone, Debug)]
pub struct ConditionResolver {
    timeline: PromptTimeline,
    injected: Vec<PromptEmbedding>,
    first: Vec<usize>,
    log: Vec<RoutingRecord>,
    logging: bool,
}

impl ConditionResolver {
    pub fn new(timeline: PromptTimeline, train_steps: usize, layer_count: usize) -> Result<Self> {
        timeline.validate(train_steps, layer_count)?;
        let mut injected = Vec::with_capacity(timeline.total_frames);
        let mut first = Vec::with_capacity(timeline.total_frames);
        for n in 0..timeline.total_frames {
            let k = timeline.active_pair(n);
            first.push(k);
            injected.push(match timeline.transitions.get(k) {
                Some(tr) => interpolate_prompt(
                    &timeline.prompts[k],
                    &timeline.prompts[k + 1],
                    n,
                    tr.gamma,
                    tr.tau,
                )?,
                None => timeline.prompts[0].clone(),
            });
        }
        Ok(Self {
            timeline,
            injected,
            first,
            log: Vec::new(),
            logging: true,
        })
    }

    pub fn timeline(&self) -> &PromptTimeline {
        &self.timeline
    }

    pub fn set_logging(&mut self, enabled: bool) {
        self.logging = enabled;
    }

    /// The interpolated condition of frame `n`.
    pub fn injected(&self, frame: usize) -> &PromptEmbedding {
        &self.injected[frame]
    }

    pub fn log(&self) -> &[RoutingRecord] {
        &self.log
    }

    pub fn into_log(self) -> Vec<RoutingRecord> {
        self.log
    }

    pub fn resolve(&mut self, t: usize, layer: usize, frame: usize) -> &PromptEmbedding {
        let branch = if self.timeline.band.injects(t, layer) {
            Branch::Injected
        } else {
            Branch::First
        };
        if self.logging {
            self.log.push(RoutingRecord {
                timestep: t,
                layer,
                frame,
                branch,
            });
        }
        match branch {
            Branch::Injected => &self.injected[frame],
            Branch::First => &self.timeline.prompts[self.first[frame]],
        }
    }
}

impl CondSource for ConditionResolver {
    fn condition(&mut self, t: usize, layer: usize, frame: usize) -> &PromptEmbedding {
        self.resolve(t, layer, frame)
    }
}

pub fn resolve_condition<'a>(
    resolver: &'a mut ConditionResolver,
    t: usize,
    layer: usize,
    frame: usize,
) -> &'a PromptEmbedding {
    resolver.resolve(t, layer, frame)
}
