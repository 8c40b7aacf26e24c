//! Run configuration: defaults, then a flat `key = value` file, then flags.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::motion_injection::{build_timeline, InjectionBand, PromptTimeline, DEFAULT_BAND};
use crate::sampler::{
    make_diffusion_schedule, DiffusionSchedule, SamplerConfig, SamplingMode, DEFAULT_BETA_END,
    DEFAULT_BETA_START, DEFAULT_DDIM_STEPS, DEFAULT_TRAIN_STEPS,
};

pub const DEFAULT_PROMPT: &str = "a man is boating on a lake";
pub const DEFAULT_TRANSITION: usize = 8;

/// A prompt and the frame where its segment starts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptSpec {
    pub text: String,
    pub start: usize,
}

impl PromptSpec {
    /// Parses `text@frame`; a bare `text` starts at frame 0.
    pub fn parse(s: &str) -> Result<Self> {
        let (text, start) = match s.rsplit_once('@') {
            Some((text, frame)) => {
                let start = frame.trim().parse().map_err(|_| {
                    Error::config("prompt", format!("bad start frame in '{s}', expected text@frame"))
                })?;
                (text, start)
            }
            None => (s, 0),
        };
        let text = text.trim().trim_matches('"').trim();
        if text.is_empty() {
            return Err(Error::config("prompt", format!("empty prompt text in '{s}'")));
        }
        Ok(Self { text: text.to_string(), start })
    }
}

/// Every tunable of a run. Keys accepted by [`RunConfig::set`] are the
/// long flag names with `_` or `-`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: SamplingMode,
    pub frames: usize,
    pub n_train: usize,
    pub unit: usize,
    /// Defaults to `unit` when unset.
    pub genl_stride: Option<usize>,
    pub sliding_disjoint: bool,
    pub seed: u64,
    pub guidance: f32,
    pub steps: usize,
    pub train_steps: usize,
    pub eta: f64,
    pub latent_size: usize,
    pub prompts: Vec<PromptSpec>,
    pub transition: usize,
    pub inject_band: (f64, f64),
    /// Defaults to the model's last encoder layer when unset.
    pub decoder_layer: Option<usize>,
    pub weights: Option<PathBuf>,
    pub weight_seed: u64,
    pub temporal_conv: bool,
    pub parallel: bool,
    pub out: Option<PathBuf>,
    pub export_frames: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SamplerConfig::default();
        Self {
            mode: s.mode,
            frames: s.total_frames,
            n_train: s.n_train,
            unit: s.unit,
            genl_stride: None,
            sliding_disjoint: false,
            seed: 0,
            guidance: s.guidance,
            steps: DEFAULT_DDIM_STEPS,
            train_steps: DEFAULT_TRAIN_STEPS,
            eta: 0.0,
            latent_size: s.latent_height,
            prompts: Vec::new(),
            transition: DEFAULT_TRANSITION,
            inject_band: DEFAULT_BAND,
            decoder_layer: None,
            weights: None,
            weight_seed: 0,
            temporal_conv: true,
            parallel: false,
            out: None,
            export_frames: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got '{value}'"))),
    }
}

impl RunConfig {
    /// Applies one setting. `prompt` appends; everything else replaces.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let k = key.as_str();
        match k {
            "mode" => self.mode = value.trim().parse()?,
            "frames" => self.frames = parse_num(k, value)?,
            "n_train" => self.n_train = parse_num(k, value)?,
            "unit" => self.unit = parse_num(k, value)?,
            "genl_stride" => self.genl_stride = Some(parse_num(k, value)?),
            "sliding_disjoint" => self.sliding_disjoint = parse_bool(k, value)?,
            "seed" => self.seed = parse_num(k, value)?,
            "guidance" => self.guidance = parse_num(k, value)?,
            "steps" => self.steps = parse_num(k, value)?,
            "train_steps" => self.train_steps = parse_num(k, value)?,
            "eta" => self.eta = parse_num(k, value)?,
            "latent_size" => self.latent_size = parse_num(k, value)?,
            "prompt" => self.prompts.push(PromptSpec::parse(value)?),
            "transition" => self.transition = parse_num(k, value)?,
            "inject_band" => {
                let (a, b) = value
                    .split_once(',')
                    .ok_or_else(|| Error::config(k, format!("expected 'alpha,beta', got '{value}'")))?;
                self.inject_band = (parse_num(k, a)?, parse_num(k, b)?);
            }
            "decoder_layer" => self.decoder_layer = Some(parse_num(k, value)?),
            "weights" => self.weights = Some(PathBuf::from(value.trim())),
            "weight_seed" => self.weight_seed = parse_num(k, value)?,
            "temporal_conv" => self.temporal_conv = parse_bool(k, value)?,
            "no_temporal_conv" => self.temporal_conv = !parse_bool(k, value)?,
            "parallel" => self.parallel = parse_bool(k, value)?,
            "out" => self.out = Some(PathBuf::from(value.trim())),
            "export_frames" => self.export_frames = Some(PathBuf::from(value.trim())),
            _ => return Err(Error::config(k, "unknown setting")),
        }
        Ok(())
    }

    /// Applies a flat config file: one `key = value` per line, `#` comments.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(
                    format!("line {}", i + 1),
                    format!("expected key = value, got '{line}'"),
                )
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Renders the config as a file accepted by [`RunConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let mut lines = vec![
            format!("mode = {}", self.mode),
            format!("frames = {}", self.frames),
            format!("n_train = {}", self.n_train),
            format!("unit = {}", self.unit),
            format!("sliding_disjoint = {}", self.sliding_disjoint),
            format!("seed = {}", self.seed),
            format!("guidance = {}", self.guidance),
            format!("steps = {}", self.steps),
            format!("train_steps = {}", self.train_steps),
            format!("eta = {}", self.eta),
            format!("latent_size = {}", self.latent_size),
            format!("transition = {}", self.transition),
            format!("inject_band = {},{}", self.inject_band.0, self.inject_band.1),
            format!("weight_seed = {}", self.weight_seed),
            format!("temporal_conv = {}", self.temporal_conv),
            format!("parallel = {}", self.parallel),
        ];
        if let Some(s) = self.genl_stride {
            lines.push(format!("genl_stride = {s}"));
        }
        if let Some(l) = self.decoder_layer {
            lines.push(format!("decoder_layer = {l}"));
        }
        for p in &self.prompts {
            lines.push(format!("prompt = {}@{}", p.text, p.start));
        }
        for (key, path) in [("weights", &self.weights), ("out", &self.out), ("export_frames", &self.export_frames)] {
            if let Some(p) = path {
                lines.push(format!("{key} = {}", p.display()));
            }
        }
        lines.join("\n") + "\n"
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            mode: self.mode,
            n_train: self.n_train,
            total_frames: self.frames,
            unit: self.unit,
            guidance: self.guidance,
            seed: self.seed,
            genl_stride: self.genl_stride.unwrap_or(self.unit),
            sliding_disjoint: self.sliding_disjoint,
            latent_height: self.latent_size,
            latent_width: self.latent_size,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            weight_seed: self.weight_seed,
            temporal_conv: self.temporal_conv,
            ..ModelConfig::default()
        }
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        make_diffusion_schedule(self.train_steps, DEFAULT_BETA_START, DEFAULT_BETA_END, self.steps, self.eta)
    }

    /// Prompt specs with the default prompt filled in, sorted by start frame.
    pub fn prompt_specs(&self) -> Vec<PromptSpec> {
        let mut specs = if self.prompts.is_empty() {
            vec![PromptSpec { text: DEFAULT_PROMPT.into(), start: 0 }]
        } else {
            self.prompts.clone()
        };
        specs.sort_by_key(|p| p.start);
        specs
    }

    pub fn timeline(&self, model: &ModelConfig) -> Result<PromptTimeline> {
        let specs = self.prompt_specs();
        if specs[0].start != 0 {
            return Err(Error::config("prompt", "the first prompt must start at frame 0"));
        }
        for pair in specs.windows(2) {
            if pair[0].start == pair[1].start {
                return Err(Error::config(
                    "prompt",
                    format!("two prompts start at frame {}", pair[0].start),
                ));
            }
        }
        if let Some(last) = specs.last().filter(|p| p.start >= self.frames) {
            return Err(Error::config(
                "prompt",
                format!("prompt starts at frame {} but the video has {} frames", last.start, self.frames),
            ));
        }
        let segments: Vec<usize> = specs
            .iter()
            .enumerate()
            .map(|(i, p)| specs.get(i + 1).map_or(self.frames, |n| n.start) - p.start)
            .collect();
        let texts: Vec<&str> = specs.iter().map(|p| p.text.as_str()).collect();
        let band = InjectionBand::from_fractions(
            self.train_steps,
            self.inject_band.0,
            self.inject_band.1,
            self.decoder_layer.unwrap_or(model.last_encoder_layer()),
        )?;
        build_timeline(&texts, &segments, self.transition, band, model)
    }

    /// Checks everything that can be checked without running the model.
    pub fn validate(&self) -> Result<Validated> {
        if self.latent_size == 0 {
            return Err(Error::config("latent_size", "must be at least 1"));
        }
        let model = self.model_config();
        model.validate()?;
        if self.latent_size % model.spatial_multiple() != 0 {
            return Err(Error::config(
                "latent_size",
                format!("must be a multiple of {}", model.spatial_multiple()),
            ));
        }
        let sampler = self.sampler_config();
        sampler.validate()?;
        let schedule = self.schedule()?;
        let timeline = self.timeline(&model)?;
        timeline.validate(schedule.train_steps, model.cross_attention_layers())?;
        Ok(Validated { sampler, model, schedule, timeline })
    }
}

/// Components derived from a validated [`RunConfig`].
#[derive(Clone, Debug)]
pub struct Validated {
    pub sampler: SamplerConfig,
    pub model: ModelConfig,
    pub schedule: DiffusionSchedule,
    pub timeline: PromptTimeline,
}
