//! Pass accounting and wall-clock benchmarks across sampling modes.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::model::{PassStats, PromptEmbedding, ToyVideoLdm};
use crate::motion_injection::PromptTimeline;
use crate::numerics::Array;
use crate::sampler::{guided_eps, sample_video, DiffusionSchedule, SamplerConfig, SamplingMode};

/// Exact per-step counts for one guidance branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PassCounts {
    pub passes_per_step: u64,
    /// Query-key pairs per spatial site and temporal attention layer.
    pub attention_pair_ops: u64,
    pub peak_frames: usize,
}

impl PassCounts {
    fn from_stats(stats: &PassStats, steps: u64) -> Result<Self> {
        let branch_passes = stats.unet_passes / 2;
        if stats.unet_passes == 0 || stats.temporal_attention_layers == 0 {
            return Err(Error::Bench("no model passes were recorded".into()));
        }
        // layer slots per pass, identical for every pass of a run
        let layers_per_pass = stats.temporal_attention_layers / stats.unet_passes;
        Ok(Self {
            passes_per_step: branch_passes / steps,
            attention_pair_ops: stats.temporal_attention_pairs / layers_per_pass / 2 / steps,
            peak_frames: stats.peak_frames,
        })
    }
}

/// Counts from one instrumented denoising step on a minimal spatial grid.
/// Frame-axis work does not depend on the spatial size.
pub fn count_model_passes(config: &SamplerConfig, model: &ToyVideoLdm) -> Result<PassCounts> {
    let mc = model.config();
    let side = mc.spatial_multiple();
    let dry = SamplerConfig {
        latent_height: side,
        latent_width: side,
        ..config.clone()
    };
    dry.validate()?;
    let x = Array::zeros(&[mc.latent_channels, dry.total_frames, side, side]);
    let mut cond = PromptEmbedding::unconditional(mc.text_tokens, mc.text_dim);
    let mut uncond = cond.clone();
    let mut stats = PassStats::default();
    guided_eps(
        &dry,
        model,
        &x,
        1,
        &mut cond,
        &mut uncond,
        &dry.attention_mode()?,
        &mut stats,
    )?;
    PassCounts::from_stats(&stats, 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchEntry {
    pub mode: SamplingMode,
    pub median_total: Duration,
    pub median_per_step: Duration,
    /// Timed repetitions in run order; the warm-up run is not included.
    pub runs: Vec<Duration>,
    pub counts: PassCounts,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub frames: usize,
    pub steps: usize,
    pub repetitions: usize,
    pub parallel: bool,
    pub entries: Vec<BenchEntry>,
}

impl BenchReport {
    pub fn entry(&self, mode: SamplingMode) -> Option<&BenchEntry> {
        self.entries.iter().find(|e| e.mode == mode)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "frames={} steps={} repetitions={} parallel={}",
            self.frames, self.steps, self.repetitions, self.parallel
        );
        let _ = writeln!(
            s,
            "{:<10} {:>12} {:>12} {:>14} {:>12} {:>12}",
            "mode", "total_s", "step_ms", "passes/step", "pair_ops", "peak_frames"
        );
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{:<10} {:>12.3} {:>12.3} {:>14} {:>12} {:>12}",
                e.mode.name(),
                e.median_total.as_secs_f64(),
                e.median_per_step.as_secs_f64() * 1e3,
                e.counts.passes_per_step,
                e.counts.attention_pair_ops,
                e.counts.peak_frames
            );
        }
        s
    }

    /// One `key=value` line per field.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frames={}", self.frames);
        let _ = writeln!(s, "steps={}", self.steps);
        let _ = writeln!(s, "repetitions={}", self.repetitions);
        let _ = writeln!(s, "parallel={}", self.parallel);
        for e in &self.entries {
            let m = e.mode.name();
            let _ = writeln!(s, "{m}.total_seconds={:.6}", e.median_total.as_secs_f64());
            let _ = writeln!(s, "{m}.step_seconds={:.6}", e.median_per_step.as_secs_f64());
            let _ = writeln!(s, "{m}.passes_per_step={}", e.counts.passes_per_step);
            let _ = writeln!(s, "{m}.attention_pair_ops={}", e.counts.attention_pair_ops);
            let _ = writeln!(s, "{m}.peak_frames={}", e.counts.peak_frames);
        }
        s
    }
}

fn median(values: &[Duration]) -> Duration {
    let mut v = values.to_vec();
    v.sort();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

/// Times full sampling runs for every mode. One warm-up run per mode is
/// discarded; counts come from that run's instrumentation.
pub fn run_benchmark(
    modes: &[SamplingMode],
    config: &SamplerConfig,
    timeline: &PromptTimeline,
    model: &ToyVideoLdm,
    schedule: &DiffusionSchedule,
    repetitions: usize,
) -> Result<BenchReport> {
    if repetitions < 3 {
        return Err(Error::config("repetitions", format!("need at least 3, got {repetitions}")));
    }
    if modes.is_empty() {
        return Err(Error::config("modes", "no modes to benchmark"));
    }
    for &mode in modes {
        SamplerConfig { mode, ..config.clone() }.validate()?;
    }
    let steps = schedule.steps();
    let mut entries = Vec::with_capacity(modes.len());
    for &mode in modes {
        let cfg = SamplerConfig { mode, ..config.clone() };
        let warm = sample_video(&cfg, timeline, model, schedule)?;
        let counts = PassCounts::from_stats(&warm.stats, steps as u64)?;
        let mut runs = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let start = Instant::now();
            let out = sample_video(&cfg, timeline, model, schedule)?;
            let elapsed = start.elapsed();
            std::hint::black_box(&out);
            if elapsed.is_zero() {
                return Err(Error::Bench(format!(
                    "timer resolution too coarse to time a {mode} run"
                )));
            }
            runs.push(elapsed);
        }
        let median_total = median(&runs);
        entries.push(BenchEntry {
            mode,
            median_total,
            median_per_step: median_total / steps as u32,
            runs,
            counts,
        });
    }
    Ok(BenchReport {
        frames: config.total_frames,
        steps,
        repetitions,
        parallel: model.exec().parallel,
        entries,
    })
}
