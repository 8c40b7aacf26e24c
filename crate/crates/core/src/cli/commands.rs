use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::config::{RunConfig, Validated};
use super::container::{export_frames, read_container, write_container};
use crate::error::{Error, Result};
use crate::metrics::{consistency_sim, count_model_passes, frechet_feature_distance, run_benchmark};
use crate::model::{decode_video, ToyVideoLdm};
use crate::motion_injection::{Branch, ConditionResolver};
use crate::noise_schedule::build_shuffle_plan;
use crate::numerics::Exec;
use crate::sampler::{plan_windows, sample_video, SamplingMode};

#[derive(Debug, Parser)]
#[command(name = "freenoise", version, about = "Tuning-free long video sampling with a toy video diffusion model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a video and write it as an FNV1 container.
    Generate(GenerateArgs),
    /// Time full sampling runs across modes.
    Bench(BenchArgs),
    /// Print the shuffle plan, window table and prompt routing.
    Inspect(RunArgs),
    /// Consistency and Fréchet distance of container files.
    Metrics(MetricsArgs),
}

/// Settings shared by every run. Each flag maps to the config key of the
/// same name and overrides the `--config` file.
#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// Flat `key = value` file applied before the flags.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Prompt and its start frame as `text@frame`; repeat for several prompts.
    #[arg(long = "prompt", value_name = "TEXT@FRAME")]
    pub prompts: Vec<String>,
    /// direct, sliding, genl or freenoise.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub frames: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// DDIM steps.
    #[arg(long)]
    pub steps: Option<String>,
    #[arg(long)]
    pub train_steps: Option<String>,
    #[arg(long)]
    pub guidance: Option<String>,
    #[arg(long)]
    pub eta: Option<String>,
    /// Frames the model handles at once; also the attention window.
    #[arg(long)]
    pub n_train: Option<String>,
    /// Shuffle unit and window stride.
    #[arg(long)]
    pub unit: Option<String>,
    #[arg(long)]
    pub genl_stride: Option<String>,
    /// Sliding windows without overlap.
    #[arg(long)]
    pub sliding_disjoint: bool,
    /// Latent height and width.
    #[arg(long)]
    pub latent_size: Option<String>,
    /// Frames of prompt interpolation around each boundary.
    #[arg(long)]
    pub transition: Option<String>,
    /// Timestep band for motion injection as fractions, e.g. `0.3,0.7`.
    #[arg(long, value_name = "A,B")]
    pub inject_band: Option<String>,
    /// Cross-attention layers above this index always get the interpolated prompt.
    #[arg(long)]
    pub decoder_layer: Option<String>,
    /// FNW1 weight file; overrides the model settings.
    #[arg(long, value_name = "FILE")]
    pub weights: Option<String>,
    #[arg(long)]
    pub weight_seed: Option<String>,
    #[arg(long)]
    pub no_temporal_conv: bool,
    /// Parallel kernels (thread count from FREENOISE_THREADS).
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Output container path.
    #[arg(long, value_name = "FILE")]
    pub out: Option<String>,
    /// Also write one PPM image per frame into this directory.
    #[arg(long, value_name = "DIR")]
    pub export_frames: Option<String>,
    /// Write the model weights used for this run.
    #[arg(long, value_name = "FILE")]
    pub save_weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated modes to time.
    #[arg(long, default_value = "direct,sliding,genl,freenoise")]
    pub modes: String,
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
    /// Also write the report as key=value lines.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Container files.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    /// Second set of containers for the Fréchet distance.
    #[arg(long, num_args = 1.., value_name = "FILE")]
    pub against: Vec<PathBuf>,
}

impl RunArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
        }
        if !self.prompts.is_empty() {
            cfg.prompts.clear();
            for p in &self.prompts {
                cfg.set("prompt", p)?;
            }
        }
        let flags = [
            ("mode", &self.mode),
            ("frames", &self.frames),
            ("seed", &self.seed),
            ("steps", &self.steps),
            ("train_steps", &self.train_steps),
            ("guidance", &self.guidance),
            ("eta", &self.eta),
            ("n_train", &self.n_train),
            ("unit", &self.unit),
            ("genl_stride", &self.genl_stride),
            ("latent_size", &self.latent_size),
            ("transition", &self.transition),
            ("inject_band", &self.inject_band),
            ("decoder_layer", &self.decoder_layer),
            ("weights", &self.weights),
            ("weight_seed", &self.weight_seed),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if self.sliding_disjoint {
            cfg.sliding_disjoint = true;
        }
        if self.no_temporal_conv {
            cfg.temporal_conv = false;
        }
        if self.parallel {
            cfg.parallel = true;
        }
        Ok(cfg)
    }
}

/// Builds the model for a validated run, from a weight file if one is given.
fn load_model(cfg: &RunConfig, v: &Validated) -> Result<ToyVideoLdm> {
    let mut model = match &cfg.weights {
        Some(path) => {
            let m = ToyVideoLdm::load(path)?;
            if m.config().text_tokens != v.model.text_tokens || m.config().text_dim != v.model.text_dim {
                return Err(Error::config("weights", "weight file has a different text encoder shape"));
            }
            m
        }
        None => ToyVideoLdm::new(v.model.clone())?,
    };
    if !cfg.temporal_conv {
        model.set_temporal_conv(false);
    }
    if cfg.parallel {
        configure_threads()?;
        model.set_exec(Exec::PARALLEL);
    }
    Ok(model)
}

/// Caps the global thread pool at `FREENOISE_THREADS` when set.
fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("FREENOISE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::config("FREENOISE_THREADS", format!("expected a positive integer, got '{raw}'")))?;
    // a pool may already exist when several commands run in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let mut cfg = args.run.resolve()?;
    if let Some(out) = &args.out {
        cfg.set("out", out)?;
    }
    if let Some(dir) = &args.export_frames {
        cfg.set("export_frames", dir)?;
    }
    let v = cfg.validate()?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("video.fnv"));
    let model = load_model(&cfg, &v)?;
    let result = sample_video(&v.sampler, &v.timeline, &model, &v.schedule)?;
    let video = decode_video(&result.latent)?;
    write_container(&video, &out)?;
    if let Some(dir) = &cfg.export_frames {
        export_frames(&video, dir)?;
    }
    if let Some(path) = &args.save_weights {
        model.save(path)?;
    }
    println!(
        "wrote {} ({} frames, {}x{}, mode {}, {} U-Net passes)",
        out.display(),
        video.shape()[1],
        video.shape()[3],
        video.shape()[2],
        v.sampler.mode,
        result.stats.unet_passes
    );
    Ok(())
}

fn bench(args: &BenchArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let v = cfg.validate()?;
    let modes = args
        .modes
        .split(',')
        .map(|m| m.trim().parse())
        .collect::<Result<Vec<SamplingMode>>>()?;
    let mut model = load_model(&RunConfig { parallel: false, ..cfg.clone() }, &v)?;
    let mut report = run_benchmark(&modes, &v.sampler, &v.timeline, &model, &v.schedule, args.repetitions)?;
    let mut text = report.to_table();
    let mut kv = report.to_key_values();
    if cfg.parallel {
        configure_threads()?;
        model.set_exec(Exec::PARALLEL);
        report = run_benchmark(&modes, &v.sampler, &v.timeline, &model, &v.schedule, args.repetitions)?;
        text.push('\n');
        text.push_str(&report.to_table());
        kv.push_str(
            &report
                .to_key_values()
                .lines()
                .map(|l| format!("parallel.{l}\n"))
                .collect::<String>(),
        );
    }
    print!("{text}");
    if let Some(path) = &args.out {
        fs::write(path, kv)?;
    }
    Ok(())
}

fn inspect(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let v = cfg.validate()?;
    let s = &v.sampler;
    println!("config: mode={} frames={} n_train={} unit={} seed={}", s.mode, s.total_frames, s.n_train, s.unit, s.seed);

    if s.total_frames >= s.n_train && s.n_train % s.unit == 0 {
        let plan = build_shuffle_plan(s.n_train, s.unit, s.total_frames, s.seed)?;
        println!("\nshuffle plan (frame -> base noise frame):");
        for (row, chunk) in plan.mapping.chunks(16).enumerate() {
            let cells: Vec<String> = chunk.iter().map(|m| format!("{m:>3}")).collect();
            println!("  {:>4}: {}", row * 16, cells.join(""));
        }
    }

    let stride = match s.mode {
        SamplingMode::Sliding | SamplingMode::FreeNoise => s.stride(),
        _ => s.unit,
    };
    match plan_windows(s.total_frames, s.n_train, stride) {
        Ok(plan) => {
            println!("\nwindows (size {}, stride {stride}): {}", plan.window, plan.len());
            for (i, w) in plan.windows.iter().enumerate() {
                println!("  {i:>3}: start {:>4} end {:>4} center {:>6.1}", w.start, w.end, w.center);
            }
            println!("\nframe weights (window: normalized weight):");
            for (f, weights) in plan.frame_weights.iter().enumerate() {
                let cells: Vec<String> = weights
                    .iter()
                    .map(|fw| format!("{}:{:.4}", fw.window, fw.weight))
                    .collect();
                println!("  {f:>4}: {}", cells.join(" "));
            }
        }
        Err(e) => println!("\nwindows: not applicable ({e})"),
    }

    let tl = &v.timeline;
    println!("\nprompts: {}", tl.prompts.len());
    for (i, p) in cfg.prompt_specs().iter().enumerate() {
        println!("  {i}: '{}' from frame {}", p.text, p.start);
    }
    for (i, tr) in tl.transitions.iter().enumerate() {
        println!("  transition {i}: frames {}..{}", tr.gamma, tr.tau);
    }
    let layers = v.model.cross_attention_layers();
    println!(
        "\nrouting (I = interpolated, F = first prompt of pair); band ({}, {}), decoder layer > {}:",
        tl.band.t_alpha, tl.band.t_beta, tl.band.decoder_layer
    );
    let mut resolver = ConditionResolver::new(tl.clone(), v.schedule.train_steps, layers)?;
    for (t, _) in v.schedule.sampling_pairs() {
        let cells: String = (0..layers)
            .map(|l| {
                resolver.resolve(t, l, 0);
                match resolver.log().last().map(|r| r.branch) {
                    Some(Branch::Injected) => 'I',
                    _ => 'F',
                }
            })
            .collect();
        println!("  t={t:>4}: {cells}");
    }
    let model = ToyVideoLdm::new(v.model.clone())?;
    let counts = count_model_passes(s, &model)?;
    println!(
        "\npasses per step per guidance branch: {}; attention pairs per site and layer: {}",
        counts.passes_per_step, counts.attention_pair_ops
    );
    Ok(())
}

fn metrics(args: &MetricsArgs) -> Result<()> {
    let set_a = args.files.iter().map(|p| read_container(p)).collect::<Result<Vec<_>>>()?;
    for (path, video) in args.files.iter().zip(&set_a) {
        println!("{}: consistency_sim={:.6}", path.display(), consistency_sim(video)?);
    }
    if !args.against.is_empty() {
        let set_b = args.against.iter().map(|p| read_container(p)).collect::<Result<Vec<_>>>()?;
        println!("frechet_distance={:.6}", frechet_feature_distance(&set_a, &set_b)?);
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Bench(a) => bench(a),
        Command::Inspect(a) => inspect(a),
        Command::Metrics(a) => metrics(a),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
