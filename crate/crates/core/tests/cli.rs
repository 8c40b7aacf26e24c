//! End-to-end runs of the `freenoise` binary.

use std::path::Path;
use std::process::{Command, Output};

use freenoise::cli::{read_container, write_container};
use freenoise::numerics::{rng_normal, Rng};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_freenoise")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const QUICK: [&str; 4] = ["--steps", "3", "--prompt", "a man is boating on a lake"];

#[test]
fn misaligned_frames_exit_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v.fnv");
    let o = run(&["generate", "--mode", "freenoise", "--frames", "63", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alignment"));
    // nothing is written when validation fails
    assert!(!out.exists());
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "frames = 16\ncolour = blue\n").unwrap();
    let o = run(&["inspect", "--config", path(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
}

#[test]
fn direct_and_freenoise_agree_at_training_length() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.fnv");
    let b = dir.path().join("b.fnv");
    for (mode, out) in [("direct", &a), ("freenoise", &b)] {
        let mut args = vec!["generate", "--frames", "16", "--mode", mode, "--seed", "3", "--out", path(out)];
        args.extend(QUICK);
        assert!(run(&args).status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn config_file_matches_flags() {
    let dir = tempfile::tempdir().unwrap();
    let from_flags = dir.path().join("flags.fnv");
    let from_file = dir.path().join("file.fnv");
    let cfg = dir.path().join("run.cfg");
    let args = [
        "--mode", "sliding", "--frames", "24", "--seed", "9", "--steps", "3", "--unit", "4",
        "--prompt", "a cat walks@0", "--prompt", "a cat runs@12", "--transition", "4",
        "--inject-band", "0.2,0.8", "--guidance", "7.5",
    ];
    let mut flag_args = vec!["generate", "--out", path(&from_flags)];
    flag_args.extend(args);
    assert!(run(&flag_args).status.success());
    std::fs::write(
        &cfg,
        "# same run as the flags\nmode = sliding\nframes = 24\nseed = 9\nsteps = 3\nunit = 4\n\
         prompt = a cat walks@0\nprompt = a cat runs@12\ntransition = 4\ninject_band = 0.2,0.8\nguidance = 7.5\n",
    )
    .unwrap();
    assert!(run(&["generate", "--config", path(&cfg), "--out", path(&from_file)]).status.success());
    assert_eq!(std::fs::read(&from_flags).unwrap(), std::fs::read(&from_file).unwrap());

    // flags override the file
    let overridden = dir.path().join("o.fnv");
    assert!(run(&["generate", "--config", path(&cfg), "--seed", "10", "--out", path(&overridden)]).status.success());
    assert_ne!(std::fs::read(&from_file).unwrap(), std::fs::read(&overridden).unwrap());
}

#[test]
fn generate_writes_container_and_frames() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v.fnv");
    let frames = dir.path().join("frames");
    let mut args = vec![
        "generate", "--frames", "20", "--mode", "genl", "--out", path(&out), "--export-frames", path(&frames),
    ];
    args.extend(QUICK);
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let video = read_container(&out).unwrap();
    assert_eq!(video.shape(), &[3, 20, 16, 16]);
    let ppm = std::fs::read(frames.join("frame_0019.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n16 16\n255\n"));
    assert_eq!(std::fs::read_dir(&frames).unwrap().count(), 20);
}

#[test]
fn saved_weights_reproduce_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("m.fnw");
    let a = dir.path().join("a.fnv");
    let b = dir.path().join("b.fnv");
    let mut first = vec!["generate", "--frames", "16", "--weight-seed", "4", "--out", path(&a), "--save-weights", path(&w)];
    first.extend(QUICK);
    assert!(run(&first).status.success());
    let mut second = vec!["generate", "--frames", "16", "--weights", path(&w), "--out", path(&b)];
    second.extend(QUICK);
    assert!(run(&second).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn inspect_prints_plans() {
    let o = run(&["inspect", "--steps", "5"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("windows (size 16, stride 4): 13"));
    assert!(text.contains("passes per step per guidance branch: 1"));
    let one = run(&["inspect", "--frames", "16", "--steps", "5"]);
    assert!(String::from_utf8_lossy(&one.stdout).contains("windows (size 16, stride 4): 1\n"));
    let genl = run(&["inspect", "--mode", "genl", "--steps", "5"]);
    assert!(String::from_utf8_lossy(&genl.stdout).contains("passes per step per guidance branch: 13"));
    // the shuffle plan is stable across runs
    assert_eq!(o.stdout, run(&["inspect", "--steps", "5"]).stdout);
}

#[test]
fn bench_writes_key_values() {
    let dir = tempfile::tempdir().unwrap();
    let kv = dir.path().join("bench.txt");
    let o = run(&[
        "bench", "--frames", "8", "--n-train", "4", "--unit", "2", "--steps", "2", "--latent-size", "2",
        "--modes", "freenoise,genl", "--repetitions", "3", "--out", path(&kv),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&kv).unwrap();
    assert!(text.contains("freenoise.passes_per_step=1"));
    assert!(text.contains("genl.passes_per_step=3"));
    let too_few = run(&["bench", "--frames", "8", "--n-train", "4", "--repetitions", "2"]);
    assert_eq!(too_few.status.code(), Some(2));
}

#[test]
fn metrics_reads_containers() {
    let dir = tempfile::tempdir().unwrap();
    let files: Vec<_> = (0..4)
        .map(|i| {
            let p = dir.path().join(format!("{i}.fnv"));
            write_container(&rng_normal(&mut Rng::new(i, 0), &[3, 4, 8, 8]), &p).unwrap();
            p
        })
        .collect();
    let o = run(&["metrics", path(&files[0]), path(&files[1]), "--against", path(&files[2]), path(&files[3])]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.matches("consistency_sim=").count(), 2);
    assert!(text.contains("frechet_distance="));

    let bad = dir.path().join("bad.fnv");
    std::fs::write(&bad, b"FNV1\x01\x00").unwrap();
    let o = run(&["metrics", path(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("byte"));
}
