use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use framemat::synthetic::SyntheticScene;

const QUICK: [&str; 10] = [
    "--set",
    "plan.steps=6",
    "--set",
    "plan.jump=150",
    "--set",
    "plan.resamples=[2, 1]",
    "--set",
    "plan.phase_boundary=3",
    "--set",
    "rig.stereo_views=3",
];

fn framemat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_framemat"))
        .args(args)
        .env_remove("FM_SEED")
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth_small(dir: &Path) {
    let mut args = vec!["synth", "--out", p(dir), "--width", "64", "--height", "32", "--frames", "3"];
    args.extend(QUICK);
    let o = framemat(&args);
    assert!(o.status.success(), "{}", text(&o));
}

#[test]
fn synth_run_verify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    let (input, config, out) = (dir.path().join("input"), dir.path().join("config.toml"), dir.path().join("out"));
    let o = framemat(&["run", "--input", p(&input), "--output", p(&out), "--config", p(&config)]);
    assert!(o.status.success(), "{}", text(&o));
    let stdout = text(&o);
    assert!(stdout.contains("PASS known_pixels_preserved"), "{stdout}");
    assert!(stdout.contains("PSNR"), "{stdout}");
    let o = framemat(&["verify", p(&out)]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(!text(&o).contains("FAIL"));
}

#[test]
fn seed_env_and_overrides_reach_the_report() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    let (input, config) = (dir.path().join("input"), dir.path().join("config.toml"));
    let run = |out: &Path, env_seed: Option<&str>, extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_framemat"));
        cmd.args(["run", "--input", p(&input), "--output", p(out), "--config", p(&config)])
            .args(extra)
            .env_remove("FM_SEED");
        if let Some(s) = env_seed {
            cmd.env("FM_SEED", s);
        }
        let o = cmd.output().unwrap();
        assert!(o.status.success(), "{}", text(&o));
        let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        report["seed"].as_u64().unwrap()
    };
    assert_eq!(run(&dir.path().join("a"), Some("77"), &[]), 77);
    // explicit --set wins over the environment
    assert_eq!(run(&dir.path().join("b"), Some("77"), &["--set", "seed=5"]), 5);
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    let (input, config) = (dir.path().join("input"), dir.path().join("config.toml"));
    for (name, threads) in [("one", "1"), ("four", "4")] {
        let out = dir.path().join(name);
        let o = framemat(&[
            "run", "--input", p(&input), "--output", p(&out), "--config", p(&config), "--threads", threads,
            "--set", "oracle.kind=smoothing",
        ]);
        assert!(o.status.success(), "{}", text(&o));
    }
    for rel in ["right/t002.png", "frames/v001/t001.png", "outpaint/t000.png", "config.toml"] {
        assert_eq!(
            fs::read(dir.path().join("one").join(rel)).unwrap(),
            fs::read(dir.path().join("four").join(rel)).unwrap(),
            "{rel}"
        );
    }
}

#[test]
fn missing_flow_is_reported_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    let victim = dir.path().join("input/flow/t000_v.pfm");
    fs::remove_file(&victim).unwrap();
    let out = dir.path().join("out");
    let o = framemat(&["run", "--input", p(&dir.path().join("input")), "--output", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let msg = text(&o);
    assert!(msg.contains("ingest stage") && msg.contains(p(&victim)), "{msg}");
}

#[test]
fn bad_override_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = framemat(&["run", "--input", p(dir.path()), "--output", p(dir.path()), "--set", "warp.planes=0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("warp.planes"), "{}", text(&o));
    let o = framemat(&["run", "--input", p(dir.path()), "--output", p(dir.path()), "--set", "nosuch.key=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("nosuch"), "{}", text(&o));
}

#[test]
fn verify_flags_a_tampered_output() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    let (input, out) = (dir.path().join("input"), dir.path().join("out"));
    let mut args = vec!["run", "--input", p(&input), "--output", p(&out), "--set", "oracle.kind=zero"];
    args.extend(QUICK);
    let o = framemat(&args);
    assert!(o.status.success(), "{}", text(&o));
    let cfg = out.join("config.toml");
    let edited = fs::read_to_string(&cfg).unwrap().replace("seed = ", "seed = 1");
    fs::write(&cfg, edited).unwrap();
    let o = framemat(&["verify", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("FAIL config_hash"), "{}", text(&o));
}

#[test]
fn synth_accepts_a_scene_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut scene = SyntheticScene::two_layer(48, 24, 2);
    scene.layers[0].velocity = [1.0, 0.0];
    let path = dir.path().join("scene.toml");
    fs::write(&path, toml::to_string(&scene).unwrap()).unwrap();
    let out = dir.path().join("s");
    let o = framemat(&["synth", "--out", p(&out), "--scene", p(&path)]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(out.join("input/frames/t001.png").is_file());
    assert!(!out.join("input/frames/t002.png").exists());

    fs::write(&path, "frames = 2\nbogus = 1\n").unwrap();
    let o = framemat(&["synth", "--out", p(&out), "--scene", p(&path)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bridge_check_against_local_echo_and_dead_port() {
    let o = framemat(&["bridge-check"]);
    assert!(o.status.success(), "{}", text(&o));
    assert_eq!(text(&o).matches("PASS").count(), 3);

    let addr = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().to_string()
    };
    let o = framemat(&["bridge-check", "--addr", &addr, "--timeout-ms", "1000"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("FAIL round-trip"), "{}", text(&o));
}
