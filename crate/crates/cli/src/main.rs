use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use framemat::bridge::{self, EchoMode, EchoServer};
use framemat::config::PipelineConfig;
use framemat::pipeline::{run_pipeline, verify_output, RunReport};
use framemat::synthetic::{make_synthetic, SyntheticScene};

/// Exit status when a run or check completes but an invariant fails.
const CHECK_FAILED: u8 = 2;

#[derive(Parser)]
#[command(name = "framemat", version, about = "Stereo and spatial video from RGB-D clips")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene with ground truth and a matching config.
    Synth(SynthArgs),
    /// Run the full pipeline on an input clip.
    Run(RunArgs),
    /// Re-check the invariants of an output directory.
    Verify {
        output: PathBuf,
    },
    /// Protocol self-test against a denoiser endpoint.
    BridgeCheck {
        /// host:port; a local echo endpoint is started when omitted.
        #[arg(long)]
        addr: Option<String>,
        #[arg(long, default_value_t = 5000)]
        timeout_ms: u64,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `section.key=value` override, repeatable. Applied after FM_SEED.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        cfg.apply_env()?;
        cfg.apply_overrides(&self.overrides)?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Destination; receives input/, gt/ and config.toml.
    #[arg(long)]
    out: PathBuf,
    /// Scene description in TOML; the built-in two-layer scene otherwise.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 576)]
    width: usize,
    #[arg(long, default_value_t = 320)]
    height: usize,
    #[arg(long, default_value_t = 16)]
    frames: usize,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Worker threads; all cores when omitted. Output does not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

fn synth(args: &SynthArgs) -> Result<ExitCode> {
    let scene = match &args.scene {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SyntheticScene::two_layer(args.width, args.height, args.frames),
    };
    let base = args.config.resolve()?;
    let out = make_synthetic(&scene, &base, &args.out)?;
    println!("input   {}", out.input.display());
    println!("gt      {}", out.ground_truth.display());
    println!("config  {}", out.config.display());
    Ok(ExitCode::SUCCESS)
}

fn print_report(r: &RunReport) {
    println!("seed {}  config {}", r.seed, r.config_hash);
    println!("{:?}: {} views x {} frames at {}x{}", r.mode, r.views, r.frames, r.width, r.height);
    if let Some(l) = r.outpaint {
        println!("outpaint pad {} + {}", l.pad, l.extra);
    }
    for (stage, ms) in &r.timings_ms {
        println!("  {stage:<9} {ms:>10.1} ms");
    }
    for c in &r.invariants {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(q) = &r.quality {
        let fmt = |p: Option<f64>| p.map_or("-".to_string(), |v| format!("{v:.2} dB"));
        println!(
            "view {} PSNR all {}  known {}  disoccluded {}",
            q.view,
            fmt(q.psnr_all),
            fmt(q.psnr_known),
            fmt(q.psnr_disoccluded)
        );
    }
}

fn run(args: &RunArgs) -> Result<ExitCode> {
    let cfg = args.config.resolve()?;
    let job = || run_pipeline(&cfg, &args.input, &args.output);
    let report = match args.threads {
        Some(0) => bail!("--threads must be at least 1"),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(job)?,
        None => job()?,
    };
    print_report(&report);
    Ok(if report.all_passed() { ExitCode::SUCCESS } else { ExitCode::from(CHECK_FAILED) })
}

fn verify(dir: &Path) -> Result<ExitCode> {
    let checks = verify_output(dir)?;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(if checks.iter().all(|c| c.passed) { ExitCode::SUCCESS } else { ExitCode::from(CHECK_FAILED) })
}

fn bridge_check(addr: Option<&str>, timeout: Duration) -> Result<ExitCode> {
    let local;
    let address = match addr {
        Some(a) => a.to_string(),
        None => {
            local = EchoServer::spawn(EchoMode::Echo)?;
            println!("echo endpoint at {}", local.address());
            local.address()
        }
    };
    let outcomes = bridge::self_test(&address, timeout);
    for o in &outcomes {
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    Ok(if outcomes.iter().all(|o| o.passed) { ExitCode::SUCCESS } else { ExitCode::from(CHECK_FAILED) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Run(a) => run(a),
        Command::Verify { output } => verify(output),
        Command::BridgeCheck { addr, timeout_ms } => bridge_check(addr.as_deref(), Duration::from_millis(*timeout_ms)),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
