//! `pixmotion` command-line front end.
//!
//! Parameters come from built-in defaults, then `--config FILE`, then
//! `--set key=value` overrides, then the dedicated flags of each subcommand.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::PipelineConfig;
use exit::CliError;

#[derive(Parser, Debug)]
#[command(name = "pixmotion", version, about = "Per-pixel motion probability for dynamic RGB-D sequences")]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Key-value configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override a configuration key; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Args, Debug)]
struct DatasetArgs {
    /// Manifest file, directory containing `manifest.txt`, or TUM directory.
    #[arg(long)]
    dataset: Option<String>,

    /// `manifest` or `tum`.
    #[arg(long)]
    layout: Option<String>,

    /// Output directory.
    #[arg(long, short)]
    output: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate a motion probability map for every frame.
    Estimate {
        #[command(flatten)]
        data: DatasetArgs,

        /// `baseline` or `files`.
        #[arg(long)]
        flow: Option<String>,

        /// Directory of precomputed `.flo` files.
        #[arg(long)]
        flow_dir: Option<String>,

        /// Also write movable prior, motion and splatted views.
        #[arg(long)]
        debug: bool,

        /// Also write raw `.f32` probability grids.
        #[arg(long)]
        write_f32: bool,

        /// Print the effective configuration and exit.
        #[arg(long)]
        dump_config: bool,
    },
    /// Solve a probability-weighted bundle-adjustment problem file.
    Ba {
        problem: PathBuf,

        /// Optimized problem file.
        #[arg(long, short)]
        output: PathBuf,

        /// Also write the report here.
        #[arg(long)]
        report: Option<PathBuf>,

        /// Drop points at or above the deletion threshold before solving.
        #[arg(long)]
        cull_dynamic: bool,
    },
    /// Score an estimated trajectory against ground truth (TUM format).
    Eval {
        #[arg(long)]
        est: PathBuf,

        #[arg(long)]
        gt: PathBuf,

        /// Sequence time span for the tracking rate; defaults to the ground-truth span.
        #[arg(long, num_args = 2, value_names = ["T0", "T1"])]
        span: Option<Vec<f64>>,

        /// Maximum timestamp difference for association.
        #[arg(long)]
        max_gap: Option<f64>,

        /// Write key=value results here.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Render a synthetic sequence with ground truth.
    Synth {
        /// Scene description; the built-in desk scene when omitted.
        #[arg(long)]
        scene: Option<PathBuf>,

        #[arg(long)]
        frames: Option<usize>,

        #[arg(long, short)]
        output: PathBuf,
    },
    /// Splat one frame into another's view and report the reconstruction error.
    SplatDebug {
        #[command(flatten)]
        data: DatasetArgs,

        #[arg(long)]
        target: usize,

        #[arg(long)]
        source: usize,
    },
}

fn load_config(common: &Common, flags: &[(&str, Option<String>)]) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v, None)?;
        }
    }
    Ok(cfg)
}

fn dataset_flags(d: DatasetArgs) -> Vec<(&'static str, Option<String>)> {
    vec![("dataset", d.dataset), ("layout", d.layout), ("output", d.output)]
}

fn on(b: bool) -> Option<String> {
    b.then(|| "true".to_string())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = cli.common;
    match cli.command {
        Command::Estimate { data, flow, flow_dir, debug, write_f32, dump_config } => {
            let mut flags = dataset_flags(data);
            flags.extend([
                ("flow.source", flow),
                ("flow.dir", flow_dir),
                ("debug", on(debug)),
                ("write_f32", on(write_f32)),
            ]);
            let cfg = load_config(&common, &flags)?;
            if dump_config {
                print!("{}", cfg.to_text());
                return Ok(());
            }
            let s = commands::estimate(&cfg)?;
            println!("frames={}\nfailed={}", s.frames, s.failed.len());
        }
        Command::Ba { problem, output, report, cull_dynamic } => {
            let cfg = load_config(&common, &[("ba.cull_dynamic", on(cull_dynamic))])?;
            let text = commands::bundle_adjust(&cfg, &problem, &output)?;
            if let Some(p) = report {
                std::fs::write(&p, &text).map_err(|e| CliError::io(format!("{}: {e}", p.display())))?;
            }
            print!("{text}");
        }
        Command::Eval { est, gt, span, max_gap, output } => {
            let cfg = load_config(&common, &[("eval.max_time_gap", max_gap.map(|g| g.to_string()))])?;
            let span = span.map(|v| (v[0], v[1]));
            print!("{}", commands::evaluate_trajectories(&cfg, &est, &gt, span, output.as_deref())?);
        }
        Command::Synth { scene, frames, output } => {
            print!("{}", commands::synth(scene.as_deref(), frames, &output)?);
        }
        Command::SplatDebug { data, target, source } => {
            let cfg = load_config(&common, &dataset_flags(data))?;
            print!("{}", commands::splat_debug(&cfg, target, source)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.common.jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(exit::ExitKind::Io.code());
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
