//! `navsfm`: simulate surveys, reconstruct datasets, evaluate runs and
//! redraw plots.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use navsfm::pipeline::{
    self, export_simulation, latest_checkpoint, load_dataset, load_finished, load_ground_truth, run_pipeline,
    write_outputs, write_plots, MetricsFile, PipelineConfig, PipelineError, PipelineOutput, RunOptions, Stage,
    CONFIG_ENV,
};

#[derive(Parser)]
#[command(name = "navsfm", version, about = "Navigation-aided hierarchical SfM for seafloor surveys")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (TOML). Defaults apply to anything it omits.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Seed for every random stream; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core); overrides the configuration.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override any configuration key, e.g. `--set weak.mu=30`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a survey and write it as a dataset directory.
    Simulate {
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a dataset directory.
    Reconstruct {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Reconstruct against ground truth with evaluation modes enabled.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Evaluation modes to enable on top of the standard metrics.
        #[arg(long, value_enum, default_values_t = [Mode::Ablation])]
        mode: Vec<Mode>,
    },
    /// Redraw the plots of a finished run from its checkpoints.
    Plot {
        /// Dataset directory the run was made on.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint_dir: PathBuf,
        /// Directory for the SVG files.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Dataset directory (navigation.csv, matches.bin, camera.json).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for reconstruction, metrics and plots.
    #[arg(long)]
    out: PathBuf,
    /// Persist a checkpoint after every stage into this directory.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Resume after this stage (needs --checkpoint-dir); `latest` picks the
    /// most recent checkpoint.
    #[arg(long, value_name = "STAGE")]
    resume: Option<String>,
    /// Evaluate against the dataset's ground_truth/ directory.
    #[arg(long)]
    truth: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Direct triangulation on priors, PGO poses and PGO inlier tracks.
    Ablation,
    /// Time a single-cluster incremental reconstruction as well.
    Efficiency,
}

/// Failures outside the pipeline proper (arguments, overrides).
const USAGE_EXIT: u8 = 1;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<PipelineError>()
                .map_or(USAGE_EXIT, |p| p.exit_code() as u8);
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Simulate { out } => simulate(&cfg, &out),
        Command::Reconstruct { run } => reconstruct(&cfg, &run),
        Command::Evaluate { run, mode } => {
            cfg.evaluation.direct_triangulation |= mode.contains(&Mode::Ablation);
            cfg.evaluation.compare_single_cluster |= mode.contains(&Mode::Efficiency);
            let run = RunArgs { truth: true, ..run };
            reconstruct(&cfg, &run)
        }
        Command::Plot {
            data,
            checkpoint_dir,
            out,
        } => plot(&data, &checkpoint_dir, &out),
    }
}

fn load_config(c: &Common) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(path) => PipelineConfig::load(path).map_err(PipelineError::from)?,
        None => PipelineConfig::default(),
    };
    if !c.overrides.is_empty() {
        cfg = apply_overrides(&cfg, &c.overrides)?;
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = c.threads {
        cfg.threads = threads;
    }
    cfg.validate().map_err(PipelineError::from)?;
    Ok(cfg)
}

/// Applies `a.b.c=value` assignments; values are TOML literals, bare words
/// are taken as strings.
fn apply_overrides(cfg: &PipelineConfig, overrides: &[String]) -> anyhow::Result<PipelineConfig> {
    let mut doc: toml::Table = toml::from_str(&cfg.to_toml()).context("configuration")?;
    for o in overrides {
        let (key, value) = o.split_once('=').ok_or_else(|| anyhow!("override {o:?} is not KEY=VALUE"))?;
        let value = value.trim();
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let path: Vec<&str> = key.trim().split('.').collect();
        let (last, parents) = path.split_last().expect("split yields one item");
        let mut table = &mut doc;
        for p in parents {
            table = table
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| anyhow!("override {key:?}: {p} is not a section"))?;
        }
        table.insert(last.to_string(), parsed);
    }
    let text = toml::to_string(&doc)?;
    Ok(PipelineConfig::from_toml(&text).map_err(PipelineError::from)?)
}

fn simulate(cfg: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let ds = pipeline::simulate(&cfg.simulation, cfg.seed)
        .map_err(|e| PipelineError::from(pipeline::ConfigError::Invalid(e.to_string())))?;
    export_simulation(out, &ds).map_err(PipelineError::Output)?;
    println!(
        "wrote {} images, {} pairs, {} matches to {}",
        ds.navigation.len(),
        ds.sim.matches.pairs.len(),
        ds.sim.matches.total_matches(),
        out.display()
    );
    Ok(())
}

fn reconstruct(cfg: &PipelineConfig, args: &RunArgs) -> anyhow::Result<()> {
    let dataset = load_dataset(&args.data).map_err(PipelineError::Input)?;
    let truth = if args.truth {
        Some(load_ground_truth(&args.data, &dataset).map_err(PipelineError::Input)?)
    } else {
        None
    };
    let input = dataset.into_input(truth);
    let resume_after = match args.resume.as_deref() {
        None => None,
        Some(name) => Some(resume_stage(name, args.checkpoint_dir.as_deref())?),
    };
    let opts = RunOptions {
        checkpoint_dir: args.checkpoint_dir.clone(),
        resume_after,
    };
    let out = run_pipeline(cfg, &input, &opts)?;
    write_outputs(&args.out, &input, &out)?;
    summarize(&out);
    println!("outputs in {}", args.out.display());
    Ok(())
}

fn resume_stage(name: &str, dir: Option<&Path>) -> anyhow::Result<Stage> {
    let dir = dir.ok_or_else(|| PipelineError::Checkpoint("--resume needs --checkpoint-dir".into()))?;
    if name == "latest" {
        return Ok(latest_checkpoint(dir)
            .ok_or_else(|| PipelineError::Checkpoint(format!("no checkpoint in {}", dir.display())))?);
    }
    Stage::parse(name).ok_or_else(|| {
        let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
        anyhow!("unknown stage {name:?}; expected one of {} or latest", names.join(", "))
    })
}

fn plot(data: &Path, checkpoint_dir: &Path, out: &Path) -> anyhow::Result<()> {
    let run = load_finished(checkpoint_dir)?;
    let dataset = load_dataset(data).map_err(PipelineError::Input)?;
    let truth = load_ground_truth(data, &dataset).ok();
    let input = dataset.into_input(truth);
    std::fs::create_dir_all(out).with_context(|| out.display().to_string())?;
    write_plots(out, &input, &run)?;
    println!("plots in {}", out.display());
    Ok(())
}

fn summarize(out: &PipelineOutput) {
    let m = &out.metrics;
    println!("registered {}/{} images, {} landmarks", m.registered, m.total, m.landmarks);
    println!("mean track length {:.2}, reprojection error {:.4} px", m.track_length, m.reprojection_error);
    println!("ATE vs navigation {:.4} m", m.ate_navigation);
    if let Some(ate) = m.ate_truth {
        println!("ATE vs ground truth {ate:.4} m");
    }
    for dt in &m.direct_triangulation {
        println!("direct triangulation {:?}: {:.3} px over {} landmarks", dt.mode, dt.reprojection_error, dt.landmarks);
    }
    if let Some(r) = m.efficiency_ratio {
        println!("hierarchical / single-cluster wall-clock {r:.3}");
    }
    log::debug!("{}", MetricsFile::from_output(out).to_json());
}
