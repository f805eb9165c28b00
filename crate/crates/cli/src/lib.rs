//! The `softdistill` command line: config parsing, pipeline stage commands,
//! resumable grid sweeps and SVG plots.
//!
//! ```text
//! softdistill <gen-data|train-teacher|curate|distill|finetune|evaluate|sweep|plot>
//!     --config PATH [--set key=value]... [--jobs N] [--out DIR]
//! ```

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;
pub mod sweep;

use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};

pub use commands::Layout;
pub use config::{parse_config, parse_config_str, ExperimentConfig};
pub use error::{error_line, CliError};
pub use sweep::{SweepResult, SweepRow};

/// Environment variable that takes precedence over `--out`.
pub const OUT_ENV: &str = "SOFTDISTILL_OUT";
pub const DEFAULT_OUT: &str = "runs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    GenData,
    TrainTeacher,
    Curate,
    Distill,
    Finetune,
    Evaluate,
    Sweep,
    Plot,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainTeacher => "train-teacher",
            Command::Curate => "curate",
            Command::Distill => "distill",
            Command::Finetune => "finetune",
            Command::Evaluate => "evaluate",
            Command::Sweep => "sweep",
            Command::Plot => "plot",
        }
    }
}

#[derive(Debug, Clone, Parser)]
#[command(
    name = "softdistill",
    version,
    about = "Label-free knowledge distillation experiments"
)]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Experiment config file.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Override a config value, e.g. `--set distill.weight_decay=3e-5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads for sweeps and per-sample scoring.
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,
    /// Output directory (overridden by SOFTDISTILL_OUT).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// `SOFTDISTILL_OUT`, then `--out`, then the config's `out`, then `runs`.
pub fn output_dir(env: Option<PathBuf>, flag: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    env.filter(|p| !p.as_os_str().is_empty())
        .or_else(|| flag.map(Path::to_path_buf))
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Runs one command and returns its one-line summary.
pub fn execute(cli: &Cli, env_out: Option<PathBuf>) -> Result<String, CliError> {
    let cfg = parse_config(&cli.config, &cli.overrides)?;
    let layout = Layout::new(output_dir(env_out, cli.out.as_deref(), &cfg));
    std::fs::create_dir_all(layout.root()).map_err(|e| CliError::io(layout.root(), e))?;
    commands::write_atomic(&layout.resolved_config(), cfg.to_text().as_bytes())?;

    let jobs = cli.jobs.map_or(1, usize::from);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))?;
    pool.install(|| match cli.command {
        Command::GenData => commands::gen_data(&cfg, &layout),
        Command::TrainTeacher => commands::train_teacher_cmd(&cfg, &layout),
        Command::Curate => commands::curate_cmd(&cfg, &layout),
        Command::Distill => commands::distill_cmd(&cfg, &layout),
        Command::Finetune => commands::finetune_cmd(&cfg, &layout),
        Command::Evaluate => commands::evaluate_cmd(&cfg, &layout),
        Command::Sweep => {
            let r = sweep::sweep(&cfg, &layout, jobs)?;
            Ok(format!(
                "sweep: {} rows ({} computed, {} already recorded) in {}",
                r.rows.len(),
                r.computed,
                r.rows.len() - r.computed,
                sweep::SweepPaths::new(&layout).csv.display()
            ))
        }
        Command::Plot => plot_cmd(&cfg, &layout),
    })
}

fn plot_cmd(cfg: &ExperimentConfig, layout: &Layout) -> Result<String, CliError> {
    let p = &cfg.plot;
    let spec = plot::PlotSpec {
        series: &p.series,
        x: &p.x,
        y: &p.y,
        filter: p.filter.as_ref().map(|(c, v)| (c.as_str(), v.as_str())),
    };
    let input = layout.resolve(&p.csv);
    let (svg, n) = plot::plot(&input, &spec)?;
    let output = layout.resolve(&p.output);
    commands::write_atomic(&output, svg.as_bytes())?;
    Ok(format!("plot: {n} series written to {}", output.display()))
}
