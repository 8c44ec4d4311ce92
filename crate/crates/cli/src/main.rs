//! CLI entry point. Exit codes: 0 success, 1 fatal validation or usage
//! problem, 2 stage failure during a run.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use verdant_cli::{config, export, fixture, pipeline, report, validate};

#[derive(Parser)]
#[command(
    name = "verdant",
    version,
    about = "Area-level greenery exposure, walking-access targets, prescription linkage, and spatial statistics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a configuration and its input bundle; prints a machine-readable report
    Validate {
        /// Path to the pipeline configuration (TOML)
        #[arg(long)]
        config: PathBuf,
    },
    /// Execute pipeline stages, reusing cached results where valid
    Run {
        /// Path to the pipeline configuration (TOML)
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset of stages (metrics,targets,prescriptions,stats); default all
        #[arg(long, value_delimiter = ',')]
        stages: Vec<String>,
        /// Override the random seed from the configuration
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for stage internals (default: all cores)
        #[arg(long)]
        jobs: Option<usize>,
        /// Override the output directory from the configuration
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render choropleth maps (GeoJSON + SVG) from computed results
    Export {
        /// Path to the pipeline configuration (TOML)
        #[arg(long)]
        config: PathBuf,
        /// Single column to export; default: every available column
        #[arg(long)]
        metric: Option<String>,
        /// Override the output directory from the configuration
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize the latest run in plain text
    Report {
        /// Path to the pipeline configuration (TOML)
        #[arg(long)]
        config: PathBuf,
        /// Override the output directory from the configuration
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a small self-contained example input bundle and config
    Fixture {
        /// Seed for the generated data
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Directory to write the bundle into
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &PathBuf, out: Option<PathBuf>) -> Result<config::PipelineConfig> {
    let mut cfg = config::PipelineConfig::load(path)?;
    if let Some(dir) = out {
        cfg.output.dir = dir;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = load_config(&config, None)?;
            let report = validate::validate(&cfg);
            println!("{}", report.to_json());
            Ok(if report.ok() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Run { config, stages, seed, jobs, out } => {
            if let Some(jobs) = jobs {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(jobs)
                    .build_global()
                    .context("worker pool")?;
            }
            let mut cfg = load_config(&config, out)?;
            if let Some(seed) = seed {
                cfg.params.seed = seed;
            }
            let report = validate::validate(&cfg);
            if !report.ok() {
                println!("{}", report.to_json());
                return Ok(ExitCode::from(1));
            }
            for finding in &report.warnings {
                eprintln!("warning: {}: {}", finding.input, finding.message);
            }
            let manifest = pipeline::run(&cfg, &stages)?;
            for stage in &manifest.stages {
                let extra = match &stage.error {
                    Some(e) => format!(" — {e}"),
                    None => String::new(),
                };
                println!("{:<14} {}{}", stage.name, stage.status, extra);
            }
            Ok(if manifest.any_failed() { ExitCode::from(2) } else { ExitCode::SUCCESS })
        }
        Command::Export { config, metric, out } => {
            let cfg = load_config(&config, out)?;
            let written = export::export_choropleth(&cfg, metric.as_deref())?;
            for path in written {
                println!("{}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { config, out } => {
            let cfg = load_config(&config, out)?;
            print!("{}", report::render(&cfg)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Fixture { seed, out } => {
            let config_path = fixture::write_fixture(seed, &out)?;
            println!("{}", config_path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
