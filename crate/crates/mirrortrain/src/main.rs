use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mirrortrain::error::ErrorReport;
use mirrortrain::pipeline::{self, DecodeOverrides};
use mirrortrain::{Error, ExperimentConfig, Result};

/// Simulated comparison of mimicked and mirrored training labels for
/// myoelectric Kalman decoders.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cohort directory: written by `simulate`/`full`, read by `analyze`/`decode`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Keep only the k features most correlated with the labels.
    #[arg(long, global = true)]
    channel_subset: Option<usize>,
    /// Disable the decoder's deadband/clamp post-processing.
    #[arg(long, global = true)]
    no_postprocess: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate every participant and write their session directories.
    Simulate,
    /// Kinematic metrics and statistics for an existing cohort.
    Analyze,
    /// Fit and score both decoders for an existing cohort.
    Decode,
    /// Simulate, analyze and decode in one run.
    Full,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir.clone_from(out);
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<serde_json::Value> {
    let overrides = DecodeOverrides {
        channel_subset: cli.channel_subset,
        no_postprocess: cli.no_postprocess,
    };
    let config = load_config(cli)?;
    let out = config.output_dir.clone();
    // Analysis and decoding read their settings from the sessions' config
    // echo unless a config file is given explicitly.
    let explicit = cli.config.is_some().then_some(&config);
    pipeline::with_jobs(cli.jobs, || -> Result<serde_json::Value> {
        Ok(match cli.command {
            Command::Simulate => {
                let dirs = pipeline::cmd_simulate(&config, &out)?;
                serde_json::json!({ "command": "simulate", "sessions": dirs })
            }
            Command::Analyze => {
                pipeline::cmd_analyze(&out, explicit)?;
                serde_json::json!({ "command": "analyze", "report": out.join("report.json") })
            }
            Command::Decode => {
                pipeline::cmd_decode(&out, explicit, overrides)?;
                serde_json::json!({ "command": "decode", "report": out.join("decode_report.json") })
            }
            Command::Full => {
                pipeline::cmd_full(&config, &out, overrides)?;
                serde_json::json!({ "command": "full", "report": out.join("full_report.json") })
            }
        })
    })?
}

fn fail(report: &ErrorReport) -> ExitCode {
    let text = serde_json::to_string(&serde_json::json!({ "error": report })).expect("error report serializes");
    eprintln!("{text}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MIRRORTRAIN_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version.
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            return fail(&ErrorReport {
                kind: "usage",
                message: e.to_string().trim().to_string(),
                field: None,
                path: None,
            })
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            fail(&Error::report(&e))
        }
    }
}
