//! Monte-Carlo calibration of the default imperfection parameters.
//!
//! Each iteration simulates several cohorts (hands only, no EMG), measures
//! the cohort means of the calibrated metrics and rescales each parameter
//! toward its target. The result, rounded to three significant digits, is
//! written as the full parameter set; the constants in
//! `mirrortrain_core::humansim::tuned` are copied from it.
//!
//! `--flip-sweep` instead runs the full decode for several coupling-flip
//! probabilities and reports how often each decoder comparison rejects.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use mirrortrain::pipeline::{analyze_sessions, decode_sessions, participant_seed, simulate_cohort};
use mirrortrain::ExperimentConfig;
use mirrortrain_core::analysis::{analyze_streams, PeakOptions, SessionStreams};
use mirrortrain_core::humansim::{scaled_coupling, simulate_hands, tuned, ImperfectionParams};
use mirrortrain_core::protocol::{default_movement_catalog, generate_virtual_stream, TrialTimingParams, VirtualSession};
use mirrortrain_core::stats::{mean, paired_t_test};
use rayon::prelude::*;

/// Cohort-mean targets: coupling and drift deviation (percent of span),
/// mimicked and mirrored magnitude error (percent of span), and the ratio
/// of the True-Contralateral to True-Virtual stream RMSE.
const COUPLING_TARGET: f64 = 11.43;
const DRIFT_TARGET: f64 = 7.07;
const MIMICKED_MAGNITUDE_TARGET: f64 = 12.89;
const MIRRORED_MAGNITUDE_TARGET: f64 = 6.67;
const STREAM_RMSE_RATIO_TARGET: f64 = 0.16 / 0.19;

#[derive(Debug, Parser)]
#[command(about = "Calibrate the default imperfection parameters by Monte Carlo")]
struct Args {
    /// Cohorts simulated per iteration.
    #[arg(long, default_value_t = 40)]
    cohorts: u32,
    #[arg(long, default_value_t = 7)]
    cohort_size: u32,
    #[arg(long, default_value_t = 8)]
    iterations: u32,
    /// Master seed of the calibration cohorts (kept apart from run seeds).
    #[arg(long, default_value_t = 900_000)]
    seed: u64,
    /// Where to write the calibrated parameter set.
    #[arg(long, default_value = concat!(env!("CARGO_MANIFEST_DIR"), "/data/paper_tuned_imperfections.json"))]
    out: PathBuf,
    /// Print the result without writing it.
    #[arg(long)]
    dry_run: bool,
    /// Comma-separated coupling-flip probabilities to evaluate by decoding.
    #[arg(long, value_delimiter = ',')]
    flip_sweep: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Knobs {
    coupling_scale: f64,
    drift_step_sigma: f64,
    magnitude_gain_mean: f64,
    mirror_magnitude_sd: f64,
    mirror_rest_offset_sd: f64,
}

impl Knobs {
    fn current() -> Self {
        Knobs {
            coupling_scale: tuned::COUPLING_SCALE,
            drift_step_sigma: tuned::DRIFT_STEP_SIGMA,
            magnitude_gain_mean: tuned::MAGNITUDE_GAIN_MEAN,
            mirror_magnitude_sd: tuned::MIRROR_MAGNITUDE_SD,
            mirror_rest_offset_sd: tuned::MIRROR_REST_OFFSET_SD,
        }
    }

    fn params(&self) -> ImperfectionParams {
        ImperfectionParams {
            coupling_matrix: scaled_coupling(self.coupling_scale),
            drift_step_sigma: self.drift_step_sigma,
            magnitude_gain_mean: self.magnitude_gain_mean,
            mirror_magnitude_sd: self.mirror_magnitude_sd,
            mirror_rest_offset_sd: self.mirror_rest_offset_sd,
            ..ImperfectionParams::paper_tuned()
        }
    }

    fn rounded(&self) -> Self {
        Knobs {
            coupling_scale: round3(self.coupling_scale),
            drift_step_sigma: round3(self.drift_step_sigma),
            magnitude_gain_mean: round3(self.magnitude_gain_mean),
            mirror_magnitude_sd: round3(self.mirror_magnitude_sd),
            mirror_rest_offset_sd: round3(self.mirror_rest_offset_sd),
        }
    }
}

/// Rounds to three significant digits.
fn round3(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let scale = 10f64.powi(2 - x.abs().log10().floor() as i32);
    let r = (x * scale).round() / scale;
    // Reparse so the value is the shortest decimal, as written in source.
    format!("{r:.12}").parse::<f64>().map(|v| format!("{v}").parse().unwrap_or(v)).unwrap_or(r)
}

#[derive(Debug, Clone, Copy)]
struct Measured {
    coupling: f64,
    drift: f64,
    mimicked_magnitude: f64,
    mirrored_magnitude: f64,
    rmse_ratio: f64,
}

fn measure(virt: &VirtualSession, params: &ImperfectionParams, args: &Args) -> Result<Measured> {
    let n = args.cohorts * args.cohort_size;
    let metrics = (0..n)
        .into_par_iter()
        .map(|i| {
            let seed = participant_seed(args.seed + u64::from(i / args.cohort_size), i % args.cohort_size);
            let hands = simulate_hands(virt, params, seed)?;
            let streams = SessionStreams {
                participant_id: i,
                true_stream: &hands.true_stream,
                contralateral_stream: &hands.contralateral_stream,
                virtual_stream: &virt.stream,
                trials: &virt.trials,
                catalog: &virt.catalog,
                baseline_rest_window: virt.baseline_rest_window(),
            };
            analyze_streams(&streams, &PeakOptions::default())
        })
        .collect::<mirrortrain_core::Result<Vec<_>>>()?;
    let avg = |f: &dyn Fn(&mirrortrain_core::analysis::ParticipantMetrics) -> f64| mean(&metrics.iter().map(f).collect::<Vec<_>>());
    Ok(Measured {
        coupling: avg(&|m| m.coupling.median),
        drift: avg(&|m| m.drift.median),
        mimicked_magnitude: avg(&|m| m.mimicked.magnitude_median),
        mirrored_magnitude: avg(&|m| m.mirrored.magnitude_median),
        rmse_ratio: avg(&|m| m.mirrored.stream_rmse) / avg(&|m| m.mimicked.stream_rmse),
    })
}

fn calibrate(args: &Args) -> Result<()> {
    let virt = generate_virtual_stream(&default_movement_catalog(), &TrialTimingParams::default())?;
    let mut k = Knobs::current();
    for it in 0..args.iterations {
        let m = measure(&virt, &k.params(), args)?;
        eprintln!(
            "iteration {it}: coupling {:.3} drift {:.3} magnitude {:.3}/{:.3} rmse ratio {:.4} | {k:?}",
            m.coupling, m.drift, m.mimicked_magnitude, m.mirrored_magnitude, m.rmse_ratio
        );
        k.coupling_scale *= COUPLING_TARGET / m.coupling;
        k.drift_step_sigma *= DRIFT_TARGET / m.drift;
        k.magnitude_gain_mean = 1.0 - (1.0 - k.magnitude_gain_mean) * MIMICKED_MAGNITUDE_TARGET / m.mimicked_magnitude;
        k.mirror_magnitude_sd *= MIRRORED_MAGNITUDE_TARGET / m.mirrored_magnitude;
        k.mirror_rest_offset_sd *= STREAM_RMSE_RATIO_TARGET / m.rmse_ratio;
    }
    let k = k.rounded();
    let m = measure(&virt, &k.params(), args)?;
    eprintln!(
        "final: coupling {:.3} drift {:.3} magnitude {:.3}/{:.3} rmse ratio {:.4}",
        m.coupling, m.drift, m.mimicked_magnitude, m.mirrored_magnitude, m.rmse_ratio
    );
    println!("pub const COUPLING_SCALE: f64 = {};", k.coupling_scale);
    println!("pub const DRIFT_STEP_SIGMA: f64 = {};", k.drift_step_sigma);
    println!("pub const MAGNITUDE_GAIN_MEAN: f64 = {};", k.magnitude_gain_mean);
    println!("pub const MIRROR_MAGNITUDE_SD: f64 = {};", k.mirror_magnitude_sd);
    println!("pub const MIRROR_REST_OFFSET_SD: f64 = {};", k.mirror_rest_offset_sd);
    if !args.dry_run {
        let mut text = serde_json::to_string_pretty(&k.params())?;
        text.push('\n');
        std::fs::write(&args.out, text).with_context(|| format!("writing {}", args.out.display()))?;
        eprintln!("wrote {}", args.out.display());
    }
    Ok(())
}

/// Counts, over cohorts, how often mimicked wins on its own labels
/// (p < 0.05) and how often the True-Kinematics comparison does not reject.
fn flip_sweep(args: &Args) -> Result<()> {
    for &flip in &args.flip_sweep {
        let (mut own, mut truth) = (0, 0);
        for c in 0..args.cohorts {
            let mut config = ExperimentConfig::default();
            config.cohort_size = args.cohort_size;
            config.master_seed = args.seed + u64::from(c);
            config.imperfections.coupling_flip_prob = flip;
            let sessions: Vec<_> = simulate_cohort(&config)?.into_iter().map(|(s, _)| s).collect();
            analyze_sessions(&sessions, &config.analysis)?;
            let d: Vec<_> = decode_sessions(&sessions, &config.decoder)?.into_iter().map(|o| o.report).collect();
            let pick = |f: fn(&mirrortrain::pipeline::ParadigmDecode) -> f64| -> (Vec<f64>, Vec<f64>) {
                (d.iter().map(|p| f(&p.mimicked)).collect(), d.iter().map(|p| f(&p.mirrored)).collect())
            };
            let (a, b) = pick(|x| x.training_labels.pooled);
            let r = paired_t_test(&a, &b)?;
            own += u32::from(r.p < 0.05 && r.t < 0.0);
            let (a, b) = pick(|x| x.true_kinematics.pooled);
            let r = paired_t_test(&a, &b)?;
            truth += u32::from(r.p >= 0.05);
            eprintln!("flip {flip} cohort {c}: true-kinematics t {:.2} p {:.3}", r.t, r.p);
        }
        println!("flip {flip}: own-label wins {own}/{n}, true-kinematics non-rejections {truth}/{n}", n = args.cohorts);
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MIRRORTRAIN_LOG", "warn")).init();
    let args = Args::parse();
    if args.flip_sweep.is_empty() {
        calibrate(&args)
    } else {
        flip_sweep(&args)
    }
}
