//! Cohort-level stages: simulate, analyze, decode and the combined run.

use std::path::{Path, PathBuf};

use log::info;
use mirrortrain_core::analysis::{analyze_session, cohort_aggregate, cohort_paired, CohortEntry, CohortReport, ParticipantMetrics, PeakOptions};
use mirrortrain_core::decoder::{fit, infer, score, DecoderModel, Reference, RmseReport};
use mirrortrain_core::features::{extract_features, FeatureMatrix};
use mirrortrain_core::humansim::GroundTruthLog;
use mirrortrain_core::labeling::{build_mimicked, build_mirrored, estimate_alignment_lag, LabeledDataset, Paradigm, TrialSplit};
use mirrortrain_core::{rng, simulate_session, SessionDataset, NUM_DOFS};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DecoderOptions, ExperimentConfig};
use crate::error::{Error, Result};
use crate::io;

/// Seed of participant `index`, split from the master seed.
pub fn participant_seed(master_seed: u64, index: u32) -> u64 {
    rng::derive_seed(master_seed, u64::from(index))
}

pub fn session_dir_name(participant: u32) -> String {
    format!("participant_{participant:02}")
}

/// Runs `f` on a pool of `jobs` threads (all cores when `None`).
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| Error::ThreadPool(e.to_string()))?;
    Ok(pool.install(f))
}

pub fn simulate_participant(config: &ExperimentConfig, participant: u32) -> Result<(SessionDataset, GroundTruthLog)> {
    let seed = participant_seed(config.master_seed, participant);
    simulate_session(&config.session_config(), participant, seed).map_err(|source| Error::Participant { participant, source })
}

/// Simulates the cohort in memory, in participant order.
pub fn simulate_cohort(config: &ExperimentConfig) -> Result<Vec<(SessionDataset, GroundTruthLog)>> {
    config.validate()?;
    (0..config.cohort_size).into_par_iter().map(|p| simulate_participant(config, p)).collect()
}

/// Writes one session directory per participant under `out`.
pub fn cmd_simulate(config: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    config.validate()?;
    io::create_dir(out)?;
    let echo = config.echo();
    (0..config.cohort_size)
        .into_par_iter()
        .map(|p| {
            let (session, log) = simulate_participant(config, p)?;
            let dir = out.join(session_dir_name(p));
            io::write_session(&dir, &session, &log, &echo)?;
            info!("simulated participant {p} into {}", dir.display());
            Ok(dir)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub config: serde_json::Value,
    pub participants: Vec<ParticipantMetrics>,
    pub cohort: CohortReport,
}

pub fn analyze_sessions(sessions: &[SessionDataset], options: &PeakOptions) -> Result<(Vec<ParticipantMetrics>, CohortReport)> {
    let metrics: Vec<ParticipantMetrics> = sessions
        .par_iter()
        .map(|s| {
            analyze_session(s, options).map_err(|source| Error::Participant {
                participant: s.participant_id,
                source,
            })
        })
        .collect::<Result<_>>()?;
    let cohort = cohort_aggregate(&metrics)?;
    Ok((metrics, cohort))
}

/// Kinematic metrics and statistics: `fig2.csv`, `fig3.csv`, `report.json`.
pub fn cmd_analyze(cohort_dir: &Path, config: Option<&ExperimentConfig>) -> Result<AnalysisReport> {
    let (sessions, echo) = io::read_cohort(cohort_dir)?;
    let echo = config.map_or(echo, ExperimentConfig::echo);
    let options = options_from_echo::<PeakOptions>(&echo, "analysis", config.map(|c| c.analysis))?;
    let (participants, cohort) = analyze_sessions(&sessions, &options)?;
    let report = AnalysisReport {
        config: echo,
        participants,
        cohort,
    };
    io::write_text(&cohort_dir.join("fig2.csv"), &fig2_csv(&report.participants))?;
    io::write_text(&cohort_dir.join("fig3.csv"), &fig3_csv(&report.participants))?;
    io::write_json(&cohort_dir.join("report.json"), &report)?;
    Ok(report)
}

fn options_from_echo<T: serde::de::DeserializeOwned>(echo: &serde_json::Value, key: &str, explicit: Option<T>) -> Result<T> {
    if let Some(v) = explicit {
        return Ok(v);
    }
    let value = echo.get(key).cloned().unwrap_or(serde_json::Value::Null);
    if value.is_null() {
        return serde_json::from_value(serde_json::json!({})).map_err(|e| Error::config(key, e.to_string()));
    }
    serde_json::from_value(value).map_err(|e| Error::config(key, e.to_string()))
}

/// Tidy CSV header shared by the figure tables.
const FIGURE_HEADER: &str = "metric,paradigm,participant,value\n";

fn fig2_csv(participants: &[ParticipantMetrics]) -> String {
    let mut out = String::from(FIGURE_HEADER);
    for p in participants {
        out += &format!("coupling_percent,true,{},{}\n", p.participant_id, p.coupling.median);
    }
    for p in participants {
        out += &format!("drift_percent,true,{},{}\n", p.participant_id, p.drift.median);
    }
    out
}

fn fig3_csv(participants: &[ParticipantMetrics]) -> String {
    let mut out = String::from(FIGURE_HEADER);
    for (name, mimicked, mirrored) in mirrortrain_core::analysis::paired_metric_values(participants) {
        for (paradigm, values) in [("mimicked", &mimicked), ("mirrored", &mirrored)] {
            for (p, v) in participants.iter().zip(values) {
                out += &format!("{name},{paradigm},{},{v}\n", p.participant_id);
            }
        }
    }
    out
}

/// Test-set RMSE of one paradigm's decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParadigmDecode {
    pub paradigm: Paradigm,
    pub applied_lag: i32,
    pub train_frames: usize,
    /// Against the paradigm's own (possibly shifted) labels.
    pub training_labels: RmseReport,
    /// Against the True stream at the same frames.
    pub true_kinematics: RmseReport,
    /// The constant-zero predictor against the same labels.
    pub zero_predictor: RmseReport,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantDecode {
    pub participant_id: u32,
    pub estimated_lag: i32,
    pub split: TrialSplit,
    pub mimicked: ParadigmDecode,
    pub mirrored: ParadigmDecode,
}

/// Decode results plus the fitted models (mimicked, mirrored).
#[derive(Debug, Clone)]
pub struct DecodeOutcome {
    pub report: ParticipantDecode,
    pub models: [DecoderModel; 2],
}

fn decode_paradigm(dataset: &LabeledDataset<'_>, session: &SessionDataset, options: &DecoderOptions) -> mirrortrain_core::Result<(ParadigmDecode, DecoderModel)> {
    let model = fit(dataset, &options.fit_options())?;
    let estimates = infer(&model, dataset.features)?;
    let training_labels = score(&estimates, dataset, Reference::TrainingLabels)?;
    let true_kinematics = score(&estimates, dataset, Reference::Stream(&session.true_stream))?;
    let zeros = vec![[0.0; NUM_DOFS]; dataset.features.n_frames()];
    let zero_predictor = score(&zeros, dataset, Reference::TrainingLabels)?;
    let report = ParadigmDecode {
        paradigm: dataset.paradigm,
        applied_lag: dataset.applied_lag,
        train_frames: dataset.train_frames().count(),
        training_labels,
        true_kinematics,
        zero_predictor,
        lambda: model.lambda,
    };
    Ok((report, model))
}

pub fn session_features(session: &SessionDataset, options: &DecoderOptions) -> mirrortrain_core::Result<FeatureMatrix> {
    let times: Vec<f64> = session.virtual_stream.frames.iter().map(|f| f.t).collect();
    extract_features(&session.emg, &times, options.feature_window_s)
}

/// Features, lag, split, both fits and their test-set scores for one participant.
pub fn decode_participant(session: &SessionDataset, options: &DecoderOptions) -> Result<DecodeOutcome> {
    let run = || -> mirrortrain_core::Result<_> {
        let features = session_features(session, options)?;
        let lag = estimate_alignment_lag(&session.virtual_stream, &features, options.max_lag)?;
        let split = TrialSplit::draw(session.catalog.len(), session.timing.trials_per_movement, session.seed);
        let mimicked = build_mimicked(session, &features, lag, &split)?;
        let mirrored = build_mirrored(session, &features, &split)?;
        let (mim, mim_model) = decode_paradigm(&mimicked, session, options)?;
        let (mir, mir_model) = decode_paradigm(&mirrored, session, options)?;
        Ok(DecodeOutcome {
            report: ParticipantDecode {
                participant_id: session.participant_id,
                estimated_lag: lag,
                split,
                mimicked: mim,
                mirrored: mir,
            },
            models: [mim_model, mir_model],
        })
    };
    run().map_err(|source| Error::Participant {
        participant: session.participant_id,
        source,
    })
}

pub mod metric {
    pub const RMSE_TRAINING_LABELS: &str = "rmse_training_labels";
    pub const RMSE_TRUE_KINEMATICS: &str = "rmse_true_kinematics";
}

/// Paired mimicked-vs-mirrored tests on both RMSE conditions.
pub fn decode_cohort_stats(participants: &[ParticipantDecode]) -> Result<Vec<CohortEntry>> {
    let pick = |f: fn(&ParadigmDecode) -> f64| -> (Vec<f64>, Vec<f64>) {
        (
            participants.iter().map(|p| f(&p.mimicked)).collect(),
            participants.iter().map(|p| f(&p.mirrored)).collect(),
        )
    };
    let (a, b) = pick(|d| d.training_labels.pooled);
    let own = cohort_paired(metric::RMSE_TRAINING_LABELS, ("mimicked", &a), ("mirrored", &b))?;
    let (a, b) = pick(|d| d.true_kinematics.pooled);
    let truth = cohort_paired(metric::RMSE_TRUE_KINEMATICS, ("mimicked", &a), ("mirrored", &b))?;
    Ok(vec![own, truth])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeReport {
    pub config: serde_json::Value,
    pub participants: Vec<ParticipantDecode>,
    pub cohort: Vec<CohortEntry>,
}

pub fn decode_sessions(sessions: &[SessionDataset], options: &DecoderOptions) -> Result<Vec<DecodeOutcome>> {
    sessions.par_iter().map(|s| decode_participant(s, options)).collect()
}

fn fig4_csv(participants: &[ParticipantDecode]) -> String {
    let mut out = String::from(FIGURE_HEADER);
    let rows: [(&str, fn(&ParadigmDecode) -> f64); 2] = [
        (metric::RMSE_TRAINING_LABELS, |d| d.training_labels.pooled),
        (metric::RMSE_TRUE_KINEMATICS, |d| d.true_kinematics.pooled),
    ];
    for (name, f) in rows {
        for paradigm in Paradigm::ALL {
            for p in participants {
                let d = match paradigm {
                    Paradigm::Mimicked => &p.mimicked,
                    Paradigm::Mirrored => &p.mirrored,
                };
                out += &format!("{name},{},{},{}\n", paradigm.as_str(), p.participant_id, f(d));
            }
        }
    }
    out
}

/// Decoder overrides from the command line.
#[derive(Debug, Clone, Copy, Default)]
pub struct DecodeOverrides {
    pub channel_subset: Option<usize>,
    pub no_postprocess: bool,
}

impl DecodeOverrides {
    pub fn apply(&self, options: &mut DecoderOptions) {
        if let Some(k) = self.channel_subset {
            options.channel_subset = Some(k);
        }
        if self.no_postprocess {
            options.post.enabled = false;
        }
    }
}

/// Fits and scores both paradigms per participant: `fig4.csv`,
/// `decode_report.json` and each participant's two `model_*.json`.
pub fn cmd_decode(cohort_dir: &Path, config: Option<&ExperimentConfig>, overrides: DecodeOverrides) -> Result<DecodeReport> {
    let (sessions, echo) = io::read_cohort(cohort_dir)?;
    let mut echo = config.map_or(echo, ExperimentConfig::echo);
    let mut options = options_from_echo::<DecoderOptions>(&echo, "decoder", config.map(|c| c.decoder.clone()))?;
    overrides.apply(&mut options);
    options.validate()?;
    if let Some(obj) = echo.as_object_mut() {
        obj.insert("decoder".into(), serde_json::to_value(&options).expect("options serialize"));
    }
    let outcomes = decode_sessions(&sessions, &options)?;
    for o in &outcomes {
        let dir = cohort_dir.join(session_dir_name(o.report.participant_id));
        for (paradigm, model) in Paradigm::ALL.iter().zip(&o.models) {
            io::write_model(&dir.join(format!("model_{}.json", paradigm.as_str())), model)?;
        }
    }
    let participants: Vec<ParticipantDecode> = outcomes.into_iter().map(|o| o.report).collect();
    let cohort = decode_cohort_stats(&participants)?;
    let report = DecodeReport {
        config: echo,
        participants,
        cohort,
    };
    io::write_text(&cohort_dir.join("fig4.csv"), &fig4_csv(&report.participants))?;
    io::write_json(&cohort_dir.join("decode_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullReport {
    pub config: serde_json::Value,
    pub sessions: Vec<String>,
    /// Figure name to table file, relative to the output directory.
    pub figures: Vec<(String, String)>,
    pub analysis_report: String,
    pub decode_report: String,
    pub kinematics: CohortReport,
    pub decoding: Vec<CohortEntry>,
}

/// Simulate, analyze and decode into `out`, then write `full_report.json`.
pub fn cmd_full(config: &ExperimentConfig, out: &Path, overrides: DecodeOverrides) -> Result<FullReport> {
    let mut config = config.clone();
    overrides.apply(&mut config.decoder);
    config.validate()?;
    let dirs = cmd_simulate(&config, out)?;
    let analysis = cmd_analyze(out, Some(&config))?;
    let decode = cmd_decode(out, Some(&config), DecodeOverrides::default())?;
    let report = FullReport {
        config: config.echo(),
        sessions: dirs
            .iter()
            .map(|d| d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
            .collect(),
        figures: vec![
            ("fig2".into(), "fig2.csv".into()),
            ("fig3".into(), "fig3.csv".into()),
            ("fig4".into(), "fig4.csv".into()),
        ],
        analysis_report: "report.json".into(),
        decode_report: "decode_report.json".into(),
        kinematics: analysis.cohort,
        decoding: decode.cohort,
    };
    io::write_json(&out.join("full_report.json"), &report)?;
    Ok(report)
}
