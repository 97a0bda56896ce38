//! Kinematic metrics and cohort statistics.
//!
//! All deviations are percent of the normalized span (see
//! [`deviation_percent`]). Rest positions come from the mean of each trial's
//! preceding intertrial interval in the stream being measured.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::kinematics::{deviation_percent, to_percent_of_span, KinematicStream};
use crate::protocol::MovementSpec;
use crate::session::{SessionDataset, TrialRecord};
use crate::stats::{self, TTestResult};
use crate::{Error, Result, NUM_DOFS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeakOptions {
    /// Frames within this many percent of the maximum deviation count as
    /// ties for the peak; the earliest wins.
    pub tie_tolerance_percent: f64,
    /// A target trace whose maximum deviation is at or below this is flat
    /// and has no defined peak time.
    pub noise_floor_percent: f64,
}

impl Default for PeakOptions {
    fn default() -> Self {
        PeakOptions {
            tie_tolerance_percent: 1.0,
            noise_floor_percent: 1.0,
        }
    }
}

/// Per-DOF mean of the frames with `t ∈ [t0, t1)`.
pub fn resting_position(stream: &KinematicStream, window: [f64; 2]) -> Result<[f64; NUM_DOFS]> {
    let range = stream.index_range(window[0], window[1]);
    if range.is_empty() {
        return Err(Error::EmptyWindow("rest interval contains no frames"));
    }
    let n = range.len() as f64;
    let mut acc = [0.0; NUM_DOFS];
    for f in &stream.frames[range] {
        for (a, v) in acc.iter_mut().zip(f.angles) {
            *a += f64::from(v);
        }
    }
    Ok(acc.map(|a| a / n))
}

/// Peak deviation of every non-target DOF during the trial, `(dof, percent)`.
pub fn coupling_peaks(stream: &KinematicStream, trial: &TrialRecord, spec: &MovementSpec) -> Result<Vec<(usize, f64)>> {
    let rest = resting_position(stream, trial.preceding_iti)?;
    let frames = &stream.frames[trial.frames(stream)];
    Ok((0..NUM_DOFS)
        .filter(|&d| !spec.is_target(d))
        .map(|d| {
            let peak = frames.iter().map(|f| deviation_percent(f.angle(d), rest[d])).fold(0.0, f64::max);
            (d, peak)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingResult {
    pub per_trial: Vec<Vec<(usize, f64)>>,
    /// Median over every (trial, non-target DOF) peak.
    pub median: f64,
}

pub fn coupling_metric(stream: &KinematicStream, trials: &[TrialRecord], catalog: &[MovementSpec]) -> Result<CouplingResult> {
    let per_trial = trials
        .iter()
        .map(|t| coupling_peaks(stream, t, &catalog[t.movement]))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<f64> = per_trial.iter().flatten().map(|&(_, v)| v).collect();
    if all.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, have: 0 });
    }
    Ok(CouplingResult {
        median: stats::median(&all),
        per_trial,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftResult {
    pub baseline_rest: [f64; NUM_DOFS],
    /// Mean over DOFs of the rest deviation at each trial's interval.
    pub per_iti: Vec<f64>,
    pub median: f64,
}

pub fn drift_metric(stream: &KinematicStream, trials: &[TrialRecord], baseline_window: [f64; 2]) -> Result<DriftResult> {
    let baseline_rest = resting_position(stream, baseline_window)?;
    let per_iti = trials
        .iter()
        .map(|t| {
            let rest = resting_position(stream, t.preceding_iti)?;
            Ok(rest.iter().zip(&baseline_rest).map(|(&r, &b)| deviation_percent(r, b)).sum::<f64>() / NUM_DOFS as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    if per_iti.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, have: 0 });
    }
    Ok(DriftResult {
        baseline_rest,
        median: stats::median(&per_iti),
        per_iti,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub deviation_percent: f64,
    /// Seconds from the trial start; `None` for a flat trace.
    pub time_s: Option<f64>,
}

/// Maximum deviation of one DOF from the stream's own rest during a trial.
pub fn peak_deviation(stream: &KinematicStream, trial: &TrialRecord, dof: usize, options: &PeakOptions) -> Result<Peak> {
    let rest = resting_position(stream, trial.preceding_iti)?;
    let range = trial.frames(stream);
    let frames = &stream.frames[range];
    let dev: Vec<f64> = frames.iter().map(|f| deviation_percent(f.angle(dof), rest[dof])).collect();
    let max = dev.iter().copied().fold(0.0, f64::max);
    let time_s = if max > options.noise_floor_percent {
        let i = dev.iter().position(|&v| v >= max - options.tie_tolerance_percent).unwrap_or(0);
        Some((frames[i].t - trial.t_start).clamp(0.0, trial.duration()))
    } else {
        None
    };
    Ok(Peak {
        deviation_percent: max,
        time_s,
    })
}

/// `value` is the absolute error, `signed` keeps the sign of True − reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialError {
    pub signed: f64,
    pub value: f64,
}

fn mean_over_targets(spec: &MovementSpec, mut f: impl FnMut(usize) -> Result<Option<f64>>) -> Result<Option<TrialError>> {
    let mut signed = 0.0;
    let mut abs = 0.0;
    let mut n = 0usize;
    for t in &spec.targets {
        match f(t.dof.index())? {
            Some(e) => {
                signed += e;
                abs += libm::fabs(e);
                n += 1;
            }
            None => return Ok(None),
        }
    }
    if n == 0 {
        return Ok(None);
    }
    Ok(Some(TrialError {
        signed: signed / n as f64,
        value: abs / n as f64,
    }))
}

/// Difference in peak target deviation, averaged over target DOFs.
pub fn magnitude_error(
    true_stream: &KinematicStream,
    reference: &KinematicStream,
    trial: &TrialRecord,
    spec: &MovementSpec,
    options: &PeakOptions,
) -> Result<TrialError> {
    mean_over_targets(spec, |d| {
        let a = peak_deviation(true_stream, trial, d, options)?;
        let b = peak_deviation(reference, trial, d, options)?;
        Ok(Some(a.deviation_percent - b.deviation_percent))
    })?
    .ok_or(Error::invalid("movement", "has no target DOFs"))
}

/// Difference in peak time (seconds), averaged over target DOFs. `None`
/// when either stream is flat on a target DOF.
pub fn timing_error(
    true_stream: &KinematicStream,
    reference: &KinematicStream,
    trial: &TrialRecord,
    spec: &MovementSpec,
    options: &PeakOptions,
) -> Result<Option<TrialError>> {
    mean_over_targets(spec, |d| {
        let a = peak_deviation(true_stream, trial, d, options)?.time_s;
        let b = peak_deviation(reference, trial, d, options)?.time_s;
        Ok(a.zip(b).map(|(a, b)| a - b))
    })
}

/// RMSE over all frames and DOFs, in percent of span.
pub fn stream_rmse(a: &KinematicStream, b: &KinematicStream) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
            context: "streams must share a frame grid",
        });
    }
    if a.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, have: 0 });
    }
    let sum: f64 = a
        .frames
        .iter()
        .zip(&b.frames)
        .flat_map(|(x, y)| x.angles.iter().zip(y.angles).map(|(&p, q)| f64::from(p) - f64::from(q)))
        .map(|e| e * e)
        .sum();
    Ok(to_percent_of_span(libm::sqrt(sum / (a.len() * NUM_DOFS) as f64)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSummary {
    /// Median over groups of the sample variance.
    pub variance: f64,
    /// Median over groups of the sample standard deviation.
    pub sd: f64,
    pub groups_used: usize,
    /// Groups with fewer than two errors.
    pub groups_excluded: Vec<usize>,
}

/// Sample variance of signed errors within each group, summarized by the
/// median over groups. `errors` holds `(group, signed error)`.
pub fn variance_metrics(errors: &[(usize, f64)]) -> Result<VarianceSummary> {
    let groups = errors.iter().map(|e| e.0).max().map_or(0, |g| g + 1);
    let mut buckets: Vec<Vec<f64>> = alloc::vec![Vec::new(); groups];
    for &(g, e) in errors {
        buckets[g].push(e);
    }
    let mut vars = Vec::new();
    let mut groups_excluded = Vec::new();
    for (g, b) in buckets.iter().enumerate() {
        match b.len() {
            0 => {}
            1 => groups_excluded.push(g),
            _ => vars.push(stats::sample_variance(b)),
        }
    }
    if vars.is_empty() {
        return Err(Error::TooFewSamples { needed: 2, have: errors.len().min(1) });
    }
    let sds: Vec<f64> = vars.iter().map(|&v| libm::sqrt(v)).collect();
    Ok(VarianceSummary {
        variance: stats::median(&vars),
        sd: stats::median(&sds),
        groups_used: vars.len(),
        groups_excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierFilter {
    pub retained: Vec<f64>,
    /// Indices into the input that were removed.
    pub removed: Vec<usize>,
    pub fences: Option<[f64; 2]>,
    /// Fewer than four values: nothing was filtered.
    pub skipped: bool,
}

/// Single-pass 1.5·IQR rule with quartiles at position `p (n − 1)`.
pub fn iqr_outlier_filter(values: &[f64]) -> OutlierFilter {
    if values.len() < 4 {
        return OutlierFilter {
            retained: values.to_vec(),
            removed: Vec::new(),
            fences: None,
            skipped: true,
        };
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = stats::quantile_sorted(&sorted, 0.25);
    let q3 = stats::quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let lo = q1 - 1.5 * iqr;
    let hi = q3 + 1.5 * iqr;
    let (mut retained, mut removed) = (Vec::new(), Vec::new());
    for (i, &v) in values.iter().enumerate() {
        if v < lo || v > hi {
            removed.push(i);
        } else {
            retained.push(v);
        }
    }
    OutlierFilter {
        retained,
        removed,
        fences: Some([lo, hi]),
        skipped: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    OneSample,
    Paired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub label: String,
    /// Per-participant values before outlier removal.
    pub values: Vec<f64>,
    pub mean: f64,
    pub sem: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestOutcome {
    Completed(TTestResult),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortEntry {
    pub metric: String,
    pub test: TestKind,
    /// One-sample null mean; 0 for paired tests.
    pub mu0: f64,
    pub arms: Vec<ArmSummary>,
    /// Participant indices removed as outliers (in any arm).
    pub outliers_removed: Vec<usize>,
    pub outlier_filter_skipped: bool,
    pub outcome: TestOutcome,
}

impl CohortEntry {
    pub fn result(&self) -> Option<&TTestResult> {
        match &self.outcome {
            TestOutcome::Completed(r) => Some(r),
            TestOutcome::Failed(_) => None,
        }
    }

    pub fn p(&self) -> Option<f64> {
        self.result().map(|r| r.p)
    }
}

fn arm(label: &str, values: &[f64], keep: &[usize]) -> ArmSummary {
    let kept: Vec<f64> = keep.iter().map(|&i| values[i]).collect();
    let mean = stats::mean(&kept);
    let sem = if kept.len() > 1 {
        libm::sqrt(stats::sample_variance(&kept) / kept.len() as f64)
    } else {
        f64::NAN
    };
    ArmSummary {
        label: label.to_string(),
        values: values.to_vec(),
        mean,
        sem,
    }
}

fn retained_indices(n: usize, removed: &[usize]) -> Vec<usize> {
    (0..n).filter(|i| !removed.contains(i)).collect()
}

/// Outlier removal, mean ± SEM and a one-sample t-test against `mu0`.
pub fn cohort_one_sample(metric: &str, values: &[f64], mu0: f64) -> Result<CohortEntry> {
    let filter = iqr_outlier_filter(values);
    let keep = retained_indices(values.len(), &filter.removed);
    if keep.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, have: keep.len() });
    }
    let kept: Vec<f64> = keep.iter().map(|&i| values[i]).collect();
    let outcome = match stats::one_sample_t_test(&kept, mu0) {
        Ok(r) => TestOutcome::Completed(r),
        Err(e) => TestOutcome::Failed(e.to_string()),
    };
    Ok(CohortEntry {
        metric: metric.to_string(),
        test: TestKind::OneSample,
        mu0,
        arms: alloc::vec![arm(metric, values, &keep)],
        outliers_removed: filter.removed,
        outlier_filter_skipped: filter.skipped,
        outcome,
    })
}

/// Paired comparison `a − b`. A participant that is an outlier in either
/// arm is dropped from both.
pub fn cohort_paired(metric: &str, a: (&str, &[f64]), b: (&str, &[f64])) -> Result<CohortEntry> {
    if a.1.len() != b.1.len() {
        return Err(Error::DimensionMismatch {
            expected: a.1.len(),
            found: b.1.len(),
            context: "paired arms",
        });
    }
    let fa = iqr_outlier_filter(a.1);
    let fb = iqr_outlier_filter(b.1);
    let mut removed: Vec<usize> = fa.removed.iter().chain(&fb.removed).copied().collect();
    removed.sort_unstable();
    removed.dedup();
    let keep = retained_indices(a.1.len(), &removed);
    if keep.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, have: keep.len() });
    }
    let ka: Vec<f64> = keep.iter().map(|&i| a.1[i]).collect();
    let kb: Vec<f64> = keep.iter().map(|&i| b.1[i]).collect();
    let outcome = match stats::paired_t_test(&ka, &kb) {
        Ok(r) => TestOutcome::Completed(r),
        Err(e) => TestOutcome::Failed(e.to_string()),
    };
    Ok(CohortEntry {
        metric: metric.to_string(),
        test: TestKind::Paired,
        mu0: 0.0,
        arms: alloc::vec![arm(a.0, a.1, &keep), arm(b.0, b.1, &keep)],
        outliers_removed: removed,
        outlier_filter_skipped: fa.skipped || fb.skipped,
        outcome,
    })
}

/// Errors of the True hand against one reference stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParadigmErrors {
    pub magnitude: Vec<TrialError>,
    /// `None` for trials where a target trace was flat.
    pub timing: Vec<Option<TrialError>>,
    pub magnitude_median: f64,
    pub magnitude_signed_median: f64,
    pub timing_median: f64,
    pub timing_signed_median: f64,
    pub timing_signed_mean: f64,
    pub negative_timing_errors: usize,
    pub positive_timing_errors: usize,
    pub magnitude_variance: VarianceSummary,
    pub timing_variance: VarianceSummary,
    /// RMSE between the True stream and the reference, percent of span.
    pub stream_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantMetrics {
    pub participant_id: u32,
    pub coupling: CouplingResult,
    pub drift: DriftResult,
    /// Against the Virtual stream.
    pub mimicked: ParadigmErrors,
    /// Against the Contralateral stream.
    pub mirrored: ParadigmErrors,
    /// Trials excluded from timing in either paradigm.
    pub flagged_trials: Vec<usize>,
}

fn paradigm_errors(
    true_stream: &KinematicStream,
    reference: &KinematicStream,
    trials: &[TrialRecord],
    catalog: &[MovementSpec],
    options: &PeakOptions,
) -> Result<ParadigmErrors> {
    let mut magnitude = Vec::with_capacity(trials.len());
    let mut timing = Vec::with_capacity(trials.len());
    for t in trials {
        let spec = &catalog[t.movement];
        magnitude.push(magnitude_error(true_stream, reference, t, spec, options)?);
        timing.push(timing_error(true_stream, reference, t, spec, options)?);
    }
    let m_abs: Vec<f64> = magnitude.iter().map(|e| e.value).collect();
    let m_signed: Vec<f64> = magnitude.iter().map(|e| e.signed).collect();
    let t_ok: Vec<TrialError> = timing.iter().flatten().copied().collect();
    if t_ok.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, have: 0 });
    }
    let t_abs: Vec<f64> = t_ok.iter().map(|e| e.value).collect();
    let t_signed: Vec<f64> = t_ok.iter().map(|e| e.signed).collect();
    let m_groups: Vec<(usize, f64)> = trials.iter().zip(&magnitude).map(|(t, e)| (t.movement, e.signed)).collect();
    let t_groups: Vec<(usize, f64)> = trials.iter().zip(&timing).filter_map(|(t, e)| e.map(|e| (t.movement, e.signed))).collect();
    Ok(ParadigmErrors {
        magnitude_median: stats::median(&m_abs),
        magnitude_signed_median: stats::median(&m_signed),
        timing_median: stats::median(&t_abs),
        timing_signed_median: stats::median(&t_signed),
        timing_signed_mean: stats::mean(&t_signed),
        negative_timing_errors: t_signed.iter().filter(|&&v| v < 0.0).count(),
        positive_timing_errors: t_signed.iter().filter(|&&v| v > 0.0).count(),
        magnitude_variance: variance_metrics(&m_groups)?,
        timing_variance: variance_metrics(&t_groups)?,
        stream_rmse: stream_rmse(true_stream, reference)?,
        magnitude,
        timing,
    })
}

/// The three hands of one recording, with its schedule.
#[derive(Debug, Clone, Copy)]
pub struct SessionStreams<'a> {
    pub participant_id: u32,
    pub true_stream: &'a KinematicStream,
    pub contralateral_stream: &'a KinematicStream,
    pub virtual_stream: &'a KinematicStream,
    pub trials: &'a [TrialRecord],
    pub catalog: &'a [MovementSpec],
    pub baseline_rest_window: [f64; 2],
}

impl<'a> SessionStreams<'a> {
    pub fn of(session: &'a SessionDataset) -> Self {
        SessionStreams {
            participant_id: session.participant_id,
            true_stream: &session.true_stream,
            contralateral_stream: &session.contralateral_stream,
            virtual_stream: &session.virtual_stream,
            trials: &session.trials,
            catalog: &session.catalog,
            baseline_rest_window: session.baseline_rest_window,
        }
    }
}

/// Every kinematic metric for one participant.
pub fn analyze_streams(s: &SessionStreams<'_>, options: &PeakOptions) -> Result<ParticipantMetrics> {
    let coupling = coupling_metric(s.true_stream, s.trials, s.catalog)?;
    let drift = drift_metric(s.true_stream, s.trials, s.baseline_rest_window)?;
    let mimicked = paradigm_errors(s.true_stream, s.virtual_stream, s.trials, s.catalog, options)?;
    let mirrored = paradigm_errors(s.true_stream, s.contralateral_stream, s.trials, s.catalog, options)?;
    let flagged_trials = (0..s.trials.len())
        .filter(|&k| mimicked.timing[k].is_none() || mirrored.timing[k].is_none())
        .collect();
    Ok(ParticipantMetrics {
        participant_id: s.participant_id,
        coupling,
        drift,
        mimicked,
        mirrored,
        flagged_trials,
    })
}

pub fn analyze_session(session: &SessionDataset, options: &PeakOptions) -> Result<ParticipantMetrics> {
    analyze_streams(&SessionStreams::of(session), options)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub participants: Vec<u32>,
    pub entries: Vec<CohortEntry>,
}

impl CohortReport {
    pub fn entry(&self, metric: &str) -> Option<&CohortEntry> {
        self.entries.iter().find(|e| e.metric == metric)
    }
}

/// Metric names used in [`CohortReport`] for the kinematic analyses.
pub mod metric {
    pub const COUPLING: &str = "coupling_percent";
    pub const DRIFT: &str = "drift_percent";
    pub const MAGNITUDE_ERROR: &str = "magnitude_error_percent";
    pub const TIMING_ERROR: &str = "timing_error_s";
    pub const TIMING_SIGNED: &str = "timing_error_signed_s";
    pub const MAGNITUDE_VARIANCE: &str = "magnitude_variance";
    pub const MAGNITUDE_SD: &str = "magnitude_sd_percent";
    pub const TIMING_VARIANCE: &str = "timing_variance";
    pub const TIMING_SD: &str = "timing_sd_s";
    pub const STREAM_RMSE: &str = "stream_rmse_percent";
}

/// Per-participant summaries for one metric, `(name, mimicked, mirrored)`.
pub fn paired_metric_values(participants: &[ParticipantMetrics]) -> Vec<(&'static str, Vec<f64>, Vec<f64>)> {
    let pick = |f: fn(&ParadigmErrors) -> f64| -> (Vec<f64>, Vec<f64>) {
        (
            participants.iter().map(|p| f(&p.mimicked)).collect(),
            participants.iter().map(|p| f(&p.mirrored)).collect(),
        )
    };
    let rows: [(&'static str, fn(&ParadigmErrors) -> f64); 8] = [
        (metric::MAGNITUDE_ERROR, |e| e.magnitude_median),
        (metric::TIMING_ERROR, |e| e.timing_median),
        (metric::TIMING_SIGNED, |e| e.timing_signed_median),
        (metric::MAGNITUDE_VARIANCE, |e| e.magnitude_variance.variance),
        (metric::MAGNITUDE_SD, |e| e.magnitude_variance.sd),
        (metric::TIMING_VARIANCE, |e| e.timing_variance.variance),
        (metric::TIMING_SD, |e| e.timing_variance.sd),
        (metric::STREAM_RMSE, |e| e.stream_rmse),
    ];
    rows.into_iter()
        .map(|(name, f)| {
            let (a, b) = pick(f);
            (name, a, b)
        })
        .collect()
}

/// One-sample tests on coupling and drift, paired mirrored-vs-mimicked
/// tests on every error metric.
pub fn cohort_aggregate(participants: &[ParticipantMetrics]) -> Result<CohortReport> {
    let coupling: Vec<f64> = participants.iter().map(|p| p.coupling.median).collect();
    let drift: Vec<f64> = participants.iter().map(|p| p.drift.median).collect();
    let mut entries = alloc::vec![
        cohort_one_sample(metric::COUPLING, &coupling, 0.0)?,
        cohort_one_sample(metric::DRIFT, &drift, 0.0)?,
    ];
    for (name, mimicked, mirrored) in paired_metric_values(participants) {
        entries.push(cohort_paired(name, ("mimicked", &mimicked), ("mirrored", &mirrored))?);
    }
    Ok(CohortReport {
        participants: participants.iter().map(|p| p.participant_id).collect(),
        entries,
    })
}
