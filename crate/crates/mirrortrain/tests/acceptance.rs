//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so every line is printed; exits
//! non-zero when any criterion fails.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mirrortrain::pipeline::{analyze_sessions, cmd_full, decode_sessions, simulate_cohort, DecodeOverrides};
use mirrortrain::ExperimentConfig;
use mirrortrain_core::analysis::{iqr_outlier_filter, metric, ParticipantMetrics};
use mirrortrain_core::decoder::{fit, DiagonalLoading, FitOptions, KalmanFilter, StateModel};
use mirrortrain_core::features::{extract_features, FeatureChannel, FeatureMatrix, MAV_WINDOW_S};
use mirrortrain_core::kinematics::frame_time;
use mirrortrain_core::labeling::{LabeledDataset, LabeledFrame, Paradigm, Role, TrialSplit};
use mirrortrain_core::stats::{mean, one_sample_t_test, paired_t_test, t_two_tailed_p};
use mirrortrain_core::{EmgBlock, EMG_CHANNELS, EMG_SAMPLE_RATE_HZ, NUM_DOFS};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const SEEDS: u64 = 20;
const COUPLING_TARGET: f64 = 11.43;
const DRIFT_TARGET: f64 = 7.07;
const MIMICKED_MAGNITUDE_TARGET: f64 = 12.89;
const MIRRORED_MAGNITUDE_TARGET: f64 = 6.67;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn report(n: u32, name: &str, v: &Verdict) {
    println!("criterion {n:>2} {} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
}

fn cohort_mean(participants: &[ParticipantMetrics], f: fn(&ParticipantMetrics) -> f64) -> f64 {
    mean(&participants.iter().map(f).collect::<Vec<_>>())
}

// Criteria 1 and 2: one default cohort, simulated and analyzed.

fn recovery() -> (Verdict, Verdict) {
    let config = ExperimentConfig::default();
    let start = Instant::now();
    let sessions: Vec<_> = simulate_cohort(&config).unwrap().into_iter().map(|(s, _)| s).collect();
    let (participants, cohort) = analyze_sessions(&sessions, &config.analysis).unwrap();
    let elapsed = start.elapsed();
    let check = |name: &str, target: f64| {
        let e = cohort.entry(name).unwrap();
        let m = e.arms[0].mean;
        let p = e.p().unwrap_or(f64::NAN);
        (m, p, (m - target).abs() <= 1.5 && p < 0.001)
    };
    let (cm, cp, c_ok) = check(metric::COUPLING, COUPLING_TARGET);
    let (dm, dp, d_ok) = check(metric::DRIFT, DRIFT_TARGET);
    let fast = elapsed < Duration::from_secs(300);
    assert_eq!(participants.len(), 7);
    (
        verdict(
            c_ok && fast,
            format!("cohort mean {cm:.2}% (target {COUPLING_TARGET} ± 1.5), p = {cp:.2e}, cohort of 7 in {:.1} s", elapsed.as_secs_f64()),
        ),
        verdict(d_ok, format!("cohort mean {dm:.2}% (target {DRIFT_TARGET} ± 1.5), p = {dp:.2e}")),
    )
}

// Criteria 3 to 6: twenty cohorts, each simulated, analyzed and decoded.

struct SeedSummary {
    magnitude_p: f64,
    magnitude_means: (f64, f64),
    timing_means: (f64, f64),
    mirrored_two_sided: bool,
    timing_sd: (f64, f64),
    rmse_means: (f64, f64),
    rmse_p: f64,
    own_label: (f64, f64, f64),
    true_kinematics_p: f64,
}

fn run_seed(seed: u64) -> SeedSummary {
    let mut config = ExperimentConfig::default();
    config.master_seed = seed;
    let sessions: Vec<_> = simulate_cohort(&config).unwrap().into_iter().map(|(s, _)| s).collect();
    let (participants, cohort) = analyze_sessions(&sessions, &config.analysis).unwrap();
    let p_of = |name: &str| cohort.entry(name).and_then(|e| e.p()).unwrap_or(f64::NAN);
    let decoded: Vec<_> = decode_sessions(&sessions, &config.decoder).unwrap().into_iter().map(|o| o.report).collect();
    let own_a: Vec<f64> = decoded.iter().map(|d| d.mimicked.training_labels.pooled).collect();
    let own_b: Vec<f64> = decoded.iter().map(|d| d.mirrored.training_labels.pooled).collect();
    let true_a: Vec<f64> = decoded.iter().map(|d| d.mimicked.true_kinematics.pooled).collect();
    let true_b: Vec<f64> = decoded.iter().map(|d| d.mirrored.true_kinematics.pooled).collect();
    let own = paired_t_test(&own_a, &own_b).unwrap();
    SeedSummary {
        magnitude_p: p_of(metric::MAGNITUDE_ERROR),
        magnitude_means: (
            cohort_mean(&participants, |p| p.mimicked.magnitude_median),
            cohort_mean(&participants, |p| p.mirrored.magnitude_median),
        ),
        timing_means: (
            cohort_mean(&participants, |p| p.mimicked.timing_signed_mean),
            cohort_mean(&participants, |p| p.mirrored.timing_signed_mean),
        ),
        mirrored_two_sided: participants.iter().map(|p| p.mirrored.negative_timing_errors).sum::<usize>() > 0
            && participants.iter().map(|p| p.mirrored.positive_timing_errors).sum::<usize>() > 0,
        timing_sd: (
            cohort_mean(&participants, |p| p.mimicked.timing_variance.sd),
            cohort_mean(&participants, |p| p.mirrored.timing_variance.sd),
        ),
        rmse_means: (
            cohort_mean(&participants, |p| p.mimicked.stream_rmse),
            cohort_mean(&participants, |p| p.mirrored.stream_rmse),
        ),
        rmse_p: p_of(metric::STREAM_RMSE),
        own_label: (mean(&own_a), mean(&own_b), if own.mean < 0.0 { own.p } else { 1.0 }),
        true_kinematics_p: paired_t_test(&true_a, &true_b).unwrap().p,
    }
}

fn cohort_criteria() -> [Verdict; 4] {
    let runs: Vec<SeedSummary> = (0..SEEDS).map(run_seed).collect();
    let n = runs.len();
    let count = |f: &dyn Fn(&SeedSummary) -> bool| runs.iter().filter(|r| f(r)).count();
    let grand = |f: &dyn Fn(&SeedSummary) -> f64| mean(&runs.iter().map(f).collect::<Vec<_>>());

    let ordered = count(&|r| r.magnitude_means.1 < r.magnitude_means.0 && r.magnitude_p < 0.05);
    let (mim, mir) = (grand(&|r| r.magnitude_means.0), grand(&|r| r.magnitude_means.1));
    let c3 = verdict(
        ordered >= 18 && (mim - MIMICKED_MAGNITUDE_TARGET).abs() <= 2.0 && (mir - MIRRORED_MAGNITUDE_TARGET).abs() <= 2.0,
        format!(
            "mirrored < mimicked with p < 0.05 in {ordered}/{n} seeds; means {mir:.2}% vs {mim:.2}% (targets {MIRRORED_MAGNITUDE_TARGET} and {MIMICKED_MAGNITUDE_TARGET}, ± 2)"
        ),
    );

    let delay = ExperimentConfig::default().imperfections.reaction_delay_mean;
    let mim_ok = count(&|r| (r.timing_means.0 - delay).abs() <= 0.02);
    let mir_ok = count(&|r| r.timing_means.1.abs() <= 0.02);
    let two_sided = count(&|r| r.mirrored_two_sided);
    let wider = count(&|r| r.timing_sd.1 > r.timing_sd.0);
    let c4 = verdict(
        mim_ok == n && mir_ok == n && two_sided == n && wider >= 15,
        format!(
            "mimicked signed mean {:.3} s (delay {delay}; within ± 0.02 in {mim_ok}/{n}), mirrored {:+.3} s (within ± 0.02 of 0 in {mir_ok}/{n}), both signs in {two_sided}/{n}, mirrored s.d. larger in {wider}/{n}",
            grand(&|r| r.timing_means.0),
            grand(&|r| r.timing_means.1),
        ),
    );

    let rmse = count(&|r| r.rmse_means.1 < r.rmse_means.0);
    let rmse_sig = count(&|r| r.rmse_means.1 < r.rmse_means.0 && r.rmse_p < 0.05);
    let c5 = verdict(
        rmse >= 18,
        format!(
            "RMSE(True, Contralateral) < RMSE(True, Virtual) in {rmse}/{n} seeds ({rmse_sig}/{n} with p < 0.05); means {:.3}% vs {:.3}%",
            grand(&|r| r.rmse_means.1),
            grand(&|r| r.rmse_means.0),
        ),
    );

    let own = count(&|r| r.own_label.2 < 0.05);
    let null = count(&|r| r.true_kinematics_p >= 0.05);
    let c6 = verdict(
        own >= 15 && null >= 12,
        format!(
            "mimicked lower on own labels with p < 0.05 in {own}/{n} (RMSE {:.3} vs {:.3}); True-Kinematics test not rejected in {null}/{n}",
            grand(&|r| r.own_label.0),
            grand(&|r| r.own_label.1),
        ),
    );
    [c3, c4, c5, c6]
}

// Criterion 7: Kalman filter oracles.

fn gauss(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

struct Synthetic {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    labels: Vec<([f64; NUM_DOFS], usize)>,
    features: FeatureMatrix,
}

fn synthetic(seed: u64, m: usize, state_noise: f64, obs_noise: f64) -> Synthetic {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DMatrix::from_fn(NUM_DOFS, NUM_DOFS, |_, _| 0.08 * gauss(&mut r));
    for d in 0..NUM_DOFS {
        a[(d, d)] += 0.7;
    }
    let c = DMatrix::from_fn(m, NUM_DOFS, |_, _| gauss(&mut r));
    let b = DVector::from_fn(m, |_, _| 1.0 + r.random::<f64>());
    let (mut labels, mut values) = (Vec::new(), Vec::new());
    for seg in 0..30 {
        let mut x = DVector::from_fn(NUM_DOFS, |_, _| gauss(&mut r));
        for _ in 0..25 {
            let z = &c * &x + &b + DVector::from_fn(m, |_, _| obs_noise * gauss(&mut r));
            values.extend(z.iter());
            labels.push((std::array::from_fn(|d| x[d]), seg));
            x = &a * &x + DVector::from_fn(NUM_DOFS, |_, _| state_noise * gauss(&mut r));
        }
    }
    let features = FeatureMatrix {
        times: (0..labels.len()).map(frame_time).collect(),
        channel_map: (0..m as u16).map(FeatureChannel::Single).collect(),
        values,
    };
    Synthetic { a, c, labels, features }
}

fn dataset(s: &Synthetic) -> LabeledDataset<'_> {
    LabeledDataset {
        paradigm: Paradigm::Mimicked,
        features: &s.features,
        frames: s
            .labels
            .iter()
            .enumerate()
            .map(|(i, &(label, seg))| LabeledFrame {
                feature_row: i,
                t: s.features.times[i],
                label,
                trial: Some(seg),
                role: Role::Train,
            })
            .collect(),
        applied_lag: 0,
        split: TrialSplit { seed: 0, movements: Vec::new() },
    }
}

fn kalman() -> Verdict {
    // Noiseless identification.
    let s = synthetic(1, 12, 0.0, 0.0);
    let exact = FitOptions {
        state: StateModel::Position,
        loading: DiagonalLoading::Absolute(1e-9),
        ..FitOptions::default()
    };
    let model = fit(&dataset(&s), &exact).unwrap();
    let a_err = (&model.a - &s.a).norm();
    let c_err = (&model.c - &s.c).norm();

    // Riccati fixed point, computed independently by iterating the map.
    let s = synthetic(8, 16, 0.1, 0.3);
    let model = fit(&dataset(&s), &FitOptions::default()).unwrap();
    let riccati = |p: &DMatrix<f64>| {
        let innovation = &model.c * p * model.c.transpose() + &model.q;
        let gain = p * model.c.transpose() * innovation.cholesky().unwrap().inverse() * &model.c * p;
        &model.a * (p - gain) * model.a.transpose() + &model.w
    };
    let mut p = model.w.clone();
    for _ in 0..10_000 {
        let next = riccati(&p);
        let done = (&next - &p).norm() < 1e-15;
        p = next;
        if done {
            break;
        }
    }
    let mut kf = KalmanFilter::new(&model).unwrap();
    for f in 0..400 {
        kf.step(s.features.row(f % s.features.n_frames())).unwrap();
    }
    let prior = kf.prior_covariance();
    let fixed = (prior - &p).norm();
    let residual = (riccati(prior) - prior).norm();
    verdict(
        a_err < 1e-6 && c_err < 1e-6 && fixed < 1e-8 && residual < 1e-8,
        format!("identification error A {a_err:.1e}, C {c_err:.1e}; converged P vs oracle {fixed:.1e}, Riccati residual {residual:.1e}"),
    )
}

// Criterion 8: features against a sample-by-sample oracle.

fn features() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for seed in 0..3 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let samples = 2000;
        let emg = EmgBlock {
            sample_rate: EMG_SAMPLE_RATE_HZ,
            channels: EMG_CHANNELS,
            samples: (0..EMG_CHANNELS * samples).map(|_| r.random_range(-3.0f32..3.0)).collect(),
        };
        let times: Vec<f64> = (0..60).map(frame_time).collect();
        let f = extract_features(&emg, &times, MAV_WINDOW_S).unwrap();
        for (k, ch) in f.channel_map.iter().enumerate() {
            for frame in 0..times.len() {
                // Sample s is in the window of frame k when k/30 − 0.3 < s/1000 ≤ k/30.
                let hi = 1000 * frame as i64;
                let (mut sum, mut n) = (0.0, 0);
                for s in 0..samples {
                    let lhs = 30 * s as i64;
                    if lhs <= hi && lhs > hi - 9000 {
                        let x = match *ch {
                            FeatureChannel::Single(c) => f64::from(emg.get(s, c as usize)),
                            FeatureChannel::Pair(i, j) => f64::from(emg.get(s, i as usize)) - f64::from(emg.get(s, j as usize)),
                        };
                        sum += x.abs();
                        n += 1;
                    }
                }
                let want = sum / f64::from(n);
                worst = worst.max((f.get(frame, k) - want).abs() / want);
                checked += 1;
            }
        }
        if f.n_features() != 528 {
            return verdict(false, format!("{} features", f.n_features()));
        }
    }
    let structure = 32 + 32 * 31 / 2 == 528 && mirrortrain_core::features::differential_pairs(32).len() == 496;
    verdict(
        worst < 1e-9 && structure,
        format!("{checked} values on three random 2-s blocks, worst relative error {worst:.1e}; 528 = 32 + 496"),
    )
}

// Criterion 9: statistics against an independent incomplete-beta oracle.

fn statistics() -> Verdict {
    use statrs::function::beta::beta_reg;
    let mut worst: f64 = 0.0;
    for df in 2..=30 {
        let df = f64::from(df);
        for &t in &[0.0, 0.1, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 6.0, 10.0, 20.0, -2.2] {
            let oracle = beta_reg(df / 2.0, 0.5, df / (df + t * t));
            worst = worst.max((t_two_tailed_p(t, df).unwrap() - oracle).abs());
        }
    }
    // Sample-level tests route through the same p-value.
    let x = [10.9, 11.8, 12.4, 10.2, 11.1, 12.6, 11.0];
    let r = one_sample_t_test(&x, 0.0).unwrap();
    let sample_err = (r.p - beta_reg(r.df / 2.0, 0.5, r.df / (r.df + r.t * r.t))).abs();
    let f1 = iqr_outlier_filter(&[1.0, 2.0, 3.0, 4.0, 100.0]);
    let f2 = iqr_outlier_filter(&[5.0; 6]);
    let f3 = iqr_outlier_filter(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    let iqr_ok = f1.removed == [4] && f1.fences.map(|f| f[1]) == Some(7.0) && f2.removed.is_empty() && f3.removed.is_empty();
    verdict(
        worst < 1e-6 && sample_err < 1e-6 && iqr_ok,
        format!("worst p-value error {worst:.1e} over df 2 to 30; IQR examples {}", if iqr_ok { "match" } else { "differ" }),
    )
}

// Criterion 10: two default full runs.

fn files_equal(a: &Path, b: &Path) -> bool {
    let (fa, fb) = (File::open(a).unwrap(), File::open(b).unwrap());
    if fa.metadata().unwrap().len() != fb.metadata().unwrap().len() {
        return false;
    }
    let (mut ra, mut rb) = (BufReader::new(fa), BufReader::new(fb));
    let (mut ba, mut bb) = (vec![0u8; 1 << 16], vec![0u8; 1 << 16]);
    loop {
        let n = ra.read(&mut ba).unwrap();
        if n == 0 {
            return true;
        }
        rb.read_exact(&mut bb[..n]).unwrap();
        if ba[..n] != bb[..n] {
            return false;
        }
    }
}

fn listing(root: &Path) -> Vec<String> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

fn determinism() -> Verdict {
    let config = ExperimentConfig::default();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let start = Instant::now();
    cmd_full(&config, a.path(), DecodeOverrides::default()).unwrap();
    let elapsed = start.elapsed();
    cmd_full(&config, b.path(), DecodeOverrides::default()).unwrap();
    let (la, lb) = (listing(a.path()), listing(b.path()));
    let identical = la == lb && la.iter().all(|f| files_equal(&a.path().join(f), &b.path().join(f)));
    let fast = elapsed < Duration::from_secs(600);
    verdict(
        identical && fast,
        format!(
            "{} files {}; default full run took {:.1} s",
            la.len(),
            if identical { "byte-identical" } else { "differ" },
            elapsed.as_secs_f64()
        ),
    )
}

fn main() -> ExitCode {
    let mut verdicts = Vec::new();
    let (c1, c2) = recovery();
    report(1, "coupling recovery", &c1);
    report(2, "drift recovery", &c2);
    verdicts.extend([c1, c2]);
    let [c3, c4, c5, c6] = cohort_criteria();
    report(3, "magnitude ordering", &c3);
    report(4, "timing structure", &c4);
    report(5, "stream RMSE ordering", &c5);
    report(6, "decoder comparison shape", &c6);
    verdicts.extend([c3, c4, c5, c6]);
    let c7 = kalman();
    report(7, "Kalman correctness", &c7);
    let c8 = features();
    report(8, "feature oracle", &c8);
    let c9 = statistics();
    report(9, "statistics oracle", &c9);
    let c10 = determinism();
    report(10, "determinism", &c10);
    verdicts.extend([c7, c8, c9, c10]);
    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!("acceptance: {passed}/{} criteria passed", verdicts.len());
    if passed == verdicts.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
