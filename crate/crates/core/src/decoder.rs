//! Linear-Gaussian (Kalman) decoder from EMG features to 8-DOF kinematics.
//!
//! State model `x_t = A x_{t−1} + w`, observation model `z_t = C x_t + b + v`.
//! The state is the 8 joint positions, optionally followed by their
//! per-second velocities (signed, or split by direction and rectified).
//! Muscle activity tracks direction-specific velocity, so the split form is
//! the default. The observation intercept `b` absorbs
//! the positive resting level of MAV features. Filtering uses the information
//! form of the update, which avoids inverting the 528×528 innovation
//! covariance at every frame.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::features::FeatureMatrix;
use crate::kinematics::{to_percent_of_span, KinematicStream};
use crate::labeling::{LabeledDataset, LabeledFrame};
use crate::{Error, Result, FRAME_RATE_HZ, NUM_DOFS};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateModel {
    /// `x = [position]`, 8 states.
    Position,
    /// `x = [position, velocity]`, 16 states; velocity is the backward
    /// difference of consecutive labels in units per second.
    PositionVelocity,
    /// `x = [position, v⁺, v⁻]`, 24 states: velocity split by direction
    /// and rectified, matching the direction-specific muscle activity.
    #[default]
    PositionSplitVelocity,
}

impl StateModel {
    pub const fn dim(self) -> usize {
        match self {
            StateModel::Position => NUM_DOFS,
            StateModel::PositionVelocity => 2 * NUM_DOFS,
            StateModel::PositionSplitVelocity => 3 * NUM_DOFS,
        }
    }
}

/// Output post-processing: deadband then clamp, applied after filtering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostProcessConfig {
    pub enabled: bool,
    /// Outputs with `|x| < deadband` become 0.
    pub deadband: f64,
    pub output_clamp: [f64; 2],
}

impl Default for PostProcessConfig {
    fn default() -> Self {
        PostProcessConfig {
            enabled: false,
            deadband: 0.02,
            output_clamp: [-1.0, 1.0],
        }
    }
}

impl PostProcessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.deadband) {
            return Err(Error::invalid("deadband", "must lie in [0, 1)"));
        }
        let [lo, hi] = self.output_clamp;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid("output_clamp", "must be a finite increasing pair"));
        }
        Ok(())
    }

    pub fn apply(&self, x: f64) -> f64 {
        if !self.enabled {
            return x;
        }
        let x = if libm::fabs(x) < self.deadband { 0.0 } else { x };
        x.clamp(self.output_clamp[0], self.output_clamp[1])
    }
}

/// Ridge term added to the observation-noise diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagonalLoading {
    /// Multiple of the mean residual variance.
    RelativeToMeanDiagonal(f64),
    Absolute(f64),
}

impl Default for DiagonalLoading {
    fn default() -> Self {
        DiagonalLoading::RelativeToMeanDiagonal(1e-4)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub state: StateModel,
    pub loading: DiagonalLoading,
    /// Keep only the k features most correlated with any label DOF.
    pub channel_subset: Option<usize>,
    pub post: PostProcessConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderModel {
    pub state: StateModel,
    /// `n × n` with `n = state.dim()`.
    pub a: DMatrix<f64>,
    pub w: DMatrix<f64>,
    /// `m × n`, where `m` is the number of retained features.
    pub c: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Observation-noise covariance including the loading term.
    pub q: DMatrix<f64>,
    pub lambda: f64,
    pub post: PostProcessConfig,
    /// Retained feature columns, ascending; `None` keeps all of them.
    pub channel_subset: Option<Vec<usize>>,
    /// Width of the feature rows the model accepts.
    pub input_features: usize,
}

impl DecoderModel {
    pub fn observation_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Feature column feeding observation row `j`.
    pub fn feature_index(&self, j: usize) -> usize {
        match &self.channel_subset {
            Some(s) => s[j],
            None => j,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.observation_dim();
        let n = self.state.dim();
        let dims = [
            (self.a.nrows(), n, "A rows"),
            (self.a.ncols(), n, "A columns"),
            (self.w.nrows(), n, "W rows"),
            (self.w.ncols(), n, "W columns"),
            (self.c.ncols(), n, "C columns"),
            (self.b.len(), m, "intercept length"),
            (self.q.nrows(), m, "Q rows"),
            (self.q.ncols(), m, "Q columns"),
        ];
        for (found, expected, context) in dims {
            if found != expected {
                return Err(Error::DimensionMismatch { expected, found, context });
            }
        }
        match &self.channel_subset {
            Some(s) => {
                if s.len() != m {
                    return Err(Error::DimensionMismatch {
                        expected: m,
                        found: s.len(),
                        context: "channel subset length",
                    });
                }
                if s.windows(2).any(|w| w[0] >= w[1]) || s.last().is_some_and(|&j| j >= self.input_features) {
                    return Err(Error::invalid("channel_subset", "must be ascending indices below the feature width"));
                }
            }
            None if m != self.input_features => {
                return Err(Error::DimensionMismatch {
                    expected: self.input_features,
                    found: m,
                    context: "observation dimension",
                });
            }
            None => {}
        }
        let finite = self.a.iter().chain(self.w.iter()).chain(self.c.iter()).chain(self.b.iter()).chain(self.q.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("decoder parameters"));
        }
        self.post.validate()
    }
}

/// Inverse of a symmetric matrix, failing when it is numerically singular.
fn checked_spd_inverse(s: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let eig = s.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min <= 1e-10 * max {
        return Err(Error::RankDeficient(what));
    }
    s.clone().cholesky().map(|c| c.inverse()).ok_or(Error::RankDeficient(what))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// State vectors for the training frames: labels, plus velocities from the
/// previous dataset frame when it is the preceding feature row of the same
/// segment (zero otherwise).
fn training_states(frames: &[&LabeledFrame], all: &[LabeledFrame], n_rows: usize, model: StateModel) -> Vec<DVector<f64>> {
    let rate = f64::from(FRAME_RATE_HZ);
    let mut index = alloc::vec![None; n_rows];
    for (i, f) in all.iter().enumerate() {
        index[f.feature_row] = Some(i);
    }
    let by_row = |row: usize| index[row].map(|i| &all[i]);
    // Velocity at `row` from the preceding row of the same segment.
    let velocity = |row: usize| -> Option<[f64; NUM_DOFS]> {
        let c = by_row(row)?;
        let p = row.checked_sub(1).and_then(by_row)?;
        if p.trial != c.trial {
            return None;
        }
        Some(core::array::from_fn(|d| (c.label[d] - p.label[d]) * rate))
    };
    frames
        .iter()
        .map(|f| {
            let mut x = DVector::zeros(model.dim());
            for d in 0..NUM_DOFS {
                x[d] = f.label[d];
            }
            match model {
                StateModel::Position => {}
                StateModel::PositionVelocity => {
                    if let Some(v) = velocity(f.feature_row) {
                        for d in 0..NUM_DOFS {
                            x[NUM_DOFS + d] = v[d];
                        }
                    }
                }
                StateModel::PositionSplitVelocity => {
                    if let Some(v) = velocity(f.feature_row) {
                        for d in 0..NUM_DOFS {
                            x[NUM_DOFS + d] = v[d].max(0.0);
                            x[2 * NUM_DOFS + d] = (-v[d]).max(0.0);
                        }
                    }
                }
            }
            x
        })
        .collect()
}

/// Maximum absolute Pearson correlation of each feature with any label DOF.
pub fn feature_label_correlation(frames: &[&LabeledFrame], features: &FeatureMatrix) -> Vec<f64> {
    let n = frames.len() as f64;
    let p = features.n_features();
    let mut x_mean = [0.0; NUM_DOFS];
    for f in frames {
        for d in 0..NUM_DOFS {
            x_mean[d] += f.label[d] / n;
        }
    }
    let mut z_mean = alloc::vec![0.0; p];
    for f in frames {
        for (m, v) in z_mean.iter_mut().zip(features.row(f.feature_row)) {
            *m += v / n;
        }
    }
    let mut x_var = [0.0; NUM_DOFS];
    let mut z_var = alloc::vec![0.0; p];
    let mut cov = alloc::vec![[0.0; NUM_DOFS]; p];
    for f in frames {
        let dx: [f64; NUM_DOFS] = core::array::from_fn(|d| f.label[d] - x_mean[d]);
        for d in 0..NUM_DOFS {
            x_var[d] += dx[d] * dx[d];
        }
        for (j, v) in features.row(f.feature_row).iter().enumerate() {
            let dz = v - z_mean[j];
            z_var[j] += dz * dz;
            for d in 0..NUM_DOFS {
                cov[j][d] += dz * dx[d];
            }
        }
    }
    (0..p)
        .map(|j| {
            (0..NUM_DOFS)
                .filter(|&d| x_var[d] > 0.0 && z_var[j] > 0.0)
                .map(|d| libm::fabs(cov[j][d] / libm::sqrt(x_var[d] * z_var[j])))
                .fold(0.0, f64::max)
        })
        .collect()
}

fn select_channels(frames: &[&LabeledFrame], features: &FeatureMatrix, k: usize) -> Result<Vec<usize>> {
    let p = features.n_features();
    if k == 0 || k > p {
        return Err(Error::invalid("channel_subset", "must lie in 1..=feature count"));
    }
    let r = feature_label_correlation(frames, features);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| r[j].total_cmp(&r[i]).then(i.cmp(&j)));
    let mut keep = order[..k].to_vec();
    keep.sort_unstable();
    Ok(keep)
}

/// Least-squares system identification on the training split.
pub fn fit(dataset: &LabeledDataset<'_>, options: &FitOptions) -> Result<DecoderModel> {
    options.post.validate()?;
    let features = dataset.features;
    let train: Vec<&LabeledFrame> = dataset.train_frames().collect();
    let n = train.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, have: n });
    }
    let channel_subset = options.channel_subset.map(|k| select_channels(&train, features, k)).transpose()?;
    let cols: Vec<usize> = match &channel_subset {
        Some(s) => s.clone(),
        None => (0..features.n_features()).collect(),
    };
    let m = cols.len();

    let dim = options.state.dim();
    let states = training_states(&train, &dataset.frames, features.n_frames(), options.state);

    // State transition from successive frames of the same trial segment.
    let mut s_prev = DMatrix::zeros(dim, dim);
    let mut s_cross = DMatrix::zeros(dim, dim);
    let mut pairs = Vec::new();
    for i in 1..n {
        let (p, c) = (train[i - 1], train[i]);
        if p.trial.is_some() && p.trial == c.trial && c.feature_row == p.feature_row + 1 {
            let (xp, xc) = (&states[i - 1], &states[i]);
            s_prev.ger(1.0, xp, xp, 1.0);
            s_cross.ger(1.0, xc, xp, 1.0);
            pairs.push(i);
        }
    }
    if pairs.is_empty() {
        return Err(Error::RankDeficient("state transition"));
    }
    let a = &s_cross * checked_spd_inverse(&s_prev, "state transition")?;
    let mut w = DMatrix::zeros(dim, dim);
    for &i in &pairs {
        let r = &states[i] - &a * &states[i - 1];
        w.ger(1.0, &r, &r, 1.0);
    }
    w /= pairs.len() as f64;
    symmetrize(&mut w);

    // Observation model with intercept, from centered data.
    let x = DMatrix::from_fn(n, dim, |i, d| states[i][d]);
    let mut z = DMatrix::from_fn(n, m, |i, j| features.get(train[i].feature_row, cols[j]));
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training features"));
    }
    let x_mean = x.row_mean();
    let z_mean = z.row_mean();
    let mut xc = x;
    for mut row in xc.row_iter_mut() {
        row -= &x_mean;
    }
    for mut row in z.row_iter_mut() {
        row -= &z_mean;
    }
    let sxx = xc.transpose() * &xc;
    let sxx_inv = checked_spd_inverse(&sxx, "observation model")?;
    let szx = z.transpose() * &xc;
    let c = &szx * sxx_inv;
    let szz = z.transpose() * &z;
    let mut q = (szz - &c * szx.transpose()) / n as f64;
    q = (&q + q.transpose()) * 0.5;
    let b = z_mean.transpose() - &c * x_mean.transpose();

    let lambda = match options.loading {
        DiagonalLoading::RelativeToMeanDiagonal(r) => r * q.diagonal().mean().max(0.0),
        DiagonalLoading::Absolute(v) => v,
    };
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::invalid("diagonal loading", "must be finite and non-negative"));
    }
    for i in 0..m {
        q[(i, i)] += lambda;
    }
    if q.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite("observation noise covariance"));
    }
    let model = DecoderModel {
        state: options.state,
        a,
        w,
        c,
        b,
        q,
        lambda,
        post: options.post,
        channel_subset,
        input_features: features.n_features(),
    };
    model.validate()?;
    Ok(model)
}

/// Relative change in `P` below which the covariance recursion is frozen.
const CONVERGENCE_TOLERANCE: f64 = 1e-14;

/// Frame-by-frame filter state for a fitted model.
#[derive(Debug, Clone)]
pub struct KalmanFilter<'m> {
    model: &'m DecoderModel,
    /// `Cᵀ Q⁻¹` (n × m).
    g: DMatrix<f64>,
    /// `Cᵀ Q⁻¹ C`.
    h: DMatrix<f64>,
    x: DVector<f64>,
    p: DMatrix<f64>,
    p_prior: DMatrix<f64>,
    /// Set once the covariance recursion reaches its fixed point.
    converged: bool,
}

impl<'m> KalmanFilter<'m> {
    /// Starts at `x̂ = 0`, `P = W`.
    pub fn new(model: &'m DecoderModel) -> Result<Self> {
        model.validate()?;
        let chol = model
            .q
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("observation noise covariance"))?;
        let qinv_c = chol.solve(&model.c);
        let g = qinv_c.transpose();
        let mut h = model.c.transpose() * &qinv_c;
        symmetrize(&mut h);
        Ok(KalmanFilter {
            model,
            g,
            h,
            x: DVector::zeros(model.state.dim()),
            p: model.w.clone(),
            p_prior: model.w.clone(),
            converged: false,
        })
    }

    /// Full state estimate (positions first).
    pub fn state(&self) -> &DVector<f64> {
        &self.x
    }

    /// Posterior covariance after the latest update.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// Predicted covariance before the latest update.
    pub fn prior_covariance(&self) -> &DMatrix<f64> {
        &self.p_prior
    }

    /// `Cᵀ Q⁻¹ (z − b)` for a full-width feature row.
    pub fn information(&self, row: &[f64]) -> Result<DVector<f64>> {
        if row.len() != self.model.input_features {
            return Err(Error::DimensionMismatch {
                expected: self.model.input_features,
                found: row.len(),
                context: "feature row width",
            });
        }
        let n = self.model.state.dim();
        let mut y = DVector::zeros(n);
        for j in 0..self.model.observation_dim() {
            let v = row[self.model.feature_index(j)] - self.model.b[j];
            for d in 0..n {
                y[d] += self.g[(d, j)] * v;
            }
        }
        Ok(y)
    }

    /// One predict/update cycle; returns the unprocessed position estimate.
    pub fn step(&mut self, row: &[f64]) -> Result<[f64; NUM_DOFS]> {
        let y = self.information(row)?;
        self.step_information(&y)
    }

    /// Predict/update given a precomputed information vector.
    pub fn step_information(&mut self, y: &DVector<f64>) -> Result<[f64; NUM_DOFS]> {
        let a = &self.model.a;
        let n = a.nrows();
        let x_prior = a * &self.x;
        if self.converged {
            let x = &x_prior + &self.p * (y - &self.h * &x_prior);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("filter state"));
            }
            self.x = x;
            return Ok(core::array::from_fn(|d| self.x[d]));
        }
        let mut p_prior = a * &self.p * a.transpose() + &self.model.w;
        symmetrize(&mut p_prior);
        let m = DMatrix::identity(n, n) + &self.h * &p_prior;
        // P = P⁻ (I + H P⁻)⁻¹, i.e. Pᵀ = (I + H P⁻)⁻ᵀ P⁻.
        let mut p = m
            .transpose()
            .lu()
            .solve(&p_prior)
            .ok_or(Error::NotPositiveDefinite("innovation covariance"))?
            .transpose();
        symmetrize(&mut p);
        let x = &x_prior + &p * (y - &self.h * &x_prior);
        if x.iter().chain(p.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("filter state"));
        }
        let scale = p.amax();
        self.converged = (&p - &self.p).amax() <= CONVERGENCE_TOLERANCE * scale;
        self.x = x;
        self.p = p;
        self.p_prior = p_prior;
        Ok(core::array::from_fn(|d| self.x[d]))
    }
}

/// Decodes every frame of `features`, applying the model's post-processing.
pub fn infer(model: &DecoderModel, features: &FeatureMatrix) -> Result<Vec<[f64; NUM_DOFS]>> {
    let mut filter = KalmanFilter::new(model)?;
    (0..features.n_frames())
        .map(|f| filter.step(features.row(f)).map(|x| x.map(|v| model.post.apply(v))))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    TrainingLabels,
    TrueKinematics,
}

#[derive(Debug, Clone, Copy)]
pub enum Reference<'s> {
    /// The dataset's own (possibly shifted) labels.
    TrainingLabels,
    /// A stream on the feature frame grid, compared at the same frame index.
    Stream(&'s KinematicStream),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub per_dof: [f64; NUM_DOFS],
    pub pooled: f64,
    pub pooled_percent_span: f64,
    pub n_frames: usize,
}

/// RMSE of `estimates` (indexed by feature row) over the dataset's test frames.
pub fn score(estimates: &[[f64; NUM_DOFS]], dataset: &LabeledDataset<'_>, reference: Reference<'_>) -> Result<RmseReport> {
    if estimates.len() != dataset.features.n_frames() {
        return Err(Error::DimensionMismatch {
            expected: dataset.features.n_frames(),
            found: estimates.len(),
            context: "estimates must cover every feature frame",
        });
    }
    if let Reference::Stream(s) = reference {
        if s.len() != estimates.len() {
            return Err(Error::DimensionMismatch {
                expected: estimates.len(),
                found: s.len(),
                context: "reference stream length",
            });
        }
    }
    let mut sums = [0.0; NUM_DOFS];
    let mut n = 0usize;
    for f in dataset.test_frames() {
        let est = &estimates[f.feature_row];
        for d in 0..NUM_DOFS {
            let r = match reference {
                Reference::TrainingLabels => f.label[d],
                Reference::Stream(s) => s.frames[f.feature_row].angle(d),
            };
            let e = est[d] - r;
            sums[d] += e * e;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyTestSet);
    }
    let per_dof = sums.map(|s| libm::sqrt(s / n as f64));
    let pooled = libm::sqrt(sums.iter().sum::<f64>() / (n * NUM_DOFS) as f64);
    Ok(RmseReport {
        per_dof,
        pooled,
        pooled_percent_span: to_percent_of_span(pooled),
        n_frames: n,
    })
}

/// Decodes the dataset's features and scores the test frames.
pub fn evaluate(model: &DecoderModel, dataset: &LabeledDataset<'_>, reference: Reference<'_>) -> Result<RmseReport> {
    let est = infer(model, dataset.features)?;
    score(&est, dataset, reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureChannel;
    use crate::labeling::{Paradigm, Role, TrialSplit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use nalgebra::{SMatrix, SVector};
    use rand_distr::{Distribution, StandardNormal};

    type StateMatrix = SMatrix<f64, NUM_DOFS, NUM_DOFS>;
    type StateVector = SVector<f64, NUM_DOFS>;

    fn dense(m: &StateMatrix) -> DMatrix<f64> {
        DMatrix::from_iterator(NUM_DOFS, NUM_DOFS, m.iter().copied())
    }

    fn position_only() -> FitOptions {
        FitOptions {
            state: StateModel::Position,
            ..FitOptions::default()
        }
    }

    fn gauss(r: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(r)
    }

    fn stable_a(r: &mut ChaCha8Rng) -> StateMatrix {
        let mut a = StateMatrix::from_fn(|_, _| 0.08 * gauss(r));
        for d in 0..NUM_DOFS {
            a[(d, d)] += 0.7;
        }
        a
    }

    fn features_from_rows(rows: Vec<Vec<f64>>) -> FeatureMatrix {
        let m = rows[0].len();
        FeatureMatrix {
            times: (0..rows.len()).map(|i| i as f64 / 30.0).collect(),
            channel_map: (0..m as u16).map(FeatureChannel::Single).collect(),
            values: rows.into_iter().flatten().collect(),
        }
    }

    /// `segments` runs of `len` frames; `x_t = A x_{t−1} + noise`,
    /// `z = C x + b + noise`, every frame marked as training.
    struct Synthetic {
        a: StateMatrix,
        c: DMatrix<f64>,
        b: DVector<f64>,
        labels: Vec<([f64; NUM_DOFS], usize)>,
        features: FeatureMatrix,
    }

    fn synthetic(seed: u64, m: usize, segments: usize, len: usize, state_noise: f64, obs_noise: f64) -> Synthetic {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let a = stable_a(&mut r);
        let c = DMatrix::from_fn(m, NUM_DOFS, |_, _| gauss(&mut r));
        let b = DVector::from_fn(m, |_, _| 1.0 + r.random::<f64>());
        let mut labels = Vec::new();
        let mut rows = Vec::new();
        for s in 0..segments {
            let mut x = StateVector::from_fn(|_, _| gauss(&mut r));
            for _ in 0..len {
                let z = &c * DVector::from_column_slice(x.as_slice()) + &b + DVector::from_fn(m, |_, _| obs_noise * gauss(&mut r));
                rows.push(z.iter().copied().collect());
                labels.push((x.into(), s));
                x = a * x + StateVector::from_fn(|_, _| state_noise * gauss(&mut r));
            }
        }
        Synthetic {
            a,
            c,
            b,
            labels,
            features: features_from_rows(rows),
        }
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

    fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm()
    }

    #[test]
    fn noiseless_identification_is_exact() {
        let s = synthetic(1, 12, 40, 25, 0.0, 0.0);
        let ds = dataset(&s);
        let opts = FitOptions {
            loading: DiagonalLoading::Absolute(1e-9),
            ..position_only()
        };
        let model = fit(&ds, &opts).unwrap();
        assert!((&model.a - dense(&s.a)).norm() < 1e-6);
        assert!(frob(&model.c, &s.c) < 1e-6);
        assert!((&model.b - &s.b).norm() < 1e-6);
        assert!(model.w.norm() < 1e-12);
    }

    #[test]
    fn zero_labels_are_rank_deficient() {
        let mut s = synthetic(2, 6, 4, 10, 0.0, 0.1);
        for l in &mut s.labels {
            l.0 = [0.0; NUM_DOFS];
        }
        for opts in [FitOptions::default(), position_only()] {
            assert!(matches!(fit(&dataset(&s), &opts), Err(Error::RankDeficient(_))));
        }
    }

    #[test]
    fn non_finite_features_are_rejected() {
        let mut s = synthetic(3, 6, 6, 10, 0.05, 0.1);
        s.features.values[17] = f64::NAN;
        assert!(matches!(fit(&dataset(&s), &FitOptions::default()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn pairs_never_cross_segments() {
        // Segments with a large jump between them: if the fit used cross-segment
        // pairs the recovered A would be biased.
        let mut s = synthetic(4, 10, 30, 20, 0.0, 0.0);
        for (x, seg) in &mut s.labels {
            if *seg % 2 == 1 {
                // Keep the within-segment dynamics: scale the whole segment.
                x.iter_mut().for_each(|v| *v *= 5.0);
            }
        }
        // Rebuild observations to match the rescaled states.
        let rows: Vec<Vec<f64>> = s
            .labels
            .iter()
            .map(|(x, _)| (&s.c * DVector::from_column_slice(x) + &s.b).iter().copied().collect())
            .collect();
        s.features = features_from_rows(rows);
        let opts = FitOptions {
            loading: DiagonalLoading::Absolute(1e-9),
            ..position_only()
        };
        let model = fit(&dataset(&s), &opts).unwrap();
        assert!((&model.a - dense(&s.a)).norm() < 1e-6);
    }

    #[test]
    fn fit_is_invariant_to_segment_order() {
        let s = synthetic(5, 9, 12, 15, 0.05, 0.2);
        let ds = dataset(&s);
        let mut perm = ds.clone();
        // Reverse the order of segments, keeping each segment's frames in order.
        let mut blocks: Vec<Vec<LabeledFrame>> = Vec::new();
        for f in &ds.frames {
            match blocks.last_mut() {
                Some(b) if b[0].trial == f.trial => b.push(*f),
                _ => blocks.push(alloc::vec![*f]),
            }
        }
        blocks.reverse();
        perm.frames = blocks.into_iter().flatten().collect();
        let m1 = fit(&ds, &FitOptions::default()).unwrap();
        let m2 = fit(&perm, &FitOptions::default()).unwrap();
        assert!((&m1.a - &m2.a).norm() < 1e-9);
        assert!((&m1.w - &m2.w).norm() < 1e-9);
        assert!(frob(&m1.c, &m2.c) < 1e-9);
        assert!(frob(&m1.q, &m2.q) < 1e-9);
    }

    #[test]
    fn loading_and_subset() {
        let s = synthetic(6, 20, 10, 20, 0.05, 0.3);
        let ds = dataset(&s);
        let full = fit(&ds, &FitOptions::default()).unwrap();
        let mut resid = full.q.clone();
        for i in 0..resid.nrows() {
            resid[(i, i)] -= full.lambda;
        }
        assert!((full.lambda - 1e-4 * resid.diagonal().mean()).abs() < 1e-15);
        assert!(full.q.clone().cholesky().is_some());

        let opts = FitOptions {
            channel_subset: Some(5),
            ..FitOptions::default()
        };
        let sub = fit(&ds, &opts).unwrap();
        let keep = sub.channel_subset.clone().unwrap();
        assert_eq!(keep.len(), 5);
        assert_eq!(sub.observation_dim(), 5);
        let frames: Vec<&LabeledFrame> = ds.frames.iter().collect();
        let r = feature_label_correlation(&frames, &s.features);
        let min_kept = keep.iter().map(|&j| r[j]).fold(f64::INFINITY, f64::min);
        for j in (0..20).filter(|j| !keep.contains(j)) {
            assert!(r[j] <= min_kept);
        }
        assert!(infer(&sub, &s.features).is_ok());
        let bad = FitOptions {
            channel_subset: Some(0),
            ..FitOptions::default()
        };
        assert!(fit(&ds, &bad).is_err());
    }

    /// Dense standard-gain recursion used as an oracle.
    fn standard_filter(model: &DecoderModel, z: &[DVector<f64>]) -> (Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
        let n = model.state.dim();
        let (a, w) = (&model.a, &model.w);
        let mut x = DVector::<f64>::zeros(n);
        let mut p = w.clone();
        let mut xs = Vec::new();
        let mut priors = Vec::new();
        for zt in z {
            let xp = a * &x;
            let pp = a * &p * a.transpose() + w;
            let s = &model.c * &pp * model.c.transpose() + &model.q;
            let k = &pp * model.c.transpose() * s.try_inverse().unwrap();
            x = &xp + &k * (zt - &model.c * &xp - &model.b);
            p = (DMatrix::identity(n, n) - &k * &model.c) * &pp;
            xs.push(x.clone());
            priors.push(pp);
        }
        (xs, priors)
    }

    #[test]
    fn information_form_matches_standard_recursion() {
        let s = synthetic(7, 20, 8, 30, 0.1, 0.3);
        let signed = FitOptions {
            state: StateModel::PositionVelocity,
            ..FitOptions::default()
        };
        for opts in [FitOptions::default(), signed, position_only()] {
            let model = fit(&dataset(&s), &opts).unwrap();
            let z: Vec<DVector<f64>> = (0..s.features.n_frames()).map(|f| DVector::from_row_slice(s.features.row(f))).collect();
            let (oracle, priors) = standard_filter(&model, &z);
            let mut kf = KalmanFilter::new(&model).unwrap();
            for (f, (xo, po)) in oracle.iter().zip(&priors).enumerate() {
                let x = kf.step(s.features.row(f)).unwrap();
                assert!((kf.state() - xo).norm() < 1e-9 * (1.0 + xo.norm()), "frame {f}");
                assert!((kf.prior_covariance() - po).norm() < 1e-9 * (1.0 + po.norm()));
                assert!(x.iter().all(|v| v.abs() < 10.0));
                assert_eq!(x[..], kf.state().as_slice()[..NUM_DOFS]);
            }
        }
    }

    #[test]
    fn converged_prior_solves_the_riccati_equation() {
        let s = synthetic(8, 16, 10, 30, 0.1, 0.3);
        let model = fit(&dataset(&s), &FitOptions::default()).unwrap();
        // Oracle: iterate the Riccati map on its own until it stops moving.
        let (a, w) = (model.a.clone(), model.w.clone());
        let riccati = |p: &DMatrix<f64>| {
            let s = &model.c * p * model.c.transpose() + &model.q;
            let gain = p * model.c.transpose() * s.cholesky().unwrap().inverse() * &model.c * p;
            &a * (p - gain) * a.transpose() + &w
        };
        let mut p = w.clone();
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
        let pk = kf.prior_covariance().clone();
        assert!((&pk - &p).norm() < 1e-8);
        assert!((riccati(&pk) - &pk).norm() < 1e-8);
    }

    #[test]
    fn steady_state_filter_is_linear() {
        let s = synthetic(9, 12, 10, 30, 0.1, 0.3);
        let model = fit(&dataset(&s), &FitOptions::default()).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(99);
        let n = s.features.n_frames();
        let m = s.features.n_features();
        let dz: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| gauss(&mut r)).collect()).collect();
        // Warm up to a converged covariance, then fork three filters.
        let mut warm = KalmanFilter::new(&model).unwrap();
        for f in 0..300 {
            warm.step(s.features.row(f)).unwrap();
        }
        let mut base = warm.clone();
        let mut pert = warm.clone();
        let mut lin = warm.clone();
        lin.x = DVector::zeros(model.state.dim());
        for f in 0..n {
            let row = s.features.row(f);
            let shifted: Vec<f64> = row.iter().zip(&dz[f]).map(|(a, b)| a + b).collect();
            base.step(row).unwrap();
            pert.step(&shifted).unwrap();
            // Linear response: intercept removed by feeding Δz + b.
            let delta: Vec<f64> = dz[f].iter().zip(model.b.iter()).map(|(a, b)| a + b).collect();
            lin.step(&delta).unwrap();
            assert!((pert.state() - base.state() - lin.state()).norm() < 1e-8, "frame {f}");
        }
    }

    #[test]
    fn trusts_observations_when_observation_noise_vanishes() {
        let n = 60;
        let mut r = ChaCha8Rng::seed_from_u64(10);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..NUM_DOFS).map(|_| r.random::<f64>() - 0.5).collect()).collect();
        let features = features_from_rows(rows);
        let model = DecoderModel {
            state: StateModel::Position,
            a: DMatrix::identity(NUM_DOFS, NUM_DOFS),
            w: DMatrix::identity(NUM_DOFS, NUM_DOFS) * 1e-2,
            c: DMatrix::identity(NUM_DOFS, NUM_DOFS),
            b: DVector::zeros(NUM_DOFS),
            q: DMatrix::identity(NUM_DOFS, NUM_DOFS) * 1e-12,
            lambda: 0.0,
            post: PostProcessConfig::default(),
            channel_subset: None,
            input_features: NUM_DOFS,
        };
        let est = infer(&model, &features).unwrap();
        for (f, x) in est.iter().enumerate() {
            for d in 0..NUM_DOFS {
                assert!((x[d] - features.get(f, d)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn post_processing_is_deadband_then_clamp() {
        let p = PostProcessConfig {
            enabled: true,
            deadband: 0.05,
            output_clamp: [-1.0, 1.0],
        };
        assert_eq!(p.apply(0.04), 0.0);
        assert_eq!(p.apply(-0.049), 0.0);
        assert_eq!(p.apply(0.3), 0.3);
        assert_eq!(p.apply(1.7), 1.0);
        assert_eq!(p.apply(-2.0), -1.0);
        assert_eq!(PostProcessConfig::default().apply(1.7), 1.7);
        assert!(PostProcessConfig { deadband: 1.0, ..p }.validate().is_err());
    }

    #[test]
    fn scoring_against_brute_force() {
        let s = synthetic(11, 8, 6, 20, 0.05, 0.2);
        let mut ds = dataset(&s);
        for (i, f) in ds.frames.iter_mut().enumerate() {
            f.role = if i % 3 == 0 { Role::Test } else { Role::Train };
        }
        let labels: Vec<[f64; NUM_DOFS]> = s.labels.iter().map(|l| l.0).collect();
        let exact = score(&labels, &ds, Reference::TrainingLabels).unwrap();
        assert_eq!(exact.pooled, 0.0);
        let shifted: Vec<[f64; NUM_DOFS]> = labels.iter().map(|x| x.map(|v| v + 0.1)).collect();
        let off = score(&shifted, &ds, Reference::TrainingLabels).unwrap();
        assert!((off.pooled - 0.1).abs() < 1e-12);
        assert!((off.pooled_percent_span - 5.0).abs() < 1e-10);

        let mut r = ChaCha8Rng::seed_from_u64(12);
        let est: Vec<[f64; NUM_DOFS]> = labels.iter().map(|_| core::array::from_fn(|_| gauss(&mut r))).collect();
        let rep = score(&est, &ds, Reference::TrainingLabels).unwrap();
        let mut acc = 0.0;
        let mut cnt = 0.0;
        for i in (0..labels.len()).step_by(3) {
            for d in 0..NUM_DOFS {
                acc += (est[i][d] - labels[i][d]).powi(2);
                cnt += 1.0;
            }
        }
        assert!((rep.pooled - libm::sqrt(acc / cnt)).abs() < 1e-12);
        assert_eq!(rep.n_frames, labels.len().div_ceil(3));

        for f in &mut ds.frames {
            f.role = Role::Train;
        }
        assert!(matches!(score(&labels, &ds, Reference::TrainingLabels), Err(Error::EmptyTestSet)));
    }
}
