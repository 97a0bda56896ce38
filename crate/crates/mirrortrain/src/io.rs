//! On-disk formats: session directories, EMG binaries, kinematic CSVs,
//! JSON reports and hex-float decoder models.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use mirrortrain_core::decoder::{DecoderModel, PostProcessConfig, StateModel};
use mirrortrain_core::humansim::GroundTruthLog;
use mirrortrain_core::kinematics::frame_time;
use mirrortrain_core::protocol::{MovementSpec, TrialTimingParams};
use mirrortrain_core::{EmgBlock, KinematicStream, SessionDataset, StreamSource, TrialRecord, FRAME_RATE_HZ, NUM_DOFS};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hexfloat;

pub const SESSION_FILE: &str = "session.json";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const EMG_FILE: &str = "emg.bin";
pub const EMG_MAGIC: &[u8; 4] = b"EMG1";
const EMG_HEADER_LEN: usize = 4 + 4 + 4 + 8;
const SESSION_FORMAT: &str = "mirrortrain-session/1";
const MODEL_FORMAT: &str = "mirrortrain-model/1";

pub fn kinematics_file(source: StreamSource) -> String {
    format!("kin_{}.csv", source.as_str())
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::corrupt(path, e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingSession(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::corrupt(path, e.to_string()))
}

/// `EMG1`, u32 channels, u32 sample rate, u64 sample count, then f32
/// samples in sample-major order; all little-endian.
pub fn write_emg(path: &Path, emg: &EmgBlock) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let channels = u32::try_from(emg.channels).map_err(|_| Error::corrupt(path, "channel count exceeds u32"))?;
    let mut header = Vec::with_capacity(EMG_HEADER_LEN);
    header.extend_from_slice(EMG_MAGIC);
    header.extend_from_slice(&channels.to_le_bytes());
    header.extend_from_slice(&emg.sample_rate.to_le_bytes());
    header.extend_from_slice(&(emg.sample_count() as u64).to_le_bytes());
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(&header)?;
        for x in &emg.samples {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

pub fn read_emg(path: &Path) -> Result<EmgBlock> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingSession(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
    if bytes.len() < EMG_HEADER_LEN || &bytes[..4] != EMG_MAGIC {
        return Err(Error::corrupt(path, "missing EMG1 header"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let channels = u32_at(4) as usize;
    let sample_rate = u32_at(8);
    let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let expected = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(channels))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::corrupt(path, "sample count overflows"))?;
    let body = &bytes[EMG_HEADER_LEN..];
    if body.len() != expected {
        return Err(Error::corrupt(path, format!("expected {expected} sample bytes, found {}", body.len())));
    }
    let samples = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    let emg = EmgBlock {
        sample_rate,
        channels,
        samples,
    };
    emg.validate().map_err(|e| Error::corrupt(path, e.to_string()))?;
    Ok(emg)
}

/// Columns `t,dof0..dof7`, nine significant digits, which reproduces the
/// stored `f32` angles exactly.
pub fn write_kinematics(path: &Path, stream: &KinematicStream) -> Result<()> {
    let mut text = String::with_capacity(stream.len() * 140);
    text.push('t');
    for d in 0..NUM_DOFS {
        text += &format!(",dof{d}");
    }
    text.push('\n');
    for f in &stream.frames {
        text += &format!("{:.8e}", f.t);
        for a in &f.angles {
            text += &format!(",{a:.8e}");
        }
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn read_kinematics(path: &Path, source: StreamSource) -> Result<KinematicStream> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingSession(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let mut reader = csv::Reader::from_reader(file);
    let expected: Vec<String> = std::iter::once("t".to_string()).chain((0..NUM_DOFS).map(|d| format!("dof{d}"))).collect();
    let headers = reader.headers().map_err(|e| Error::corrupt(path, e.to_string()))?;
    if headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::corrupt(path, "header must be t,dof0,...,dof7"));
    }
    let mut angles = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::corrupt(path, e.to_string()))?;
        let bad = |what: &str| Error::corrupt(path, format!("row {}: {what}", i + 1));
        let t: f64 = record[0].parse().map_err(|_| bad("unparsable time"))?;
        if (t - frame_time(i)).abs() > 1e-6 * frame_time(i).max(1.0) {
            return Err(bad("time off the 30 Hz grid"));
        }
        let mut row = [0.0f32; NUM_DOFS];
        for (d, slot) in row.iter_mut().enumerate() {
            *slot = record[d + 1].parse().map_err(|_| bad("unparsable angle"))?;
        }
        angles.push(row);
    }
    let stream = KinematicStream::from_angles(source, angles);
    stream.validate().map_err(|e| Error::corrupt(path, e.to_string()))?;
    Ok(stream)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmgEntry {
    file: String,
    channels: usize,
    sample_rate: u32,
    sample_count: usize,
}

/// Contents of `session.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionMeta {
    pub format: String,
    pub participant_id: u32,
    pub seed: u64,
    pub frame_rate_hz: u32,
    pub n_frames: usize,
    pub catalog: Vec<MovementSpec>,
    pub timing: TrialTimingParams,
    pub trials: Vec<TrialRecord>,
    pub baseline_rest_window: [f64; 2],
    pub kinematics: Vec<(StreamSource, String)>,
    emg: EmgEntry,
    pub config: serde_json::Value,
}

pub fn write_session(dir: &Path, session: &SessionDataset, log: &GroundTruthLog, config: &serde_json::Value) -> Result<()> {
    create_dir(dir)?;
    let meta = SessionMeta {
        format: SESSION_FORMAT.into(),
        participant_id: session.participant_id,
        seed: session.seed,
        frame_rate_hz: FRAME_RATE_HZ,
        n_frames: session.virtual_stream.len(),
        catalog: session.catalog.clone(),
        timing: session.timing,
        trials: session.trials.clone(),
        baseline_rest_window: session.baseline_rest_window,
        kinematics: StreamSource::ALL.iter().map(|&s| (s, kinematics_file(s))).collect(),
        emg: EmgEntry {
            file: EMG_FILE.into(),
            channels: session.emg.channels,
            sample_rate: session.emg.sample_rate,
            sample_count: session.emg.sample_count(),
        },
        config: config.clone(),
    };
    write_json(&dir.join(SESSION_FILE), &meta)?;
    for source in StreamSource::ALL {
        write_kinematics(&dir.join(kinematics_file(source)), session.stream(source))?;
    }
    write_emg(&dir.join(EMG_FILE), &session.emg)?;
    write_json(&dir.join(GROUND_TRUTH_FILE), log)
}

/// Loads and validates a session directory; also returns its config echo.
pub fn read_session(dir: &Path) -> Result<(SessionDataset, serde_json::Value)> {
    let meta_path = dir.join(SESSION_FILE);
    let meta: SessionMeta = read_json(&meta_path)?;
    if meta.format != SESSION_FORMAT {
        return Err(Error::corrupt(&meta_path, format!("unsupported format `{}`", meta.format)));
    }
    if meta.frame_rate_hz != FRAME_RATE_HZ {
        return Err(Error::corrupt(&meta_path, "frame rate must be 30 Hz"));
    }
    let stream = |source: StreamSource| -> Result<KinematicStream> {
        let name = meta
            .kinematics
            .iter()
            .find(|(s, _)| *s == source)
            .map(|(_, f)| f.clone())
            .ok_or_else(|| Error::corrupt(&meta_path, format!("no {} stream listed", source.as_str())))?;
        let s = read_kinematics(&dir.join(&name), source)?;
        if s.len() != meta.n_frames {
            return Err(Error::corrupt(dir.join(name), format!("expected {} frames, found {}", meta.n_frames, s.len())));
        }
        Ok(s)
    };
    let emg_path = dir.join(&meta.emg.file);
    let emg = read_emg(&emg_path)?;
    if emg.channels != meta.emg.channels || emg.sample_rate != meta.emg.sample_rate || emg.sample_count() != meta.emg.sample_count {
        return Err(Error::corrupt(&emg_path, "header disagrees with session.json"));
    }
    let session = SessionDataset {
        participant_id: meta.participant_id,
        seed: meta.seed,
        catalog: meta.catalog,
        timing: meta.timing,
        trials: meta.trials,
        true_stream: stream(StreamSource::True)?,
        contralateral_stream: stream(StreamSource::Contralateral)?,
        virtual_stream: stream(StreamSource::Virtual)?,
        emg,
        baseline_rest_window: meta.baseline_rest_window,
    };
    session.validate().map_err(|e| Error::corrupt(dir, e.to_string()))?;
    Ok((session, meta.config))
}

pub fn read_ground_truth(dir: &Path) -> Result<GroundTruthLog> {
    read_json(&dir.join(GROUND_TRUTH_FILE))
}

/// Session directories (those holding a `session.json`) in name order.
pub fn session_dirs(cohort_dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(cohort_dir).map_err(|e| Error::io(cohort_dir, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(cohort_dir, e))?.path();
        if path.is_dir() && path.join(SESSION_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::NoSessions(cohort_dir.to_path_buf()));
    }
    Ok(dirs)
}

/// All sessions of a cohort, plus the config echo of the first one.
pub fn read_cohort(cohort_dir: &Path) -> Result<(Vec<SessionDataset>, serde_json::Value)> {
    use rayon::prelude::*;
    let dirs = session_dirs(cohort_dir)?;
    let loaded: Vec<(SessionDataset, serde_json::Value)> = dirs.par_iter().map(|d| read_session(d)).collect::<Result<_>>()?;
    let echo = loaded[0].1.clone();
    Ok((loaded.into_iter().map(|(s, _)| s).collect(), echo))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HexMatrix {
    rows: usize,
    cols: usize,
    /// Row-major.
    data: Vec<String>,
}

impl HexMatrix {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| hexfloat::format(m[(i, j)]))).collect();
        HexMatrix {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    fn to_matrix(&self, path: &Path, name: &str) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::corrupt(path, format!("{name}: {}×{} needs {} entries", self.rows, self.cols, self.rows * self.cols)));
        }
        let values = self
            .data
            .iter()
            .map(|s| hexfloat::parse(s).ok_or_else(|| Error::corrupt(path, format!("{name}: bad hex float `{s}`"))))
            .collect::<Result<Vec<f64>>>()?;
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &values))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    state: StateModel,
    input_features: usize,
    channel_subset: Option<Vec<usize>>,
    lambda: String,
    post: PostProcessConfig,
    a: HexMatrix,
    w: HexMatrix,
    c: HexMatrix,
    b: HexMatrix,
    q: HexMatrix,
}

/// Matrices row-major as hex floats, so reloading is exact.
pub fn write_model(path: &Path, model: &DecoderModel) -> Result<()> {
    let b = DMatrix::from_column_slice(model.b.len(), 1, model.b.as_slice());
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        state: model.state,
        input_features: model.input_features,
        channel_subset: model.channel_subset.clone(),
        lambda: hexfloat::format(model.lambda),
        post: model.post,
        a: HexMatrix::from_matrix(&model.a),
        w: HexMatrix::from_matrix(&model.w),
        c: HexMatrix::from_matrix(&model.c),
        b: HexMatrix::from_matrix(&b),
        q: HexMatrix::from_matrix(&model.q),
    };
    let mut text = serde_json::to_string(&file).map_err(|e| Error::corrupt(path, e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_model(path: &Path) -> Result<DecoderModel> {
    let file: ModelFile = read_json(path)?;
    if file.format != MODEL_FORMAT {
        return Err(Error::corrupt(path, format!("unsupported format `{}`", file.format)));
    }
    let b = file.b.to_matrix(path, "b")?;
    if b.ncols() != 1 {
        return Err(Error::corrupt(path, "b must be a column"));
    }
    let model = DecoderModel {
        state: file.state,
        a: file.a.to_matrix(path, "a")?,
        w: file.w.to_matrix(path, "w")?,
        c: file.c.to_matrix(path, "c")?,
        b: DVector::from_column_slice(b.as_slice()),
        q: file.q.to_matrix(path, "q")?,
        lambda: hexfloat::parse(&file.lambda).ok_or_else(|| Error::corrupt(path, "bad lambda"))?,
        post: file.post,
        channel_subset: file.channel_subset,
        input_features: file.input_features,
    };
    model.validate().map_err(|e| Error::corrupt(path, e.to_string()))?;
    Ok(model)
}
