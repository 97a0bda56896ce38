use std::path::{Path, PathBuf};

use mirrortrain_core::analysis::PeakOptions;
use mirrortrain_core::decoder::{DiagonalLoading, FitOptions, PostProcessConfig, StateModel};
use mirrortrain_core::emgsim::EmgModelParams;
use mirrortrain_core::humansim::ImperfectionParams;
use mirrortrain_core::protocol::{default_movement_catalog, MovementSpec, TrialTimingParams};
use mirrortrain_core::SessionConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_COHORT_SIZE: u32 = 7;
pub const DEFAULT_MASTER_SEED: u64 = 2024;
pub const DEFAULT_OUTPUT_DIR: &str = "mirrortrain-out";

/// Decoder settings shared by both paradigms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderOptions {
    pub state: StateModel,
    pub loading: DiagonalLoading,
    /// Keep only the k features most correlated with the labels.
    pub channel_subset: Option<usize>,
    pub post: PostProcessConfig,
    /// MAV window, seconds.
    pub feature_window_s: f64,
    /// Search range of the mimicked alignment lag, frames.
    pub max_lag: u32,
}

impl Default for DecoderOptions {
    fn default() -> Self {
        DecoderOptions {
            state: StateModel::default(),
            loading: DiagonalLoading::default(),
            channel_subset: None,
            post: PostProcessConfig::default(),
            feature_window_s: mirrortrain_core::features::MAV_WINDOW_S,
            max_lag: mirrortrain_core::labeling::DEFAULT_MAX_LAG_FRAMES,
        }
    }
}

impl DecoderOptions {
    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            state: self.state,
            loading: self.loading,
            channel_subset: self.channel_subset,
            post: self.post,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.post.validate().map_err(|e| nest("decoder.post", e))?;
        if self.channel_subset == Some(0) {
            return Err(Error::config("decoder.channel_subset", "must be at least 1"));
        }
        let loading_ok = match self.loading {
            DiagonalLoading::RelativeToMeanDiagonal(v) | DiagonalLoading::Absolute(v) => v.is_finite() && v >= 0.0,
        };
        if !loading_ok {
            return Err(Error::config("decoder.loading", "must be finite and non-negative"));
        }
        if !(self.feature_window_s.is_finite() && self.feature_window_s > 0.0) {
            return Err(Error::config("decoder.feature_window_s", "must be positive"));
        }
        Ok(())
    }
}

/// Everything a run depends on. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub cohort_size: u32,
    pub master_seed: u64,
    pub imperfections: ImperfectionParams,
    pub emg: EmgModelParams,
    /// Replaces the default movement catalog when present.
    pub catalog: Option<Vec<MovementSpec>>,
    pub timing: TrialTimingParams,
    pub analysis: PeakOptions,
    pub decoder: DecoderOptions,
    /// Not echoed into outputs, so runs in different directories match.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            cohort_size: DEFAULT_COHORT_SIZE,
            master_seed: DEFAULT_MASTER_SEED,
            imperfections: ImperfectionParams::default(),
            emg: EmgModelParams::default(),
            catalog: None,
            timing: TrialTimingParams::default(),
            analysis: PeakOptions::default(),
            decoder: DecoderOptions::default(),
            output_dir: PathBuf::from(DEFAULT_OUTPUT_DIR),
        }
    }
}

fn nest(prefix: &str, e: mirrortrain_core::Error) -> Error {
    match e {
        mirrortrain_core::Error::InvalidParameter { field, reason } => Error::config(format!("{prefix}.{field}"), reason),
        other => Error::config(prefix, other.to_string()),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::ConfigParse { source, .. } => Error::ConfigParse {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }

    /// Parses and validates a config document.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|source| Error::ConfigParse {
            path: PathBuf::from("<inline>"),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cohort_size < 2 {
            return Err(Error::config("cohort_size", "must be at least 2"));
        }
        self.imperfections.validate().map_err(|e| nest("imperfections", e))?;
        self.emg.validate().map_err(|e| nest("emg", e))?;
        self.timing.validate().map_err(|e| nest("timing", e))?;
        if let Some(catalog) = &self.catalog {
            if catalog.is_empty() {
                return Err(Error::config("catalog", "must list at least one movement"));
            }
            for m in catalog {
                m.validate().map_err(|e| nest("catalog", e))?;
            }
        }
        if !(self.analysis.tie_tolerance_percent >= 0.0 && self.analysis.noise_floor_percent >= 0.0) {
            return Err(Error::config("analysis", "tolerances must be non-negative"));
        }
        self.decoder.validate()
    }

    pub fn session_config(&self) -> SessionConfig {
        SessionConfig {
            catalog: self.catalog.clone().unwrap_or_else(default_movement_catalog),
            timing: self.timing,
            imperfections: self.imperfections.clone(),
            emg: self.emg.clone(),
        }
    }

    /// The config as embedded in every output.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
