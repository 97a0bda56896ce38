//! File formats, cohort pipeline and command-line runner built on
//! `mirrortrain-core`.

pub mod config;
pub mod error;
pub mod hexfloat;
pub mod io;
pub mod pipeline;

pub use config::{DecoderOptions, ExperimentConfig};
pub use error::{Error, Result};
