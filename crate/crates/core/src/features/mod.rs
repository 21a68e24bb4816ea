//! Frame-level pitch, energy and MFCC extraction and their aggregation into a
//! fixed 37-dimensional [`FeatureVector`].

mod describe;
pub mod io;
pub mod mfcc;
pub mod pitch;

use std::fmt;

use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::audio_io::{ms_to_samples, AudioSignal};

pub use describe::{describe, CorpusStats, DescriptionEntry, Level, StructuredDescription};
pub use mfcc::{MfccConfig, MfccExtractor};
pub use pitch::{estimate_pitch, PitchConfig};

pub const N_MFCC: usize = 13;
pub const DIM: usize = 37;
pub const FEATURE_SCHEMA: &str = "emoroute-features/1";

/// Dimension names in their frozen order.
pub const DIMENSION_NAMES: [&str; DIM] = [
    "pitch_mean",
    "pitch_std",
    "pitch_min",
    "pitch_max",
    "pitch_range",
    "voiced_ratio",
    "energy_mean",
    "energy_std",
    "energy_min",
    "energy_max",
    "energy_range",
    "mfcc_mean_0",
    "mfcc_mean_1",
    "mfcc_mean_2",
    "mfcc_mean_3",
    "mfcc_mean_4",
    "mfcc_mean_5",
    "mfcc_mean_6",
    "mfcc_mean_7",
    "mfcc_mean_8",
    "mfcc_mean_9",
    "mfcc_mean_10",
    "mfcc_mean_11",
    "mfcc_mean_12",
    "mfcc_std_0",
    "mfcc_std_1",
    "mfcc_std_2",
    "mfcc_std_3",
    "mfcc_std_4",
    "mfcc_std_5",
    "mfcc_std_6",
    "mfcc_std_7",
    "mfcc_std_8",
    "mfcc_std_9",
    "mfcc_std_10",
    "mfcc_std_11",
    "mfcc_std_12",
];

pub mod dim {
    pub const PITCH_MEAN: usize = 0;
    pub const PITCH_STD: usize = 1;
    pub const PITCH_MIN: usize = 2;
    pub const PITCH_MAX: usize = 3;
    pub const PITCH_RANGE: usize = 4;
    pub const VOICED_RATIO: usize = 5;
    pub const ENERGY_MEAN: usize = 6;
    pub const ENERGY_STD: usize = 7;
    pub const ENERGY_MIN: usize = 8;
    pub const ENERGY_MAX: usize = 9;
    pub const ENERGY_RANGE: usize = 10;
    pub const MFCC_MEAN: usize = 11;
    pub const MFCC_STD: usize = 24;
}

pub fn dimension_index(name: &str) -> Option<usize> {
    DIMENSION_NAMES.iter().position(|&n| n == name)
}

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("signal has {len} samples, shorter than one {frame_len}-sample frame")]
    SignalTooShort { len: usize, frame_len: usize },
    #[error("frame series is empty")]
    EmptySeries,
    #[error("corpus statistics missing or incomplete: {0}")]
    MissingStats(String),
    #[error("feature schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub pitch: PitchConfig,
    pub mfcc: MfccConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            frame_ms: 25.0,
            hop_ms: 10.0,
            pitch: PitchConfig::default(),
            mfcc: MfccConfig::default(),
        }
    }
}

/// Splits a signal into overlapping frames of `frame_ms` every `hop_ms`.
/// Frames are borrowed, unwindowed slices.
pub fn frame_signal(signal: &AudioSignal, frame_ms: f64, hop_ms: f64) -> Result<Vec<&[f64]>, FeatureError> {
    let x = signal.samples();
    let frame_len = ms_to_samples(frame_ms, signal.sample_rate);
    let hop = ms_to_samples(hop_ms, signal.sample_rate);
    if x.len() < frame_len {
        return Err(FeatureError::SignalTooShort {
            len: x.len(),
            frame_len,
        });
    }
    let count = 1 + (x.len() - frame_len) / hop;
    Ok((0..count).map(|i| &x[i * hop..i * hop + frame_len]).collect())
}

/// Root-mean-square amplitude.
pub fn rms_energy(frame: &[f64]) -> f64 {
    if frame.is_empty() {
        return 0.0;
    }
    (frame.iter().map(|v| v * v).sum::<f64>() / frame.len() as f64).sqrt()
}

/// Per-frame streams. `None` in `pitch_hz` marks an unvoiced frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSeries {
    pub pitch_hz: Vec<Option<f64>>,
    pub energy_rms: Vec<f64>,
    pub mfcc: Vec<Vec<f64>>,
    pub frame_ms: f64,
    pub hop_ms: f64,
}

impl FrameSeries {
    pub fn len(&self) -> usize {
        self.energy_rms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energy_rms.is_empty()
    }
}

/// Runs pitch, energy and MFCC analysis over every frame of `signal`.
pub fn extract_series(signal: &AudioSignal, cfg: &FeatureConfig) -> Result<FrameSeries, FeatureError> {
    let frames = frame_signal(signal, cfg.frame_ms, cfg.hop_ms)?;
    let frame_len = frames[0].len();
    let mfcc = MfccExtractor::new(frame_len, signal.sample_rate, cfg.mfcc);
    let mut series = FrameSeries {
        pitch_hz: Vec::with_capacity(frames.len()),
        energy_rms: Vec::with_capacity(frames.len()),
        mfcc: Vec::with_capacity(frames.len()),
        frame_ms: cfg.frame_ms,
        hop_ms: cfg.hop_ms,
    };
    for frame in frames {
        series.energy_rms.push(rms_energy(frame));
        series
            .pitch_hz
            .push(estimate_pitch(frame, signal.sample_rate, &cfg.pitch));
        series.mfcc.push(mfcc.compute(frame));
    }
    Ok(series)
}

/// `extract_series` followed by `aggregate`.
pub fn extract_features(signal: &AudioSignal, cfg: &FeatureConfig) -> Result<FeatureVector, FeatureError> {
    aggregate(&extract_series(signal, cfg)?)
}

#[derive(Default)]
struct Summary {
    mean: f64,
    std: f64,
    min: f64,
    max: f64,
}

/// Population statistics; all zeros for an empty input.
fn summarize(values: impl Iterator<Item = f64> + Clone) -> Summary {
    let n = values.clone().count();
    if n == 0 {
        return Summary::default();
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.clone().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let (min, max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    Summary {
        mean,
        std: var.sqrt(),
        min,
        max,
    }
}

/// Collapses a frame series to the fixed 37-dimensional layout. Pitch
/// statistics use voiced frames only and are zero when none are voiced.
pub fn aggregate(series: &FrameSeries) -> Result<FeatureVector, FeatureError> {
    let n = series.len();
    if n == 0 || series.pitch_hz.len() != n || series.mfcc.len() != n {
        return Err(FeatureError::EmptySeries);
    }
    let mut v = [0.0; DIM];

    let voiced = series.pitch_hz.iter().filter_map(|p| *p);
    let p = summarize(voiced.clone());
    v[dim::PITCH_MEAN] = p.mean;
    v[dim::PITCH_STD] = p.std;
    v[dim::PITCH_MIN] = p.min;
    v[dim::PITCH_MAX] = p.max;
    v[dim::PITCH_RANGE] = p.max - p.min;
    v[dim::VOICED_RATIO] = voiced.count() as f64 / n as f64;

    let e = summarize(series.energy_rms.iter().copied());
    v[dim::ENERGY_MEAN] = e.mean;
    v[dim::ENERGY_STD] = e.std;
    v[dim::ENERGY_MIN] = e.min;
    v[dim::ENERGY_MAX] = e.max;
    v[dim::ENERGY_RANGE] = e.max - e.min;

    for k in 0..N_MFCC {
        let s = summarize(series.mfcc.iter().map(|row| row.get(k).copied().unwrap_or(0.0)));
        v[dim::MFCC_MEAN + k] = s.mean;
        v[dim::MFCC_STD + k] = s.std;
    }
    Ok(FeatureVector(v))
}

/// Fixed-length utterance descriptor; see [`DIMENSION_NAMES`] for the layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; DIM]);

impl FeatureVector {
    pub fn zeros() -> Self {
        FeatureVector([0.0; DIM])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        dimension_index(name).map(|i| self.0[i])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn from_slice(values: &[f64]) -> Result<Self, FeatureError> {
        let arr: [f64; DIM] = values
            .try_into()
            .map_err(|_| FeatureError::Schema(format!("expected {DIM} values, got {}", values.len())))?;
        Ok(FeatureVector(arr))
    }
}

impl fmt::Display for FeatureVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (name, v)) in DIMENSION_NAMES.iter().zip(self.0.iter()).enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{name}={v:.4}")?;
        }
        Ok(())
    }
}

impl Serialize for FeatureVector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(DIM + 1))?;
        map.serialize_entry("schema", FEATURE_SCHEMA)?;
        for (name, v) in DIMENSION_NAMES.iter().zip(self.0.iter()) {
            map.serialize_entry(name, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for FeatureVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = std::collections::HashMap::<String, serde_json::Value>::deserialize(d)?;
        match map.get("schema").and_then(|s| s.as_str()) {
            Some(FEATURE_SCHEMA) => {}
            other => return Err(D::Error::custom(format!("unsupported feature schema {other:?}"))),
        }
        let mut v = [0.0; DIM];
        for (i, name) in DIMENSION_NAMES.iter().enumerate() {
            v[i] = map
                .get(*name)
                .and_then(|x| x.as_f64())
                .ok_or_else(|| D::Error::custom(format!("missing or non-numeric dimension '{name}'")))?;
        }
        Ok(FeatureVector(v))
    }
}
