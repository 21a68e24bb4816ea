use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::dim;
use super::{FeatureError, FeatureVector, DIM, DIMENSION_NAMES, FEATURE_SCHEMA};

/// Reference mean and spread per dimension, used to express an utterance in
/// corpus z-scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub schema: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Dimensions with no spread in the reference corpus. Their z-score is
    /// reported as 0.
    pub zero_variance: Vec<bool>,
}

impl CorpusStats {
    pub fn from_vectors(vectors: &[FeatureVector]) -> Result<Self, FeatureError> {
        if vectors.is_empty() {
            return Err(FeatureError::MissingStats("no reference vectors".into()));
        }
        let n = vectors.len() as f64;
        let mut mean = vec![0.0; DIM];
        let mut std = vec![0.0; DIM];
        for d in 0..DIM {
            mean[d] = vectors.iter().map(|v| v.0[d]).sum::<f64>() / n;
            std[d] = (vectors.iter().map(|v| (v.0[d] - mean[d]).powi(2)).sum::<f64>() / n).sqrt();
        }
        let zero_variance = std.iter().map(|&s| s <= 1e-12).collect();
        Ok(CorpusStats {
            schema: FEATURE_SCHEMA.to_string(),
            mean,
            std,
            zero_variance,
        })
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.schema != FEATURE_SCHEMA {
            return Err(FeatureError::MissingStats(format!("schema '{}'", self.schema)));
        }
        for (what, len) in [
            ("mean", self.mean.len()),
            ("std", self.std.len()),
            ("zero_variance", self.zero_variance.len()),
        ] {
            if len != DIM {
                return Err(FeatureError::MissingStats(format!(
                    "{what} has {len} of {DIM} dimensions"
                )));
            }
        }
        if self.mean.iter().chain(&self.std).any(|v| !v.is_finite()) {
            return Err(FeatureError::MissingStats("non-finite statistic".into()));
        }
        Ok(())
    }

    pub fn z_score(&self, dim: usize, value: f64) -> f64 {
        if self.zero_variance[dim] {
            0.0
        } else {
            (value - self.mean[dim]) / self.std[dim]
        }
    }

    pub fn z_scores(&self, v: &FeatureVector) -> [f64; DIM] {
        std::array::from_fn(|d| self.z_score(d, v.0[d]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    VeryLow,
    Low,
    Moderate,
    High,
    VeryHigh,
}

impl Level {
    /// Cut points at z = ±0.5 and ±1.5; the moderate band is closed on both
    /// ends.
    pub fn from_z(z: f64) -> Level {
        if z < -1.5 {
            Level::VeryLow
        } else if z < -0.5 {
            Level::Low
        } else if z <= 0.5 {
            Level::Moderate
        } else if z <= 1.5 {
            Level::High
        } else {
            Level::VeryHigh
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::VeryLow => "very low",
            Level::Low => "low",
            Level::Moderate => "moderate",
            Level::High => "high",
            Level::VeryHigh => "very high",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionEntry {
    pub feature: String,
    pub level: Level,
    pub z_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredDescription {
    pub entries: Vec<DescriptionEntry>,
    pub text: String,
}

impl StructuredDescription {
    pub fn entry(&self, feature: &str) -> Option<&DescriptionEntry> {
        self.entries.iter().find(|e| e.feature == feature)
    }
}

const HEADLINES: [(&str, usize); 5] = [
    ("Pitch variability", dim::PITCH_STD),
    ("Pitch level", dim::PITCH_MEAN),
    ("Energy level", dim::ENERGY_MEAN),
    ("Energy variability", dim::ENERGY_STD),
    ("Voiced ratio", dim::VOICED_RATIO),
];

/// Signed, fixed-precision z-score without a negative zero.
pub(crate) fn fmt_z(z: f64) -> String {
    let s = format!("{z:+.3}");
    if s == "-0.000" {
        "+0.000".to_string()
    } else {
        s
    }
}

/// Expresses `v` as qualitative levels relative to `stats` and renders the
/// text block handed to the reasoning model.
pub fn describe(v: &FeatureVector, stats: &CorpusStats) -> Result<StructuredDescription, FeatureError> {
    stats.validate()?;
    let z = stats.z_scores(v);
    let entries: Vec<DescriptionEntry> = DIMENSION_NAMES
        .iter()
        .zip(z.iter())
        .map(|(name, &z)| DescriptionEntry {
            feature: name.to_string(),
            level: Level::from_z(z),
            z_score: z,
        })
        .collect();

    let mut text = String::from("Acoustic summary (levels relative to the reference corpus):\n");
    for (title, d) in HEADLINES {
        let e = &entries[d];
        let _ = writeln!(text, "- {title}: {} ({}, z = {})", e.level, e.feature, fmt_z(e.z_score));
    }
    text.push_str("Feature profile:\n");
    for e in &entries {
        let _ = writeln!(text, "- {}: {} (z = {})", e.feature, e.level, fmt_z(e.z_score));
    }
    Ok(StructuredDescription { entries, text })
}
