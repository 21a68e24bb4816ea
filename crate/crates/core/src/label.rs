//! The three emotion classes and their fixed ordering.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Emotion class of an utterance.
///
/// The declaration order (angry, calm, panic) is load-bearing: it is the row
/// and column order of every confusion matrix and the tie-break order for
/// argmax decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Angry,
    Calm,
    Panic,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 3] = [EmotionLabel::Angry, EmotionLabel::Calm, EmotionLabel::Panic];

    pub fn index(self) -> usize {
        match self {
            EmotionLabel::Angry => 0,
            EmotionLabel::Calm => 1,
            EmotionLabel::Panic => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionLabel::Angry => "angry",
            EmotionLabel::Calm => "calm",
            EmotionLabel::Panic => "panic",
        }
    }

    /// Index of the largest value, ties resolved toward the earlier class.
    pub fn argmax(values: &[f64; 3]) -> Self {
        let mut best = 0;
        for i in 1..3 {
            if values[i] > values[best] {
                best = i;
            }
        }
        Self::ALL[best]
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown emotion label '{0}' (expected angry, calm or panic)")]
pub struct UnknownLabel(pub String);

impl FromStr for EmotionLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "angry" => Ok(EmotionLabel::Angry),
            "calm" => Ok(EmotionLabel::Calm),
            "panic" => Ok(EmotionLabel::Panic),
            _ => Err(UnknownLabel(s.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display_round_trip() {
        for l in EmotionLabel::ALL {
            assert_eq!(l.as_str().parse::<EmotionLabel>().unwrap(), l);
            assert_eq!(EmotionLabel::from_index(l.index()), Some(l));
        }
        assert_eq!(" PANIC ".parse::<EmotionLabel>().unwrap(), EmotionLabel::Panic);
        assert!("sad".parse::<EmotionLabel>().is_err());
    }

    #[test]
    fn argmax_prefers_earlier_class_on_ties() {
        assert_eq!(EmotionLabel::argmax(&[0.4, 0.4, 0.2]), EmotionLabel::Angry);
        assert_eq!(EmotionLabel::argmax(&[0.2, 0.4, 0.4]), EmotionLabel::Calm);
        assert_eq!(EmotionLabel::argmax(&[0.1, 0.2, 0.7]), EmotionLabel::Panic);
    }

    #[test]
    fn serde_uses_lowercase() {
        assert_eq!(serde_json::to_string(&EmotionLabel::Calm).unwrap(), "\"calm\"");
    }
}
