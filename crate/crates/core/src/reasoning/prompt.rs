//! Prompt construction for each reasoning configuration.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::MlEvidence;
use crate::features::{StructuredDescription, DIMENSION_NAMES};

use super::rules::RuleSet;

/// The final line every prompt asks for; [`super::parse_label`] looks for it.
pub const ANSWER_SCHEMA: &str = "LABEL: <calm|angry|panic>";

pub const RULE_GENERATION_MARKER: &str = "Task: propose annotation rules";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVersion {
    V1Basic,
    V2Rules,
    V3Refined,
    V4Hybrid,
    V5Auto,
}

impl PromptVersion {
    pub const ALL: [PromptVersion; 5] = [
        PromptVersion::V1Basic,
        PromptVersion::V2Rules,
        PromptVersion::V3Refined,
        PromptVersion::V4Hybrid,
        PromptVersion::V5Auto,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptVersion::V1Basic => "v1_basic",
            PromptVersion::V2Rules => "v2_rules",
            PromptVersion::V3Refined => "v3_refined",
            PromptVersion::V4Hybrid => "v4_hybrid",
            PromptVersion::V5Auto => "v5_auto",
        }
    }

    pub fn uses_rules(self) -> bool {
        !matches!(self, PromptVersion::V1Basic)
    }

    /// Only the hybrid configuration sees classifier output.
    pub fn uses_ml(self) -> bool {
        matches!(self, PromptVersion::V4Hybrid)
    }
}

impl fmt::Display for PromptVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptVersion {
    type Err = PromptError;
    fn from_str(s: &str) -> Result<Self, PromptError> {
        PromptVersion::ALL
            .into_iter()
            .find(|v| v.as_str() == s.trim())
            .ok_or_else(|| PromptError::UnknownVersion(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PromptError {
    #[error("unknown prompt version '{0}'")]
    UnknownVersion(String),
    #[error("{0} needs classifier evidence")]
    MissingEvidence(PromptVersion),
    #[error("{0} needs a non-empty rule set")]
    MissingRules(PromptVersion),
}

const PREAMBLE: &str = "You are an experienced annotator of emotion in Vietnamese speech. \
Classify the speaker's emotional state as exactly one of: calm, angry, panic.";

fn answer_footer(out: &mut String) {
    out.push_str("\nThink briefly, then answer with a final line of exactly this form:\n");
    out.push_str(ANSWER_SCHEMA);
    out.push('\n');
}

fn rules_block(out: &mut String, heading: &str, rules: &RuleSet) {
    let _ = writeln!(out, "\n{heading} (z = standard deviations from the corpus mean):");
    for r in &rules.rules {
        out.push_str(&r.render());
        out.push('\n');
    }
    if !rules.confusion_notes.is_empty() {
        out.push_str("Known confusions:\n");
        for n in &rules.confusion_notes {
            let _ = writeln!(out, "- {} vs {}: {}", n.labels[0], n.labels[1], n.text);
        }
    }
}

/// Builds the prompt for one utterance.
pub fn build_prompt(
    version: PromptVersion,
    description: &StructuredDescription,
    rules: &RuleSet,
    ml: Option<&MlEvidence>,
) -> Result<String, PromptError> {
    if version.uses_ml() && ml.is_none() {
        return Err(PromptError::MissingEvidence(version));
    }
    if version.uses_rules() && rules.rules.is_empty() {
        return Err(PromptError::MissingRules(version));
    }

    let mut out = String::from(PREAMBLE);
    out.push_str("\n\n");
    out.push_str(&description.text);

    match version {
        PromptVersion::V1Basic => {}
        PromptVersion::V2Rules => rules_block(&mut out, "Annotation rules from human annotators", rules),
        PromptVersion::V3Refined | PromptVersion::V4Hybrid => {
            rules_block(
                &mut out,
                "Annotation rules from human annotators, refined on past errors",
                rules,
            );
            out.push_str(
                "\nProcedure:\n\
                 1. Check each rule against the feature profile and note which ones hold.\n\
                 2. If rules for different labels hold, prefer the higher strength.\n\
                 3. Re-read the known confusions before committing to angry or panic.\n",
            );
        }
        PromptVersion::V5Auto => rules_block(&mut out, "Annotation rules proposed automatically", rules),
    }

    if let (PromptVersion::V4Hybrid, Some(ml)) = (version, ml) {
        let p = ml.per_class_probs;
        let _ = writeln!(
            out,
            "\nAuxiliary evidence: acoustic classifier predicts {} with confidence {:.2} \
             (angry {:.2}, calm {:.2}, panic {:.2}).",
            ml.label, ml.confidence, p[0], p[1], p[2]
        );
        out.push_str("Treat it as supporting evidence. If no rule clearly holds, lean on it.\n");
    }

    answer_footer(&mut out);
    Ok(out)
}

/// Prompt for the transcript-only baseline.
pub fn build_text_prompt(transcript: &str) -> String {
    let mut out = String::from(PREAMBLE);
    out.push_str("\nOnly the transcript is available; no acoustic information.\n\nTranscript:\n");
    out.push_str(transcript.trim());
    out.push('\n');
    answer_footer(&mut out);
    out
}

/// Asks the model to write rules from per-class feature summaries.
pub fn build_rule_generation_prompt(class_profiles: &[(String, String)]) -> String {
    let mut out = String::from(PREAMBLE);
    let _ = write!(
        out,
        "\n\n{RULE_GENERATION_MARKER} that separate the three labels.\n\
         Each rule is a conjunction of z-score thresholds on these features: {}.\n",
        DIMENSION_NAMES.join(", ")
    );
    for (label, profile) in class_profiles {
        let _ = write!(out, "\nTypical {label} utterance:\n{profile}");
    }
    out.push_str(
        "\nRespond with JSON only, shaped as:\n\
         {\"rules\": [{\"id\": \"...\", \"statement\": \"...\", \
         \"when\": [{\"feature\": \"pitch_std\", \"op\": \">\", \"z\": 1.0}], \
         \"label\": \"panic\", \"strength\": 0.8}]}\n",
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{describe, CorpusStats, FeatureVector, DIM, FEATURE_SCHEMA};
    use crate::EmotionLabel;

    fn desc() -> StructuredDescription {
        let stats = CorpusStats {
            schema: FEATURE_SCHEMA.into(),
            mean: vec![0.0; DIM],
            std: vec![1.0; DIM],
            zero_variance: vec![false; DIM],
        };
        describe(&FeatureVector::zeros(), &stats).unwrap()
    }

    fn evidence() -> MlEvidence {
        MlEvidence::from_head_outputs([0.5, -1.0, -0.5], [0.62, 0.2, 0.18])
    }

    #[test]
    fn every_prompt_ends_with_schema() {
        let rules = RuleSet::default_rules();
        let ml = evidence();
        for v in PromptVersion::ALL {
            let p = build_prompt(v, &desc(), &rules, Some(&ml)).unwrap();
            assert!(p.trim_end().ends_with(ANSWER_SCHEMA), "{v}");
        }
        assert!(build_text_prompt("xin chào").trim_end().ends_with(ANSWER_SCHEMA));
    }

    #[test]
    fn basic_has_no_rules_and_hybrid_has_evidence() {
        let rules = RuleSet::default_rules();
        let ml = evidence();
        let v1 = build_prompt(PromptVersion::V1Basic, &desc(), &rules, None).unwrap();
        assert!(!v1.contains("strength"));
        let v4 = build_prompt(PromptVersion::V4Hybrid, &desc(), &rules, Some(&ml)).unwrap();
        assert_eq!(ml.label, EmotionLabel::Angry);
        assert!(v4.contains("Auxiliary evidence: acoustic classifier predicts angry with confidence 0.62"));
        let v2 = build_prompt(PromptVersion::V2Rules, &desc(), &rules, Some(&ml)).unwrap();
        assert!(!v2.contains("Auxiliary evidence"));
    }

    #[test]
    fn hybrid_without_evidence_is_an_error() {
        let rules = RuleSet::default_rules();
        assert_eq!(
            build_prompt(PromptVersion::V4Hybrid, &desc(), &rules, None),
            Err(PromptError::MissingEvidence(PromptVersion::V4Hybrid))
        );
        assert_eq!(
            build_prompt(PromptVersion::V2Rules, &desc(), &RuleSet::empty(1), None),
            Err(PromptError::MissingRules(PromptVersion::V2Rules))
        );
    }

    #[test]
    fn version_names_round_trip() {
        for v in PromptVersion::ALL {
            assert_eq!(v.as_str().parse::<PromptVersion>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{v}\""));
        }
        assert!("v9".parse::<PromptVersion>().is_err());
    }
}
