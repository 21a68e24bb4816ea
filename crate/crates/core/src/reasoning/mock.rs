//! Offline backends addressed as `mock://<name>`.
//!
//! `rules-literal` reads the rule lines and feature profile back out of the
//! prompt and applies the rules exactly as written. It stands in for a model
//! that follows instructions to the letter, which makes prompt changes
//! testable without network access.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;

use crate::features::dimension_index;
use crate::label::EmotionLabel;

use super::llm::{ChatBackend, LlmError, LlmReply, LlmRequest};
use super::prompt::RULE_GENERATION_MARKER;
use super::rules::Comparator;

fn reply(text: String) -> Result<LlmReply, LlmError> {
    Ok(LlmReply {
        text,
        attempts: 1,
        cached: false,
    })
}

#[derive(Debug, Clone)]
struct ParsedRule {
    id: String,
    strength: f64,
    conditions: Vec<(usize, Comparator, f64)>,
    label: EmotionLabel,
}

fn profile_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^- ([a-z0-9_]+): [a-z ]+ \(z = ([+-]?[0-9.]+)\)$").unwrap())
}

fn rule_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?m)^- \[([^|\]]+)\|strength ([0-9.]+)\] IF (.+?) THEN (calm|angry|panic):").unwrap()
    })
}

fn cond_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^([a-z0-9_]+) z (>=|<=|>|<) ([+-]?[0-9.]+)$").unwrap())
}

fn ml_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"acoustic classifier predicts (calm|angry|panic) with confidence").unwrap())
}

fn parse_rules(prompt: &str) -> Vec<ParsedRule> {
    rule_re()
        .captures_iter(prompt)
        .filter_map(|c| {
            let conditions = c[3]
                .split(" AND ")
                .map(|part| {
                    let m = cond_re().captures(part.trim())?;
                    Some((dimension_index(&m[1])?, Comparator::parse(&m[2])?, m[3].parse().ok()?))
                })
                .collect::<Option<Vec<_>>>()?;
            Some(ParsedRule {
                id: c[1].to_string(),
                strength: c[2].parse().ok()?,
                conditions,
                label: c[4].parse().ok()?,
            })
        })
        .collect()
}

fn parse_profile(prompt: &str) -> HashMap<usize, f64> {
    profile_re()
        .captures_iter(prompt)
        .filter_map(|c| Some((dimension_index(&c[1])?, c[2].parse().ok()?)))
        .collect()
}

/// Naive rules returned for rule-generation prompts: loudness and pitch
/// height only, with no notion of variability.
const GENERATED_RULES: &str = r#"{"rules": [
  {"id": "auto_loud_angry", "statement": "Loud speech is angry.", "when": [{"feature": "energy_mean", "op": ">", "z": 0.5}], "label": "angry", "strength": 0.7},
  {"id": "auto_high_panic", "statement": "High-pitched speech is panicked.", "when": [{"feature": "pitch_mean", "op": ">", "z": 0.5}], "label": "panic", "strength": 0.7},
  {"id": "auto_quiet_calm", "statement": "Quiet speech is calm.", "when": [{"feature": "energy_mean", "op": "<", "z": -0.5}], "label": "calm", "strength": 0.6}
]}"#;

const PANIC_CUES: [&str; 6] = ["cứu", "help", "chạy đi", "trời ơi", "sợ", "nhanh lên"];
const ANGRY_CUES: [&str; 6] = ["im đi", "cút", "đồ ", "shut up", "mày", "láo"];

#[derive(Debug, Clone, Copy, Default)]
pub struct RulesLiteralMock;

impl RulesLiteralMock {
    fn answer(prompt: &str) -> String {
        if prompt.contains(RULE_GENERATION_MARKER) {
            return GENERATED_RULES.to_string();
        }
        if let Some(transcript) = prompt.split("Transcript:\n").nth(1) {
            let t = transcript.to_lowercase();
            let label = if PANIC_CUES.iter().any(|c| t.contains(c)) {
                EmotionLabel::Panic
            } else if ANGRY_CUES.iter().any(|c| t.contains(c)) {
                EmotionLabel::Angry
            } else {
                EmotionLabel::Calm
            };
            return format!("Judging from the wording alone.\nLABEL: {label}");
        }
        let z = parse_profile(prompt);
        let mut best: Option<&ParsedRule> = None;
        let rules = parse_rules(prompt);
        let mut fired = Vec::new();
        for r in &rules {
            let holds = r
                .conditions
                .iter()
                .all(|&(d, op, t)| z.get(&d).is_some_and(|&v| op.holds(v, t)));
            if !holds {
                continue;
            }
            fired.push(r.id.as_str());
            let better = best.map_or(true, |b| {
                r.strength > b.strength || (r.strength == b.strength && r.label.index() < b.label.index())
            });
            if better {
                best = Some(r);
            }
        }
        if let Some(r) = best {
            return format!("Rules that hold: {}.\nLABEL: {}", fired.join(", "), r.label);
        }
        if let Some(c) = ml_re().captures(prompt) {
            return format!("No rule holds; following the acoustic classifier.\nLABEL: {}", &c[1]);
        }
        "No rule holds and nothing stands out.\nLABEL: calm".to_string()
    }
}

impl ChatBackend for RulesLiteralMock {
    fn model_name(&self) -> &str {
        "mock-rules-literal"
    }

    fn complete(&self, req: &LlmRequest) -> Result<LlmReply, LlmError> {
        reply(Self::answer(&req.prompt))
    }
}

/// Answers with the gold label looked up by sample id.
#[derive(Debug, Clone, Default)]
pub struct OracleMock {
    pub gold: HashMap<String, EmotionLabel>,
}

impl ChatBackend for OracleMock {
    fn model_name(&self) -> &str {
        "mock-oracle"
    }

    fn complete(&self, req: &LlmRequest) -> Result<LlmReply, LlmError> {
        match self.gold.get(&req.sample_id) {
            Some(l) => reply(format!("LABEL: {l}")),
            None => reply("I cannot tell.".into()),
        }
    }
}

/// Backend driven by a closure, for scripted responses and failures.
pub struct FnBackend<F> {
    name: String,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&LlmRequest) -> Result<String, LlmError> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnBackend { name: name.into(), f }
    }
}

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&LlmRequest) -> Result<String, LlmError> + Send + Sync,
{
    fn model_name(&self) -> &str {
        &self.name
    }

    fn complete(&self, req: &LlmRequest) -> Result<LlmReply, LlmError> {
        (self.f)(req).map(|text| LlmReply {
            text,
            attempts: 1,
            cached: false,
        })
    }
}

/// Resolves a `mock://` URL. Returns `None` for anything else.
pub fn mock_backend(url: &str) -> Option<Box<dyn ChatBackend>> {
    let name = url.strip_prefix("mock://")?;
    let b: Box<dyn ChatBackend> = match name.trim_end_matches('/') {
        "rules-literal" => Box::new(RulesLiteralMock),
        "calm" => Box::new(FnBackend::new("mock-calm", |_| Ok("LABEL: calm".into()))),
        "gibberish" => Box::new(FnBackend::new("mock-gibberish", |_| Ok("lorem ipsum dolor".into()))),
        "timeout" => Box::new(FnBackend::new("mock-timeout", |r| {
            Err(LlmError::Timeout {
                sample_id: r.sample_id.clone(),
            })
        })),
        _ => return None,
    };
    Some(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{describe, dim, CorpusStats, FeatureVector, DIM, FEATURE_SCHEMA};
    use crate::reasoning::parse_label;
    use crate::reasoning::prompt::{build_prompt, PromptVersion};
    use crate::reasoning::rules::RuleSet;

    fn prompt_for(z: &[(usize, f64)], version: PromptVersion) -> String {
        let stats = CorpusStats {
            schema: FEATURE_SCHEMA.into(),
            mean: vec![0.0; DIM],
            std: vec![1.0; DIM],
            zero_variance: vec![false; DIM],
        };
        let mut v = FeatureVector::zeros();
        for &(d, x) in z {
            v.0[d] = x;
        }
        let ml = crate::classifier::MlEvidence::from_head_outputs([0.0; 3], [0.1, 0.1, 0.8]);
        build_prompt(
            version,
            &describe(&v, &stats).unwrap(),
            &RuleSet::default_rules(),
            Some(&ml),
        )
        .unwrap()
    }

    fn ask(prompt: &str) -> EmotionLabel {
        let r = RulesLiteralMock.complete(&LlmRequest::new("x", prompt)).unwrap();
        parse_label(&r.text).unwrap()
    }

    #[test]
    fn applies_strongest_rule() {
        let p = prompt_for(
            &[
                (dim::PITCH_STD, 2.0),
                (dim::ENERGY_STD, 2.0),
                (dim::ENERGY_MEAN, 2.0),
                (dim::PITCH_MEAN, 1.0),
            ],
            PromptVersion::V2Rules,
        );
        assert_eq!(ask(&p), EmotionLabel::Panic);
        let p = prompt_for(
            &[(dim::ENERGY_MEAN, 2.0), (dim::PITCH_MEAN, 1.0)],
            PromptVersion::V2Rules,
        );
        assert_eq!(ask(&p), EmotionLabel::Angry);
    }

    #[test]
    fn no_rule_defers_to_evidence_or_calm() {
        assert_eq!(ask(&prompt_for(&[], PromptVersion::V2Rules)), EmotionLabel::Calm);
        assert_eq!(ask(&prompt_for(&[], PromptVersion::V4Hybrid)), EmotionLabel::Panic);
        let p = prompt_for(&[(dim::PITCH_STD, 2.0), (dim::ENERGY_STD, 2.0)], PromptVersion::V1Basic);
        assert_eq!(ask(&p), EmotionLabel::Calm);
    }

    #[test]
    fn parses_every_rendered_rule() {
        let p = prompt_for(&[], PromptVersion::V3Refined);
        assert_eq!(parse_rules(&p).len(), RuleSet::default_rules().rules.len());
        assert_eq!(parse_profile(&p).len(), DIM);
    }

    #[test]
    fn mock_urls() {
        assert!(mock_backend("mock://rules-literal").is_some());
        assert!(mock_backend("mock://nope").is_none());
        assert!(mock_backend("http://localhost").is_none());
        let t = mock_backend("mock://timeout").unwrap();
        assert_eq!(
            t.complete(&LlmRequest::new("s", "p")).unwrap_err().reason_code(),
            "timeout"
        );
    }
}
