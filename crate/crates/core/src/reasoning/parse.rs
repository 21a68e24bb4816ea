//! Extracting labels and generated rules from free-text model output.

use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;

use crate::label::EmotionLabel;

use super::rules::{Comparator, Condition, Rule, RuleOrigin, RuleSet, RULES_SCHEMA};

/// No label could be recovered from a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("response contains no recognizable label")]
pub struct ParseFailure;

fn schema_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"(?im)^[\s>#*_-]*label[\s*_]*[:=][\s*_"'<\[]*(calm|angry|panic)\b"#).unwrap())
}

fn any_label() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(calm|angry|panic)\b").unwrap())
}

/// Reads the label from a response: the last `LABEL: x` line if present,
/// otherwise the last bare class name anywhere in the text.
pub fn parse_label(raw: &str) -> Result<EmotionLabel, ParseFailure> {
    let pick = |re: &Regex| {
        re.captures_iter(raw)
            .last()
            .and_then(|c| c[1].parse::<EmotionLabel>().ok())
    };
    pick(schema_line()).or_else(|| pick(any_label())).ok_or(ParseFailure)
}

#[derive(Debug, thiserror::Error)]
pub enum AutoRuleError {
    #[error("no JSON object in generated output")]
    NoJson,
    #[error("generated JSON is invalid: {0}")]
    Json(#[from] serde_json::Error),
    #[error("none of the {0} generated rules were usable")]
    NoUsableRules(usize),
    #[error(transparent)]
    Llm(#[from] super::llm::LlmError),
}

#[derive(Deserialize)]
struct LooseCondition {
    feature: String,
    op: String,
    z: f64,
}

#[derive(Deserialize)]
struct LooseRule {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    statement: Option<String>,
    when: Vec<LooseCondition>,
    label: String,
    #[serde(default)]
    strength: Option<f64>,
}

fn json_slice(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

/// Builds a rule set from model output. Malformed rules are dropped one by
/// one; the call fails only when nothing usable is left.
pub fn parse_generated_rules(text: &str, version: u32) -> Result<RuleSet, AutoRuleError> {
    let json = json_slice(text).ok_or(AutoRuleError::NoJson)?;
    let value: serde_json::Value = serde_json::from_str(json)?;
    let items = value
        .get("rules")
        .and_then(|r| r.as_array())
        .cloned()
        .unwrap_or_default();
    let mut set = RuleSet::empty(version);
    set.schema = RULES_SCHEMA.to_string();
    for (i, item) in items.iter().enumerate() {
        let loose: LooseRule = match serde_json::from_value(item.clone()) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("dropping generated rule {i}: {e}");
                continue;
            }
        };
        let Ok(label) = loose.label.parse::<EmotionLabel>() else {
            log::warn!("dropping generated rule {i}: unknown label '{}'", loose.label);
            continue;
        };
        let when: Option<Vec<Condition>> = loose
            .when
            .into_iter()
            .map(|c| {
                Some(Condition {
                    feature: c.feature,
                    op: Comparator::parse(&c.op)?,
                    z: c.z,
                })
            })
            .collect();
        let Some(when) = when else {
            log::warn!("dropping generated rule {i}: unknown comparator");
            continue;
        };
        let mut id = loose
            .id
            .filter(|s| !s.trim().is_empty())
            .unwrap_or_else(|| format!("auto_{i}"));
        if set.get(&id).is_some() {
            id = format!("{id}_{i}");
        }
        let rule = Rule {
            statement: loose.statement.unwrap_or_else(|| format!("generated rule for {label}")),
            id,
            when,
            label,
            strength: loose.strength.unwrap_or(0.5).clamp(0.0, 1.0),
            origin: RuleOrigin::Auto,
        };
        set.rules.push(rule);
        if let Err(e) = set.validate() {
            log::warn!("dropping generated rule {i}: {e}");
            set.rules.pop();
        }
    }
    if set.rules.is_empty() {
        return Err(AutoRuleError::NoUsableRules(items.len()));
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_line_wins_over_prose() {
        let raw = "The speaker sounds calm at first but this is anger.\nLABEL: angry";
        assert_eq!(parse_label(raw), Ok(EmotionLabel::Angry));
        assert_eq!(parse_label("**Label:** Panic"), Ok(EmotionLabel::Panic));
        assert_eq!(parse_label("label = calm\n"), Ok(EmotionLabel::Calm));
    }

    #[test]
    fn falls_back_to_last_class_word() {
        assert_eq!(parse_label("Not panic; I'd say ANGRY."), Ok(EmotionLabel::Angry));
        assert_eq!(parse_label("calmly spoken"), Err(ParseFailure));
        assert_eq!(parse_label("asdf qwerty"), Err(ParseFailure));
        assert_eq!(parse_label(""), Err(ParseFailure));
    }

    #[test]
    fn generated_rules_survive_noise() {
        let text = r#"Sure! ```json
        {"rules": [
          {"id": "r1", "statement": "loud", "when": [{"feature": "energy_mean", "op": ">", "z": 0.5}], "label": "angry", "strength": 0.6},
          {"when": [{"feature": "volume", "op": ">", "z": 1}], "label": "panic"},
          {"when": [{"feature": "pitch_std", "op": "≥", "z": 1}], "label": "Panic"},
          {"when": [], "label": "calm"},
          {"when": [{"feature": "pitch_std", "op": "<", "z": 0}], "label": "bored"}
        ]}```"#;
        let set = parse_generated_rules(text, 1).unwrap();
        let ids: Vec<_> = set.rules.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["r1", "auto_2"]);
        assert!(set.rules.iter().all(|r| r.origin == RuleOrigin::Auto));
    }

    #[test]
    fn generation_without_rules_fails() {
        assert!(matches!(
            parse_generated_rules("no idea", 1),
            Err(AutoRuleError::NoJson)
        ));
        assert!(matches!(
            parse_generated_rules(r#"{"rules": []}"#, 1),
            Err(AutoRuleError::NoUsableRules(0))
        ));
    }
}
