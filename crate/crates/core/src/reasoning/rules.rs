//! Versioned annotation rule sets.
//!
//! A rule is a conjunction of z-score thresholds on named feature dimensions
//! that points at one label with a strength in `[0, 1]`.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::features::{dimension_index, DIM};
use crate::label::EmotionLabel;

pub const RULES_SCHEMA: &str = "emoroute-rules/1";

const DEFAULT_RULES_JSON: &str = include_str!("../../data/default_rules.json");

#[derive(Debug, thiserror::Error)]
pub enum RuleError {
    #[error("rule file {location}: {message}")]
    Schema { location: String, message: String },
    #[error("refusing to overwrite existing rule file {0}")]
    Exists(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn schema_err(location: impl Into<String>, message: impl Into<String>) -> RuleError {
    RuleError::Schema {
        location: location.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
}

impl Comparator {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Gt => value > threshold,
            Comparator::Ge => value >= threshold,
            Comparator::Lt => value < threshold,
            Comparator::Le => value <= threshold,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Lt => "<",
            Comparator::Le => "<=",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            ">" => Some(Comparator::Gt),
            ">=" | "≥" => Some(Comparator::Ge),
            "<" => Some(Comparator::Lt),
            "<=" | "≤" => Some(Comparator::Le),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: String,
    pub op: Comparator,
    /// Threshold in corpus standard deviations.
    pub z: f64,
}

impl Condition {
    pub fn holds(&self, z: &[f64; DIM]) -> bool {
        dimension_index(&self.feature).is_some_and(|i| self.op.holds(z[i], self.z))
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} z {} {:.3}", self.feature, self.op.symbol(), self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleOrigin {
    Human,
    Refined,
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub statement: String,
    pub when: Vec<Condition>,
    pub label: EmotionLabel,
    pub strength: f64,
    pub origin: RuleOrigin,
}

impl Rule {
    pub fn matches(&self, z: &[f64; DIM]) -> bool {
        self.when.iter().all(|c| c.holds(z))
    }

    /// Single-line form used inside prompts; the mock backend parses it back.
    pub fn render(&self) -> String {
        let conds: Vec<String> = self.when.iter().map(Condition::to_string).collect();
        format!(
            "- [{}|strength {:.2}] IF {} THEN {}: {}",
            self.id,
            self.strength,
            conds.join(" AND "),
            self.label,
            self.statement
        )
    }

    fn validate(&self, at: &str) -> Result<(), RuleError> {
        if self.id.trim().is_empty() || self.id.contains(['|', ']', '[']) {
            return Err(schema_err(format!("{at}.id"), format!("invalid rule id '{}'", self.id)));
        }
        if self.when.is_empty() {
            return Err(schema_err(format!("{at}.when"), "a rule needs at least one condition"));
        }
        for (k, c) in self.when.iter().enumerate() {
            if dimension_index(&c.feature).is_none() {
                return Err(schema_err(
                    format!("{at}.when[{k}].feature"),
                    format!("unknown feature '{}'", c.feature),
                ));
            }
            if !c.z.is_finite() {
                return Err(schema_err(format!("{at}.when[{k}].z"), "threshold must be finite"));
            }
        }
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(schema_err(
                format!("{at}.strength"),
                format!("strength {} outside [0, 1]", self.strength),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionNote {
    pub labels: [EmotionLabel; 2],
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub schema: String,
    pub version: u32,
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub confusion_notes: Vec<ConfusionNote>,
}

/// The strongest satisfied rule for an utterance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleVerdict<'a> {
    pub label: EmotionLabel,
    pub strength: f64,
    pub rule: &'a Rule,
}

impl RuleSet {
    /// The shipped expert rule set.
    pub fn default_rules() -> RuleSet {
        RuleSet::from_json(DEFAULT_RULES_JSON).expect("bundled rule file is valid")
    }

    pub fn empty(version: u32) -> RuleSet {
        RuleSet {
            schema: RULES_SCHEMA.to_string(),
            version,
            rules: Vec::new(),
            confusion_notes: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<RuleSet, RuleError> {
        let set: RuleSet = serde_json::from_str(text)
            .map_err(|e| schema_err(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), RuleError> {
        if self.schema != RULES_SCHEMA {
            return Err(schema_err(
                "schema",
                format!("expected '{RULES_SCHEMA}', found '{}'", self.schema),
            ));
        }
        let mut seen = HashSet::new();
        for (i, r) in self.rules.iter().enumerate() {
            let at = format!("rules[{i}]");
            r.validate(&at)?;
            if !seen.insert(r.id.as_str()) {
                return Err(schema_err(format!("{at}.id"), format!("duplicate rule id '{}'", r.id)));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RuleSet, RuleError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        RuleSet::from_json(&text).map_err(|e| match e {
            RuleError::Schema { location, message } => RuleError::Schema {
                location: format!("{} {location}", path.display()),
                message,
            },
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("rule sets serialize");
        s.push('\n');
        s
    }

    /// Writes to `path`, which must not exist yet. Rule files are never
    /// edited in place; every revision gets its own file.
    pub fn save_new(&self, path: impl AsRef<Path>) -> Result<(), RuleError> {
        use std::io::Write;
        let path = path.as_ref();
        let mut f = std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => RuleError::Exists(path.display().to_string()),
                _ => RuleError::Io(e),
            })?;
        f.write_all(self.to_json().as_bytes())?;
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn satisfied<'a>(&'a self, z: &[f64; DIM]) -> impl Iterator<Item = &'a Rule> + 'a {
        let z = *z;
        self.rules.iter().filter(move |r| r.matches(&z))
    }

    /// Strongest satisfied rule. Equal strengths resolve by label order, then
    /// by position in the file.
    pub fn best(&self, z: &[f64; DIM]) -> Option<RuleVerdict<'_>> {
        let mut best: Option<RuleVerdict<'_>> = None;
        for r in self.satisfied(z) {
            let better = match &best {
                None => true,
                Some(b) => r.strength > b.strength || (r.strength == b.strength && r.label.index() < b.label.index()),
            };
            if better {
                best = Some(RuleVerdict {
                    label: r.label,
                    strength: r.strength,
                    rule: r,
                });
            }
        }
        best
    }
}
