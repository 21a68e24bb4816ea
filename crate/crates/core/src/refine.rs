//! Mining misclassifications into candidate rules.
//!
//! For every (gold, predicted) confusion with enough support, the error
//! group is compared with the correctly labelled samples of the same gold
//! class, one feature dimension at a time, using Cohen's d. The dimension
//! with the largest effect becomes a proposed rule pointing back at the gold
//! label. Proposals only enter a rule set after someone accepts them.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::eval::ConfusionMatrix;
use crate::features::{CorpusStats, FeatureVector, DIM, DIMENSION_NAMES};
use crate::hybrid::Prediction;
use crate::label::EmotionLabel;
use crate::reasoning::{Comparator, Condition, Rule, RuleOrigin, RuleSet};

pub const PROPOSALS_SCHEMA: &str = "emoroute-proposals/1";
pub const DEFAULT_MIN_SUPPORT: usize = 5;
pub const TOP_DELTAS: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum RefineError {
    #[error("prediction for '{0}' has no gold label")]
    MissingGold(String),
    #[error("{0} predictions but {1} gold labels")]
    LengthMismatch(usize, usize),
    #[error("proposal {id} targets rules version {proposal}, current is {current}")]
    VersionConflict { id: String, proposal: u32, current: u32 },
    #[error("rule id '{0}' already exists")]
    DuplicateRule(String),
    #[error("proposals file: {0}")]
    Schema(String),
    #[error(transparent)]
    Rules(#[from] crate::reasoning::RuleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Confusion matrix over predictions matched to gold labels by sample id.
pub fn confusion_matrix(
    preds: &[Prediction],
    gold: &HashMap<String, EmotionLabel>,
) -> Result<ConfusionMatrix, RefineError> {
    if preds.len() != gold.len() {
        return Err(RefineError::LengthMismatch(preds.len(), gold.len()));
    }
    let mut cm = ConfusionMatrix::default();
    for p in preds {
        let g = gold
            .get(&p.sample_id)
            .ok_or_else(|| RefineError::MissingGold(p.sample_id.clone()))?;
        cm.counts[g.index()][p.label.index()] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Errors sit lower on this dimension than correct samples.
    Lower,
    Higher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDelta {
    pub feature: String,
    pub effect_size: f64,
    pub direction: Direction,
    /// Median z-score of the error group on this dimension.
    pub error_median_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPattern {
    pub gold: EmotionLabel,
    pub predicted: EmotionLabel,
    pub support: usize,
    pub top_deltas: Vec<FeatureDelta>,
}

/// One utterance with its gold and predicted labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledSample<'a> {
    pub features: &'a FeatureVector,
    pub gold: EmotionLabel,
    pub predicted: EmotionLabel,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Cohen's d with pooled sample standard deviation, or `None` when the
/// groups are too small or both constant.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.is_empty() || b.is_empty() || a.len() + b.len() < 3 {
        return None;
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let pooled = (((a.len() - 1) as f64 * va + (b.len() - 1) as f64 * vb) / (a.len() + b.len() - 2) as f64).sqrt();
    if pooled > 0.0 {
        Some((ma - mb) / pooled)
    } else if ma == mb {
        Some(0.0)
    } else {
        None
    }
}

/// Error patterns for every confusion with at least `min_support` samples,
/// strongest pattern first.
pub fn mine_error_patterns(
    samples: &[LabeledSample<'_>],
    stats: &CorpusStats,
    min_support: usize,
) -> Vec<ErrorPattern> {
    let z: Vec<[f64; DIM]> = samples.iter().map(|s| stats.z_scores(s.features)).collect();
    let mut groups: BTreeMap<(EmotionLabel, EmotionLabel), Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        if s.gold != s.predicted {
            groups.entry((s.gold, s.predicted)).or_default().push(i);
        }
    }
    let mut patterns = Vec::new();
    for ((gold, predicted), errs) in groups {
        if errs.len() < min_support.max(1) {
            continue;
        }
        let correct: Vec<usize> = (0..samples.len())
            .filter(|&i| samples[i].gold == gold && samples[i].predicted == gold)
            .collect();
        if correct.is_empty() {
            log::warn!("{gold}->{predicted}: no correctly labelled {gold} samples to compare against");
            continue;
        }
        let mut deltas = Vec::new();
        for (d, name) in DIMENSION_NAMES.iter().enumerate() {
            let e: Vec<f64> = errs.iter().map(|&i| z[i][d]).collect();
            let c: Vec<f64> = correct.iter().map(|&i| z[i][d]).collect();
            let Some(eff) = cohens_d(&e, &c) else { continue };
            deltas.push(FeatureDelta {
                feature: name.to_string(),
                effect_size: eff,
                direction: if eff < 0.0 { Direction::Lower } else { Direction::Higher },
                error_median_z: median(&mut e.clone()),
            });
        }
        deltas.sort_by(|a, b| b.effect_size.abs().total_cmp(&a.effect_size.abs()));
        deltas.truncate(TOP_DELTAS);
        patterns.push(ErrorPattern {
            gold,
            predicted,
            support: errs.len(),
            top_deltas: deltas,
        });
    }
    patterns.sort_by_key(|p| std::cmp::Reverse(p.support));
    patterns
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalStatus {
    Pending,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleProposal {
    pub candidate: Rule,
    pub pattern: ErrorPattern,
    pub base_version: u32,
    pub status: ProposalStatus,
}

/// One pending proposal per pattern, built from its top dimension: errors
/// that sit below the correct group get `feature >= median`, errors above
/// get `feature <= median`, both pointing at the gold label. Patterns whose
/// top effect is zero yield nothing.
pub fn propose_rules(patterns: &[ErrorPattern], base_version: u32) -> Vec<RuleProposal> {
    patterns
        .iter()
        .filter_map(|p| {
            let top = p.top_deltas.first()?;
            let strength = (top.effect_size.abs() / 2.0).min(1.0);
            if strength <= 0.0 {
                return None;
            }
            let (op, word) = match top.direction {
                Direction::Lower => (Comparator::Ge, "at or above"),
                Direction::Higher => (Comparator::Le, "at or below"),
            };
            let candidate = Rule {
                id: format!("refined_v{base_version}_{}_as_{}_{}", p.gold, p.predicted, top.feature),
                statement: format!(
                    "{} utterances mistaken for {} have {} {} the error-group median; keep {} there.",
                    p.gold, p.predicted, top.feature, word, p.gold
                ),
                when: vec![Condition {
                    feature: top.feature.clone(),
                    op,
                    z: (top.error_median_z * 1000.0).round() / 1000.0,
                }],
                label: p.gold,
                strength: (strength * 100.0).round() / 100.0,
                origin: RuleOrigin::Refined,
            };
            Some(RuleProposal {
                candidate,
                pattern: p.clone(),
                base_version,
                status: ProposalStatus::Pending,
            })
        })
        .collect()
}

/// New rule set with every accepted proposal appended and the version
/// bumped. Pending and rejected proposals are ignored.
pub fn apply_refinement(rules: &RuleSet, proposals: &[RuleProposal]) -> Result<RuleSet, RefineError> {
    let mut next = rules.clone();
    next.version = rules.version + 1;
    for p in proposals.iter().filter(|p| p.status == ProposalStatus::Accepted) {
        if p.base_version != rules.version {
            return Err(RefineError::VersionConflict {
                id: p.candidate.id.clone(),
                proposal: p.base_version,
                current: rules.version,
            });
        }
        if next.get(&p.candidate.id).is_some() {
            return Err(RefineError::DuplicateRule(p.candidate.id.clone()));
        }
        let mut rule = p.candidate.clone();
        rule.origin = RuleOrigin::Refined;
        next.rules.push(rule);
    }
    next.validate()?;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalFile {
    pub schema: String,
    pub proposals: Vec<RuleProposal>,
}

pub fn save_proposals(path: impl AsRef<Path>, proposals: &[RuleProposal]) -> Result<(), RefineError> {
    let f = ProposalFile {
        schema: PROPOSALS_SCHEMA.to_string(),
        proposals: proposals.to_vec(),
    };
    let json = serde_json::to_string_pretty(&f).map_err(|e| RefineError::Schema(e.to_string()))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

pub fn load_proposals(path: impl AsRef<Path>) -> Result<Vec<RuleProposal>, RefineError> {
    let text = std::fs::read_to_string(path)?;
    let f: ProposalFile = serde_json::from_str(&text)
        .map_err(|e| RefineError::Schema(format!("line {} column {}: {e}", e.line(), e.column())))?;
    if f.schema != PROPOSALS_SCHEMA {
        return Err(RefineError::Schema(format!("unsupported schema '{}'", f.schema)));
    }
    Ok(f.proposals)
}

/// Plain-text summary of patterns and proposals for review.
pub fn render_report(cm: &ConfusionMatrix, patterns: &[ErrorPattern], proposals: &[RuleProposal]) -> String {
    let mut s = String::from("Confusion matrix (rows gold, columns predicted):\n");
    s.push_str(&cm.render());
    s.push_str("\nError patterns:\n");
    if patterns.is_empty() {
        s.push_str("  none above the support threshold\n");
    }
    for p in patterns {
        let _ = writeln!(s, "  {} -> {} (support {})", p.gold, p.predicted, p.support);
        for d in &p.top_deltas {
            let _ = writeln!(
                s,
                "    {:<14} d = {:+.3}  errors {}  (median z {:+.3})",
                d.feature,
                d.effect_size,
                match d.direction {
                    Direction::Lower => "lower",
                    Direction::Higher => "higher",
                },
                d.error_median_z
            );
        }
    }
    s.push_str("\nProposed rules:\n");
    for p in proposals {
        let _ = writeln!(s, "  [{:?}] {}", p.status, p.candidate.render());
    }
    s
}
