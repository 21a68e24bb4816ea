//! Confidence routing and batch inference.
//!
//! In the hybrid configuration a sample whose calibrated classifier
//! confidence reaches `tau` keeps the classifier's label; the rest go to the
//! language model with the classifier's output attached as evidence. All
//! other configurations send every sample to the model. A failed or
//! unparseable model call never aborts a batch: the sample falls back to the
//! classifier label (hybrid only), then the strongest satisfied rule, then
//! `calm`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierError, MlEvidence, SvmModel};
use crate::corpus::ManifestEntry;
use crate::eval::{metrics, MetricsReport};
use crate::features::{describe, CorpusStats, FeatureError, FeatureVector};
use crate::label::EmotionLabel;
use crate::reasoning::{
    build_prompt, build_text_prompt, cache_key, parse_label, query_batch_timed, ChatBackend, LlmRequest, PromptError,
    PromptVersion, RuleSet,
};

pub const PREDICTIONS_SCHEMA: &str = "emoroute-predictions/1";
pub const REPORT_SCHEMA: &str = "emoroute-run/1";
pub const DEFAULT_TAU: f64 = 0.7;
pub const TAU_GRID: [f64; 7] = [0.0, 0.4, 0.6, 0.7, 0.8, 0.9, 1.01];

/// Label used when neither the model, the classifier nor any rule applies.
pub const DEFAULT_LABEL: EmotionLabel = EmotionLabel::Calm;

#[derive(Debug, thiserror::Error)]
pub enum HybridError {
    #[error("tau {0} outside [0, 1.01]")]
    InvalidTau(f64),
    #[error("no feature vector for sample '{0}'")]
    MissingFeatures(String),
    #[error("{mode} needs a transcript file")]
    MissingTranscripts { mode: InferenceMode },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("predictions file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoutePath {
    Direct,
    Reason,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub path: RoutePath,
    pub confidence: f64,
    pub threshold: f64,
}

pub fn validate_tau(tau: f64) -> Result<(), HybridError> {
    if (0.0..=1.01).contains(&tau) {
        Ok(())
    } else {
        Err(HybridError::InvalidTau(tau))
    }
}

/// `Direct` exactly when the classifier's confidence reaches `tau`. Any tau
/// above 1 routes everything to the model.
pub fn route(ml: &MlEvidence, tau: f64) -> RoutingDecision {
    RoutingDecision {
        path: if ml.confidence >= tau {
            RoutePath::Direct
        } else {
            RoutePath::Reason
        },
        confidence: ml.confidence,
        threshold: tau,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSource {
    MlDirect,
    LlmReasoned,
    FallbackMl,
    FallbackRule,
    FallbackDefault,
}

impl PredictionSource {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictionSource::MlDirect => "ml_direct",
            PredictionSource::LlmReasoned => "llm_reasoned",
            PredictionSource::FallbackMl => "fallback_ml",
            PredictionSource::FallbackRule => "fallback_rule",
            PredictionSource::FallbackDefault => "fallback_default",
        }
    }

    pub fn is_fallback(self) -> bool {
        matches!(
            self,
            PredictionSource::FallbackMl | PredictionSource::FallbackRule | PredictionSource::FallbackDefault
        )
    }
}

/// A prompt configuration or the transcript-only baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InferenceMode {
    Prompt(PromptVersion),
    TextBaseline,
}

impl InferenceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InferenceMode::Prompt(v) => v.as_str(),
            InferenceMode::TextBaseline => "text_baseline",
        }
    }

    fn routes(self) -> bool {
        self == InferenceMode::Prompt(PromptVersion::V4Hybrid)
    }
}

impl fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InferenceMode {
    type Err = PromptError;
    fn from_str(s: &str) -> Result<Self, PromptError> {
        if s.trim() == "text_baseline" {
            Ok(InferenceMode::TextBaseline)
        } else {
            s.parse().map(InferenceMode::Prompt)
        }
    }
}

impl Serialize for InferenceMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for InferenceMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub schema: String,
    pub sample_id: String,
    pub label: EmotionLabel,
    pub source: PredictionSource,
    pub ml_evidence: MlEvidence,
    pub prompt_version: InferenceMode,
    /// Whether the sample was sent to the language model.
    pub routed: bool,
    /// Raw model response, verbatim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_reason: Option<String>,
    /// Response cache key of the prompt sent for this sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
}

/// Everything inference needs for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleInput {
    pub sample_id: String,
    pub features: FeatureVector,
    pub transcript: Option<String>,
}

/// Shared, read-only artifacts for a run.
pub struct Engine<'a> {
    pub model: &'a SvmModel,
    pub rules: &'a RuleSet,
    pub stats: &'a CorpusStats,
    pub backend: &'a dyn ChatBackend,
    pub max_in_flight: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BatchStats {
    pub llm_calls: usize,
    pub cache_hits: usize,
}

struct Pending {
    ml: MlEvidence,
    rule_label: Option<EmotionLabel>,
    request: Option<LlmRequest>,
    skip_reason: Option<&'static str>,
}

impl Engine<'_> {
    /// Single-sample inference; see [`Engine::infer_batch`].
    pub fn infer(&self, sample: &SampleInput, mode: InferenceMode, tau: f64) -> Result<Prediction, HybridError> {
        let (mut preds, _) = self.infer_batch(std::slice::from_ref(sample), mode, tau)?;
        Ok(preds.pop().expect("one prediction per sample"))
    }

    /// Predictions in input order. Only configuration problems are errors;
    /// per-sample model failures become fallback predictions.
    pub fn infer_batch(
        &self,
        samples: &[SampleInput],
        mode: InferenceMode,
        tau: f64,
    ) -> Result<(Vec<Prediction>, BatchStats), HybridError> {
        validate_tau(tau)?;
        let model_name = self.backend.model_name().to_string();

        let mut pending = Vec::with_capacity(samples.len());
        for s in samples {
            let ml = self.model.predict(&s.features)?;
            let z = self.stats.z_scores(&s.features);
            let rule_label = match mode {
                InferenceMode::Prompt(v) if v.uses_rules() => self.rules.best(&z).map(|v| v.label),
                _ => None,
            };
            let reason = !mode.routes() || route(&ml, tau).path == RoutePath::Reason;
            let (request, skip_reason) = if !reason {
                (None, None)
            } else {
                match mode {
                    InferenceMode::Prompt(v) => {
                        let desc = describe(&s.features, self.stats)?;
                        let prompt = build_prompt(v, &desc, self.rules, Some(&ml))?;
                        (Some(LlmRequest::new(s.sample_id.clone(), prompt)), None)
                    }
                    InferenceMode::TextBaseline => match &s.transcript {
                        Some(t) => (Some(LlmRequest::new(s.sample_id.clone(), build_text_prompt(t))), None),
                        None => (None, Some("missing_transcript")),
                    },
                }
            };
            pending.push(Pending {
                ml,
                rule_label,
                request,
                skip_reason,
            });
        }

        let requests: Vec<LlmRequest> = pending.iter().filter_map(|p| p.request.clone()).collect();
        let mut replies = query_batch_timed(self.backend, &requests, self.max_in_flight).into_iter();
        let mut stats = BatchStats {
            llm_calls: requests.len(),
            cache_hits: 0,
        };

        let mut out = Vec::with_capacity(samples.len());
        for (s, p) in samples.iter().zip(pending) {
            let routed = p.request.is_some() || p.skip_reason.is_some();
            let mut pred = Prediction {
                schema: PREDICTIONS_SCHEMA.to_string(),
                sample_id: s.sample_id.clone(),
                label: p.ml.label,
                source: PredictionSource::MlDirect,
                ml_evidence: p.ml,
                prompt_version: mode,
                routed,
                rationale: None,
                fallback_reason: None,
                prompt_hash: None,
                latency_ms: Some(0.0),
            };
            if !routed {
                out.push(pred);
                continue;
            }
            let failure = match p.request {
                None => p.skip_reason.unwrap_or("not_sent").to_string(),
                Some(req) => {
                    let (reply, elapsed) = replies.next().expect("one reply per request");
                    pred.prompt_hash = Some(cache_key(&model_name, &req.prompt));
                    pred.latency_ms = Some(elapsed.as_secs_f64() * 1e3);
                    match reply {
                        Ok(r) => {
                            stats.cache_hits += usize::from(r.cached);
                            let parsed = parse_label(&r.text);
                            pred.rationale = Some(r.text);
                            match parsed {
                                Ok(label) => {
                                    pred.label = label;
                                    pred.source = PredictionSource::LlmReasoned;
                                    out.push(pred);
                                    continue;
                                }
                                Err(_) => "parse_failure".to_string(),
                            }
                        }
                        Err(e) => {
                            log::warn!("{e}");
                            e.reason_code().to_string()
                        }
                    }
                }
            };
            let (label, source) = if mode.routes() {
                (p.ml.label, PredictionSource::FallbackMl)
            } else if let Some(l) = p.rule_label {
                (l, PredictionSource::FallbackRule)
            } else {
                (DEFAULT_LABEL, PredictionSource::FallbackDefault)
            };
            pred.label = label;
            pred.source = source;
            pred.fallback_reason = Some(failure);
            out.push(pred);
        }
        Ok((out, stats))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub mode: InferenceMode,
    pub tau: f64,
    pub model_name: String,
    pub rules_version: u32,
    pub n: usize,
    pub routed: usize,
    pub routed_fraction: f64,
    pub llm_calls: usize,
    pub cache_hits: usize,
    pub sources: BTreeMap<PredictionSource, usize>,
    pub failures: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
    /// Resolved configuration of the run, supplied by the caller.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub predictions: Vec<Prediction>,
    pub report: RunReport,
}

/// Runs inference over a manifest using precomputed feature vectors keyed by
/// sample id. Metrics are included when every entry has a gold label.
pub fn run_pipeline(
    entries: &[ManifestEntry],
    features: &BTreeMap<String, FeatureVector>,
    transcripts: Option<&HashMap<String, String>>,
    engine: &Engine<'_>,
    mode: InferenceMode,
    tau: f64,
) -> Result<PipelineOutput, HybridError> {
    if mode == InferenceMode::TextBaseline && transcripts.is_none() {
        return Err(HybridError::MissingTranscripts { mode });
    }
    let samples = entries
        .iter()
        .map(|e| {
            Ok(SampleInput {
                sample_id: e.sample_id.clone(),
                features: *features
                    .get(&e.sample_id)
                    .ok_or_else(|| HybridError::MissingFeatures(e.sample_id.clone()))?,
                transcript: transcripts.and_then(|t| t.get(&e.sample_id).cloned()),
            })
        })
        .collect::<Result<Vec<_>, HybridError>>()?;
    let (predictions, stats) = engine.infer_batch(&samples, mode, tau)?;

    let mut sources = BTreeMap::new();
    let mut failures = BTreeMap::new();
    for p in &predictions {
        *sources.entry(p.source).or_insert(0) += 1;
        if let Some(r) = &p.fallback_reason {
            *failures.entry(r.clone()).or_insert(0) += 1;
        }
    }
    let routed = predictions.iter().filter(|p| p.routed).count();
    let gold: Option<Vec<EmotionLabel>> = entries.iter().map(|e| e.gold).collect();
    let metrics = match gold {
        Some(g) if !g.is_empty() => {
            let pred: Vec<EmotionLabel> = predictions.iter().map(|p| p.label).collect();
            metrics(&pred, &g).ok()
        }
        _ => None,
    };
    let report = RunReport {
        schema: REPORT_SCHEMA.to_string(),
        mode,
        tau,
        model_name: engine.backend.model_name().to_string(),
        rules_version: engine.rules.version,
        n: predictions.len(),
        routed,
        routed_fraction: if predictions.is_empty() {
            0.0
        } else {
            routed as f64 / predictions.len() as f64
        },
        llm_calls: stats.llm_calls,
        cache_hits: stats.cache_hits,
        sources,
        failures,
        metrics,
        config: None,
    };
    Ok(PipelineOutput { predictions, report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau: f64,
    pub routed: usize,
    pub routed_fraction: f64,
    pub llm_calls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<f64>,
}

/// Hybrid runs over a grid of thresholds.
pub fn sweep_tau(
    entries: &[ManifestEntry],
    features: &BTreeMap<String, FeatureVector>,
    engine: &Engine<'_>,
    taus: &[f64],
) -> Result<Vec<SweepPoint>, HybridError> {
    taus.iter()
        .map(|&tau| {
            let out = run_pipeline(
                entries,
                features,
                None,
                engine,
                InferenceMode::Prompt(PromptVersion::V4Hybrid),
                tau,
            )?;
            let r = out.report;
            Ok(SweepPoint {
                tau,
                routed: r.routed,
                routed_fraction: r.routed_fraction,
                llm_calls: r.llm_calls,
                accuracy: r.metrics.as_ref().map(|m| m.accuracy),
                macro_f1: r.metrics.as_ref().map(|m| m.macro_f1),
            })
        })
        .collect()
}

/// Writes one prediction per line. Latencies are dropped unless
/// `include_timings` is set, so reruns produce identical files.
pub fn write_predictions(
    path: impl AsRef<Path>,
    preds: &[Prediction],
    include_timings: bool,
) -> Result<(), HybridError> {
    let mut s = String::new();
    for p in preds {
        let line = if include_timings {
            serde_json::to_string(p)
        } else {
            serde_json::to_string(&Prediction {
                latency_ms: None,
                ..p.clone()
            })
        }
        .expect("predictions serialize");
        s.push_str(&line);
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>, HybridError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(line).map_err(|e| HybridError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if p.schema != PREDICTIONS_SCHEMA {
            return Err(HybridError::Parse {
                line: i + 1,
                message: format!("unsupported schema '{}'", p.schema),
            });
        }
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn evidence(conf: f64) -> MlEvidence {
        let rest = (1.0 - conf) / 2.0;
        MlEvidence {
            label: EmotionLabel::Angry,
            confidence: conf,
            per_class_probs: [conf, rest, rest],
            margins: [0.0; 3],
        }
    }

    #[test]
    fn routing_threshold() {
        assert_eq!(route(&evidence(0.9), 0.7).path, RoutePath::Direct);
        assert_eq!(route(&evidence(0.7), 0.7).path, RoutePath::Direct);
        assert_eq!(route(&evidence(0.5), 0.7).path, RoutePath::Reason);
        assert_eq!(route(&evidence(1.0 / 3.0), 0.0).path, RoutePath::Direct);
        assert_eq!(route(&evidence(1.0), 1.01).path, RoutePath::Reason);
    }

    #[test]
    fn tau_bounds() {
        assert!(validate_tau(0.0).is_ok() && validate_tau(1.01).is_ok());
        assert!(validate_tau(-0.1).is_err() && validate_tau(1.5).is_err() && validate_tau(f64::NAN).is_err());
    }

    #[test]
    fn mode_names() {
        for m in [
            InferenceMode::TextBaseline,
            InferenceMode::Prompt(PromptVersion::V4Hybrid),
            InferenceMode::Prompt(PromptVersion::V1Basic),
        ] {
            assert_eq!(m.as_str().parse::<InferenceMode>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(serde_json::from_str::<InferenceMode>(&json).unwrap(), m);
        }
    }

    #[test]
    fn source_names_match_serde() {
        for s in [
            PredictionSource::MlDirect,
            PredictionSource::LlmReasoned,
            PredictionSource::FallbackMl,
            PredictionSource::FallbackRule,
            PredictionSource::FallbackDefault,
        ] {
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.as_str()));
        }
    }
}
