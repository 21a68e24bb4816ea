//! Turning acoustic descriptions into labels with a language model.

pub mod llm;
pub mod mock;
pub mod parse;
pub mod prompt;
pub mod rules;

pub use llm::{
    cache_key, query_batch, query_batch_timed, query_llm, CachedBackend, ChatBackend, HttpChatBackend,
    LlmEndpointConfig, LlmError, LlmReply, LlmRequest,
};
pub use parse::{parse_generated_rules, parse_label, AutoRuleError, ParseFailure};
pub use prompt::{build_prompt, build_rule_generation_prompt, build_text_prompt, PromptError, PromptVersion};
pub use rules::{Comparator, Condition, Rule, RuleError, RuleOrigin, RuleSet, RuleVerdict};

use crate::features::{describe, CorpusStats, FeatureVector, DIM};
use crate::label::EmotionLabel;

/// Builds the backend named by `cfg.base_url`: a `mock://` backend or the
/// HTTP client.
pub fn backend_from_config(cfg: &LlmEndpointConfig) -> Result<Box<dyn ChatBackend>, LlmError> {
    cfg.validate()?;
    if cfg.base_url.starts_with("mock://") {
        return mock::mock_backend(&cfg.base_url)
            .ok_or_else(|| LlmError::Config(format!("unknown mock backend '{}'", cfg.base_url)));
    }
    Ok(Box::new(HttpChatBackend::new(cfg)?))
}

/// Asks the model to write its own rules from the per-class mean profiles of
/// the training data. No human rules are shown.
pub fn auto_generate_rules(
    backend: &dyn ChatBackend,
    training: &[(FeatureVector, EmotionLabel)],
    stats: &CorpusStats,
) -> Result<RuleSet, AutoRuleError> {
    let mut profiles = Vec::new();
    for label in EmotionLabel::ALL {
        let members: Vec<&FeatureVector> = training.iter().filter(|(_, l)| *l == label).map(|(v, _)| v).collect();
        if members.is_empty() {
            continue;
        }
        let mut mean = FeatureVector::zeros();
        for d in 0..DIM {
            mean.0[d] = members.iter().map(|v| v.0[d]).sum::<f64>() / members.len() as f64;
        }
        let text = describe(&mean, stats)
            .map_err(|e| AutoRuleError::Llm(LlmError::Config(e.to_string())))?
            .text;
        profiles.push((label.to_string(), text));
    }
    let prompt = build_rule_generation_prompt(&profiles);
    let reply = backend.complete(&LlmRequest::new("rule_generation", prompt))?;
    parse_generated_rules(&reply.text, 1)
}
