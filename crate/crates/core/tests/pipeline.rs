//! Routing, prompting, fallback, caching and refinement working together on
//! a small synthetic corpus.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use emoroute::classifier::{train, MlEvidence, SvmModel, TrainParams};
use emoroute::corpus::{synthesize, ManifestEntry, SynthRecipe};
use emoroute::features::{describe, extract_features, CorpusStats, FeatureConfig, FeatureVector};
use emoroute::hybrid::{
    read_predictions, run_pipeline, write_predictions, Engine, InferenceMode, PredictionSource, SampleInput,
};
use emoroute::reasoning::mock::{mock_backend, FnBackend, RulesLiteralMock};
use emoroute::reasoning::{
    auto_generate_rules, build_prompt, AutoRuleError, CachedBackend, ChatBackend, LlmError, PromptVersion, RuleError,
    RuleOrigin, RuleSet,
};
use emoroute::refine::{
    apply_refinement, load_proposals, mine_error_patterns, propose_rules, save_proposals, LabeledSample, ProposalStatus,
};
use emoroute::EmotionLabel;

struct Fixture {
    entries: Vec<ManifestEntry>,
    features: BTreeMap<String, FeatureVector>,
    model: SvmModel,
    stats: CorpusStats,
}

fn fixture() -> Fixture {
    let recipe = SynthRecipe {
        overlap: 0.4,
        n_per_class: 12,
        seed: 41,
        ..SynthRecipe::default()
    };
    let samples = synthesize(&recipe);
    let cfg = FeatureConfig::default();
    let features: BTreeMap<String, FeatureVector> = samples
        .iter()
        .map(|s| (s.entry.sample_id.clone(), extract_features(&s.signal, &cfg).unwrap()))
        .collect();
    let entries: Vec<ManifestEntry> = samples.into_iter().map(|s| s.entry).collect();
    let x: Vec<FeatureVector> = entries.iter().map(|e| features[&e.sample_id]).collect();
    let y: Vec<EmotionLabel> = entries.iter().map(|e| e.gold.unwrap()).collect();
    Fixture {
        model: train(&x, &y, &TrainParams::default()).unwrap(),
        stats: CorpusStats::from_vectors(&x).unwrap(),
        entries,
        features,
    }
}

fn engine<'a>(f: &'a Fixture, rules: &'a RuleSet, backend: &'a dyn ChatBackend) -> Engine<'a> {
    Engine {
        model: &f.model,
        rules,
        stats: &f.stats,
        backend,
        max_in_flight: 3,
    }
}

fn sample(f: &Fixture, i: usize) -> SampleInput {
    let id = &f.entries[i].sample_id;
    SampleInput {
        sample_id: id.clone(),
        features: f.features[id],
        transcript: None,
    }
}

const V4: InferenceMode = InferenceMode::Prompt(PromptVersion::V4Hybrid);

#[test]
fn confident_samples_skip_the_model() {
    let f = fixture();
    let rules = RuleSet::default_rules();
    let calls = AtomicUsize::new(0);
    let backend = FnBackend::new("count", |_| {
        calls.fetch_add(1, Ordering::SeqCst);
        Ok("LABEL: panic".into())
    });
    let p = engine(&f, &rules, &backend).infer(&sample(&f, 0), V4, 0.0).unwrap();
    assert_eq!(p.source, PredictionSource::MlDirect);
    assert!(!p.routed);
    assert_eq!(p.label, p.ml_evidence.label);
    assert_eq!(calls.load(Ordering::SeqCst), 0);
}

#[test]
fn routed_samples_take_the_model_answer() {
    let f = fixture();
    let rules = RuleSet::default_rules();
    let backend = FnBackend::new("panic", |_| Ok("Considering the profile...\nLABEL: panic".into()));
    let p = engine(&f, &rules, &backend).infer(&sample(&f, 1), V4, 1.01).unwrap();
    assert_eq!(p.label, EmotionLabel::Panic);
    assert_eq!(p.source, PredictionSource::LlmReasoned);
    assert!(p.routed);
    assert!(p.rationale.as_deref().unwrap().contains("LABEL: panic"));
    assert!(p.prompt_hash.is_some());
}

#[test]
fn gibberish_falls_back_to_the_classifier() {
    let f = fixture();
    let rules = RuleSet::default_rules();
    let backend = mock_backend("mock://gibberish").unwrap();
    let p = engine(&f, &rules, backend.as_ref())
        .infer(&sample(&f, 2), V4, 1.01)
        .unwrap();
    assert_eq!(p.source, PredictionSource::FallbackMl);
    assert_eq!(p.label, p.ml_evidence.label);
    assert_eq!(p.fallback_reason.as_deref(), Some("parse_failure"));
}

#[test]
fn prompt_only_versions_fall_back_to_rules_then_calm() {
    let f = fixture();
    let rules = RuleSet::default_rules();
    let backend = FnBackend::new("down", |r| {
        Err(LlmError::Transport {
            sample_id: r.sample_id.clone(),
            message: "refused".into(),
        })
    });
    let eng = engine(&f, &rules, &backend);
    let out = run_pipeline(
        &f.entries,
        &f.features,
        None,
        &eng,
        InferenceMode::Prompt(PromptVersion::V2Rules),
        0.7,
    )
    .unwrap();
    assert_eq!(out.predictions.len(), f.entries.len());
    for p in &out.predictions {
        let z = f.stats.z_scores(&f.features[&p.sample_id]);
        match rules.best(&z) {
            Some(v) => assert_eq!((p.source, p.label), (PredictionSource::FallbackRule, v.label)),
            None => assert_eq!(
                (p.source, p.label),
                (PredictionSource::FallbackDefault, EmotionLabel::Calm)
            ),
        }
        assert_eq!(p.fallback_reason.as_deref(), Some("transport"));
    }
    assert_eq!(out.report.failures["transport"], f.entries.len());

    // v1 shows no rules, so rules cannot serve as its fallback either.
    let v1 = run_pipeline(
        &f.entries,
        &f.features,
        None,
        &eng,
        InferenceMode::Prompt(PromptVersion::V1Basic),
        0.7,
    )
    .unwrap();
    assert!(v1
        .predictions
        .iter()
        .all(|p| p.source == PredictionSource::FallbackDefault));
}

#[test]
fn routing_boundaries_over_a_manifest() {
    let f = fixture();
    let rules = RuleSet::default_rules();
    let eng = engine(&f, &rules, &RulesLiteralMock);
    let low = run_pipeline(&f.entries, &f.features, None, &eng, V4, 0.0).unwrap();
    let high = run_pipeline(&f.entries, &f.features, None, &eng, V4, 1.01).unwrap();
    assert_eq!((low.report.routed, low.report.llm_calls), (0, 0));
    assert_eq!(high.report.routed, f.entries.len());
    assert_eq!(high.report.llm_calls, f.entries.len());
    assert!(run_pipeline(&f.entries, &f.features, None, &eng, V4, 1.5).is_err());
}

#[test]
fn cached_rerun_writes_identical_predictions() {
    let f = fixture();
    let rules = RuleSet::default_rules();
    let dir = tempfile::tempdir().unwrap();
    let calls = AtomicUsize::new(0);
    let inner = FnBackend::new("scripted", |r| {
        calls.fetch_add(1, Ordering::SeqCst);
        Ok(format!(
            "LABEL: {}",
            if r.prompt.len() % 2 == 0 { "angry" } else { "panic" }
        ))
    });
    let cached = CachedBackend::new(&inner, dir.path().join("cache")).unwrap();
    let eng = engine(&f, &rules, &cached);
    let mode = InferenceMode::Prompt(PromptVersion::V3Refined);
    let first = run_pipeline(&f.entries, &f.features, None, &eng, mode, 0.7).unwrap();
    let made = calls.load(Ordering::SeqCst);
    let second = run_pipeline(&f.entries, &f.features, None, &eng, mode, 0.7).unwrap();
    assert_eq!(
        calls.load(Ordering::SeqCst),
        made,
        "warm cache must not reach the backend"
    );
    assert_eq!(second.report.cache_hits, f.entries.len());

    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    write_predictions(&a, &first.predictions, false).unwrap();
    write_predictions(&b, &second.predictions, false).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        read_predictions(&a).unwrap(),
        first
            .predictions
            .iter()
            .map(|p| {
                let mut p = p.clone();
                p.latency_ms = None;
                p
            })
            .collect::<Vec<_>>()
    );
}

#[test]
fn prompts_follow_their_version_contracts() {
    let f = fixture();
    let rules = RuleSet::default_rules();
    let desc = describe(&f.features[&f.entries[0].sample_id], &f.stats).unwrap();
    let v1 = build_prompt(PromptVersion::V1Basic, &desc, &rules, None).unwrap();
    for r in &rules.rules {
        assert!(!v1.contains(&r.statement));
    }
    let ml = MlEvidence {
        label: EmotionLabel::Angry,
        confidence: 0.62,
        per_class_probs: [0.62, 0.08, 0.30],
        margins: [0.4, -1.2, -0.3],
    };
    let v4 = build_prompt(PromptVersion::V4Hybrid, &desc, &rules, Some(&ml)).unwrap();
    assert!(v4.contains("angry") && v4.contains("0.62"));
    assert!(rules.rules.iter().all(|r| v4.contains(&r.statement)));
    assert_eq!(
        v4,
        build_prompt(PromptVersion::V4Hybrid, &desc, &rules, Some(&ml)).unwrap()
    );
    assert!(build_prompt(PromptVersion::V4Hybrid, &desc, &rules, None).is_err());
}

#[test]
fn rule_files_load_and_validate() {
    let rules = RuleSet::default_rules();
    assert_eq!((rules.version, rules.rules.len()), (1, 3));
    assert!(rules.rules.iter().all(|r| r.origin == RuleOrigin::Human));

    let empty = RuleSet::from_json(r#"{"schema": "emoroute-rules/1", "version": 1, "rules": []}"#).unwrap();
    assert!(empty.rules.is_empty());

    let mut dup = rules.clone();
    dup.rules.push(dup.rules[0].clone());
    assert!(matches!(
        RuleSet::from_json(&dup.to_json()),
        Err(RuleError::Schema { .. })
    ));
}

#[test]
fn generated_rules_are_filtered_and_marked_auto() {
    let f = fixture();
    let training: Vec<(FeatureVector, EmotionLabel)> = f
        .entries
        .iter()
        .map(|e| (f.features[&e.sample_id], e.gold.unwrap()))
        .collect();
    let two = FnBackend::new("gen", |_| {
        Ok(r#"Here you go:
{"rules": [
 {"id": "a1", "statement": "Loud is angry.", "when": [{"feature": "energy_mean", "op": ">", "z": 1.0}], "label": "angry", "strength": 0.6},
 {"id": "a2", "statement": "Shaky is panic.", "when": [{"feature": "pitch_std", "op": ">", "z": 1.0}], "label": "panic", "strength": 0.7},
 {"id": "a3", "statement": "Bogus.", "when": [{"feature": "shimmer", "op": ">", "z": 1.0}], "label": "calm", "strength": 0.5}
]}"#
        .into())
    });
    let rules = auto_generate_rules(&two, &training, &f.stats).unwrap();
    let ids: Vec<&str> = rules.rules.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["a1", "a2"]);
    assert!(rules.rules.iter().all(|r| r.origin == RuleOrigin::Auto));

    let prose = FnBackend::new("prose", |_| Ok("Angry speech is loud and calm speech is quiet.".into()));
    assert!(matches!(
        auto_generate_rules(&prose, &training, &f.stats),
        Err(AutoRuleError::NoJson)
    ));
}

#[test]
fn refinement_round_trip_through_files() {
    let f = fixture();
    let rules = RuleSet::default_rules();
    let eng = engine(&f, &rules, &RulesLiteralMock);
    let out = run_pipeline(
        &f.entries,
        &f.features,
        None,
        &eng,
        InferenceMode::Prompt(PromptVersion::V2Rules),
        0.7,
    )
    .unwrap();
    let gold: Vec<EmotionLabel> = f.entries.iter().map(|e| e.gold.unwrap()).collect();
    let samples: Vec<LabeledSample> = out
        .predictions
        .iter()
        .zip(&gold)
        .map(|(p, g)| LabeledSample {
            features: &f.features[&p.sample_id],
            gold: *g,
            predicted: p.label,
        })
        .collect();
    let patterns = mine_error_patterns(&samples, &f.stats, 2);
    assert!(!patterns.is_empty(), "rules-literal run should leave errors to mine");
    let proposals = propose_rules(&patterns, rules.version);
    let ids: std::collections::HashSet<_> = proposals.iter().map(|p| &p.candidate.id).collect();
    assert_eq!(ids.len(), proposals.len());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("proposals.json");
    save_proposals(&path, &proposals).unwrap();
    let mut loaded = load_proposals(&path).unwrap();
    assert_eq!(loaded, proposals);

    let unchanged = apply_refinement(&rules, &loaded).unwrap();
    assert_eq!((unchanged.version, unchanged.rules.len()), (2, 3));
    loaded[0].status = ProposalStatus::Accepted;
    let next = apply_refinement(&rules, &loaded).unwrap();
    assert_eq!(next.rules.len(), 4);
    assert_eq!(next.rules[3].origin, RuleOrigin::Refined);
    let out_path = dir.path().join("rules_v2.json");
    next.save_new(&out_path).unwrap();
    assert_eq!(RuleSet::load(&out_path).unwrap(), next);
    assert!(next.save_new(&out_path).is_err());
    assert!(
        apply_refinement(&next, &loaded).is_err(),
        "proposals against version 1 are stale for version 2"
    );
}
