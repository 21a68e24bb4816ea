//! Subcommand implementations. Each one resolves its paths from the
//! configuration, delegates to the library and writes only under the output
//! paths it was given.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use emoroute::audio_io::{
    detect_voice_activity, load_audio, segment, standardize, write_wav, SegmentConfig, StandardizeOptions, VadConfig,
};
use emoroute::classifier::{train, SvmModel, TrainParams};
use emoroute::corpus::{
    generate_synthetic_corpus, load_manifest, save_manifest, stratified_split, ManifestEntry, SourceKind, Split,
    SynthRecipe, DEFAULT_SPLIT_FRACTIONS,
};
use emoroute::eval::{agreement_report, compare_report, metrics, read_annotations};
use emoroute::features::io::{load_features, save_features};
use emoroute::features::{extract_features, CorpusStats, FeatureConfig, FeatureVector};
use emoroute::hybrid::{
    read_predictions, run_pipeline, sweep_tau, validate_tau, write_predictions, Engine, HybridError, InferenceMode,
    PipelineOutput, TAU_GRID,
};
use emoroute::reasoning::{
    auto_generate_rules, backend_from_config, CachedBackend, ChatBackend, PromptVersion, RuleSet,
};
use emoroute::refine::{
    apply_refinement, confusion_matrix, load_proposals, mine_error_patterns, propose_rules, render_report,
    save_proposals, LabeledSample, ProposalStatus,
};
use emoroute::EmotionLabel;
use serde::Serialize;

use crate::config::{require, RunConfig};
use crate::error::{config, data, CliError};
use crate::{
    ApplyArgs, Command, CompareArgs, EvaluateArgs, FeaturesArgs, InputArgs, KappaArgs, LlmArgs, ModelArgs, PredictArgs,
    PreprocessArgs, ProposeArgs, RefineCommand, RunArgs, SweepArgs, SynthArgs, TrainArgs,
};

pub fn dispatch(cmd: Command, cfg: &mut RunConfig) -> Result<(), CliError> {
    match cmd {
        Command::Synth(a) => synth(&a, cfg),
        Command::Preprocess(a) => preprocess(&a, cfg),
        Command::Features(a) => features(&a, cfg),
        Command::Train(a) => train_cmd(&a, cfg),
        Command::Predict(a) => predict(&a, cfg),
        Command::Evaluate(a) => evaluate(&a, cfg),
        Command::Kappa(a) => kappa(&a),
        Command::Refine(RefineCommand::Propose(a)) => refine_propose(&a, cfg),
        Command::Refine(RefineCommand::Apply(a)) => refine_apply(&a, cfg),
        Command::Compare(a) => compare(&a, cfg),
        Command::Sweep(a) => sweep(&a, cfg),
    }
}

fn set<T: Clone>(slot: &mut Option<T>, v: &Option<T>) {
    if let Some(v) = v {
        *slot = Some(v.clone());
    }
}

fn set_val<T: Copy>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl InputArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.paths.manifest, &self.manifest);
        set(&mut cfg.paths.features, &self.features);
    }
}

impl ModelArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.paths.model, &self.model);
        set(&mut cfg.paths.stats, &self.stats);
    }
}

impl LlmArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.paths.rules, &self.rules);
        set(&mut cfg.paths.refined_rules, &self.refined_rules);
        set(&mut cfg.paths.cache, &self.cache);
        set(&mut cfg.paths.transcripts, &self.transcripts);
        if let Some(u) = &self.endpoint {
            cfg.endpoint.base_url = u.clone();
        }
        if let Some(m) = &self.llm_model {
            cfg.endpoint.model_name = m.clone();
        }
        set_val(&mut cfg.endpoint.timeout_s, self.timeout);
        set_val(&mut cfg.endpoint.max_retries, self.max_retries);
        set_val(&mut cfg.endpoint.max_in_flight, self.max_in_flight);
    }
}

impl RunArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        set_val(&mut cfg.pipeline.tau, self.tau);
        set(&mut cfg.pipeline.split, &self.split);
        set(&mut cfg.paths.output, &self.out);
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(data)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn parse_split(s: &str) -> Result<Split, CliError> {
    s.parse::<Split>().map_err(config)
}

// ---------------------------------------------------------------- synth

fn synth(a: &SynthArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    set(&mut cfg.paths.output, &a.out);
    let out = require(&cfg.paths.output, "out", "output")?.to_path_buf();
    if !(0.0..=1.0).contains(&a.overlap) {
        return Err(CliError::Config(format!(
            "--overlap must lie in [0, 1], got {}",
            a.overlap
        )));
    }
    if a.n_per_class == 0 {
        return Err(CliError::Config("--n-per-class must be positive".into()));
    }
    let mut recipe = if a.planted {
        SynthRecipe::planted_pitch_errors(a.seed, a.n_per_class)
    } else {
        SynthRecipe {
            seed: a.seed,
            n_per_class: a.n_per_class,
            ..SynthRecipe::default()
        }
    };
    recipe.overlap = a.overlap;
    if let Some(d) = a.duration {
        if !(d.is_finite() && d > 0.0) {
            return Err(CliError::Config(format!("--duration must be positive, got {d}")));
        }
        recipe.duration_s = d;
    }
    let mut entries = generate_synthetic_corpus(&recipe, &out).map_err(data)?;
    if a.split {
        entries = stratified_split(&entries, DEFAULT_SPLIT_FRACTIONS, a.seed).map_err(data)?;
        save_manifest(out.join("manifest.csv"), &entries).map_err(data)?;
    }
    write_json(&out.join("recipe.json"), &recipe)?;
    println!("wrote {} utterances to {}", entries.len(), out.display());
    Ok(())
}

// ----------------------------------------------------------- preprocess

#[derive(Debug, Serialize)]
struct FileFailure {
    file: String,
    error: String,
}

#[derive(Debug, Serialize)]
struct PreprocessReport {
    files_processed: usize,
    segments: usize,
    failed: Vec<FileFailure>,
    skipped: Vec<String>,
    config: serde_json::Value,
}

fn preprocess(a: &PreprocessArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    set(&mut cfg.paths.output, &a.out);
    let out = require(&cfg.paths.output, "out", "output")?.to_path_buf();
    let source_kind: SourceKind = serde_json::from_value(serde_json::Value::String(a.source_kind.clone()))
        .map_err(|_| CliError::Config(format!("unknown source kind '{}'", a.source_kind)))?;
    let listing =
        std::fs::read_dir(&a.input).map_err(|e| CliError::Data(format!("cannot read {}: {e}", a.input.display())))?;
    let mut files: Vec<PathBuf> = listing
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();

    create_dir(&out.join("segments"))?;
    let std_opts = StandardizeOptions::default();
    let vad = VadConfig::default();
    let seg_cfg = SegmentConfig::default();
    let mut entries = Vec::new();
    let mut failed = Vec::new();
    let mut skipped = Vec::new();
    let mut processed = 0;
    for path in files {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let is_wav = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if !is_wav {
            skipped.push(name);
            continue;
        }
        let result = load_audio(&path)
            .and_then(|sig| standardize(&sig, &std_opts))
            .and_then(|s| {
                let iv = detect_voice_activity(&s.signal, &vad)?;
                Ok(segment(&s.signal, &iv, &seg_cfg))
            });
        let segments = match result {
            Ok(s) => s,
            Err(e) => {
                log::warn!("{name}: {e}");
                failed.push(FileFailure {
                    file: name,
                    error: e.to_string(),
                });
                continue;
            }
        };
        processed += 1;
        for s in segments {
            let id = s.signal.source_id.clone();
            let rel = format!("segments/{id}.wav");
            write_wav(&s.signal, out.join(&rel)).map_err(data)?;
            entries.push(ManifestEntry {
                sample_id: id,
                audio_path: rel,
                gold: None,
                annotator_a: None,
                annotator_b: None,
                annotator_c: None,
                split: Split::Unassigned,
                source_kind,
                duration_s: s.duration_seconds,
            });
        }
    }
    save_manifest(out.join("manifest.csv"), &entries).map_err(data)?;
    let report = PreprocessReport {
        files_processed: processed,
        segments: entries.len(),
        failed,
        skipped,
        config: cfg.to_json(),
    };
    write_json(&out.join("preprocess_report.json"), &report)?;
    println!(
        "{} files processed, {} segments, {} failed",
        report.files_processed,
        report.segments,
        report.failed.len()
    );
    Ok(())
}

// ------------------------------------------------------------- features

fn manifest_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_entries(cfg: &RunConfig) -> Result<(Vec<ManifestEntry>, PathBuf), CliError> {
    let path = require(&cfg.paths.manifest, "manifest", "manifest")?;
    let entries = load_manifest(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok((entries, manifest_dir(path)))
}

fn feature_config(cfg: &RunConfig) -> FeatureConfig {
    FeatureConfig {
        frame_ms: cfg.pipeline.frame_ms,
        hop_ms: cfg.pipeline.hop_ms,
        ..FeatureConfig::default()
    }
}

fn extract_one(e: &ManifestEntry, dir: &Path, fc: &FeatureConfig) -> Result<FeatureVector, CliError> {
    let fail = |err: String| CliError::Data(format!("{}: {err}", e.sample_id));
    let sig = load_audio(e.resolve_audio(dir)).map_err(|x| fail(x.to_string()))?;
    // Resample and downmix only: amplitude carries the energy features.
    let opts = StandardizeOptions {
        target_peak: None,
        ..StandardizeOptions::default()
    };
    let std = standardize(&sig, &opts).map_err(|x| fail(x.to_string()))?;
    extract_features(&std.signal, fc).map_err(|x| fail(x.to_string()))
}

fn features(a: &FeaturesArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    a.input.apply(cfg);
    set_val(&mut cfg.pipeline.frame_ms, a.frame_ms);
    set_val(&mut cfg.pipeline.hop_ms, a.hop_ms);
    let out = require(&cfg.paths.features, "features", "features")?.to_path_buf();
    let (entries, dir) = load_entries(cfg)?;
    let fc = feature_config(cfg);
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(entries.len().max(1));
    let chunk = entries.len().div_ceil(workers).max(1);
    let results: Vec<Result<Vec<FeatureVector>, CliError>> = std::thread::scope(|s| {
        let handles: Vec<_> = entries
            .chunks(chunk)
            .map(|part| {
                let (dir, fc) = (&dir, &fc);
                s.spawn(move || part.iter().map(|e| extract_one(e, dir, fc)).collect())
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("feature worker panicked"))
            .collect()
    });
    let mut rows = Vec::with_capacity(entries.len());
    let mut vectors = entries.iter();
    for part in results {
        for v in part? {
            rows.push((vectors.next().expect("one vector per entry").sample_id.clone(), v));
        }
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_features(&out, &rows).map_err(data)?;
    println!("wrote {} feature vectors to {}", rows.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------- train

fn load_feature_map(cfg: &RunConfig) -> Result<BTreeMap<String, FeatureVector>, CliError> {
    let path = require(&cfg.paths.features, "features", "features")?;
    load_features(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Entries with gold labels in the configured training splits, or every
/// labelled entry when the manifest has no split assignment at all.
fn training_entries<'a>(entries: &'a [ManifestEntry], cfg: &RunConfig) -> Result<Vec<&'a ManifestEntry>, CliError> {
    let splits = cfg
        .pipeline
        .train_splits
        .iter()
        .map(|s| parse_split(s))
        .collect::<Result<Vec<_>, _>>()?;
    let assigned = entries.iter().any(|e| e.split != Split::Unassigned);
    Ok(entries
        .iter()
        .filter(|e| e.gold.is_some() && (!assigned || splits.contains(&e.split)))
        .collect())
}

fn labelled_vectors(
    entries: &[&ManifestEntry],
    feats: &BTreeMap<String, FeatureVector>,
) -> Result<(Vec<FeatureVector>, Vec<EmotionLabel>), CliError> {
    let mut x = Vec::with_capacity(entries.len());
    let mut y = Vec::with_capacity(entries.len());
    for e in entries {
        let v = feats
            .get(&e.sample_id)
            .ok_or_else(|| CliError::Data(format!("no feature vector for '{}'", e.sample_id)))?;
        x.push(*v);
        y.push(e.gold.expect("training entries are labelled"));
    }
    Ok((x, y))
}

fn train_cmd(a: &TrainArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    a.input.apply(cfg);
    a.model.apply(cfg);
    set_val(&mut cfg.pipeline.svm_c, a.svm_c);
    set_val(&mut cfg.pipeline.svm_tol, a.svm_tol);
    set_val(&mut cfg.pipeline.seed, a.seed);
    let model_path = require(&cfg.paths.model, "model", "model")?.to_path_buf();
    let stats_path = require(&cfg.paths.stats, "stats", "stats")?.to_path_buf();
    let (entries, _) = load_entries(cfg)?;
    let feats = load_feature_map(cfg)?;
    let train_set = training_entries(&entries, cfg)?;
    if train_set.is_empty() {
        return Err(CliError::Data("no labelled training entries".into()));
    }
    let (x, y) = labelled_vectors(&train_set, &feats)?;
    let params = TrainParams {
        c: cfg.pipeline.svm_c,
        tol: cfg.pipeline.svm_tol,
        max_passes: cfg.pipeline.svm_max_passes,
        seed: cfg.pipeline.seed,
    };
    let model = train(&x, &y, &params).map_err(data)?;
    let stats = CorpusStats::from_vectors(&x).map_err(data)?;
    model.save(&model_path).map_err(data)?;
    write_json(&stats_path, &stats)?;
    let correct = x
        .iter()
        .zip(&y)
        .filter(|(v, l)| model.predict(v).map(|m| m.label == **l).unwrap_or(false))
        .count();
    println!(
        "trained on {} utterances, training accuracy {:.4}",
        x.len(),
        correct as f64 / x.len() as f64
    );
    Ok(())
}

// -------------------------------------------------------------- inference

fn load_rules(path: Option<&Path>) -> Result<RuleSet, CliError> {
    match path {
        Some(p) => RuleSet::load(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))),
        None => Ok(RuleSet::default_rules()),
    }
}

fn load_stats(path: &Path) -> Result<CorpusStats, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let stats: CorpusStats =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    stats.validate().map_err(data)?;
    Ok(stats)
}

fn load_transcripts(path: &Path) -> Result<HashMap<String, String>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut out = HashMap::new();
    for row in rdr.deserialize::<(String, String)>() {
        let (id, text) = row.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        out.insert(id, text);
    }
    Ok(out)
}

fn hybrid_err(e: HybridError) -> CliError {
    match e {
        HybridError::InvalidTau(_) | HybridError::MissingTranscripts { .. } => CliError::Config(e.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

/// Loaded artifacts shared by the inference commands.
struct Session {
    all: Vec<ManifestEntry>,
    entries: Vec<ManifestEntry>,
    feats: BTreeMap<String, FeatureVector>,
    model: SvmModel,
    stats: CorpusStats,
    rules: RuleSet,
    refined: Option<RuleSet>,
    backend: Box<dyn ChatBackend>,
    out: PathBuf,
}

impl Session {
    fn open(cfg: &RunConfig) -> Result<Session, CliError> {
        validate_tau(cfg.pipeline.tau).map_err(hybrid_err)?;
        let out = require(&cfg.paths.output, "out", "output")?.to_path_buf();
        let model_path = require(&cfg.paths.model, "model", "model")?;
        let stats_path = require(&cfg.paths.stats, "stats", "stats")?;
        let inner = backend_from_config(&cfg.endpoint).map_err(config)?;
        let backend: Box<dyn ChatBackend> = match &cfg.paths.cache {
            Some(dir) => {
                Box::new(CachedBackend::new(inner, dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?)
            }
            None => inner,
        };
        let split = cfg.pipeline.split.as_deref().map(parse_split).transpose()?;
        let (all, _) = load_entries(cfg)?;
        let entries: Vec<ManifestEntry> = all
            .iter()
            .filter(|e| split.map_or(true, |s| e.split == s))
            .cloned()
            .collect();
        if entries.is_empty() {
            return Err(CliError::Data("no manifest entries selected".into()));
        }
        let model = SvmModel::load(model_path).map_err(|e| CliError::Data(format!("{}: {e}", model_path.display())))?;
        Ok(Session {
            all,
            entries,
            feats: load_feature_map(cfg)?,
            model,
            stats: load_stats(stats_path)?,
            rules: load_rules(cfg.paths.rules.as_deref())?,
            refined: cfg
                .paths
                .refined_rules
                .as_deref()
                .map(|p| load_rules(Some(p)))
                .transpose()?,
            backend,
            out,
        })
    }

    /// Rules the model writes itself from training-split class profiles,
    /// saved next to the run outputs.
    fn auto_rules(&self, cfg: &RunConfig, supplied: Option<&Path>) -> Result<RuleSet, CliError> {
        if let Some(p) = supplied {
            return load_rules(Some(p));
        }
        let train_set = training_entries(&self.all, cfg)?;
        let (x, y) = labelled_vectors(&train_set, &self.feats)?;
        let training: Vec<(FeatureVector, EmotionLabel)> = x.into_iter().zip(y).collect();
        let rules = auto_generate_rules(self.backend.as_ref(), &training, &self.stats).map_err(data)?;
        std::fs::write(self.out.join("auto_rules.json"), rules.to_json()).map_err(data)?;
        Ok(rules)
    }

    fn rules_for(&self, mode: InferenceMode) -> &RuleSet {
        match mode {
            InferenceMode::Prompt(PromptVersion::V3Refined | PromptVersion::V4Hybrid) => {
                self.refined.as_ref().unwrap_or(&self.rules)
            }
            _ => &self.rules,
        }
    }

    fn run(
        &self,
        cfg: &RunConfig,
        mode: InferenceMode,
        rules: &RuleSet,
        transcripts: Option<&HashMap<String, String>>,
        timings: bool,
    ) -> Result<PipelineOutput, CliError> {
        let engine = Engine {
            model: &self.model,
            rules,
            stats: &self.stats,
            backend: self.backend.as_ref(),
            max_in_flight: cfg.endpoint.max_in_flight,
        };
        let mut output = run_pipeline(&self.entries, &self.feats, transcripts, &engine, mode, cfg.pipeline.tau)
            .map_err(hybrid_err)?;
        output.report.config = Some(cfg.to_json());
        write_predictions(
            self.out.join(format!("predictions_{mode}.jsonl")),
            &output.predictions,
            timings,
        )
        .map_err(hybrid_err)?;
        write_json(&self.out.join(format!("report_{mode}.json")), &output.report)?;
        let r = &output.report;
        let acc = r
            .metrics
            .as_ref()
            .map(|m| format!(", accuracy {:.4}", m.accuracy))
            .unwrap_or_default();
        println!(
            "{mode}: {} utterances, {} routed, {} LLM calls{acc}",
            r.n, r.routed, r.llm_calls
        );
        Ok(output)
    }
}

fn predict(a: &PredictArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    a.input.apply(cfg);
    a.model.apply(cfg);
    a.llm.apply(cfg);
    a.run.apply(cfg);
    if let Some(v) = &a.version {
        cfg.pipeline.version = v.clone();
    }
    let mode: InferenceMode = cfg.pipeline.version.parse().map_err(config)?;
    let transcripts = match mode {
        InferenceMode::TextBaseline => {
            let p = require(&cfg.paths.transcripts, "transcripts", "transcripts")?;
            Some(load_transcripts(p)?)
        }
        _ => None,
    };
    let session = Session::open(cfg)?;
    create_dir(&session.out)?;
    let auto;
    let rules = if mode == InferenceMode::Prompt(PromptVersion::V5Auto) {
        auto = session.auto_rules(cfg, a.auto_rules.as_deref())?;
        &auto
    } else {
        session.rules_for(mode)
    };
    session.run(cfg, mode, rules, transcripts.as_ref(), a.run.timings)?;
    Ok(())
}

fn compare(a: &CompareArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    a.input.apply(cfg);
    a.model.apply(cfg);
    a.llm.apply(cfg);
    a.run.apply(cfg);
    let transcripts = cfg.paths.transcripts.as_deref().map(load_transcripts).transpose()?;
    let session = Session::open(cfg)?;
    create_dir(&session.out)?;
    if session.refined.is_none() {
        log::warn!("no refined rules given; v3 and v4 use the base rules");
    }
    let mut runs = Vec::new();
    let modes = [
        PromptVersion::V1Basic,
        PromptVersion::V2Rules,
        PromptVersion::V3Refined,
        PromptVersion::V4Hybrid,
        PromptVersion::V5Auto,
    ];
    for v in modes {
        let mode = InferenceMode::Prompt(v);
        let out = if v == PromptVersion::V5Auto {
            let auto = session.auto_rules(cfg, None)?;
            session.run(cfg, mode, &auto, None, a.run.timings)?
        } else {
            session.run(cfg, mode, session.rules_for(mode), None, a.run.timings)?
        };
        runs.push((mode.to_string(), out.report));
    }
    if let Some(t) = &transcripts {
        let mode = InferenceMode::TextBaseline;
        let out = session.run(cfg, mode, &session.rules, Some(t), a.run.timings)?;
        runs.push((mode.to_string(), out.report));
    }
    let scored: Vec<_> = runs
        .iter()
        .filter_map(|(v, r)| r.metrics.clone().map(|m| (v.clone(), m)))
        .collect();
    if scored.len() != runs.len() {
        return Err(CliError::Data(
            "comparison needs a gold label for every selected entry".into(),
        ));
    }
    let table = compare_report(&scored);
    #[derive(Serialize)]
    struct Comparison<'a> {
        rows: &'a [emoroute::eval::ComparisonRow],
        config: serde_json::Value,
    }
    write_json(
        &session.out.join("comparison.json"),
        &Comparison {
            rows: &table.rows,
            config: cfg.to_json(),
        },
    )?;
    std::fs::write(session.out.join("comparison.txt"), &table.text).map_err(data)?;
    print!("{}", table.text);
    Ok(())
}

fn sweep(a: &SweepArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    a.input.apply(cfg);
    a.model.apply(cfg);
    a.llm.apply(cfg);
    a.run.apply(cfg);
    let taus: Vec<f64> = if a.taus.is_empty() {
        TAU_GRID.to_vec()
    } else {
        a.taus.clone()
    };
    for &t in &taus {
        validate_tau(t).map_err(hybrid_err)?;
    }
    let session = Session::open(cfg)?;
    create_dir(&session.out)?;
    let engine = Engine {
        model: &session.model,
        rules: session.rules_for(InferenceMode::Prompt(PromptVersion::V4Hybrid)),
        stats: &session.stats,
        backend: session.backend.as_ref(),
        max_in_flight: cfg.endpoint.max_in_flight,
    };
    let points = sweep_tau(&session.entries, &session.feats, &engine, &taus).map_err(hybrid_err)?;
    #[derive(Serialize)]
    struct Sweep<'a> {
        points: &'a [emoroute::hybrid::SweepPoint],
        config: serde_json::Value,
    }
    write_json(
        &session.out.join("sweep.json"),
        &Sweep {
            points: &points,
            config: cfg.to_json(),
        },
    )?;
    println!("{:>6} {:>7} {:>9} {:>9}", "tau", "routed", "fraction", "accuracy");
    for p in &points {
        let acc = p.accuracy.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into());
        println!("{:>6.2} {:>7} {:>9.4} {:>9}", p.tau, p.routed, p.routed_fraction, acc);
    }
    Ok(())
}

// ------------------------------------------------------------- evaluate

fn gold_map(cfg: &RunConfig) -> Result<HashMap<String, EmotionLabel>, CliError> {
    let (entries, _) = load_entries(cfg)?;
    Ok(entries
        .into_iter()
        .filter_map(|e| Some((e.sample_id, e.gold?)))
        .collect())
}

fn evaluate(a: &EvaluateArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    set(&mut cfg.paths.manifest, &a.manifest);
    let preds =
        read_predictions(&a.predictions).map_err(|e| CliError::Data(format!("{}: {e}", a.predictions.display())))?;
    let gold = gold_map(cfg)?;
    let mut p = Vec::with_capacity(preds.len());
    let mut g = Vec::with_capacity(preds.len());
    for pr in &preds {
        let label = gold
            .get(&pr.sample_id)
            .ok_or_else(|| CliError::Data(format!("no gold label for '{}'", pr.sample_id)))?;
        p.push(pr.label);
        g.push(*label);
    }
    let report = metrics(&p, &g).map_err(data)?;
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report).map_err(data)?);
    } else {
        print!("{}", report.confusion.render());
        println!(
            "n = {}  accuracy = {:.4}  macro P = {:.4}  macro R = {:.4}  macro F1 = {:.4}",
            report.n, report.accuracy, report.macro_precision, report.macro_recall, report.macro_f1
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- kappa

fn kappa(a: &KappaArgs) -> Result<(), CliError> {
    let items: Vec<[EmotionLabel; 3]> = match (&a.annotations, &a.manifest) {
        (Some(p), None) => {
            let f = std::fs::File::open(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            read_annotations(f)
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?
                .into_iter()
                .map(|(_, l)| l)
                .collect()
        }
        (None, Some(p)) => {
            let entries = load_manifest(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            entries
                .iter()
                .map(|e| {
                    e.annotations()
                        .ok_or_else(|| CliError::Data(format!("'{}' lacks three annotator labels", e.sample_id)))
                })
                .collect::<Result<_, _>>()?
        }
        _ => {
            return Err(CliError::Config(
                "give exactly one of --annotations or --manifest".into(),
            ))
        }
    };
    let report = agreement_report(&items).map_err(data)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report).map_err(data)?);
        return Ok(());
    }
    println!("Items: {}", report.n_items);
    println!("Fleiss' kappa: {}", report.fleiss);
    println!("Cohen's kappa A-B: {}", report.cohen_ab);
    println!("Cohen's kappa A-C: {}", report.cohen_ac);
    println!("Cohen's kappa B-C: {}", report.cohen_bc);
    println!("Cohen's kappa mean: {}", report.cohen_mean);
    for (name, acc) in ["A", "B", "C"].iter().zip(&report.annotators) {
        println!("Annotator {name} accuracy vs majority: {:.4}", acc.overall);
    }
    if report.no_majority_items > 0 {
        println!("Items without a majority: {}", report.no_majority_items);
    }
    Ok(())
}

// --------------------------------------------------------------- refine

fn refine_propose(a: &ProposeArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    a.input.apply(cfg);
    set(&mut cfg.paths.stats, &a.stats);
    set(&mut cfg.paths.rules, &a.rules);
    let preds =
        read_predictions(&a.predictions).map_err(|e| CliError::Data(format!("{}: {e}", a.predictions.display())))?;
    let mut gold = gold_map(cfg)?;
    // a run over one split only covers part of the manifest
    let predicted: HashSet<&str> = preds.iter().map(|p| p.sample_id.as_str()).collect();
    gold.retain(|id, _| predicted.contains(id.as_str()));
    let feats = load_feature_map(cfg)?;
    let stats = load_stats(require(&cfg.paths.stats, "stats", "stats")?)?;
    let rules = load_rules(cfg.paths.rules.as_deref())?;
    let cm = confusion_matrix(&preds, &gold).map_err(data)?;
    let samples = preds
        .iter()
        .map(|p| {
            Ok(LabeledSample {
                features: feats
                    .get(&p.sample_id)
                    .ok_or_else(|| CliError::Data(format!("no feature vector for '{}'", p.sample_id)))?,
                gold: gold[&p.sample_id],
                predicted: p.label,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let patterns = mine_error_patterns(&samples, &stats, a.min_support);
    let proposals = propose_rules(&patterns, rules.version);
    save_proposals(&a.out, &proposals).map_err(data)?;
    print!("{}", render_report(&cm, &patterns, &proposals));
    Ok(())
}

fn refine_apply(a: &ApplyArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    set(&mut cfg.paths.rules, &a.rules);
    if !a.accept_all && a.accept.is_empty() {
        return Err(CliError::Config(
            "name proposals with --accept or pass --accept-all".into(),
        ));
    }
    let rules = load_rules(cfg.paths.rules.as_deref())?;
    let mut proposals =
        load_proposals(&a.proposals).map_err(|e| CliError::Data(format!("{}: {e}", a.proposals.display())))?;
    for id in &a.accept {
        if !proposals.iter().any(|p| &p.candidate.id == id) {
            return Err(CliError::Config(format!("no proposal with id '{id}'")));
        }
    }
    for p in &mut proposals {
        if a.accept_all || a.accept.contains(&p.candidate.id) {
            p.status = ProposalStatus::Accepted;
        }
    }
    let next = apply_refinement(&rules, &proposals).map_err(data)?;
    next.save_new(&a.out)
        .map_err(|e| CliError::Data(format!("{}: {e}", a.out.display())))?;
    let accepted = proposals
        .iter()
        .filter(|p| p.status == ProposalStatus::Accepted)
        .count();
    println!(
        "rules version {} -> {} with {accepted} new rules, written to {}",
        rules.version,
        next.version,
        a.out.display()
    );
    Ok(())
}
