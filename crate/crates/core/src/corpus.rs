//! Manifests, stratified splits and the synthetic tone-complex corpus.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio_io::{write_wav, AudioError, AudioSignal, DEFAULT_SAMPLE_RATE};
use crate::label::EmotionLabel;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("manifest schema error: {0}")]
    Schema(String),
    #[error("duplicate sample_id '{0}'")]
    DuplicateId(String),
    #[error("sample '{0}' has no gold label")]
    MissingGold(String),
    #[error("invalid split fractions: {0}")]
    Fractions(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Set1,
    Set2,
    Set3,
    Test,
    #[default]
    Unassigned,
}

impl Split {
    pub const ASSIGNABLE: [Split; 4] = [Split::Set1, Split::Set2, Split::Set3, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Set1 => "set1",
            Split::Set2 => "set2",
            Split::Set3 => "set3",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "set1" => Ok(Split::Set1),
            "set2" => Ok(Split::Set2),
            "set3" => Ok(Split::Set3),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            _ => Err(format!("unknown split '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Movie,
    Entertainment,
    Interview,
    #[default]
    Synthetic,
}

/// One utterance. `audio_path` is resolved relative to the manifest's
/// directory when it is not absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub audio_path: String,
    #[serde(default)]
    pub gold: Option<EmotionLabel>,
    #[serde(default)]
    pub annotator_a: Option<EmotionLabel>,
    #[serde(default)]
    pub annotator_b: Option<EmotionLabel>,
    #[serde(default)]
    pub annotator_c: Option<EmotionLabel>,
    #[serde(default, deserialize_with = "blank_as_default")]
    pub split: Split,
    #[serde(default, deserialize_with = "blank_as_default")]
    pub source_kind: SourceKind,
    #[serde(default)]
    pub duration_s: f64,
}

/// Empty manifest cells mean "not given" rather than an unknown value.
fn blank_as_default<'de, D, T>(d: D) -> Result<T, D::Error>
where
    D: serde::Deserializer<'de>,
    T: Deserialize<'de> + Default,
{
    use serde::de::IntoDeserializer;
    let s = String::deserialize(d)?;
    if s.trim().is_empty() {
        Ok(T::default())
    } else {
        T::deserialize(s.trim().into_deserializer())
    }
}

impl ManifestEntry {
    pub fn resolve_audio(&self, manifest_dir: &Path) -> PathBuf {
        let p = Path::new(&self.audio_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            manifest_dir.join(p)
        }
    }

    pub fn annotations(&self) -> Option<[EmotionLabel; 3]> {
        Some([self.annotator_a?, self.annotator_b?, self.annotator_c?])
    }
}

fn check_unique(entries: &[ManifestEntry]) -> Result<(), CorpusError> {
    let mut seen = HashSet::new();
    for e in entries {
        if !seen.insert(e.sample_id.as_str()) {
            return Err(CorpusError::DuplicateId(e.sample_id.clone()));
        }
    }
    Ok(())
}

pub fn read_manifest_csv<R: std::io::Read>(input: R) -> Result<Vec<ManifestEntry>, CorpusError> {
    let mut entries = Vec::new();
    for (i, rec) in csv::Reader::from_reader(input)
        .deserialize::<ManifestEntry>()
        .enumerate()
    {
        entries.push(rec.map_err(|e| CorpusError::Schema(format!("row {}: {e}", i + 2)))?);
    }
    check_unique(&entries)?;
    Ok(entries)
}

pub fn read_manifest_jsonl<R: std::io::BufRead>(input: R) -> Result<Vec<ManifestEntry>, CorpusError> {
    let mut entries = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line).map_err(|e| CorpusError::Schema(format!("line {}: {e}", i + 1)))?);
    }
    check_unique(&entries)?;
    Ok(entries)
}

/// Loads a `.jsonl` manifest or, for any other extension, a CSV one.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, CorpusError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    if path.extension().is_some_and(|e| e == "jsonl") {
        read_manifest_jsonl(std::io::BufReader::new(file))
    } else {
        read_manifest_csv(file)
    }
}

pub fn write_manifest_csv<W: std::io::Write>(out: W, entries: &[ManifestEntry]) -> Result<(), CorpusError> {
    let mut w = csv::Writer::from_writer(out);
    for e in entries {
        w.serialize(e).map_err(|e| CorpusError::Schema(e.to_string()))?;
    }
    if entries.is_empty() {
        w.write_record([
            "sample_id",
            "audio_path",
            "gold",
            "annotator_a",
            "annotator_b",
            "annotator_c",
            "split",
            "source_kind",
            "duration_s",
        ])
        .map_err(|e| CorpusError::Schema(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "jsonl") {
        let mut s = String::new();
        for e in entries {
            s.push_str(&serde_json::to_string(e).map_err(|e| CorpusError::Schema(e.to_string()))?);
            s.push('\n');
        }
        std::fs::write(path, s)?;
        Ok(())
    } else {
        write_manifest_csv(std::fs::File::create(path)?, entries)
    }
}

/// Set1/Set2/Set3/Test proportions of the 706/691/696/671 split of a
/// 2,764-utterance corpus.
pub const DEFAULT_SPLIT_FRACTIONS: [f64; 4] = [0.2555, 0.2500, 0.2518, 0.2427];

/// Largest-remainder apportionment of `total` by `weights`; ties go to the
/// earlier slot.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut left = total - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Assigns every entry to one of the four splits, preserving each class's
/// share per split to within one sample and matching the overall split sizes
/// implied by `fractions`. Deterministic for a given seed.
pub fn stratified_split(
    entries: &[ManifestEntry],
    fractions: [f64; 4],
    seed: u64,
) -> Result<Vec<ManifestEntry>, CorpusError> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) || fractions.iter().sum::<f64>() <= 0.0 {
        return Err(CorpusError::Fractions(format!("{fractions:?}")));
    }
    if let Some(e) = entries.iter().find(|e| e.gold.is_none()) {
        return Err(CorpusError::MissingGold(e.sample_id.clone()));
    }
    let targets = apportion(entries.len(), &fractions);
    let sum: f64 = fractions.iter().sum();

    // Per-class membership in a seeded order.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); 3];
    for (i, e) in entries.iter().enumerate() {
        by_class[e.gold.unwrap().index()].push(i);
    }
    for members in by_class.iter_mut() {
        members.shuffle(&mut rng);
    }

    // Controlled rounding of the class × split quota matrix: floors first,
    // then hand out the remaining units by descending remainder wherever both
    // the class and the split still have room.
    let quota = |c: usize, s: usize| by_class[c].len() as f64 * fractions[s] / sum;
    let mut cells: [[usize; 4]; 3] = std::array::from_fn(|c| std::array::from_fn(|s| quota(c, s).floor() as usize));
    let mut order: Vec<(usize, usize)> = (0..3).flat_map(|c| (0..4).map(move |s| (c, s))).collect();
    order.sort_by(|&(c1, s1), &(c2, s2)| {
        let r1 = quota(c1, s1) - quota(c1, s1).floor();
        let r2 = quota(c2, s2) - quota(c2, s2).floor();
        r2.partial_cmp(&r1).unwrap().then((c1, s1).cmp(&(c2, s2)))
    });
    let row_left = |cells: &[[usize; 4]; 3], c: usize| by_class[c].len() - cells[c].iter().sum::<usize>();
    let col_left = |cells: &[[usize; 4]; 3], s: usize| targets[s].saturating_sub((0..3).map(|c| cells[c][s]).sum());
    for &(c, s) in &order {
        if row_left(&cells, c) > 0 && col_left(&cells, s) > 0 {
            cells[c][s] += 1;
        }
    }
    // Anything still unplaced goes where the split is furthest below target.
    for c in 0..3 {
        while row_left(&cells, c) > 0 {
            let s = (0..4)
                .max_by_key(|&s| (col_left(&cells, s), std::cmp::Reverse(s)))
                .unwrap();
            cells[c][s] += 1;
        }
    }

    let mut out = entries.to_vec();
    for (c, members) in by_class.iter().enumerate() {
        let mut it = members.iter();
        for (s, split) in Split::ASSIGNABLE.iter().enumerate() {
            for &i in it.by_ref().take(cells[c][s]) {
                out[i].split = *split;
            }
        }
    }
    Ok(out)
}

/// Acoustic recipe for one emotion class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassRecipe {
    pub base_pitch_hz: f64,
    /// Relative standard deviation of the pitch contour.
    pub pitch_jitter: f64,
    /// Peak amplitude of the envelope before jitter.
    pub energy_level: f64,
    /// Relative standard deviation of the amplitude envelope.
    pub energy_jitter: f64,
    /// Rate at which pitch and energy excursions change.
    pub modulation_rate_hz: f64,
}

impl ClassRecipe {
    fn lerp(&self, other: &ClassRecipe, w: f64) -> ClassRecipe {
        let m = |a: f64, b: f64| a + (b - a) * w;
        ClassRecipe {
            base_pitch_hz: m(self.base_pitch_hz, other.base_pitch_hz),
            pitch_jitter: m(self.pitch_jitter, other.pitch_jitter),
            energy_level: m(self.energy_level, other.energy_level),
            energy_jitter: m(self.energy_jitter, other.energy_jitter),
            modulation_rate_hz: m(self.modulation_rate_hz, other.modulation_rate_hz),
        }
    }
}

/// A subset of panic utterances rendered with damped pitch excursions while
/// keeping everything else panic-like; used to plant a known error mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedPitchDamping {
    pub fraction: f64,
    pub jitter_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRecipe {
    /// Per-class recipes in [`EmotionLabel::ALL`] order.
    pub classes: [ClassRecipe; 3],
    /// Fraction of angry and panic utterances drawn from a blend of the two
    /// recipes.
    pub overlap: f64,
    pub seed: u64,
    pub duration_s: f64,
    pub n_per_class: usize,
    #[serde(default)]
    pub planted: Option<PlantedPitchDamping>,
}

impl Default for SynthRecipe {
    fn default() -> Self {
        SynthRecipe {
            classes: [
                // angry: raised, fairly steady pitch; loud
                ClassRecipe {
                    base_pitch_hz: 220.0,
                    pitch_jitter: 0.06,
                    energy_level: 0.8,
                    energy_jitter: 0.15,
                    modulation_rate_hz: 3.0,
                },
                // calm: low, stable pitch; quiet and even
                ClassRecipe {
                    base_pitch_hz: 125.0,
                    pitch_jitter: 0.025,
                    energy_level: 0.2,
                    energy_jitter: 0.08,
                    modulation_rate_hz: 2.0,
                },
                // panic: high, erratic pitch and energy, fast changes
                ClassRecipe {
                    base_pitch_hz: 240.0,
                    pitch_jitter: 0.22,
                    energy_level: 0.55,
                    energy_jitter: 0.55,
                    modulation_rate_hz: 7.0,
                },
            ],
            overlap: 0.0,
            seed: 1,
            duration_s: 1.5,
            n_per_class: 50,
            planted: None,
        }
    }
}

impl SynthRecipe {
    /// Recipe in which panic is the loudest class and a share of panic
    /// utterances has damped pitch excursions. Literal application of the
    /// default rules then labels exactly those utterances angry.
    pub fn planted_pitch_errors(seed: u64, n_per_class: usize) -> Self {
        let mut r = SynthRecipe {
            seed,
            n_per_class,
            ..SynthRecipe::default()
        };
        r.classes[EmotionLabel::Angry.index()].energy_level = 0.45;
        let panic = &mut r.classes[EmotionLabel::Panic.index()];
        panic.energy_level = 0.85;
        panic.base_pitch_hz = 280.0;
        r.planted = Some(PlantedPitchDamping {
            fraction: 0.5,
            jitter_scale: 0.4,
        });
        r
    }
}

#[derive(Debug, Clone)]
pub struct SynthSample {
    pub entry: ManifestEntry,
    pub signal: AudioSignal,
    /// Whether the sample was drawn from a blended angry/panic recipe.
    pub blended: bool,
    pub planted: bool,
}

fn unit_noise(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Smooth random contour through Gaussian control points placed `rate`
/// times per second and joined by raised-cosine interpolation, rescaled to
/// zero mean and unit standard deviation over the utterance.
fn contour(rng: &mut ChaCha8Rng, n: usize, sample_rate: f64, rate: f64) -> Vec<f64> {
    let step = (sample_rate / rate.max(0.1)).max(1.0);
    let n_points = (n as f64 / step).ceil() as usize + 2;
    let points: Vec<f64> = (0..n_points).map(|_| unit_noise(rng)).collect();
    let mut c: Vec<f64> = (0..n)
        .map(|i| {
            let pos = i as f64 / step;
            let k = pos.floor() as usize;
            let t = pos - k as f64;
            let w = 0.5 - 0.5 * (PI * t).cos();
            points[k] * (1.0 - w) + points[k + 1] * w
        })
        .collect();
    if n > 1 {
        let mean = c.iter().sum::<f64>() / n as f64;
        let sd = (c.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        for x in c.iter_mut() {
            *x = if sd > 0.0 { (*x - mean) / sd } else { 0.0 };
        }
    }
    c
}

const N_HARMONICS: usize = 18;
const TONE_SCALE: f64 = 0.5;

/// Gentle low-pass tilt, about 6 dB per octave above 400 Hz.
fn spectral_envelope(freq: f64) -> f64 {
    1.0 / (1.0 + (freq / 400.0).powi(2)).sqrt()
}

fn render(recipe: &ClassRecipe, duration_s: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = DEFAULT_SAMPLE_RATE as f64;
    let n = (duration_s * sr).round() as usize;
    // Per-utterance speaker variation.
    let base = recipe.base_pitch_hz * (1.0 + 0.1 * unit_noise(rng));
    let level = recipe.energy_level * (1.0 + 0.06 * unit_noise(rng));
    let pitch_c = contour(rng, n, sr, recipe.modulation_rate_hz);
    let energy_c = contour(rng, n, sr, recipe.modulation_rate_hz);
    let mut phase = 0.0f64;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let f0 = (base * (1.0 + recipe.pitch_jitter * pitch_c[i])).clamp(75.0, 380.0);
        phase = (phase + 2.0 * PI * f0 / sr) % (2.0 * PI);
        let env = (level * (1.0 + recipe.energy_jitter * energy_c[i])).clamp(0.02 * level, 0.98);
        // Harmonics shaped by a fixed spectral envelope, so the spectrum
        // keeps its overall shape as the pitch moves. sin(h·φ) comes from
        // the Chebyshev recurrence.
        let two_cos = 2.0 * phase.cos();
        let (mut s_prev, mut s_cur) = (0.0, phase.sin());
        let (mut sum, mut power) = (0.0, 0.0);
        for h in 1..=N_HARMONICS {
            let a = spectral_envelope(h as f64 * f0);
            sum += a * s_cur;
            power += a * a;
            let s_next = two_cos * s_cur - s_prev;
            s_prev = s_cur;
            s_cur = s_next;
        }
        let tone = TONE_SCALE * sum / power.sqrt();
        let noise = 0.004 * rng.gen_range(-1.0..1.0);
        out.push((env * tone + noise).clamp(-1.0, 1.0));
    }
    out
}

/// Renders the corpus in memory. Each utterance draws from its own RNG
/// stream, so output does not depend on generation order.
pub fn synthesize(recipe: &SynthRecipe) -> Vec<SynthSample> {
    let mut out = Vec::with_capacity(3 * recipe.n_per_class);
    for label in EmotionLabel::ALL {
        for i in 0..recipe.n_per_class {
            let stream = (label.index() as u64) << 32 | i as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
            rng.set_stream(stream);
            let own = recipe.classes[label.index()];
            let mut blended = false;
            let mut planted = false;
            let mut r = own;
            let blend_draw: f64 = rng.gen();
            let blend_weight: f64 = rng.gen_range(0.35..0.65);
            let plant_draw: f64 = rng.gen();
            if matches!(label, EmotionLabel::Angry | EmotionLabel::Panic) && blend_draw < recipe.overlap {
                let other = match label {
                    EmotionLabel::Angry => recipe.classes[EmotionLabel::Panic.index()],
                    _ => recipe.classes[EmotionLabel::Angry.index()],
                };
                r = own.lerp(&other, blend_weight);
                blended = true;
            }
            if let (EmotionLabel::Panic, Some(p)) = (label, recipe.planted) {
                if plant_draw < p.fraction {
                    r.pitch_jitter *= p.jitter_scale;
                    planted = true;
                }
            }
            let samples = render(&r, recipe.duration_s, &mut rng);
            let id = format!("syn_{}_{:04}", label.as_str(), i);
            let signal = AudioSignal::mono(samples, DEFAULT_SAMPLE_RATE, id.clone());
            let entry = ManifestEntry {
                sample_id: id.clone(),
                audio_path: format!("audio/{id}.wav"),
                gold: Some(label),
                annotator_a: None,
                annotator_b: None,
                annotator_c: None,
                split: Split::Unassigned,
                source_kind: SourceKind::Synthetic,
                duration_s: signal.duration_seconds(),
            };
            out.push(SynthSample {
                entry,
                signal,
                blended,
                planted,
            });
        }
    }
    out
}

/// Writes 16-bit WAVs under `out_dir/audio/` and `out_dir/manifest.csv`.
pub fn generate_synthetic_corpus(
    recipe: &SynthRecipe,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<ManifestEntry>, CorpusError> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir.join("audio"))?;
    let samples = synthesize(recipe);
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        write_wav(&s.signal, out_dir.join(&s.entry.audio_path))?;
        entries.push(s.entry);
    }
    save_manifest(out_dir.join("manifest.csv"), &entries)?;
    Ok(entries)
}
