//! Audio loading, standardization, voice activity detection and segmentation.
//!
//! The preprocessing chain is `load_audio` → `standardize` (mono, 16 kHz,
//! peak normalization) → `detect_voice_activity` → `segment`. Every step is a
//! pure function of its input.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
pub const DEFAULT_TARGET_PEAK: f64 = 0.95;

#[derive(Debug, thiserror::Error)]
pub enum AudioError {
    #[error("audio file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported audio format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("signal is empty")]
    EmptySignal,
    #[error("failed to write {path}: {reason}")]
    Write { path: PathBuf, reason: String },
}

/// A sampled waveform. Channels are stored de-interleaved and always have
/// equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl AudioSignal {
    pub fn mono(samples: Vec<f64>, sample_rate: u32, source_id: impl Into<String>) -> Self {
        AudioSignal {
            channels: vec![samples],
            sample_rate,
            source_id: source_id.into(),
        }
    }

    /// Samples of the first channel. For standardized signals this is the
    /// whole signal.
    pub fn samples(&self) -> &[f64] {
        self.channels.first().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_seconds(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.channels
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f64, |m, &x| m.max(x.abs()))
    }
}

/// Half-open sample range `[start_sample, end_sample)` judged to contain voice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoicedInterval {
    pub start_sample: usize,
    pub end_sample: usize,
}

impl VoicedInterval {
    pub fn len(&self) -> usize {
        self.end_sample - self.start_sample
    }

    pub fn is_empty(&self) -> bool {
        self.end_sample <= self.start_sample
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioSegment {
    pub signal: AudioSignal,
    pub parent_id: String,
    pub offset_seconds: f64,
    pub duration_seconds: f64,
}

/// Reads a PCM WAV file (8/16/24/32-bit integer or 32-bit float, mono or
/// stereo) with samples scaled to `[-1, 1]`.
pub fn load_audio(path: impl AsRef<Path>) -> Result<AudioSignal, AudioError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(AudioError::FileNotFound(path.to_path_buf()));
    }
    let unsupported = |reason: String| AudioError::UnsupportedFormat {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| unsupported(e.to_string()))?;
    let spec = reader.spec();
    let n_channels = spec.channels as usize;
    if n_channels == 0 || n_channels > 2 {
        return Err(unsupported(format!("{n_channels} channels (1 or 2 supported)")));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| unsupported(e.to_string()))?,
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<Result<_, _>>()
                .map_err(|e| unsupported(e.to_string()))?
        }
        (fmt, bits) => return Err(unsupported(format!("{fmt:?} samples with {bits} bits"))),
    };
    let frames = interleaved.len() / n_channels;
    let mut channels = vec![Vec::with_capacity(frames); n_channels];
    for frame in interleaved.chunks_exact(n_channels) {
        for (c, &s) in frame.iter().enumerate() {
            channels[c].push(s.clamp(-1.0, 1.0));
        }
    }
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(AudioSignal {
        channels,
        sample_rate: spec.sample_rate,
        source_id,
    })
}

/// Writes a signal as 16-bit PCM WAV.
pub fn write_wav(signal: &AudioSignal, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let path = path.as_ref();
    let err = |e: hound::Error| AudioError::Write {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let spec = hound::WavSpec {
        channels: signal.num_channels() as u16,
        sample_rate: signal.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(err)?;
    for i in 0..signal.len() {
        for ch in &signal.channels {
            let v = (ch[i].clamp(-1.0, 1.0) * 32767.0).round() as i16;
            writer.write_sample(v).map_err(err)?;
        }
    }
    writer.finalize().map_err(err)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StandardizeOptions {
    pub target_rate: u32,
    /// `None` skips amplitude normalization.
    pub target_peak: Option<f64>,
    /// Zero crossings on each side of the resampling kernel.
    pub resample_quality: usize,
}

impl Default for StandardizeOptions {
    fn default() -> Self {
        StandardizeOptions {
            target_rate: DEFAULT_SAMPLE_RATE,
            target_peak: Some(DEFAULT_TARGET_PEAK),
            resample_quality: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub signal: AudioSignal,
    /// Set when the input was all zeros and could not be peak-normalized.
    pub degenerate: bool,
}

/// Downmixes to mono, resamples to the target rate and peak-normalizes.
///
/// The result is a fixed point: standardizing a standardized signal returns it
/// unchanged, bit for bit. Normalization clamps to the target peak and writes
/// the peak sample exactly, so rounding in the gain cannot push the next pass
/// off the fixed point.
pub fn standardize(signal: &AudioSignal, opts: &StandardizeOptions) -> Result<Standardized, AudioError> {
    if signal.is_empty() || signal.channels.is_empty() {
        return Err(AudioError::EmptySignal);
    }
    let mono = downmix(signal);
    let samples = if signal.sample_rate == opts.target_rate {
        mono
    } else {
        Resampler::new(signal.sample_rate, opts.target_rate, opts.resample_quality).process(&mono)
    };
    let (samples, degenerate) = match opts.target_peak {
        Some(target) => normalize_peak(samples, target),
        None => (samples, false),
    };
    Ok(Standardized {
        signal: AudioSignal::mono(samples, opts.target_rate, signal.source_id.clone()),
        degenerate,
    })
}

fn downmix(signal: &AudioSignal) -> Vec<f64> {
    if signal.channels.len() == 1 {
        return signal.channels[0].clone();
    }
    let k = signal.channels.len() as f64;
    (0..signal.len())
        .map(|i| signal.channels.iter().map(|c| c[i]).sum::<f64>() / k)
        .collect()
}

fn normalize_peak(mut samples: Vec<f64>, target: f64) -> (Vec<f64>, bool) {
    let peak = samples.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    if peak == 0.0 {
        return (samples, true);
    }
    if peak == target {
        return (samples, false);
    }
    let gain = target / peak;
    for x in samples.iter_mut() {
        if x.abs() == peak {
            *x = target.copysign(*x);
        } else {
            *x = (*x * gain).clamp(-target, target);
        }
    }
    (samples, false)
}

/// Rational-ratio windowed-sinc resampler with a precomputed polyphase table.
#[derive(Debug, Clone)]
pub struct Resampler {
    up: usize,
    down: usize,
    half_width: usize,
    cutoff: f64,
    table: Option<Vec<Vec<f64>>>,
}

const MAX_TABLE_PHASES: usize = 4096;

impl Resampler {
    pub fn new(from_rate: u32, to_rate: u32, zero_crossings: usize) -> Self {
        let g = gcd(from_rate as usize, to_rate as usize);
        let up = to_rate as usize / g;
        let down = from_rate as usize / g;
        // Anti-aliasing cutoff relative to the input Nyquist, with a little
        // headroom for the transition band.
        let cutoff = 0.95 * (up as f64 / down as f64).min(1.0);
        let half_width = (zero_crossings.max(1) as f64 / cutoff).ceil() as usize;
        let mut r = Resampler {
            up,
            down,
            half_width,
            cutoff,
            table: None,
        };
        if up <= MAX_TABLE_PHASES {
            r.table = Some((0..up).map(|p| r.phase_taps(p)).collect());
        }
        r
    }

    /// Kernel taps for input offsets `-(half_width-1) ..= half_width`,
    /// normalized to unit DC gain.
    fn phase_taps(&self, phase: usize) -> Vec<f64> {
        let frac = phase as f64 / self.up as f64;
        let hw = self.half_width as f64;
        let mut taps: Vec<f64> = (-(self.half_width as isize) + 1..=self.half_width as isize)
            .map(|k| {
                let dist = k as f64 - frac;
                let u = dist / hw;
                if u.abs() >= 1.0 {
                    return 0.0;
                }
                let window = 0.42 + 0.5 * (PI * u).cos() + 0.08 * (2.0 * PI * u).cos();
                self.cutoff * sinc(self.cutoff * dist) * window
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        if sum != 0.0 {
            taps.iter_mut().for_each(|t| *t /= sum);
        }
        taps
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        (input_len * self.up).div_ceil(self.down)
    }

    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        let n_out = self.output_len(input.len());
        let lo = -(self.half_width as isize) + 1;
        let mut out = Vec::with_capacity(n_out);
        let mut scratch;
        for n in 0..n_out {
            let pos = n * self.down;
            let base = (pos / self.up) as isize;
            let phase = pos % self.up;
            let taps: &[f64] = match &self.table {
                Some(t) => &t[phase],
                None => {
                    scratch = self.phase_taps(phase);
                    &scratch
                }
            };
            let mut acc = 0.0;
            for (j, &h) in taps.iter().enumerate() {
                let idx = base + lo + j as isize;
                if idx >= 0 && (idx as usize) < input.len() {
                    acc += h * input[idx as usize];
                }
            }
            out.push(acc);
        }
        out
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VadConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    /// Frames whose RMS is below `peak * 10^(floor/20)` count as silence.
    pub energy_floor_db: f64,
    /// Unvoiced gaps of at most this many frames between voiced frames are
    /// bridged.
    pub hangover_frames: usize,
}

impl Default for VadConfig {
    fn default() -> Self {
        VadConfig {
            frame_ms: 25.0,
            hop_ms: 10.0,
            energy_floor_db: -40.0,
            hangover_frames: 5,
        }
    }
}

pub(crate) fn ms_to_samples(ms: f64, rate: u32) -> usize {
    ((ms * rate as f64 / 1000.0).round() as usize).max(1)
}

/// Energy-threshold VAD relative to the signal peak.
///
/// Each frame owns the hop-length slice centred on it (the first frame owns
/// from sample 0, the last up to the end), so reported boundaries sit within
/// about two hops of the true onset/offset rather than a full frame past it.
pub fn detect_voice_activity(signal: &AudioSignal, cfg: &VadConfig) -> Result<Vec<VoicedInterval>, AudioError> {
    let x = signal.samples();
    if x.is_empty() {
        return Err(AudioError::EmptySignal);
    }
    let peak = x.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if peak == 0.0 {
        return Ok(Vec::new());
    }
    let frame_len = ms_to_samples(cfg.frame_ms, signal.sample_rate);
    let hop = ms_to_samples(cfg.hop_ms, signal.sample_rate);
    let n_frames = if x.len() >= frame_len {
        1 + (x.len() - frame_len) / hop
    } else {
        1
    };
    let threshold = peak * 10f64.powf(cfg.energy_floor_db / 20.0);
    let mut voiced: Vec<bool> = (0..n_frames)
        .map(|i| {
            let start = i * hop;
            let end = (start + frame_len).min(x.len());
            frame_rms(&x[start..end]) > threshold
        })
        .collect();

    // Bridge short gaps.
    let mut last_voiced: Option<usize> = None;
    for i in 0..n_frames {
        if voiced[i] {
            if let Some(prev) = last_voiced {
                let gap = i - prev - 1;
                if gap > 0 && gap <= cfg.hangover_frames {
                    voiced[prev + 1..i].iter_mut().for_each(|v| *v = true);
                }
            }
            last_voiced = Some(i);
        }
    }

    let centre_offset = frame_len.saturating_sub(hop) / 2;
    let owned_start = |i: usize| {
        if i == 0 {
            0
        } else {
            (i * hop + centre_offset).min(x.len())
        }
    };
    let owned_end = |i: usize| {
        if i + 1 == n_frames {
            x.len()
        } else {
            ((i + 1) * hop + centre_offset).min(x.len())
        }
    };

    let mut intervals = Vec::new();
    let mut i = 0;
    while i < n_frames {
        if !voiced[i] {
            i += 1;
            continue;
        }
        let first = i;
        while i + 1 < n_frames && voiced[i + 1] {
            i += 1;
        }
        let iv = VoicedInterval {
            start_sample: owned_start(first),
            end_sample: owned_end(i),
        };
        if !iv.is_empty() {
            intervals.push(iv);
        }
        i += 1;
    }
    Ok(intervals)
}

fn frame_rms(frame: &[f64]) -> f64 {
    if frame.is_empty() {
        return 0.0;
    }
    (frame.iter().map(|v| v * v).sum::<f64>() / frame.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentConfig {
    pub max_len_s: f64,
    pub min_len_s: f64,
    pub frame_ms: f64,
    pub hop_ms: f64,
    /// Half-width of the window around the midpoint searched for a split.
    pub split_search_s: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            max_len_s: 10.0,
            min_len_s: 0.5,
            frame_ms: 25.0,
            hop_ms: 10.0,
            split_search_s: 0.5,
        }
    }
}

/// Cuts voiced intervals into utterances no longer than `max_len_s`,
/// splitting at the quietest frame near the midpoint and dropping pieces
/// shorter than `min_len_s`.
pub fn segment(signal: &AudioSignal, intervals: &[VoicedInterval], cfg: &SegmentConfig) -> Vec<AudioSegment> {
    let rate = signal.sample_rate;
    let x = signal.samples();
    let max_len = (cfg.max_len_s * rate as f64).floor() as usize;
    let min_len = (cfg.min_len_s * rate as f64).ceil() as usize;
    let mut pieces = Vec::new();
    for iv in intervals {
        let iv = VoicedInterval {
            start_sample: iv.start_sample.min(x.len()),
            end_sample: iv.end_sample.min(x.len()),
        };
        if iv.is_empty() {
            continue;
        }
        split_recursive(x, rate, iv, max_len.max(2), cfg, &mut pieces);
    }
    pieces
        .into_iter()
        .filter(|p| p.len() >= min_len.max(1))
        .enumerate()
        .map(|(idx, p)| {
            let samples = x[p.start_sample..p.end_sample].to_vec();
            let id = format!("{}_{}", signal.source_id, idx);
            AudioSegment {
                duration_seconds: samples.len() as f64 / rate as f64,
                offset_seconds: p.start_sample as f64 / rate as f64,
                parent_id: signal.source_id.clone(),
                signal: AudioSignal::mono(samples, rate, id),
            }
        })
        .collect()
}

fn split_recursive(
    x: &[f64],
    rate: u32,
    iv: VoicedInterval,
    max_len: usize,
    cfg: &SegmentConfig,
    out: &mut Vec<VoicedInterval>,
) {
    if iv.len() <= max_len {
        out.push(iv);
        return;
    }
    let cut = quietest_point_near_middle(x, rate, iv, cfg);
    split_recursive(
        x,
        rate,
        VoicedInterval {
            start_sample: iv.start_sample,
            end_sample: cut,
        },
        max_len,
        cfg,
        out,
    );
    split_recursive(
        x,
        rate,
        VoicedInterval {
            start_sample: cut,
            end_sample: iv.end_sample,
        },
        max_len,
        cfg,
        out,
    );
}

fn quietest_point_near_middle(x: &[f64], rate: u32, iv: VoicedInterval, cfg: &SegmentConfig) -> usize {
    let frame_len = ms_to_samples(cfg.frame_ms, rate);
    let hop = ms_to_samples(cfg.hop_ms, rate);
    let mid = iv.start_sample + iv.len() / 2;
    let reach = (cfg.split_search_s * rate as f64) as usize;
    let lo = mid.saturating_sub(reach).max(iv.start_sample + 1);
    let hi = (mid + reach).min(iv.end_sample - 1);
    let mut best = (f64::INFINITY, mid);
    let mut centre = lo;
    while centre <= hi {
        let a = centre.saturating_sub(frame_len / 2).max(iv.start_sample);
        let b = (centre + frame_len / 2).min(iv.end_sample);
        let e = frame_rms(&x[a..b]);
        // Ties go to the candidate closest to the midpoint.
        if e < best.0 || (e == best.0 && centre.abs_diff(mid) < best.1.abs_diff(mid)) {
            best = (e, centre);
        }
        centre += hop;
    }
    best.1
}
