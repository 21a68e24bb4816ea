//! Normalized-autocorrelation pitch estimation.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchConfig {
    pub fmin: f64,
    pub fmax: f64,
    /// Minimum normalized autocorrelation peak for a frame to count as voiced.
    pub clarity_threshold: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        PitchConfig {
            fmin: 60.0,
            fmax: 400.0,
            clarity_threshold: 0.6,
        }
    }
}

/// Best periodicity candidate in a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchCandidate {
    /// Interpolated lag in samples.
    pub lag: f64,
    /// Normalized autocorrelation at the chosen integer lag, in `[-1, 1]`.
    pub clarity: f64,
}

/// Candidates within this fraction of the strongest peak are preferred when
/// they sit at a shorter lag, which keeps octave-down errors away.
const PEAK_PICK_RATIO: f64 = 0.9;

/// Locates the periodicity peak of `frame` in the lag range implied by
/// `[fmin, fmax]`, without applying the clarity threshold. `None` when the
/// frame carries no energy or is too short to hold a single period.
pub fn pitch_candidate(frame: &[f64], sample_rate: u32, cfg: &PitchConfig) -> Option<PitchCandidate> {
    let n = frame.len();
    let sr = sample_rate as f64;
    let min_lag = ((sr / cfg.fmax).floor() as usize).max(2);
    let max_lag = ((sr / cfg.fmin).ceil() as usize).min(n.saturating_sub(2));
    if n < 4 || min_lag >= max_lag {
        return None;
    }
    let mean = frame.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = frame.iter().map(|v| v - mean).collect();
    if x.iter().all(|&v| v == 0.0) {
        return None;
    }

    // r[k] holds the normalized autocorrelation at lag (min_lag - 1 + k).
    let lags = (min_lag - 1)..=(max_lag + 1);
    let r: Vec<f64> = lags.clone().map(|lag| normalized_autocorrelation(&x, lag)).collect();
    let at = |lag: usize| r[lag + 1 - min_lag];

    let peaks: Vec<usize> = (min_lag..=max_lag)
        .filter(|&lag| at(lag) >= at(lag - 1) && at(lag) > at(lag + 1))
        .collect();
    let best = peaks.iter().map(|&l| at(l)).fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return None;
    }
    let chosen = peaks
        .iter()
        .copied()
        .find(|&l| at(l) >= PEAK_PICK_RATIO * best)
        .unwrap_or(peaks[0]);

    let (y0, y1, y2) = (at(chosen - 1), at(chosen), at(chosen + 1));
    let denom = y0 - 2.0 * y1 + y2;
    let shift = if denom.abs() > 1e-12 {
        (0.5 * (y0 - y2) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    Some(PitchCandidate {
        lag: chosen as f64 + shift,
        clarity: y1,
    })
}

/// Fundamental frequency in Hz, or `None` (unvoiced) when the periodicity
/// peak is weaker than the clarity threshold.
pub fn estimate_pitch(frame: &[f64], sample_rate: u32, cfg: &PitchConfig) -> Option<f64> {
    let c = pitch_candidate(frame, sample_rate, cfg)?;
    if c.clarity < cfg.clarity_threshold {
        return None;
    }
    Some(sample_rate as f64 / c.lag)
}

fn normalized_autocorrelation(x: &[f64], lag: usize) -> f64 {
    if lag >= x.len() {
        return 0.0;
    }
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() - lag {
        let a = x[i];
        let b = x[i + lag];
        xy += a * b;
        xx += a * a;
        yy += b * b;
    }
    let d = (xx * yy).sqrt();
    if d > 0.0 {
        xy / d
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn sine(freq: f64, n: usize, rate: u32) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin())
            .collect()
    }

    #[test]
    fn pure_tone_220() {
        let f = estimate_pitch(&sine(220.0, 400, 16_000), 16_000, &PitchConfig::default()).unwrap();
        assert!((f - 220.0).abs() < 2.0, "{f}");
    }

    #[test]
    fn silence_is_unvoiced() {
        assert_eq!(estimate_pitch(&[0.0; 400], 16_000, &PitchConfig::default()), None);
    }

    #[test]
    fn white_noise_is_unvoiced() {
        // Seeded fixture; its clarity was measured once (0.161) and must stay
        // well under the 0.6 threshold.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let frame: Vec<f64> = (0..400).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = pitch_candidate(&frame, 16_000, &PitchConfig::default()).unwrap();
        assert!(c.clarity < 0.6, "clarity {}", c.clarity);
        assert_eq!(estimate_pitch(&frame, 16_000, &PitchConfig::default()), None);
    }

    #[test]
    fn harmonic_complex_reports_fundamental() {
        let frame: Vec<f64> = (0..400)
            .map(|i| {
                let t = i as f64 / 16_000.0;
                (2.0 * PI * 120.0 * t).sin() + 0.8 * (2.0 * PI * 240.0 * t).sin() + 0.6 * (2.0 * PI * 360.0 * t).sin()
            })
            .collect();
        let f = estimate_pitch(&frame, 16_000, &PitchConfig::default()).unwrap();
        assert!((f - 120.0).abs() < 2.0, "{f}");
    }

    #[test]
    fn amplitude_scaling_leaves_pitch_unchanged() {
        let x = sine(180.0, 400, 16_000);
        let y: Vec<f64> = x.iter().map(|v| v * 0.01).collect();
        let cfg = PitchConfig::default();
        let a = estimate_pitch(&x, 16_000, &cfg).unwrap();
        let b = estimate_pitch(&y, 16_000, &cfg).unwrap();
        assert!((a - b).abs() < 0.1);
    }
}
