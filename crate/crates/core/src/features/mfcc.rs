//! Mel-frequency cepstral coefficients.
//!
//! Power spectrum of a Hann-windowed frame (FFT size = next power of two),
//! triangular filters on the HTK mel scale, natural log with a 1e-10 floor,
//! then an orthonormal DCT-II.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfccConfig {
    pub n_mels: usize,
    pub n_coeffs: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            n_mels: 26,
            n_coeffs: 13,
            fmin: 0.0,
            fmax: 8000.0,
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Triangular mel filters as dense rows over the `n_fft / 2 + 1` power bins.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Vec<Vec<f64>> {
    let fmax = fmax.min(sample_rate as f64 / 2.0);
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let n_bins = n_fft / 2 + 1;
    (0..n_mels)
        .map(|m| {
            let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * sample_rate as f64 / n_fft as f64;
                    if f >= left && f <= centre && centre > left {
                        (f - left) / (centre - left)
                    } else if f > centre && f <= right && right > centre {
                        (right - f) / (right - centre)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// First `n_out` coefficients of the orthonormal DCT-II of `x`.
pub fn dct_ii_orthonormal(x: &[f64], n_out: usize) -> Vec<f64> {
    let m = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
            scale
                * x.iter()
                    .enumerate()
                    .map(|(i, &v)| v * (PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * m)).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Reusable MFCC computation for a fixed frame length and sample rate.
pub struct MfccExtractor {
    cfg: MfccConfig,
    frame_len: usize,
    n_fft: usize,
    window: Vec<f64>,
    filters: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfccExtractor")
            .field("cfg", &self.cfg)
            .field("frame_len", &self.frame_len)
            .field("n_fft", &self.n_fft)
            .finish()
    }
}

impl MfccExtractor {
    pub fn new(frame_len: usize, sample_rate: u32, cfg: MfccConfig) -> Self {
        let n_fft = frame_len.max(1).next_power_of_two();
        MfccExtractor {
            cfg,
            frame_len,
            n_fft,
            window: hann_window(frame_len),
            filters: mel_filterbank(cfg.n_mels, n_fft, sample_rate, cfg.fmin, cfg.fmax),
            fft: FftPlanner::new().plan_fft_forward(n_fft),
        }
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    /// Log mel-filterbank energies of an unwindowed frame.
    pub fn log_mel(&self, frame: &[f64]) -> Vec<f64> {
        assert_eq!(frame.len(), self.frame_len, "frame length mismatch");
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .zip(&self.window)
            .map(|(x, w)| Complex::new(x * w, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(self.n_fft)
            .collect();
        self.fft.process(&mut buf);
        let power: Vec<f64> = buf[..self.n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
        self.filters
            .iter()
            .map(|row| {
                let e: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
                e.max(LOG_FLOOR).ln()
            })
            .collect()
    }

    /// MFCC vector of an unwindowed frame (windowing happens here).
    pub fn compute(&self, frame: &[f64]) -> Vec<f64> {
        dct_ii_orthonormal(&self.log_mel(frame), self.cfg.n_coeffs)
    }
}

/// One-shot convenience wrapper around [`MfccExtractor`].
pub fn mfcc(frame: &[f64], sample_rate: u32, cfg: &MfccConfig) -> Vec<f64> {
    MfccExtractor::new(frame.len(), sample_rate, *cfg).compute(frame)
}
