//! Signal-processing checks against independent oracles.

use std::f64::consts::PI;

use emoroute::audio_io::{
    detect_voice_activity, segment, standardize, AudioSignal, SegmentConfig, StandardizeOptions, VadConfig,
};
use emoroute::features::mfcc::{mfcc, MfccConfig};
use emoroute::features::pitch::pitch_candidate;
use emoroute::features::{estimate_pitch, extract_features, FeatureConfig, PitchConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

fn sine(freq: f64, rate: u32, n: usize, amp: f64) -> Vec<f64> {
    (0..n)
        .map(|i| amp * (2.0 * PI * freq * i as f64 / rate as f64).sin())
        .collect()
}

#[test]
fn resampled_tone_keeps_its_frequency() {
    let input = AudioSignal::mono(sine(440.0, 48_000, 48_000, 0.5), 48_000, "tone");
    let out = standardize(&input, &StandardizeOptions::default()).unwrap().signal;
    assert_eq!(out.sample_rate, 16_000);
    let x = out.samples();
    assert!((x.len() as i64 - 16_000).abs() <= 1);

    // Zero-padded FFT gives 0.25 Hz bins; parabolic interpolation refines the peak.
    let n_fft = 65_536;
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .enumerate()
        .map(|(i, v)| Complex::new(v * (0.5 - 0.5 * (2.0 * PI * i as f64 / x.len() as f64).cos()), 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(n_fft)
        .collect();
    FftPlanner::new().plan_fft_forward(n_fft).process(&mut buf);
    let mag: Vec<f64> = buf[..n_fft / 2].iter().map(|c| c.norm()).collect();
    let k = (1..mag.len() - 1).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap();
    let (a, b, c) = (mag[k - 1].ln(), mag[k].ln(), mag[k + 1].ln());
    let peak_bin = k as f64 + 0.5 * (a - c) / (a - 2.0 * b + c);
    let peak_hz = peak_bin * 16_000.0 / n_fft as f64;
    assert!((peak_hz - 440.0).abs() <= 2.0, "spectral peak at {peak_hz} Hz");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn standardize_is_idempotent(
        samples in prop::collection::vec(-1.0f64..1.0, 200..2000),
        rate in prop::sample::select(vec![8_000u32, 16_000, 22_050, 44_100]),
    ) {
        prop_assume!(samples.iter().any(|v| v.abs() > 1e-6));
        let opts = StandardizeOptions::default();
        let once = standardize(&AudioSignal::mono(samples, rate, "p"), &opts).unwrap().signal;
        let twice = standardize(&once, &opts).unwrap().signal;
        prop_assert_eq!(once.samples(), twice.samples());
        prop_assert!((once.peak() - 0.95).abs() < 1e-12);
    }
}

#[test]
fn vad_edges_on_burst_fixture() {
    let rate = 16_000;
    let mut x = sine(200.0, rate, 8_000, 0.6);
    x.extend(std::iter::repeat(0.0).take(16_000));
    x.extend(sine(200.0, rate, 8_000, 0.6));
    let sig = AudioSignal::mono(x, rate, "bursts");
    let iv = detect_voice_activity(&sig, &VadConfig::default()).unwrap();
    assert_eq!(iv.len(), 2);
    let hop = 160i64;
    let edges = [(0i64, 8_000i64), (24_000, 32_000)];
    for (got, want) in iv.iter().zip(edges) {
        assert!(
            (got.start_sample as i64 - want.0).abs() <= 2 * hop,
            "start {} vs {}",
            got.start_sample,
            want.0
        );
        assert!(
            (got.end_sample as i64 - want.1).abs() <= 2 * hop,
            "end {} vs {}",
            got.end_sample,
            want.1
        );
    }
    let segs = segment(&sig, &iv, &SegmentConfig::default());
    assert_eq!(segs.len(), 2);
    assert!(segs[1].offset_seconds > 1.4 && segs[1].offset_seconds < 1.6);
}

/// Textbook MFCC: direct DFT, HTK mel triangles built from scratch.
fn reference_mfcc(frame: &[f64], rate: f64) -> Vec<f64> {
    let n = frame.len();
    let n_fft = n.next_power_of_two();
    let windowed: Vec<f64> = frame
        .iter()
        .enumerate()
        .map(|(i, v)| v * (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()))
        .collect();
    let power: Vec<f64> = (0..=n_fft / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in windowed.iter().enumerate() {
                let ph = -2.0 * PI * k as f64 * i as f64 / n_fft as f64;
                re += v * ph.cos();
                im += v * ph.sin();
            }
            re * re + im * im
        })
        .collect();
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let n_mels = 26;
    let top = mel(8000.0);
    let pts: Vec<f64> = (0..n_mels + 2)
        .map(|i| hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let log_mel: Vec<f64> = (0..n_mels)
        .map(|m| {
            let mut e = 0.0;
            for (k, p) in power.iter().enumerate() {
                let f = k as f64 * rate / n_fft as f64;
                let w = if f >= pts[m] && f <= pts[m + 1] {
                    (f - pts[m]) / (pts[m + 1] - pts[m])
                } else if f > pts[m + 1] && f <= pts[m + 2] {
                    (pts[m + 2] - f) / (pts[m + 2] - pts[m + 1])
                } else {
                    0.0
                };
                e += w * p;
            }
            e.max(1e-10).ln()
        })
        .collect();
    (0..13)
        .map(|k| {
            let s: f64 = log_mel
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * k as f64 * (i as f64 + 0.5) / n_mels as f64).cos())
                .sum();
            s * if k == 0 {
                (1.0 / n_mels as f64).sqrt()
            } else {
                (2.0 / n_mels as f64).sqrt()
            }
        })
        .collect()
}

#[test]
fn mfcc_matches_reference_on_1khz_frame() {
    let frame = sine(1000.0, 16_000, 400, 0.5);
    let got = mfcc(&frame, 16_000, &MfccConfig::default());
    let want = reference_mfcc(&frame, 16_000.0);
    for (k, (g, w)) in got.iter().zip(&want).enumerate() {
        assert!((g - w).abs() < 1e-4, "c{k}: {g} vs {w}");
    }
}

#[test]
fn pure_tones_across_the_range() {
    for f0 in [80.0, 150.0, 220.0, 350.0] {
        let frame = sine(f0, 16_000, 400, 0.3);
        let est = estimate_pitch(&frame, 16_000, &PitchConfig::default()).unwrap();
        assert!((est - f0).abs() <= 2.0, "{f0} Hz estimated as {est}");
    }
}

#[test]
fn seeded_noise_has_low_clarity() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let frame: Vec<f64> = (0..400).map(|_| rng.gen_range(-0.5..0.5)).collect();
    // Independent normalized autocorrelation over the 60-400 Hz lag range.
    let best = (40..=267)
        .map(|lag| {
            let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
            for i in 0..frame.len() - lag {
                xy += frame[i] * frame[i + lag];
                xx += frame[i] * frame[i];
                yy += frame[i + lag] * frame[i + lag];
            }
            xy / (xx * yy).sqrt()
        })
        .fold(f64::MIN, f64::max);
    assert!(best < 0.6, "oracle clarity {best}");
    let cfg = PitchConfig::default();
    if let Some(c) = pitch_candidate(&frame, 16_000, &cfg) {
        assert!(c.clarity < 0.6);
    }
    assert_eq!(estimate_pitch(&frame, 16_000, &cfg), None);
}

#[test]
fn extraction_is_bit_for_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..16_000)
        .map(|i| 0.4 * (2.0 * PI * 180.0 * i as f64 / 16_000.0).sin() + rng.gen_range(-0.01..0.01))
        .collect();
    let sig = AudioSignal::mono(x, 16_000, "det");
    let a = extract_features(&sig, &FeatureConfig::default()).unwrap();
    let b = extract_features(&sig, &FeatureConfig::default()).unwrap();
    let bits = |v: &emoroute::features::FeatureVector| v.0.map(f64::to_bits);
    assert_eq!(bits(&a), bits(&b));
    assert!((a.get("pitch_mean").unwrap() - 180.0).abs() < 2.0);
}
