use std::f64::consts::TAU;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use talkprep::audio::{output_len, resample, AudioBuffer};
use talkprep::features::{fft_features, frame_count, mfcc, parse_feature_file, render_feature_file};

fn tone(freq: f64, rate: u32, n: usize, amp: f64) -> Vec<f64> {
    (0..n).map(|i| amp * (TAU * freq * i as f64 / f64::from(rate)).sin()).collect()
}

fn noisy_tone(seed: u64, rate: u32, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    tone(523.0, rate, n, 0.3).into_iter().map(|x| x + rng.gen_range(-0.05..0.05)).collect()
}

const RATES: [u32; 6] = [8000, 11025, 16000, 22050, 44100, 48000];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn resampler_is_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0, ri in 0usize..6, ti in 0usize..6) {
        let (src, dst) = (RATES[ri], RATES[ti]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..600).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..600).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let rx = resample(&AudioBuffer::new(x, src), dst);
        let ry = resample(&AudioBuffer::new(y, src), dst);
        let rm = resample(&AudioBuffer::new(mix, src), dst);
        prop_assert_eq!(rm.len(), output_len(600, src, dst));
        for ((m, p), q) in rm.samples.iter().zip(&rx.samples).zip(&ry.samples) {
            prop_assert!((m - (a * p + b * q)).abs() < 1e-9);
        }
    }

    #[test]
    fn resampled_length(n in 0usize..5000, ri in 0usize..6, ti in 0usize..6) {
        let (src, dst) = (RATES[ri], RATES[ti]);
        let out = resample(&AudioBuffer::new(vec![0.0; n], src), dst);
        let exact = n as f64 * f64::from(dst) / f64::from(src);
        prop_assert!((out.len() as f64 - exact).abs() <= 0.5 + 1e-9);
        prop_assert_eq!(out.sample_rate_hz, dst);
    }

    #[test]
    fn mfcc_amplitude_covariance(seed in any::<u64>(), gain in 0.05f64..8.0) {
        let x = noisy_tone(seed, 16000, 4000);
        let scaled: Vec<f64> = x.iter().map(|v| v * gain).collect();
        let a = mfcc(&AudioBuffer::new(x, 16000), 13, false).unwrap();
        let b = mfcc(&AudioBuffer::new(scaled, 16000), 13, false).unwrap();
        // Power scales by gain^2: every log energy shifts by 2 ln gain, so
        // with an orthonormal DCT only c0 moves, by 2 ln(gain) sqrt(26).
        let shift = 2.0 * gain.ln() * 26f64.sqrt();
        for r in 0..a.rows {
            prop_assert!((b.row(r)[0] - a.row(r)[0] - shift).abs() < 1e-6);
            for c in 1..13 {
                prop_assert!((b.row(r)[c] - a.row(r)[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn scaled_mfcc_ignores_gain(seed in any::<u64>(), gain in 0.05f64..8.0) {
        let x = noisy_tone(seed, 16000, 4000);
        let scaled: Vec<f64> = x.iter().map(|v| v * gain).collect();
        let a = mfcc(&AudioBuffer::new(x, 16000), 20, true).unwrap();
        let b = mfcc(&AudioBuffer::new(scaled, 16000), 20, true).unwrap();
        for (p, q) in a.values.iter().zip(&b.values) {
            prop_assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn frame_count_formula(n in 0usize..40_000) {
        let m = mfcc(&AudioBuffer::new(vec![0.0; n], 16000), 13, false).unwrap();
        let want = if n < 400 { 0 } else { (n - 400) / 160 + 1 };
        prop_assert_eq!(m.rows, want);
        prop_assert_eq!(frame_count(n, 400, 160), want);
    }

    #[test]
    fn feature_files_round_trip(seed in any::<u64>(), log2 in 1u32..10) {
        let x = noisy_tone(seed, 8000, 3000);
        let m = fft_features(&AudioBuffer::new(x, 8000), 1 << log2).unwrap();
        prop_assert_eq!(parse_feature_file(&render_feature_file(&m)).unwrap(), m);
    }
}

#[test]
fn downsampling_rejects_above_new_nyquist() {
    // 7 kHz is above the 4 kHz Nyquist of the target and must be attenuated.
    let x = tone(7000.0, 16000, 16000, 0.5);
    let y = resample(&AudioBuffer::new(x, 16000), 8000);
    let mid = &y.samples[1000..7000];
    let rms = (mid.iter().map(|v| v * v).sum::<f64>() / mid.len() as f64).sqrt();
    assert!(rms < 0.5 / 2f64.sqrt() * 1e-3, "rms {rms}");
}
