//! Band-limited sample rate conversion with a Kaiser-windowed sinc kernel.
//!
//! The conversion ratio is reduced to `up / down`. Output sample `i` sits at
//! input position `i * down / up`; its fractional part selects one of `up`
//! polyphase kernels. Every kernel is normalized to unit DC gain. Samples
//! outside the input are zero.
//!
//! The filter constants are fixed. Do not derive them from the input.

use super::AudioBuffer;

/// Sinc zero crossings on each side of the kernel center.
pub const ZERO_CROSSINGS: usize = 64;
/// Kaiser beta; 0.1102 * (81.3 - 8.7) ~= 8.0 gives about 81 dB stopband.
pub const KAISER_BETA: f64 = 8.0;
/// Cutoff as a fraction of the lower of the two Nyquist frequencies.
pub const ROLLOFF: f64 = 0.95;
/// Above this many phases kernels are evaluated per output sample
/// instead of tabulated.
const MAX_TABLE_PHASES: u64 = 4096;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half_sq = (x / 2.0) * (x / 2.0);
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= half_sq / ((k * k) as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

#[derive(Debug, Clone)]
struct Kernel {
    cutoff: f64,
    half_width: f64,
    half_taps: usize,
    i0_beta: f64,
}

impl Kernel {
    fn new(source_hz: u64, target_hz: u64) -> Self {
        let cutoff = ROLLOFF * (target_hz as f64 / source_hz as f64).min(1.0);
        let half_width = ZERO_CROSSINGS as f64 / cutoff;
        Self { cutoff, half_width, half_taps: half_width.ceil() as usize, i0_beta: bessel_i0(KAISER_BETA) }
    }

    fn tap(&self, t: f64) -> f64 {
        let x = t / self.half_width;
        if x.abs() >= 1.0 {
            return 0.0;
        }
        let window = bessel_i0(KAISER_BETA * (1.0 - x * x).sqrt()) / self.i0_beta;
        self.cutoff * sinc(self.cutoff * t) * window
    }

    /// Normalized taps for input samples `base - half_taps + 1 ..= base + half_taps`
    /// when the output position is `base + frac`.
    fn phase(&self, frac: f64) -> Vec<f64> {
        let n = self.half_taps as isize;
        let mut taps: Vec<f64> = (-n + 1..=n).map(|j| self.tap(frac - j as f64)).collect();
        let sum: f64 = taps.iter().sum();
        for t in &mut taps {
            *t /= sum;
        }
        taps
    }
}

/// Number of output samples: `round(len * target / source)`.
pub fn output_len(len: usize, source_hz: u32, target_hz: u32) -> usize {
    let num = len as u128 * u128::from(target_hz);
    let den = u128::from(source_hz);
    ((2 * num + den) / (2 * den)) as usize
}

/// Converts `buf` to `target_hz`. Equal rates return an exact copy.
pub fn resample(buf: &AudioBuffer, target_hz: u32) -> AudioBuffer {
    assert!(buf.sample_rate_hz > 0 && target_hz > 0, "sample rates must be positive");
    if buf.sample_rate_hz == target_hz {
        return buf.clone();
    }
    let source = u64::from(buf.sample_rate_hz);
    let target = u64::from(target_hz);
    let g = gcd(source, target);
    let (up, down) = (target / g, source / g);
    let kernel = Kernel::new(source, target);
    let table: Option<Vec<Vec<f64>>> =
        (up <= MAX_TABLE_PHASES).then(|| (0..up).map(|p| kernel.phase(p as f64 / up as f64)).collect());

    let input = &buf.samples;
    let n_in = input.len() as i64;
    let half = kernel.half_taps as i64;
    let n_out = output_len(input.len(), buf.sample_rate_hz, target_hz);
    let mut out = Vec::with_capacity(n_out);
    let mut scratch;
    for i in 0..n_out as u64 {
        let pos = i * down;
        let base = (pos / up) as i64;
        let phase = pos % up;
        let taps: &[f64] = match &table {
            Some(t) => &t[phase as usize],
            None => {
                scratch = kernel.phase(phase as f64 / up as f64);
                &scratch
            }
        };
        let first = base - half + 1;
        let lo = first.max(0);
        let hi = (base + half).min(n_in - 1);
        let mut acc = 0.0;
        if lo <= hi {
            let offset = (lo - first) as usize;
            for (x, w) in input[lo as usize..=hi as usize].iter().zip(&taps[offset..]) {
                acc += x * w;
            }
        }
        out.push(acc);
    }
    AudioBuffer::new(out, target_hz)
}

/// Half the kernel length in output samples, used to exclude edge ripple.
pub fn edge_samples(source_hz: u32, target_hz: u32) -> usize {
    if source_hz == target_hz {
        return 0;
    }
    let k = Kernel::new(u64::from(source_hz), u64::from(target_hz));
    (k.half_width * f64::from(target_hz) / f64::from(source_hz)).ceil() as usize + 1
}
