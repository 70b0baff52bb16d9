//! Shared signal-processing helpers.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Half-width, in taps, of the windowed-sinc fractional delay kernel.
pub const SINC_HALF_WIDTH: isize = 32;

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Periodic Hann window (the STFT convention).
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn kernel_window(x: f64) -> f64 {
    // Hann taper reaching zero just outside the outermost tap.
    let width = SINC_HALF_WIDTH as f64 + 1.0;
    if x.abs() >= width {
        0.0
    } else {
        0.5 * (1.0 + (PI * x / width).cos())
    }
}

/// Delays `x` by `delay` samples (may be fractional, must be >= 0) with a
/// windowed-sinc interpolator. Output has the same length as the input;
/// samples before the input starts are treated as zero.
pub fn fractional_delay(x: &[f64], delay: f64) -> Vec<f64> {
    assert!(
        delay >= 0.0 && delay.is_finite(),
        "delay must be finite and non-negative"
    );
    let whole = delay.floor();
    let frac = delay - whole;
    let whole = whole as isize;
    let taps: Vec<(isize, f64)> = (-SINC_HALF_WIDTH..=SINC_HALF_WIDTH)
        .map(|j| {
            let arg = j as f64 - frac;
            (j, sinc(arg) * kernel_window(arg))
        })
        .collect();
    let n = x.len() as isize;
    let mut y = vec![0.0; x.len()];
    for (i, out) in y.iter_mut().enumerate() {
        let base = i as isize - whole;
        // Contributions only exist while base - j lands inside the input.
        if base + SINC_HALF_WIDTH < 0 {
            continue;
        }
        let mut acc = 0.0;
        for &(j, c) in &taps {
            let k = base - j;
            if k >= 0 && k < n {
                acc += c * x[k as usize];
            }
        }
        *out = acc;
    }
    y
}

/// Filters `x` in the frequency domain with a real, zero-phase gain curve.
pub fn shape_spectrum(x: &[f64], fs: f64, gain: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = if k <= n / 2 { k } else { n - k };
        let f = bin as f64 * fs / n as f64;
        *c *= gain(f);
    }
    inv.process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter().map(|c| c.re * scale).collect()
}
