//! Gaussian noise with a prescribed one-sided spectral density.

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// `n` samples at `fs` Hz whose expected one-sided PSD is `density(f)` (units²/Hz).
///
/// Each positive-frequency bin gets an independent complex Gaussian
/// coefficient scaled to the target density; the mirror half is the
/// conjugate so the inverse transform is real. DC is left at zero.
pub fn shaped_noise<R: Rng + ?Sized>(
    n: usize,
    fs: f64,
    density: impl Fn(f64) -> f64,
    rng: &mut R,
) -> Vec<f64> {
    if n < 2 {
        return vec![0.0; n];
    }
    let mut spectrum = vec![Complex::new(0.0, 0.0); n];
    let df = fs / n as f64;
    for k in 1..=n / 2 {
        let f = k as f64 * df;
        let s = density(f).max(0.0);
        let (re, im): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        if n.is_multiple_of(2) && k == n / 2 {
            // Nyquist bin must be real; carries the same expected power.
            spectrum[k] = Complex::new(re * (s * n as f64 * fs / 2.0).sqrt(), 0.0);
        } else {
            let sigma = (s * n as f64 * fs / 4.0).sqrt();
            spectrum[k] = Complex::new(re * sigma, im * sigma);
            spectrum[n - k] = spectrum[k].conj();
        }
    }
    FftPlanner::<f64>::new().plan_fft_inverse(n).process(&mut spectrum);
    spectrum.iter().map(|c| c.re / n as f64).collect()
}

/// `1/f^exponent` noise rescaled to exactly `rms` (sample standard deviation).
pub fn power_law_noise<R: Rng + ?Sized>(n: usize, fs: f64, exponent: f64, rms: f64, rng: &mut R) -> Vec<f64> {
    let mut x = shaped_noise(n, fs, |f| f.powf(-exponent), rng);
    rescale_rms(&mut x, rms);
    x
}

pub(crate) fn rescale_rms(x: &mut [f64], rms: f64) {
    if x.is_empty() {
        return;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
    let gain = if var > 0.0 { rms / var.sqrt() } else { 0.0 };
    x.iter_mut().for_each(|v| *v = (*v - mean) * gain);
}
