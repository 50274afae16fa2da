use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{DspError, EegChunk};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Taper {
    Hamming,
    Hann,
    Rectangular,
}

impl Taper {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        if len == 1 {
            return vec![1.0];
        }
        // Periodic (DFT-even) forms, as used for spectral analysis.
        let n = len as f64;
        (0..len)
            .map(|i| {
                let phase = 2.0 * PI * i as f64 / n;
                match self {
                    Taper::Hamming => 0.54 - 0.46 * phase.cos(),
                    Taper::Hann => 0.5 - 0.5 * phase.cos(),
                    Taper::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

/// Segmenting and padding parameters. Defaults: 5 s Hamming segments, 50%
/// overlap, each zero-padded to 10 s (0.1 Hz bins).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchConfig {
    pub segment_seconds: f64,
    pub overlap: f64,
    pub zero_pad_seconds: f64,
    pub taper: Taper,
}

impl Default for WelchConfig {
    fn default() -> Self {
        Self {
            segment_seconds: 5.0,
            overlap: 0.5,
            zero_pad_seconds: 10.0,
            taper: Taper::Hamming,
        }
    }
}

/// One-sided power spectral density per channel, in µV²/Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdEstimate {
    pub freqs: Vec<f64>,
    /// `power[channel][bin]`, aligned with `channel_labels`.
    pub power: Vec<Vec<f64>>,
    pub channel_labels: Vec<String>,
    /// Bin spacing in Hz: `sample_rate / nfft`.
    pub resolution: f64,
    /// Segment length in seconds.
    pub window_length: f64,
    pub n_segments: usize,
}

impl PsdEstimate {
    pub fn channel(&self, label: &str) -> Option<&[f64]> {
        self.channel_labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.power[i].as_slice())
    }

    pub fn nyquist(&self) -> f64 {
        *self.freqs.last().unwrap_or(&0.0)
    }

    /// Bin-wise mean over the named channels.
    pub fn mean_over(&self, labels: &[String]) -> Result<Vec<f64>, DspError> {
        let missing: Vec<String> = labels
            .iter()
            .filter(|l| self.channel(l).is_none())
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(DspError::MissingChannels(missing));
        }
        if labels.is_empty() {
            return Err(DspError::Config("empty channel set".into()));
        }
        let mut acc = vec![0.0; self.freqs.len()];
        for l in labels {
            for (a, p) in acc.iter_mut().zip(self.channel(l).unwrap()) {
                *a += p;
            }
        }
        acc.iter_mut().for_each(|a| *a /= labels.len() as f64);
        Ok(acc)
    }
}

/// Welch periodogram: mean-removed, tapered, overlapping segments, each
/// zero-padded to `zero_pad_seconds`, averaged. Density is scaled by the
/// taper's power (sum of squares), so integrating over a spectral line
/// recovers that component's variance.
pub fn welch_psd(window: &EegChunk, config: &WelchConfig) -> Result<PsdEstimate, DspError> {
    let fs = window.sample_rate();
    let seg_len = (config.segment_seconds * fs).round() as usize;
    let nfft = (config.zero_pad_seconds * fs).round() as usize;
    if seg_len < 2 {
        return Err(DspError::InvalidParameter(format!(
            "segment of {} s is too short at {fs} Hz",
            config.segment_seconds
        )));
    }
    if !(0.0..1.0).contains(&config.overlap) {
        return Err(DspError::InvalidParameter(format!(
            "overlap must lie in [0, 1), got {}",
            config.overlap
        )));
    }
    if nfft < seg_len {
        return Err(DspError::InvalidParameter(format!(
            "zero-padded length {} s is shorter than the segment {} s",
            config.zero_pad_seconds, config.segment_seconds
        )));
    }
    let n = window.n_samples();
    if n < seg_len {
        return Err(DspError::InsufficientData {
            needed: seg_len,
            got: n,
        });
    }
    let step = ((seg_len as f64) * (1.0 - config.overlap)).round().max(1.0) as usize;
    let n_segments = (n - seg_len) / step + 1;

    let taper = config.taper.coefficients(seg_len);
    let taper_power: f64 = taper.iter().map(|w| w * w).sum();
    let n_bins = nfft / 2 + 1;
    let scale = 1.0 / (fs * taper_power * n_segments as f64);

    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];

    let power = window
        .samples()
        .iter()
        .map(|row| {
            let mut acc = vec![0.0; n_bins];
            for s in 0..n_segments {
                let seg = &row[s * step..s * step + seg_len];
                let mean = seg.iter().sum::<f64>() / seg_len as f64;
                for (b, (x, w)) in buf.iter_mut().zip(seg.iter().zip(&taper)) {
                    *b = Complex::new((x - mean) * w, 0.0);
                }
                buf[seg_len..].iter_mut().for_each(|b| *b = Complex::new(0.0, 0.0));
                fft.process_with_scratch(&mut buf, &mut scratch);
                for (a, c) in acc.iter_mut().zip(&buf[..n_bins]) {
                    *a += c.norm_sqr();
                }
            }
            let nyquist_bin = if nfft.is_multiple_of(2) { Some(n_bins - 1) } else { None };
            acc.iter_mut().enumerate().for_each(|(k, a)| {
                let one_sided = if k == 0 || Some(k) == nyquist_bin { 1.0 } else { 2.0 };
                *a *= scale * one_sided;
            });
            acc
        })
        .collect();

    Ok(PsdEstimate {
        freqs: (0..n_bins).map(|k| k as f64 * fs / nfft as f64).collect(),
        power,
        channel_labels: window.channel_labels().to_vec(),
        resolution: fs / nfft as f64,
        window_length: seg_len as f64 / fs,
        n_segments,
    })
}

/// Integral of the piecewise-linear interpolant of `density` over `[low, high]`.
///
/// Grid points strictly inside the band get full trapezoid weight; the band
/// edges are interpolated, so an edge on a grid point contributes that bin's
/// half-weight to each adjacent band and the integral is exactly additive
/// over adjacent bands.
pub fn integrate_band(freqs: &[f64], density: &[f64], low: f64, high: f64) -> f64 {
    debug_assert_eq!(freqs.len(), density.len());
    if freqs.len() < 2 || high <= low {
        return 0.0;
    }
    let df = freqs[1] - freqs[0];
    let value_at = |f: f64| {
        let pos = ((f - freqs[0]) / df).clamp(0.0, (freqs.len() - 1) as f64);
        let i = (pos.floor() as usize).min(freqs.len() - 2);
        let t = pos - i as f64;
        density[i] * (1.0 - t) + density[i + 1] * t
    };
    // Knots: low, every grid point strictly inside, high.
    let first = ((low - freqs[0]) / df).floor() as isize + 1;
    let last = ((high - freqs[0]) / df).ceil() as isize - 1;
    let mut prev_f = low;
    let mut prev_v = value_at(low);
    let mut total = 0.0;
    for k in first.max(0)..=last.min(freqs.len() as isize - 1) {
        let f = freqs[k as usize];
        if f <= low || f >= high {
            continue;
        }
        let v = density[k as usize];
        total += 0.5 * (prev_v + v) * (f - prev_f);
        prev_f = f;
        prev_v = v;
    }
    total + 0.5 * (prev_v + value_at(high)) * (high - prev_f)
}
