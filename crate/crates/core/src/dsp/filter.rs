//! Recursive filters realized as cascades of second-order sections.
//!
//! Coefficients follow the bilinear-transform cookbook forms with the cutoff
//! pre-warped, so a cascade of high-/low-pass sections with Butterworth pole
//! Qs is an exact digital Butterworth response. Sections run in transposed
//! direct form II and keep their two delay registers per channel, which is what
//! lets a session filter chunk by chunk without seams.

use std::f64::consts::PI;

use super::{DspError, EegChunk};

/// Which response to build.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterKind {
    /// Second-order notch centred on `center_hz` with quality factor `q`.
    Notch { center_hz: f64, q: f64 },
    /// Butterworth high-pass at `low_hz` cascaded with a Butterworth low-pass
    /// at `high_hz`. Orders must be even.
    BandPass {
        low_hz: f64,
        high_hz: f64,
        high_pass_order: usize,
        low_pass_order: usize,
    },
}

impl FilterKind {
    pub fn mains_notch() -> Self {
        FilterKind::Notch {
            center_hz: 50.0,
            q: 30.0,
        }
    }

    pub fn eeg_band_pass() -> Self {
        FilterKind::BandPass {
            low_hz: 1.0,
            high_hz: 70.0,
            high_pass_order: 4,
            low_pass_order: 8,
        }
    }
}

/// One normalized second-order section: `b0 + b1 z^-1 + b2 z^-2` over `1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn from_raw(b0: f64, b1: f64, b2: f64, a0: f64, a1: f64, a2: f64) -> Self {
        Self {
            b: [b0 / a0, b1 / a0, b2 / a0],
            a: [a1 / a0, a2 / a0],
        }
    }

    fn notch(fs: f64, f0: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * f0 / fs;
        let alpha = w0.sin() / (2.0 * q);
        let cos = w0.cos();
        Self::from_raw(1.0, -2.0 * cos, 1.0, 1.0 + alpha, -2.0 * cos, 1.0 - alpha)
    }

    fn low_pass(fs: f64, f0: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * f0 / fs;
        let alpha = w0.sin() / (2.0 * q);
        let cos = w0.cos();
        let b1 = 1.0 - cos;
        Self::from_raw(b1 / 2.0, b1, b1 / 2.0, 1.0 + alpha, -2.0 * cos, 1.0 - alpha)
    }

    fn high_pass(fs: f64, f0: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * f0 / fs;
        let alpha = w0.sin() / (2.0 * q);
        let cos = w0.cos();
        let b1 = 1.0 + cos;
        Self::from_raw(b1 / 2.0, -b1, b1 / 2.0, 1.0 + alpha, -2.0 * cos, 1.0 - alpha)
    }

    /// Both poles strictly inside the unit circle (Jury conditions for a quadratic).
    pub fn is_stable(&self) -> bool {
        let [a1, a2] = self.a;
        a2.abs() < 1.0 && a1.abs() < 1.0 + a2
    }

    /// Complex gain magnitude at `freq` Hz.
    pub fn magnitude(&self, freq: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * freq / fs;
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num_re = self.b[0] + self.b[1] * c1 + self.b[2] * c2;
        let num_im = self.b[1] * s1 + self.b[2] * s2;
        let den_re = 1.0 + self.a[0] * c1 + self.a[1] * c2;
        let den_im = self.a[0] * s1 + self.a[1] * s2;
        (num_re.hypot(num_im)) / (den_re.hypot(den_im))
    }

    #[inline]
    fn step(&self, x: f64, z: &mut [f64; 2]) -> f64 {
        let y = self.b[0] * x + z[0];
        z[0] = self.b[1] * x - self.a[0] * y + z[1];
        z[1] = self.b[2] * x - self.a[1] * y;
        y
    }
}

/// Butterworth pole-pair quality factors for an even `order`.
fn butterworth_qs(order: usize) -> Vec<f64> {
    (0..order / 2)
        .map(|k| 1.0 / (2.0 * ((2 * k + 1) as f64 * PI / (2 * order) as f64).sin()))
        .collect()
}

/// A designed filter: its parameters, the rate it was designed for, and its sections.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub sample_rate: f64,
    pub sections: Vec<Biquad>,
}

impl FilterSpec {
    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(Biquad::is_stable)
    }

    pub fn magnitude(&self, freq: f64) -> f64 {
        self.sections
            .iter()
            .map(|s| s.magnitude(freq, self.sample_rate))
            .product()
    }
}

pub fn design_filter(kind: FilterKind, sample_rate: f64) -> Result<FilterSpec, DspError> {
    if !(sample_rate > 0.0) {
        return Err(DspError::InvalidParameter(format!(
            "sample rate must be positive, got {sample_rate}"
        )));
    }
    let nyquist = sample_rate / 2.0;
    let check_cutoff = |name: &str, f: f64| {
        if f > 0.0 && f < nyquist {
            Ok(())
        } else {
            Err(DspError::InvalidParameter(format!(
                "{name} {f} Hz must lie strictly inside (0, {nyquist}) Hz"
            )))
        }
    };
    let sections = match kind {
        FilterKind::Notch { center_hz, q } => {
            check_cutoff("notch centre", center_hz)?;
            if !(q > 0.0) {
                return Err(DspError::InvalidParameter(format!("notch Q must be positive, got {q}")));
            }
            vec![Biquad::notch(sample_rate, center_hz, q)]
        }
        FilterKind::BandPass {
            low_hz,
            high_hz,
            high_pass_order,
            low_pass_order,
        } => {
            check_cutoff("band-pass lower edge", low_hz)?;
            check_cutoff("band-pass upper edge", high_hz)?;
            if low_hz >= high_hz {
                return Err(DspError::InvalidParameter(format!(
                    "band-pass lower edge {low_hz} Hz must be below upper edge {high_hz} Hz"
                )));
            }
            for order in [high_pass_order, low_pass_order] {
                if order == 0 || order % 2 != 0 {
                    return Err(DspError::InvalidParameter(format!(
                        "filter order must be even and positive, got {order}"
                    )));
                }
            }
            let mut sections: Vec<Biquad> = butterworth_qs(high_pass_order)
                .into_iter()
                .map(|q| Biquad::high_pass(sample_rate, low_hz, q))
                .collect();
            sections.extend(
                butterworth_qs(low_pass_order)
                    .into_iter()
                    .map(|q| Biquad::low_pass(sample_rate, high_hz, q)),
            );
            sections
        }
    };
    Ok(FilterSpec {
        kind,
        sample_rate,
        sections,
    })
}

/// A cascade of filter specs with per-channel state that persists across chunks.
#[derive(Debug, Clone)]
pub struct StreamingFilter {
    sample_rate: f64,
    sections: Vec<Biquad>,
    // state[channel][section]
    state: Vec<Vec<[f64; 2]>>,
}

impl StreamingFilter {
    pub fn new(specs: &[FilterSpec], n_channels: usize) -> Result<Self, DspError> {
        let sample_rate = specs
            .first()
            .map(|s| s.sample_rate)
            .ok_or_else(|| DspError::Config("no filter specs given".into()))?;
        if let Some(s) = specs.iter().find(|s| s.sample_rate != sample_rate) {
            return Err(DspError::RateMismatch {
                expected: sample_rate,
                got: s.sample_rate,
            });
        }
        let sections: Vec<Biquad> = specs.iter().flat_map(|s| s.sections.iter().copied()).collect();
        Ok(Self {
            sample_rate,
            state: vec![vec![[0.0; 2]; sections.len()]; n_channels],
            sections,
        })
    }

    pub fn reset(&mut self) {
        self.state
            .iter_mut()
            .for_each(|ch| ch.iter_mut().for_each(|z| *z = [0.0; 2]));
    }

    fn check(&self, chunk: &EegChunk) -> Result<(), DspError> {
        if chunk.sample_rate() != self.sample_rate {
            return Err(DspError::RateMismatch {
                expected: self.sample_rate,
                got: chunk.sample_rate(),
            });
        }
        if chunk.n_channels() != self.state.len() {
            return Err(DspError::Config(format!(
                "filter configured for {} channels, chunk has {}",
                self.state.len(),
                chunk.n_channels()
            )));
        }
        Ok(())
    }

    /// Filters `chunk`, continuing from whatever state previous chunks left behind.
    pub fn process(&mut self, chunk: &EegChunk) -> Result<EegChunk, DspError> {
        self.check(chunk)?;
        let sections = &self.sections;
        let out = chunk
            .samples()
            .iter()
            .zip(self.state.iter_mut())
            .map(|(row, state)| {
                row.iter()
                    .map(|&x| {
                        sections
                            .iter()
                            .zip(state.iter_mut())
                            .fold(x, |acc, (s, z)| s.step(acc, z))
                    })
                    .collect()
            })
            .collect();
        Ok(chunk.with_samples(out))
    }

    /// Warms the state with an odd reflection of the first `seconds` of `chunk`
    /// so the first real samples do not ring. Outputs are discarded.
    pub fn prime(&mut self, chunk: &EegChunk, seconds: f64) -> Result<(), DspError> {
        self.check(chunk)?;
        let n = chunk.n_samples();
        let len = ((seconds * self.sample_rate).round() as usize).min(n.saturating_sub(1));
        for (row, state) in chunk.samples().iter().zip(self.state.iter_mut()) {
            let x0 = row[0];
            for k in (1..=len).rev() {
                let x = 2.0 * x0 - row[k];
                self.sections
                    .iter()
                    .zip(state.iter_mut())
                    .fold(x, |acc, (s, z)| s.step(acc, z));
            }
        }
        Ok(())
    }
}

/// One-shot filtering from zero initial state.
pub fn apply_filter(chunk: &EegChunk, spec: &FilterSpec) -> Result<EegChunk, DspError> {
    StreamingFilter::new(std::slice::from_ref(spec), chunk.n_channels())?.process(chunk)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 500.0;

    fn one_channel(x: Vec<f64>) -> EegChunk {
        EegChunk::new(0.0, FS, vec!["Cz".into()], vec![x]).unwrap()
    }

    fn sine(freq: f64, seconds: f64) -> Vec<f64> {
        (0..(seconds * FS) as usize)
            .map(|n| (2.0 * PI * freq * n as f64 / FS).sin())
            .collect()
    }

    /// Least-squares fit of `a sin + b cos + c` at a known frequency; returns amplitude.
    fn fitted_amplitude(y: &[f64], freq: f64, offset: usize) -> f64 {
        let mut ata = [[0.0f64; 3]; 3];
        let mut aty = [0.0f64; 3];
        for (i, &v) in y.iter().enumerate() {
            let t = (offset + i) as f64 / FS;
            let row = [(2.0 * PI * freq * t).sin(), (2.0 * PI * freq * t).cos(), 1.0];
            for r in 0..3 {
                aty[r] += row[r] * v;
                for c in 0..3 {
                    ata[r][c] += row[r] * row[c];
                }
            }
        }
        // Gaussian elimination on the 3x3 normal equations.
        for p in 0..3 {
            for r in p + 1..3 {
                let f = ata[r][p] / ata[p][p];
                for c in p..3 {
                    ata[r][c] -= f * ata[p][c];
                }
                aty[r] -= f * aty[p];
            }
        }
        let mut sol = [0.0; 3];
        for r in (0..3).rev() {
            let s: f64 = (r + 1..3).map(|c| ata[r][c] * sol[c]).sum();
            sol[r] = (aty[r] - s) / ata[r][r];
        }
        sol[0].hypot(sol[1])
    }

    fn steady_gain_db(spec: &FilterSpec, freq: f64) -> f64 {
        let x = sine(freq, 30.0);
        let y = apply_filter(&one_channel(x), spec).unwrap().into_samples().remove(0);
        let tail_start = y.len() - (5.0 * FS) as usize;
        20.0 * fitted_amplitude(&y[tail_start..], freq, tail_start).log10()
    }

    #[test]
    fn notch_passes_dc() {
        let spec = design_filter(FilterKind::mains_notch(), FS).unwrap();
        let y = apply_filter(&one_channel(vec![1.0; 5000]), &spec).unwrap();
        assert!((y.samples()[0][4999] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn notch_attenuates_mains_by_30_db() {
        let spec = design_filter(FilterKind::mains_notch(), FS).unwrap();
        assert!(spec.is_stable());
        assert!(steady_gain_db(&spec, 50.0) <= -30.0);
    }

    #[test]
    fn band_pass_rejects_100_hz_and_passes_10_hz() {
        let spec = design_filter(FilterKind::eeg_band_pass(), FS).unwrap();
        assert!(spec.is_stable());
        assert!(steady_gain_db(&spec, 100.0) <= -20.0);
        assert!(steady_gain_db(&spec, 10.0).abs() <= 1.0);
    }

    #[test]
    fn fitted_gain_agrees_with_analytic_response() {
        let spec = design_filter(FilterKind::eeg_band_pass(), FS).unwrap();
        for f in [5.0, 40.0, 80.0] {
            let analytic = 20.0 * spec.magnitude(f).log10();
            assert!((steady_gain_db(&spec, f) - analytic).abs() < 0.05, "{f} Hz");
        }
    }

    #[test]
    fn cutoff_at_or_above_nyquist_is_rejected() {
        let notch = FilterKind::Notch {
            center_hz: 250.0,
            q: 30.0,
        };
        assert!(matches!(design_filter(notch, FS), Err(DspError::InvalidParameter(_))));
        let bp = FilterKind::BandPass {
            low_hz: 1.0,
            high_hz: 300.0,
            high_pass_order: 2,
            low_pass_order: 2,
        };
        assert!(matches!(design_filter(bp, FS), Err(DspError::InvalidParameter(_))));
        let inverted = FilterKind::BandPass {
            low_hz: 30.0,
            high_hz: 10.0,
            high_pass_order: 2,
            low_pass_order: 2,
        };
        assert!(design_filter(inverted, FS).is_err());
    }

    #[test]
    fn zero_in_zero_out() {
        let spec = design_filter(FilterKind::eeg_band_pass(), FS).unwrap();
        let y = apply_filter(&one_channel(vec![0.0; 1000]), &spec).unwrap();
        assert!(y.samples()[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_matches_hand_recurrence() {
        let spec = design_filter(FilterKind::mains_notch(), FS).unwrap();
        let Biquad { b, a } = spec.sections[0];
        let mut x = vec![0.0; 10];
        x[0] = 1.0;
        // y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]
        let mut expected = vec![0.0; 10];
        for n in 0..10 {
            let xm = |k: usize| if n >= k { x[n - k] } else { 0.0 };
            let ym = |k: usize, e: &Vec<f64>| if n >= k { e[n - k] } else { 0.0 };
            expected[n] = b[0] * xm(0) + b[1] * xm(1) + b[2] * xm(2)
                - a[0] * ym(1, &expected)
                - a[1] * ym(2, &expected);
        }
        let y = apply_filter(&one_channel(x), &spec).unwrap();
        for (got, want) in y.samples()[0].iter().zip(&expected) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn rate_mismatch_is_config_error() {
        let spec = design_filter(FilterKind::mains_notch(), 1000.0).unwrap();
        assert!(matches!(
            apply_filter(&one_channel(vec![0.0; 4]), &spec),
            Err(DspError::RateMismatch { .. })
        ));
    }

    #[test]
    fn priming_suppresses_step_transient() {
        let spec = design_filter(FilterKind::eeg_band_pass(), FS).unwrap();
        let x: Vec<f64> = sine(10.0, 4.0).iter().map(|v| v + 40.0).collect();
        let chunk = one_channel(x);
        let cold = apply_filter(&chunk, &spec).unwrap();
        let mut warm = StreamingFilter::new(&[spec], 1).unwrap();
        warm.prime(&chunk, 2.0).unwrap();
        let warm = warm.process(&chunk).unwrap();
        let peak = |c: &EegChunk| c.samples()[0][..250].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak(&warm) < peak(&cold));
        assert!(peak(&warm) < 5.0);
    }
}
