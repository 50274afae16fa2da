//! Individual alpha frequency from an eyes-closed recording, and the
//! per-user alpha/theta ranges derived from it.
//!
//! The channel-averaged posterior PSD is smoothed with a Savitzky-Golay
//! filter, which also yields its first derivative. The peak is the largest
//! derivative zero crossing (+ to -) inside the search window whose height
//! clears the aperiodic background by the prominence floor. The background is
//! a straight-line fit of log power against log frequency over the bound
//! span. Each alpha bound is where the smoothed power on that flank drops to
//! within 5% of the peak-trough range above the trough, the trough being the
//! lowest point reached walking outward before meeting higher ground or the
//! edge of the bound span. The reported peak frequency is the vertex of a
//! parabola fitted to the smoothed top, which is steadier than the raw
//! derivative crossing when the top is broad.

mod savgol;

pub use savgol::SavitzkyGolay;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{welch_psd, BandName, BandRange, ChannelSet, DspError, EegChunk, WelchConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IafError {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate band: alpha lower bound {0} Hz leaves no room for a 4 Hz theta band")]
    DegenerateBand(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IafQuality {
    PeakFound,
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IafEstimate {
    pub paf: f64,
    pub cog: f64,
    pub f_low: f64,
    pub f_high: f64,
    pub quality: IafQuality,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndividualBands {
    pub theta: BandRange,
    pub alpha: BandRange,
}

pub const THETA_WIDTH_HZ: f64 = 4.0;
pub const FALLBACK_ALPHA: (f64, f64) = (8.0, 13.0);

impl IndividualBands {
    /// Canonical alpha 8-13 Hz with theta 4-8 Hz.
    pub fn fallback() -> Self {
        derive_bands(&IafEstimate {
            paf: 10.5,
            cog: 10.5,
            f_low: FALLBACK_ALPHA.0,
            f_high: FALLBACK_ALPHA.1,
            quality: IafQuality::Fallback,
        })
        .expect("fallback bounds are valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IafConfig {
    pub search: (f64, f64),
    /// Frequency span the flanking troughs and bounds may extend into.
    pub bound_span: (f64, f64),
    pub sg_window: usize,
    pub sg_order: usize,
    /// Relative height the peak must clear above the fitted 1/f background.
    pub prominence: f64,
    /// Fraction of the peak-trough range above the trough that ends the peak.
    pub bound_floor: f64,
    pub min_duration: f64,
    pub welch: WelchConfig,
}

impl Default for IafConfig {
    fn default() -> Self {
        Self {
            search: (7.0, 13.0),
            bound_span: (5.0, 17.0),
            sg_window: 11,
            sg_order: 5,
            prominence: 0.5,
            bound_floor: 0.05,
            min_duration: 60.0,
            welch: WelchConfig::default(),
        }
    }
}

/// Drops `trim` seconds from both ends.
pub fn trim_edges(recording: &EegChunk, trim: f64) -> Result<EegChunk, IafError> {
    if trim < 0.0 {
        return Err(IafError::Config(format!("trim must be non-negative, got {trim}")));
    }
    if trim == 0.0 {
        return Ok(recording.clone());
    }
    let n_trim = (trim * recording.sample_rate()).round() as usize;
    let n = recording.n_samples();
    if n <= 2 * n_trim {
        return Err(IafError::InsufficientData(format!(
            "recording of {} s is not longer than twice the {trim} s trim",
            recording.duration()
        )));
    }
    Ok(recording.slice(n_trim, n - n_trim)?)
}

pub fn estimate_iaf(
    recording: &EegChunk,
    posterior: &ChannelSet,
    config: &IafConfig,
) -> Result<IafEstimate, IafError> {
    if posterior.labels.is_empty() {
        return Err(IafError::Config("posterior channel set is empty".into()));
    }
    if recording.duration() + 1e-9 < config.min_duration {
        return Err(IafError::InsufficientData(format!(
            "IAF needs at least {} s, got {} s",
            config.min_duration,
            recording.duration()
        )));
    }
    let (lo_hz, hi_hz) = config.search;
    if !(lo_hz > 0.0 && lo_hz < hi_hz) || config.bound_span.0 > lo_hz || config.bound_span.1 < hi_hz {
        return Err(IafError::Config(format!(
            "search window {lo_hz}-{hi_hz} Hz must lie inside bound span {:?}",
            config.bound_span
        )));
    }
    let sg = SavitzkyGolay::new(config.sg_window, config.sg_order).ok_or_else(|| {
        IafError::Config(format!(
            "Savitzky-Golay window {} must be odd and exceed order {}",
            config.sg_window, config.sg_order
        ))
    })?;

    let psd = welch_psd(&recording.select(&posterior.labels)?, &config.welch)?;
    let mean = psd.mean_over(&posterior.labels)?;
    let smooth = sg.smooth(&mean);
    let slope = sg.derivative(&mean);
    let freqs = &psd.freqs;
    let df = psd.resolution;

    let bin = |f: f64| ((f - freqs[0]) / df).round().clamp(0.0, (freqs.len() - 1) as f64) as usize;
    let (span_lo, span_hi) = (bin(config.bound_span.0), bin(config.bound_span.1));
    let (search_lo, search_hi) = (bin(lo_hz), bin(hi_hz));

    let background = PowerLawFit::new(&freqs[span_lo..=span_hi], &smooth[span_lo..=span_hi]);
    let mut best: Option<Peak> = None;
    for j in search_lo..search_hi {
        if !(slope[j] > 0.0 && slope[j + 1] <= 0.0) {
            continue;
        }
        let top = if smooth[j + 1] > smooth[j] { j + 1 } else { j };
        let floor = (1.0 + config.prominence) * background.at(freqs[top]);
        if !(smooth[top] > 0.0 && smooth[top] >= floor) {
            continue;
        }
        let left = flank_base(&smooth, top, span_lo);
        let right = flank_base(&smooth, top, span_hi);
        // Sub-bin location of the derivative zero crossing.
        let frac = slope[j] / (slope[j] - slope[j + 1]);
        let crossing = freqs[j] + frac * df;
        let freq = refine_vertex(freqs, &smooth, top, &background).unwrap_or(crossing);
        let peak = Peak {
            freq: freq.clamp(lo_hz, hi_hz),
            top,
            left,
            right,
        };
        if best.as_ref().is_none_or(|b| smooth[top] > smooth[b.top]) {
            best = Some(peak);
        }
    }

    let Some(peak) = best else {
        return Ok(fallback_estimate(freqs, &smooth, config));
    };

    let height = smooth[peak.top];
    let f_low = flank_crossing(freqs, &smooth, peak.top, peak.left, height, config.bound_floor);
    let f_high = flank_crossing(freqs, &smooth, peak.top, peak.right, height, config.bound_floor);
    let cog = center_of_gravity(freqs, &smooth, f_low, f_high).unwrap_or(peak.freq);
    Ok(IafEstimate {
        paf: peak.freq,
        cog,
        f_low: f_low.min(peak.freq - df / 2.0),
        f_high: f_high.max(peak.freq + df / 2.0),
        quality: IafQuality::PeakFound,
    })
}

struct Peak {
    freq: f64,
    top: usize,
    left: usize,
    right: usize,
}

/// `power = exp(intercept) * f^slope`, least squares in log-log space.
struct PowerLawFit {
    intercept: f64,
    slope: f64,
}

impl PowerLawFit {
    fn new(freqs: &[f64], power: &[f64]) -> Self {
        let pts: Vec<(f64, f64)> = freqs
            .iter()
            .zip(power)
            .filter(|(f, _)| **f > 0.0)
            .map(|(f, p)| (f.ln(), p.max(f64::MIN_POSITIVE).ln()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        Self {
            intercept: my - slope * mx,
            slope,
        }
    }

    fn at(&self, f: f64) -> f64 {
        (self.intercept + self.slope * f.ln()).exp()
    }
}

/// Vertex of a least-squares parabola through the smoothed peak, fitted over
/// a window centred on `top` that reaches the nearer half-height point
/// (height measured above the background). Re-centred once on the first
/// vertex. `None` when the top is not concave.
fn refine_vertex(freqs: &[f64], s: &[f64], top: usize, background: &PowerLawFit) -> Option<f64> {
    let excess = |i: usize| s[i] - background.at(freqs[i]);
    let half = 0.5 * excess(top);
    let reach = |step: isize| {
        let mut k = 0usize;
        let mut i = top as isize;
        while i + step >= 0 && ((i + step) as usize) < s.len() && excess((i + step) as usize) > half {
            i += step;
            k += 1;
        }
        k
    };
    let width = reach(-1).min(reach(1)).max(3);
    let mut center = top;
    let mut vertex = None;
    for _ in 0..2 {
        if center < width || center + width >= s.len() {
            break;
        }
        let idx = center - width..=center + width;
        let x0 = freqs[center];
        let rows: Vec<[f64; 3]> = idx.clone().map(|i| [1.0, freqs[i] - x0, (freqs[i] - x0).powi(2)]).collect();
        let a = nalgebra::DMatrix::from_fn(rows.len(), 3, |r, c| rows[r][c]);
        let y = nalgebra::DVector::from_iterator(rows.len(), idx.map(|i| s[i]));
        let coef = (a.transpose() * &a).lu().solve(&(a.transpose() * y))?;
        if !(coef[2] < 0.0) {
            return vertex;
        }
        let v = x0 - coef[1] / (2.0 * coef[2]);
        let lo = freqs[center - width];
        let hi = freqs[center + width];
        if !(lo..=hi).contains(&v) {
            return vertex;
        }
        vertex = Some(v);
        let df = freqs[1] - freqs[0];
        center = ((v - freqs[0]) / df).round() as usize;
    }
    vertex
}

/// Lowest point between `top` and either the first higher point or `limit`,
/// walking towards `limit`.
fn flank_base(s: &[f64], top: usize, limit: usize) -> usize {
    let step: isize = if limit < top { -1 } else { 1 };
    let mut base = top;
    let mut i = top as isize;
    while i != limit as isize {
        i += step;
        let v = s[i as usize];
        if v > s[top] {
            break;
        }
        if v < s[base] {
            base = i as usize;
        }
    }
    base
}

/// Frequency between `top` and `trough` where power first falls to
/// `trough + floor * (peak - trough)`, linearly interpolated between bins.
fn flank_crossing(freqs: &[f64], s: &[f64], top: usize, trough: usize, height: f64, floor: f64) -> f64 {
    let level = s[trough] + floor * (height - s[trough]);
    let step: isize = if trough < top { -1 } else { 1 };
    let mut i = top as isize;
    while i != trough as isize {
        let next = (i + step) as usize;
        if s[next] <= level {
            let cur = i as usize;
            let t = if s[cur] != s[next] {
                ((s[cur] - level) / (s[cur] - s[next])).clamp(0.0, 1.0)
            } else {
                1.0
            };
            return freqs[cur] + t * (freqs[next] - freqs[cur]);
        }
        i += step;
    }
    freqs[trough]
}

fn center_of_gravity(freqs: &[f64], s: &[f64], low: f64, high: f64) -> Option<f64> {
    let (num, den) = freqs
        .iter()
        .zip(s)
        .filter(|(f, _)| **f >= low && **f <= high)
        .fold((0.0, 0.0), |(n, d), (f, p)| (n + f * p.max(0.0), d + p.max(0.0)));
    (den > 0.0).then(|| num / den)
}

fn fallback_estimate(freqs: &[f64], smooth: &[f64], config: &IafConfig) -> IafEstimate {
    let (f_low, f_high) = FALLBACK_ALPHA;
    let cog = center_of_gravity(freqs, smooth, f_low, f_high).unwrap_or(0.5 * (f_low + f_high));
    IafEstimate {
        paf: cog.clamp(config.search.0, config.search.1),
        cog,
        f_low,
        f_high,
        quality: IafQuality::Fallback,
    }
}

/// Alpha is `[f_low, f_high]`; theta is the 4 Hz directly beneath it.
pub fn derive_bands(iaf: &IafEstimate) -> Result<IndividualBands, IafError> {
    if !(iaf.f_low > THETA_WIDTH_HZ) {
        return Err(IafError::DegenerateBand(iaf.f_low));
    }
    let alpha = BandRange::new(BandName::Alpha, iaf.f_low, iaf.f_high)?;
    let theta = BandRange::new(BandName::Theta, iaf.f_low - THETA_WIDTH_HZ, iaf.f_low)?;
    Ok(IndividualBands { theta, alpha })
}
