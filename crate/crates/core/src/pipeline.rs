//! Online processing for one session: streaming notch and band-pass
//! filtering, tumbling analysis windows, Welch band power, and the
//! adaptation engine.

use thiserror::Error;

use crate::adapt::{AdaptError, AdaptationDecision, AdaptationEngine, BandPowerWindow, EngineConfig};
use crate::dsp::{
    band_power, design_filter, welch_psd, ChannelSet, DspError, EegChunk, FilterKind, StreamingFilter,
    WelchConfig,
};
use crate::iaf::IndividualBands;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Adapt(#[from] AdaptError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("sequencing error: {0}")]
    Sequencing(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub sample_rate: f64,
    pub channel_labels: Vec<String>,
    pub notch: FilterKind,
    pub band_pass: FilterKind,
    pub welch: WelchConfig,
    pub window_seconds: f64,
    pub bands: IndividualBands,
    pub alpha_channels: ChannelSet,
    pub theta_channels: ChannelSet,
    /// Length of the reflected lead-in used to settle the filters.
    pub prime_seconds: f64,
}

impl PipelineConfig {
    pub fn new(sample_rate: f64, channel_labels: Vec<String>, bands: IndividualBands) -> Self {
        Self {
            sample_rate,
            channel_labels,
            notch: FilterKind::mains_notch(),
            band_pass: FilterKind::eeg_band_pass(),
            welch: WelchConfig::default(),
            window_seconds: 20.0,
            bands,
            alpha_channels: ChannelSet::alpha_posterior(),
            theta_channels: ChannelSet::theta_frontal(),
            prime_seconds: 2.0,
        }
    }

    pub fn window_samples(&self) -> usize {
        (self.window_seconds * self.sample_rate).round() as usize
    }
}

/// Turns a chunk stream into back-to-back band-power windows.
#[derive(Debug, Clone)]
pub struct WindowPipeline {
    config: PipelineConfig,
    filter: StreamingFilter,
    primed: bool,
    // Channels needed for band power, as indices into the montage.
    keep: Vec<usize>,
    keep_labels: Vec<String>,
    buffer: Vec<Vec<f64>>,
    origin: Option<f64>,
    last_chunk_start: Option<f64>,
    next_index: u64,
}

impl WindowPipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        if !(config.window_seconds > 0.0) {
            return Err(PipelineError::Config(format!(
                "window length must be positive, got {}",
                config.window_seconds
            )));
        }
        let missing: Vec<String> = config
            .alpha_channels
            .union(&config.theta_channels)
            .missing_from(&config.channel_labels);
        if !missing.is_empty() {
            return Err(DspError::MissingChannels(missing).into());
        }
        let needed = config.alpha_channels.union(&config.theta_channels).labels;
        let keep: Vec<usize> = needed
            .iter()
            .map(|l| config.channel_labels.iter().position(|c| c == l).unwrap())
            .collect();
        let specs = [
            design_filter(config.notch, config.sample_rate)?,
            design_filter(config.band_pass, config.sample_rate)?,
        ];
        let seg = (config.welch.segment_seconds * config.sample_rate).round() as usize;
        if config.window_samples() < seg {
            return Err(PipelineError::Config(format!(
                "window of {} s is shorter than the {} s Welch segment",
                config.window_seconds, config.welch.segment_seconds
            )));
        }
        Ok(Self {
            filter: StreamingFilter::new(&specs, config.channel_labels.len())?,
            primed: false,
            buffer: vec![Vec::with_capacity(config.window_samples()); keep.len()],
            keep,
            keep_labels: needed,
            origin: None,
            last_chunk_start: None,
            next_index: 0,
            config,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Seconds of filtered data waiting for the current window to complete.
    pub fn buffered_seconds(&self) -> f64 {
        self.buffer[0].len() as f64 / self.config.sample_rate
    }

    pub fn push(&mut self, chunk: &EegChunk) -> Result<Vec<BandPowerWindow>, PipelineError> {
        if chunk.channel_labels() != self.config.channel_labels.as_slice() {
            return Err(PipelineError::Config(format!(
                "chunk carries {} channels that do not match the {}-channel montage",
                chunk.n_channels(),
                self.config.channel_labels.len()
            )));
        }
        if let Some(prev) = self.last_chunk_start {
            if chunk.start_time() < prev {
                return Err(PipelineError::Sequencing(format!(
                    "chunk at {} s arrived after chunk at {prev} s",
                    chunk.start_time()
                )));
            }
        }
        self.last_chunk_start = Some(chunk.start_time());
        if !self.primed {
            self.filter.prime(chunk, self.config.prime_seconds)?;
            self.primed = true;
            self.origin = Some(chunk.start_time());
        }
        let filtered = self.filter.process(chunk)?;
        let rows = filtered.into_samples();
        let window = self.config.window_samples();
        let mut out = Vec::new();
        let mut offset = 0;
        let n = chunk.n_samples();
        while offset < n {
            let take = (window - self.buffer[0].len()).min(n - offset);
            for (buf, &ch) in self.buffer.iter_mut().zip(&self.keep) {
                buf.extend_from_slice(&rows[ch][offset..offset + take]);
            }
            offset += take;
            if self.buffer[0].len() == window {
                out.push(self.close_window()?);
            }
        }
        Ok(out)
    }

    fn close_window(&mut self) -> Result<BandPowerWindow, PipelineError> {
        let index = self.next_index;
        let window = self.config.window_samples();
        let start_time = self.origin.unwrap_or(0.0) + (index as f64 * window as f64) / self.config.sample_rate;
        let rows = std::mem::replace(&mut self.buffer, vec![Vec::with_capacity(window); self.keep.len()]);
        let chunk = EegChunk::new(start_time, self.config.sample_rate, self.keep_labels.clone(), rows)?;
        let psd = welch_psd(&chunk, &self.config.welch)?;
        let alpha_power = band_power(&psd, &self.config.bands.alpha, &self.config.alpha_channels)?;
        let theta_power = band_power(&psd, &self.config.bands.theta, &self.config.theta_channels)?;
        self.next_index += 1;
        Ok(BandPowerWindow {
            index,
            start_time,
            duration: window as f64 / self.config.sample_rate,
            alpha_power,
            theta_power,
        })
    }
}

/// A [`WindowPipeline`] feeding an [`AdaptationEngine`].
#[derive(Debug, Clone)]
pub struct AdaptiveLoop {
    windows: WindowPipeline,
    engine: AdaptationEngine,
}

/// What one chunk produced: the windows it completed and any decisions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoopOutput {
    pub windows: Vec<BandPowerWindow>,
    pub decisions: Vec<AdaptationDecision>,
}

impl AdaptiveLoop {
    pub fn new(pipeline: PipelineConfig, engine: EngineConfig) -> Result<Self, PipelineError> {
        Ok(Self {
            windows: WindowPipeline::new(pipeline)?,
            engine: AdaptationEngine::new(engine),
        })
    }

    pub fn push(&mut self, chunk: &EegChunk) -> Result<LoopOutput, PipelineError> {
        let windows = self.windows.push(chunk)?;
        let mut decisions = Vec::new();
        for w in &windows {
            if let Some(d) = self.engine.step(*w)? {
                decisions.push(d);
            }
        }
        Ok(LoopOutput { windows, decisions })
    }

    pub fn engine(&self) -> &AdaptationEngine {
        &self.engine
    }

    pub fn windows(&self) -> &WindowPipeline {
        &self.windows
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapt::{Policy, StreamState};
    use crate::sim::Montage;

    fn config() -> PipelineConfig {
        PipelineConfig::new(500.0, Montage::Rnet64.labels(), IndividualBands::fallback())
    }

    fn zeros(start: f64, seconds: f64) -> EegChunk {
        let labels = Montage::Rnet64.labels();
        let n = (seconds * 500.0) as usize;
        EegChunk::new(start, 500.0, labels.clone(), vec![vec![0.0; n]; labels.len()]).unwrap()
    }

    #[test]
    fn windows_tumble_across_chunk_boundaries() {
        let mut p = WindowPipeline::new(config()).unwrap();
        let mut all = vec![];
        // 7 s chunks: windows close mid-chunk.
        for k in 0..9 {
            all.extend(p.push(&zeros(10.0 + 7.0 * k as f64, 7.0)).unwrap());
        }
        assert_eq!(all.len(), 3);
        for (i, w) in all.iter().enumerate() {
            assert_eq!(w.index, i as u64);
            assert_eq!(w.start_time, 10.0 + 20.0 * i as f64);
            assert_eq!(w.duration, 20.0);
        }
        assert!((p.buffered_seconds() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn forty_seconds_gives_one_decision() {
        let engine = EngineConfig::new(Policy::Positive, 0.15, StreamState::default()).unwrap();
        let mut l = AdaptiveLoop::new(config(), engine).unwrap();
        let mut decisions = 0;
        for k in 0..40 {
            decisions += l.push(&zeros(k as f64, 1.0)).unwrap().decisions.len();
        }
        assert_eq!(decisions, 1);
    }

    #[test]
    fn montage_mismatch_rejected() {
        let mut p = WindowPipeline::new(config()).unwrap();
        let labels: Vec<String> = Montage::Rnet64.labels().into_iter().take(32).collect();
        let c = EegChunk::new(0.0, 500.0, labels.clone(), vec![vec![0.0; 10]; 32]).unwrap();
        assert!(matches!(p.push(&c), Err(PipelineError::Config(_))));
    }

    #[test]
    fn missing_band_channels_rejected_up_front() {
        let mut cfg = config();
        cfg.channel_labels.retain(|l| l != "POz");
        assert!(matches!(
            WindowPipeline::new(cfg),
            Err(PipelineError::Dsp(DspError::MissingChannels(_)))
        ));
    }
}
