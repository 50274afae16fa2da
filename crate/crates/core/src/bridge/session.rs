//! One participant's session: a sequence of blocks, each with its own
//! adaptation mode, sharing the alpha/theta ranges found in the IAF block.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::protocol::SessionEvent;
use super::BridgeError;
use crate::adapt::{AdaptationDecision, EngineConfig, Policy, StreamState, DEFAULT_THRESHOLD};
use crate::dsp::{design_filter, ChannelSet, EegChunk, StreamingFilter};
use crate::iaf::{derive_bands, estimate_iaf, trim_edges, IafConfig, IafEstimate, IafQuality, IndividualBands};
use crate::pipeline::{AdaptiveLoop, PipelineConfig};
use crate::sim::Montage;

/// Stream held during the visual-monitoring block, NPCs per minute.
pub const VISUAL_MONITORING_STREAM: i32 = 334;
/// Seconds dropped from each end of the eyes-closed recording when it is
/// long enough to spare them.
pub const IAF_TRIM_SECONDS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AdaptMode {
    #[default]
    None,
    Positive,
    Negative,
}

impl AdaptMode {
    pub fn policy(self) -> Option<Policy> {
        match self {
            AdaptMode::None => None,
            AdaptMode::Positive => Some(Policy::Positive),
            AdaptMode::Negative => Some(Policy::Negative),
        }
    }
}

impl From<Policy> for AdaptMode {
    fn from(p: Policy) -> Self {
        match p {
            Policy::Positive => AdaptMode::Positive,
            Policy::Negative => AdaptMode::Negative,
        }
    }
}

impl fmt::Display for AdaptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdaptMode::None => "none",
            AdaptMode::Positive => "positive",
            AdaptMode::Negative => "negative",
        })
    }
}

impl FromStr for AdaptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(AdaptMode::None),
            "positive" => Ok(AdaptMode::Positive),
            "negative" => Ok(AdaptMode::Negative),
            other => Err(format!("unknown policy {other:?} (expected positive, negative or none)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Eyes-closed recording for the individual alpha frequency.
    Iaf,
    Resting,
    /// Gaze-following task at a fixed stream; no adaptation.
    VisualMonitoring,
    NBackNoAdapt,
    NBackPositive,
    NBackNegative,
}

impl BlockKind {
    pub fn adapt_mode(self) -> AdaptMode {
        match self {
            BlockKind::NBackPositive => AdaptMode::Positive,
            BlockKind::NBackNegative => AdaptMode::Negative,
            _ => AdaptMode::None,
        }
    }

    /// The task block that runs a given policy.
    pub fn for_mode(mode: AdaptMode) -> Self {
        match mode {
            AdaptMode::None => BlockKind::NBackNoAdapt,
            AdaptMode::Positive => BlockKind::NBackPositive,
            AdaptMode::Negative => BlockKind::NBackNegative,
        }
    }

    pub fn fixed_stream(self) -> Option<i32> {
        (self == BlockKind::VisualMonitoring).then_some(VISUAL_MONITORING_STREAM)
    }

    /// Nominal length in seconds: 2 min 10 s eyes closed, six minutes otherwise.
    pub fn default_seconds(self) -> f64 {
        match self {
            BlockKind::Iaf => 130.0,
            _ => 360.0,
        }
    }
}

/// Resolved settings of one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub policy: AdaptMode,
    pub threshold: f64,
    pub window_s: f64,
    pub stream_initial: i32,
    pub stream_floor: i32,
    pub stream_ceiling: i32,
    pub montage: Montage,
    pub sample_rate: f64,
    /// Alpha/theta ranges fixed up front; otherwise they come from an IAF block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bands: Option<IndividualBands>,
    /// Whether adaptive blocks may fall back to 8-13 / 4-8 Hz without an IAF block.
    pub allow_fallback_bands: bool,
    pub block: BlockKind,
}

impl Default for SessionConfig {
    fn default() -> Self {
        let stream = StreamState::default();
        Self {
            policy: AdaptMode::Positive,
            threshold: DEFAULT_THRESHOLD,
            window_s: 20.0,
            stream_initial: stream.initial,
            stream_floor: stream.floor,
            stream_ceiling: stream.ceiling,
            montage: Montage::Rnet64,
            sample_rate: 500.0,
            bands: None,
            allow_fallback_bands: true,
            block: BlockKind::NBackPositive,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), BridgeError> {
        if !(self.window_s > 0.0 && self.window_s.is_finite()) {
            return Err(BridgeError::Config(format!("window_s must be positive, got {}", self.window_s)));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(BridgeError::Config(format!("sample_rate must be positive, got {}", self.sample_rate)));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(BridgeError::Config(format!("threshold must be positive, got {}", self.threshold)));
        }
        self.stream()?;
        Ok(())
    }

    pub fn stream(&self) -> Result<StreamState, BridgeError> {
        Ok(StreamState::new(self.stream_initial, self.stream_floor, self.stream_ceiling)?)
    }

    pub fn channel_labels(&self) -> Vec<String> {
        self.montage.labels()
    }

    fn pipeline(&self, bands: IndividualBands) -> PipelineConfig {
        PipelineConfig {
            window_seconds: self.window_s,
            ..PipelineConfig::new(self.sample_rate, self.channel_labels(), bands)
        }
    }
}

/// One entry of a block plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub duration_s: f64,
}

impl BlockSpec {
    pub fn new(kind: BlockKind) -> Self {
        Self {
            kind,
            duration_s: kind.default_seconds(),
        }
    }
}

/// Eyes-closed samples of the posterior channels, filtered as they arrive.
#[derive(Debug, Clone)]
struct IafCollector {
    montage: Vec<String>,
    indices: Vec<usize>,
    labels: Vec<String>,
    filter: StreamingFilter,
    primed: bool,
    rows: Vec<Vec<f64>>,
    start: Option<f64>,
}

impl IafCollector {
    fn new(config: &SessionConfig) -> Result<Self, BridgeError> {
        let montage = config.channel_labels();
        let labels = ChannelSet::alpha_posterior().labels;
        let indices = labels
            .iter()
            .map(|l| {
                montage
                    .iter()
                    .position(|m| m == l)
                    .ok_or_else(|| BridgeError::Config(format!("montage lacks posterior channel {l}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let pipe = config.pipeline(IndividualBands::fallback());
        let specs = [
            design_filter(pipe.notch, config.sample_rate)?,
            design_filter(pipe.band_pass, config.sample_rate)?,
        ];
        Ok(Self {
            filter: StreamingFilter::new(&specs, labels.len())?,
            primed: false,
            rows: vec![Vec::new(); labels.len()],
            montage,
            indices,
            labels,
            start: None,
        })
    }

    fn push(&mut self, chunk: &EegChunk) -> Result<(), BridgeError> {
        if chunk.channel_labels() != self.montage.as_slice() {
            return Err(BridgeError::Protocol(format!(
                "chunk channels do not match the {}-channel montage",
                self.montage.len()
            )));
        }
        let rows = self.indices.iter().map(|&i| chunk.samples()[i].clone()).collect();
        let sub = EegChunk::new(chunk.start_time(), chunk.sample_rate(), self.labels.clone(), rows)?;
        if !self.primed {
            self.filter.prime(&sub, 2.0)?;
            self.primed = true;
            self.start = Some(chunk.start_time());
        }
        let filtered = self.filter.process(&sub)?;
        for (row, new) in self.rows.iter_mut().zip(filtered.samples()) {
            row.extend_from_slice(new);
        }
        Ok(())
    }

    fn finish(self, sample_rate: f64) -> Result<IafEstimate, BridgeError> {
        let rec = EegChunk::new(self.start.unwrap_or(0.0), sample_rate, self.labels.clone(), self.rows)?;
        let cfg = IafConfig::default();
        let rec = if rec.duration() - 2.0 * IAF_TRIM_SECONDS >= cfg.min_duration {
            trim_edges(&rec, IAF_TRIM_SECONDS)?
        } else {
            rec
        };
        let est = estimate_iaf(&rec, &ChannelSet::custom(self.labels), &cfg)?;
        log::info!(
            "IAF: paf {:.2} Hz, alpha {:.2}-{:.2} Hz ({:?})",
            est.paf,
            est.f_low,
            est.f_high,
            est.quality
        );
        Ok(est)
    }
}

/// Ranges for the later blocks, and whether they are the fallback.
fn bands_for(est: &IafEstimate) -> (IndividualBands, bool) {
    match derive_bands(est) {
        Ok(b) => (b, est.quality == IafQuality::Fallback),
        Err(e) => {
            log::warn!("{e}; using the canonical ranges");
            (IndividualBands::fallback(), true)
        }
    }
}

/// Individual alpha frequency of an eyes-closed recording, processed
/// exactly as an IAF block of a live session. Returns the estimate with the
/// ranges derived from it and whether those are the fallback.
pub fn iaf_from_chunks<I, E>(
    config: &SessionConfig,
    chunks: I,
) -> Result<(IafEstimate, IndividualBands, bool), BridgeError>
where
    I: IntoIterator<Item = Result<EegChunk, E>>,
    BridgeError: From<E>,
{
    let mut c = IafCollector::new(config)?;
    for chunk in chunks {
        c.push(&chunk?)?;
    }
    let est = c.finish(config.sample_rate)?;
    let (bands, fallback) = bands_for(&est);
    Ok((est, bands, fallback))
}

#[derive(Debug, Clone)]
enum Runner {
    Iaf(Box<IafCollector>),
    Passive,
    Adaptive(Box<AdaptiveLoop>),
}

#[derive(Debug, Clone)]
struct ActiveBlock {
    kind: BlockKind,
    runner: Runner,
    stream: i32,
    decisions: usize,
}

/// Block-by-block driver of one session. Transport-agnostic: the server and
/// the command-line tools both feed it chunks.
#[derive(Debug, Clone)]
pub struct Session {
    config: SessionConfig,
    bands: Option<(IndividualBands, bool)>,
    active: Option<ActiveBlock>,
    /// End of the latest chunk, on the session clock.
    now: f64,
}

impl Session {
    pub fn new(config: SessionConfig) -> Result<Self, BridgeError> {
        config.validate()?;
        Ok(Self {
            bands: config.bands.map(|b| (b, false)),
            config,
            active: None,
            now: 0.0,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    /// Current ranges and whether they are the fallback.
    pub fn bands(&self) -> Option<(IndividualBands, bool)> {
        self.bands
    }

    pub fn current_block(&self) -> Option<BlockKind> {
        self.active.as_ref().map(|b| b.kind)
    }

    /// Stream the client should currently present, if a block is running.
    pub fn stream(&self) -> Option<i32> {
        self.active.as_ref().map(|b| b.stream)
    }

    pub fn begin_block(&mut self, kind: BlockKind) -> Result<Vec<SessionEvent>, BridgeError> {
        if let Some(b) = &self.active {
            return Err(BridgeError::Protocol(format!("block {:?} is still running", b.kind)));
        }
        let mut events = Vec::new();
        let mode = kind.adapt_mode();
        let (runner, stream) = match (kind, mode.policy()) {
            (BlockKind::Iaf, _) => (Runner::Iaf(Box::new(IafCollector::new(&self.config)?)), self.config.stream_initial),
            (_, None) => (Runner::Passive, kind.fixed_stream().unwrap_or(self.config.stream_initial)),
            (_, Some(policy)) => {
                let bands = match self.bands {
                    Some((b, _)) => b,
                    None if self.config.allow_fallback_bands => {
                        let b = IndividualBands::fallback();
                        self.bands = Some((b, true));
                        events.push(SessionEvent::Bands {
                            t: self.now,
                            bands: b,
                            fallback: true,
                        });
                        b
                    }
                    None => {
                        return Err(BridgeError::Config(format!(
                            "{kind:?} needs alpha/theta ranges: run an IAF block first or allow fallback bands"
                        )))
                    }
                };
                let engine = EngineConfig::new(policy, self.config.threshold, self.config.stream()?)?;
                let l = AdaptiveLoop::new(self.config.pipeline(bands), engine)?;
                (Runner::Adaptive(Box::new(l)), self.config.stream_initial)
            }
        };
        events.push(SessionEvent::BlockStart {
            t: self.now,
            block: kind,
            policy: mode,
            stream,
        });
        self.active = Some(ActiveBlock {
            kind,
            runner,
            stream,
            decisions: 0,
        });
        Ok(events)
    }

    /// Feeds one chunk to the running block.
    pub fn push(&mut self, chunk: &EegChunk) -> Result<Vec<AdaptationDecision>, BridgeError> {
        let Some(block) = &mut self.active else {
            return Err(BridgeError::Protocol("samples received outside a block".into()));
        };
        if chunk.sample_rate() != self.config.sample_rate {
            return Err(BridgeError::Protocol(format!(
                "chunk sampled at {} Hz, session configured for {} Hz",
                chunk.sample_rate(),
                self.config.sample_rate
            )));
        }
        if chunk.n_channels() != self.config.montage.n_channels() {
            return Err(BridgeError::Protocol(format!(
                "chunk has {} channels, session montage {} has {}",
                chunk.n_channels(),
                self.config.montage,
                self.config.montage.n_channels()
            )));
        }
        let decisions = match &mut block.runner {
            Runner::Iaf(c) => {
                c.push(chunk)?;
                Vec::new()
            }
            Runner::Passive => Vec::new(),
            Runner::Adaptive(l) => {
                let out = l.push(chunk)?;
                if let Some(d) = out.decisions.last() {
                    block.stream = d.stream_after;
                }
                block.decisions += out.decisions.len();
                out.decisions
            }
        };
        self.now = self.now.max(chunk.end_time());
        Ok(decisions)
    }

    pub fn end_block(&mut self) -> Result<Vec<SessionEvent>, BridgeError> {
        let Some(block) = self.active.take() else {
            return Err(BridgeError::Protocol("no block is running".into()));
        };
        let mut events = Vec::new();
        if let Runner::Iaf(c) = block.runner {
            let (bands, fallback) = bands_for(&c.finish(self.config.sample_rate)?);
            self.bands = Some((bands, fallback));
            events.push(SessionEvent::Bands {
                t: self.now,
                bands,
                fallback,
            });
        }
        events.push(SessionEvent::BlockEnd {
            t: self.now,
            block: block.kind,
            decisions: block.decisions,
            stream: block.stream,
        });
        Ok(events)
    }
}

/// Writes the session log: one decision record or event object per line.
pub struct SessionLog<W: Write> {
    out: W,
}

impl<W: Write> SessionLog<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn decision(&mut self, d: &AdaptationDecision) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, d)?;
        self.out.write_all(b"\n")
    }

    pub fn event(&mut self, e: &SessionEvent) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, e)?;
        self.out.write_all(b"\n")
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub kind: BlockKind,
    pub decisions: Vec<AdaptationDecision>,
    pub final_stream: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub blocks: Vec<BlockReport>,
    pub events: Vec<SessionEvent>,
    pub bands: Option<(IndividualBands, bool)>,
}

/// Runs a block plan over a chunk source. Each block takes exactly its
/// duration of samples; a chunk straddling a boundary is split. Writes
/// decisions and events to `log` when given.
pub fn orchestrate_session<I, E>(
    config: SessionConfig,
    plan: &[BlockSpec],
    source: I,
    mut log: Option<&mut SessionLog<&mut dyn Write>>,
) -> Result<SessionReport, BridgeError>
where
    I: IntoIterator<Item = Result<EegChunk, E>>,
    BridgeError: From<E>,
{
    for (i, b) in plan.iter().enumerate() {
        if !(b.duration_s > 0.0 && b.duration_s.is_finite()) {
            return Err(BridgeError::Config(format!("block {i} has non-positive duration {}", b.duration_s)));
        }
    }
    let fs = config.sample_rate;
    let mut session = Session::new(config)?;
    let mut source = source.into_iter();
    let mut carry: Option<EegChunk> = None;
    let mut report = SessionReport {
        blocks: Vec::new(),
        events: Vec::new(),
        bands: None,
    };
    let io = |e: std::io::Error| BridgeError::Io(e.to_string());
    for spec in plan {
        let events = session.begin_block(spec.kind)?;
        if let Some(l) = log.as_deref_mut() {
            events.iter().try_for_each(|e| l.event(e)).map_err(io)?;
        }
        report.events.extend(events);
        let mut needed = (spec.duration_s * fs).round() as usize;
        let mut decisions = Vec::new();
        while needed > 0 {
            let chunk = match carry.take() {
                Some(c) => c,
                None => match source.next() {
                    Some(c) => c?,
                    None => break,
                },
            };
            let chunk = if chunk.n_samples() > needed {
                carry = Some(chunk.slice(needed, chunk.n_samples())?);
                chunk.slice(0, needed)?
            } else {
                chunk
            };
            needed -= chunk.n_samples();
            let ds = session.push(&chunk)?;
            if let Some(l) = log.as_deref_mut() {
                ds.iter().try_for_each(|d| l.decision(d)).map_err(io)?;
            }
            decisions.extend(ds);
        }
        if needed > 0 {
            log::warn!(
                "source ended {:.1} s before the end of block {:?}",
                needed as f64 / fs,
                spec.kind
            );
        }
        let final_stream = session.stream().unwrap_or_default();
        let events = session.end_block()?;
        if let Some(l) = log.as_deref_mut() {
            events.iter().try_for_each(|e| l.event(e)).map_err(io)?;
        }
        report.events.extend(events);
        report.blocks.push(BlockReport {
            kind: spec.kind,
            decisions,
            final_stream,
        });
    }
    if let Some(l) = log {
        l.flush().map_err(io)?;
    }
    report.bands = session.bands();
    Ok(report)
}

/// Runs every chunk of `source` through one block of `kind`, as a live
/// session of that block would. Used for offline replay and simulation.
pub fn run_single_block<I, E>(
    config: SessionConfig,
    kind: BlockKind,
    source: I,
    mut log: Option<&mut SessionLog<&mut dyn Write>>,
) -> Result<BlockReport, BridgeError>
where
    I: IntoIterator<Item = Result<EegChunk, E>>,
    BridgeError: From<E>,
{
    let io = |e: std::io::Error| BridgeError::Io(e.to_string());
    let mut session = Session::new(config)?;
    let events = session.begin_block(kind)?;
    if let Some(l) = log.as_deref_mut() {
        events.iter().try_for_each(|e| l.event(e)).map_err(io)?;
    }
    let mut decisions = Vec::new();
    for chunk in source {
        let ds = session.push(&chunk?)?;
        if let Some(l) = log.as_deref_mut() {
            ds.iter().try_for_each(|d| l.decision(d)).map_err(io)?;
        }
        decisions.extend(ds);
    }
    let final_stream = session.stream().unwrap_or_default();
    let events = session.end_block()?;
    if let Some(l) = log {
        events.iter().try_for_each(|e| l.event(e)).map_err(io)?;
        l.flush().map_err(io)?;
    }
    Ok(BlockReport {
        kind,
        decisions,
        final_stream,
    })
}
