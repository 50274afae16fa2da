use std::path::Path;
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use super::generator::{Generator, StateName, StateProfile, SynthLayout};
use super::{Montage, SimError};
use crate::dsp::EegChunk;

/// Emission quantum of scenario streams, in seconds.
pub const CHUNK_SECONDS: f64 = 1.0;
/// Longest stretch synthesized in one go; bounds memory on long segments.
const RENDER_BLOCK_SECONDS: f64 = 20.0;
/// Smallest queue a spawned scenario producer may use, in chunks.
pub const MIN_QUEUE_CHUNKS: usize = 5;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_freq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_freq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_rms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_exponent: Option<f64>,
}

impl ProfileOverrides {
    pub fn apply(&self, mut p: StateProfile) -> StateProfile {
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut p.alpha_amplitude, self.alpha_amplitude);
        set(&mut p.alpha_freq, self.alpha_freq);
        set(&mut p.theta_amplitude, self.theta_amplitude);
        set(&mut p.theta_freq, self.theta_freq);
        set(&mut p.noise_rms, self.noise_rms);
        set(&mut p.noise_exponent, self.noise_exponent);
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub state: StateName,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "is_default")]
    pub overrides: ProfileOverrides,
}

fn is_default(o: &ProfileOverrides) -> bool {
    *o == ProfileOverrides::default()
}

impl Segment {
    pub fn new(state: StateName, duration_s: f64) -> Self {
        Self {
            state,
            duration_s,
            overrides: ProfileOverrides::default(),
        }
    }

    pub fn profile(&self) -> StateProfile {
        self.overrides.apply(StateProfile::for_state(&self.state))
    }
}

fn default_sample_rate() -> f64 {
    500.0
}

/// A scripted sequence of attention states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    #[serde(default)]
    pub montage: Montage,
    pub segments: Vec<Segment>,
}

impl Scenario {
    pub fn new(seed: u64, segments: Vec<Segment>) -> Self {
        Self {
            seed,
            sample_rate: default_sample_rate(),
            montage: Montage::default(),
            segments,
        }
    }

    /// Alternating internal/external segments, starting with internal.
    pub fn alternating(seed: u64, segment_seconds: f64, n_segments: usize) -> Self {
        let segments = (0..n_segments)
            .map(|i| {
                let state = if i % 2 == 0 { StateName::Internal } else { StateName::External };
                Segment::new(state, segment_seconds)
            })
            .collect();
        Self::new(seed, segments)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        let s: Scenario = serde_json::from_str(&text).map_err(|e| SimError::Parse {
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(SimError::Config(format!("sample rate {} is not positive", self.sample_rate)));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if !(seg.duration_s > 0.0 && seg.duration_s.is_finite()) {
                return Err(SimError::Config(format!(
                    "segment {i} has non-positive duration {}",
                    seg.duration_s
                )));
            }
            seg.profile().validate()?;
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }

    pub fn layout(&self) -> SynthLayout {
        SynthLayout::new(self.sample_rate, self.montage.labels())
    }
}

/// A chunk with the state that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledChunk {
    pub chunk: EegChunk,
    pub state: StateName,
}

/// Iterator over a scenario in [`CHUNK_SECONDS`] quanta. Chunks never span
/// a segment boundary, so the last chunk of a segment may be shorter.
pub struct ScenarioStream {
    generator: Generator,
    segments: std::vec::IntoIter<Segment>,
    current: Option<(Segment, usize)>,
    block: Option<(EegChunk, usize)>,
    failed: bool,
}

pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioStream, SimError> {
    scenario.validate()?;
    Ok(ScenarioStream {
        generator: Generator::new(scenario.layout(), scenario.seed)?,
        segments: scenario.segments.clone().into_iter(),
        current: None,
        block: None,
        failed: false,
    })
}

impl ScenarioStream {
    fn step(&mut self) -> Result<Option<LabeledChunk>, SimError> {
        let fs = self.generator.layout().sample_rate;
        let quantum = (CHUNK_SECONDS * fs).round() as usize;
        loop {
            if let Some((block, pos)) = &mut self.block {
                if *pos < block.n_samples() {
                    let end = (*pos + quantum).min(block.n_samples());
                    let chunk = block.slice(*pos, end)?;
                    *pos = end;
                    let state = self.current.as_ref().expect("block belongs to a segment").0.state.clone();
                    return Ok(Some(LabeledChunk { chunk, state }));
                }
                self.block = None;
            }
            if let Some((seg, remaining)) = &mut self.current {
                if *remaining > 0 {
                    let max_block = ((RENDER_BLOCK_SECONDS * fs).round() as usize).max(quantum);
                    let n = (*remaining).min(max_block);
                    *remaining -= n;
                    let block = self.generator.render(&seg.profile(), n as f64 / fs)?;
                    self.block = Some((block, 0));
                    continue;
                }
                self.current = None;
            }
            match self.segments.next() {
                Some(seg) => {
                    let n = (seg.duration_s * fs).round() as usize;
                    self.current = Some((seg, n));
                }
                None => return Ok(None),
            }
        }
    }
}

impl Iterator for ScenarioStream {
    type Item = Result<LabeledChunk, SimError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.step() {
            Ok(c) => c.map(Ok),
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

/// Consumer end of [`spawn_scenario`].
pub type ScenarioReceiver = Receiver<Result<LabeledChunk, SimError>>;

/// Runs the scenario on a producer thread feeding a bounded queue of at
/// least [`MIN_QUEUE_CHUNKS`] chunks. The producer blocks while the queue is
/// full and stops when the receiver is dropped.
pub fn spawn_scenario(scenario: &Scenario, capacity: usize) -> Result<(ScenarioReceiver, JoinHandle<()>), SimError> {
    let stream = run_scenario(scenario)?;
    let (tx, rx) = sync_channel(capacity.max(MIN_QUEUE_CHUNKS));
    let handle = std::thread::spawn(move || {
        for item in stream {
            if tx.send(item).is_err() {
                break;
            }
        }
    });
    Ok((rx, handle))
}
