//! `neuroloop`: run the adaptation server, simulate or replay sessions,
//! estimate IAF, train the attention classifier, and benchmark the pipeline.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use neuroloop::adapt::{EngineConfig, Policy, StreamState};
use neuroloop::bridge::server::LOG_DIR_ENV;
use neuroloop::bridge::{
    iaf_from_chunks, run_single_block, AdaptMode, BlockKind, Server, ServerConfig, SessionConfig, SessionLog,
};
use neuroloop::classify::{
    evaluate, read_features, synthetic_participants, train_and_evaluate, write_features, LdaConfig, LdaModel,
    SyntheticCohort,
};
use neuroloop::dsp::{ChannelSet, EegChunk};
use neuroloop::iaf::IndividualBands;
use neuroloop::pipeline::{AdaptiveLoop, PipelineConfig};
use neuroloop::sim::{open_replay, run_scenario, write_chunk, Montage, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "neuroloop", version, about = "Closed-loop EEG attention adaptation engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Accept VR clients over TCP and adapt their distractor stream.
    Serve(ServeArgs),
    /// Run a synthetic scenario through the adaptation loop.
    Simulate(SimulateArgs),
    /// Run a recorded chunk file through the adaptation loop.
    Replay(ReplayArgs),
    /// Estimate the individual alpha frequency of an eyes-closed recording.
    Iaf(IafArgs),
    /// Train or evaluate the internal/external attention classifier.
    #[command(subcommand)]
    Classify(ClassifyCommand),
    /// Measure per-window processing latency.
    Bench(BenchArgs),
}

/// Settings shared by every command that runs the adaptation loop.
#[derive(Args, Debug, Clone)]
struct SessionArgs {
    /// Adaptation policy: positive, negative or none.
    #[arg(long, default_value = "positive")]
    policy: AdaptMode,
    /// Relative band-power change that counts as significant.
    #[arg(long, default_value_t = 0.15)]
    threshold: f64,
    /// Analysis window length in seconds.
    #[arg(long, default_value_t = 20.0)]
    window_seconds: f64,
    #[arg(long, default_value_t = 115)]
    stream_initial: i32,
    #[arg(long, default_value_t = 8)]
    stream_floor: i32,
    #[arg(long, default_value_t = 400)]
    stream_ceiling: i32,
    /// Electrode layout: rnet64 or adaptive18.
    #[arg(long)]
    montage: Option<Montage>,
}

impl SessionArgs {
    fn config(&self, montage: Montage, sample_rate: f64) -> Result<SessionConfig> {
        let c = SessionConfig {
            policy: self.policy,
            threshold: self.threshold,
            window_s: self.window_seconds,
            stream_initial: self.stream_initial,
            stream_floor: self.stream_floor,
            stream_ceiling: self.stream_ceiling,
            montage,
            sample_rate,
            block: BlockKind::for_mode(self.policy),
            ..SessionConfig::default()
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:7878")]
    bind: String,
    #[command(flatten)]
    session: SessionArgs,
    /// Sample rate clients are expected to stream at, Hz.
    #[arg(long, default_value_t = 500.0)]
    sample_rate: f64,
    /// Directory for session logs and recorded chunks (overrides the environment).
    #[arg(long)]
    log_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    #[command(flatten)]
    session: SessionArgs,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Session log output (decisions and events as JSON lines); stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the generated chunks here, for later replay.
    #[arg(long)]
    chunks_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// Chunk file (JSON lines of eeg messages).
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    session: SessionArgs,
    /// Session log output; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IafArgs {
    /// Chunk file of an eyes-closed recording.
    #[arg(long = "in")]
    input: PathBuf,
}

#[derive(Subcommand, Debug)]
enum ClassifyCommand {
    /// Split participants, train on the train set, report validation and test metrics.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Covariance shrinkage towards a scaled identity, in [0, 1].
        #[arg(long, default_value_t = 0.1)]
        shrinkage: f64,
        /// Where to write the trained model as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a trained model on labelled features.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
    },
    /// Write a synthetic labelled feature file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 22)]
        participants: usize,
        /// Class separation in noise standard deviations.
        #[arg(long, default_value_t = 5.0)]
        separation: f64,
    },
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 20.0)]
    window_seconds: f64,
    /// Number of channels; at least the 18 the adaptation loop reads.
    #[arg(long, default_value_t = 64)]
    channels: usize,
    #[arg(long, default_value_t = 500.0)]
    sample_rate: f64,
    /// Windows to time.
    #[arg(long, default_value_t = 10)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        // The reader went away (e.g. piped into `head`); nothing left to report.
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Writes one result document to stdout.
fn emit(value: impl std::fmt::Display) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{value}")?;
    out.flush()?;
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Serve(a) => serve(a),
        Command::Simulate(a) => simulate(a),
        Command::Replay(a) => replay(a),
        Command::Iaf(a) => iaf(a),
        Command::Classify(c) => classify(c),
        Command::Bench(a) => bench(a),
    }
}

fn serve(a: ServeArgs) -> Result<()> {
    let defaults = a.session.config(a.session.montage.unwrap_or_default(), a.sample_rate)?;
    let mut config = ServerConfig {
        defaults,
        ..ServerConfig::default()
    }
    .with_env();
    if a.log_dir.is_some() {
        config.log_dir = a.log_dir;
    }
    let server = Server::bind(&a.bind, config.clone()).with_context(|| format!("binding {}", a.bind))?;
    eprintln!(
        "listening on {} (policy {}, logs {})",
        server.local_addr()?,
        config.defaults.policy,
        config
            .log_dir
            .as_deref()
            .map_or_else(|| format!("off; set --log-dir or {LOG_DIR_ENV}"), |d| d.display().to_string())
    );
    server.run()?;
    Ok(())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn summary(report: &neuroloop::bridge::BlockReport, initial: i32) -> serde_json::Value {
    let streams: Vec<i32> = report.decisions.iter().map(|d| d.stream_after).collect();
    let mean = if streams.is_empty() {
        initial as f64
    } else {
        streams.iter().map(|&s| s as f64).sum::<f64>() / streams.len() as f64
    };
    json!({
        "block": report.kind,
        "decisions": report.decisions.len(),
        "final_stream": report.final_stream,
        "mean_stream": mean,
    })
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut scenario = Scenario::load(&a.scenario).with_context(|| format!("loading {}", a.scenario.display()))?;
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    if let Some(m) = a.session.montage {
        scenario.montage = m;
    }
    let config = a.session.config(scenario.montage, scenario.sample_rate)?;
    let mut chunks_out = match &a.chunks_out {
        Some(p) => Some(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => None,
    };
    let mut record_err = None;
    let source = run_scenario(&scenario)?.map(|r| {
        let c = r?.chunk;
        if let Some(w) = &mut chunks_out {
            if let Err(e) = write_chunk(w, None, &c) {
                record_err.get_or_insert(e);
            }
        }
        Ok::<_, neuroloop::sim::SimError>(c)
    });
    let mut out = output(a.out.as_deref())?;
    let mut log = SessionLog::new(&mut *out as &mut dyn Write);
    let report = run_single_block(config.clone(), config.block, source, Some(&mut log))?;
    if let Some(e) = record_err {
        bail!("writing chunks: {e}");
    }
    if let Some(mut w) = chunks_out {
        w.flush()?;
    }
    if a.out.is_some() {
        emit(summary(&report, config.stream_initial))?;
    }
    Ok(())
}

fn replay(a: ReplayArgs) -> Result<()> {
    let mut reader = open_replay(&a.input)?.peekable();
    let first = match reader.peek() {
        Some(Ok(c)) => c.clone(),
        Some(Err(e)) => bail!("{}: {e}", a.input.display()),
        None => bail!("{} holds no chunks", a.input.display()),
    };
    let montage = match a.session.montage {
        Some(m) => m,
        None => Montage::from_labels(first.channel_labels())
            .context("chunk channels match no known montage; pass --montage")?,
    };
    let config = a.session.config(montage, first.sample_rate())?;
    let mut out = output(a.out.as_deref())?;
    let mut log = SessionLog::new(&mut *out as &mut dyn Write);
    let report = run_single_block(config.clone(), config.block, reader, Some(&mut log))?;
    if a.out.is_some() {
        emit(summary(&report, config.stream_initial))?;
    }
    Ok(())
}

fn iaf(a: IafArgs) -> Result<()> {
    let chunks: Vec<EegChunk> = open_replay(&a.input)?.collect::<Result<_, _>>()?;
    let Some(first) = chunks.first() else {
        bail!("{} holds no chunks", a.input.display());
    };
    let montage = Montage::from_labels(first.channel_labels()).context("chunk channels match no known montage")?;
    let config = SessionConfig {
        montage,
        sample_rate: first.sample_rate(),
        ..SessionConfig::default()
    };
    let (est, bands, fallback) = iaf_from_chunks(&config, chunks.into_iter().map(Ok::<_, neuroloop::bridge::BridgeError>))?;
    emit(json!({
            "paf": est.paf,
            "cog": est.cog,
            "f_low": est.f_low,
            "f_high": est.f_high,
            "quality": est.quality,
            "bands": bands,
            "fallback": fallback,
        })
    )?;
    Ok(())
}

fn classify(c: ClassifyCommand) -> Result<()> {
    let load = |p: &Path| -> Result<_> {
        let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
        Ok(read_features(f)?)
    };
    match c {
        ClassifyCommand::Train {
            features,
            seed,
            shrinkage,
            out,
        } => {
            let rows = load(&features)?;
            let cfg = LdaConfig {
                shrinkage,
                ..LdaConfig::default()
            };
            let report = train_and_evaluate(&rows, seed, &cfg)?;
            if let Some(p) = out {
                let f = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
                serde_json::to_writer_pretty(BufWriter::new(f), &report.model)?;
            }
            emit(serde_json::to_string_pretty(&report)?)?;
        }
        ClassifyCommand::Eval { model, features } => {
            let f = File::open(&model).with_context(|| format!("opening {}", model.display()))?;
            let m: LdaModel = serde_json::from_reader(std::io::BufReader::new(f))
                .with_context(|| format!("parsing {}", model.display()))?;
            let metrics = evaluate(&m, &load(&features)?)?;
            emit(serde_json::to_string_pretty(&metrics)?)?;
        }
        ClassifyCommand::Synth {
            out,
            seed,
            participants,
            separation,
        } => {
            let rows = synthetic_participants(&SyntheticCohort {
                participants,
                separation,
                seed,
                ..SyntheticCohort::default()
            })?;
            let f = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            write_features(BufWriter::new(f), &rows)?;
        }
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let mut labels = Montage::Adaptive18.labels();
    if a.channels < labels.len() {
        bail!("bench needs at least {} channels, got {}", labels.len(), a.channels);
    }
    if a.iterations == 0 {
        bail!("iterations must be positive");
    }
    // Pad with channels the band-power sets never read.
    let rnet: Vec<String> = Montage::Rnet64.labels();
    let needed = ChannelSet::alpha_posterior().union(&ChannelSet::theta_frontal()).labels;
    let mut spare = rnet.into_iter().filter(|l| !needed.contains(l));
    while labels.len() < a.channels {
        labels.push(spare.next().unwrap_or_else(|| format!("X{}", labels.len())));
    }
    let pipeline = PipelineConfig {
        window_seconds: a.window_seconds,
        ..PipelineConfig::new(a.sample_rate, labels.clone(), IndividualBands::fallback())
    };
    let engine = EngineConfig::new(Policy::Positive, 0.15, StreamState::default())?;
    let mut lp = AdaptiveLoop::new(pipeline, engine)?;
    let n = (a.window_seconds * a.sample_rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut latencies = Vec::with_capacity(a.iterations);
    let mut decisions = 0;
    // One untimed window first, so every timed window is compared against a baseline.
    for k in 0..=a.iterations {
        let rows: Vec<Vec<f64>> = (0..labels.len())
            .map(|_| (0..n).map(|_| rng.random_range(-10.0..10.0)).collect())
            .collect();
        let chunk = EegChunk::new(k as f64 * a.window_seconds, a.sample_rate, labels.clone(), rows)?;
        let start = Instant::now();
        let out = lp.push(&chunk)?;
        let elapsed = start.elapsed().as_secs_f64();
        if k > 0 {
            latencies.push(elapsed);
            decisions += out.decisions.len();
        }
    }
    latencies.sort_by(f64::total_cmp);
    let mean = latencies.iter().sum::<f64>() / latencies.len() as f64;
    let median = latencies[latencies.len() / 2];
    let max = *latencies.last().expect("at least one iteration");
    emit(json!({
            "window_seconds": a.window_seconds,
            "channels": a.channels,
            "sample_rate": a.sample_rate,
            "windows": latencies.len(),
            "decisions": decisions,
            "latency_ms": {
                "min": latencies[0] * 1e3,
                "median": median * 1e3,
                "mean": mean * 1e3,
                "max": max * 1e3,
            },
            "realtime_factor": a.window_seconds / max,
        })
    )?;
    Ok(())
}
