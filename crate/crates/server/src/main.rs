use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use livemusic::stream::{Pacing, StreamMetrics, SystemClock, TransitionTrace};
use livemusic_server::config::{ModeName, PromptSpec, SessionConfig};
use livemusic_server::render::{bench, load_pair, render, render_transition, write_csv, PromptSchedule};
use livemusic_server::server::{Server, ServerOptions};
use livemusic_server::session::{read_log, replay};
use tracing_subscriber::EnvFilter;

/// Live music generation: streaming server, offline renderer and benchmark.
///
/// Every flag can also be set through a `LIVEMUSIC_`-prefixed environment
/// variable, e.g. `LIVEMUSIC_PORT` or `LIVEMUSIC_CFG_WEIGHT`.
#[derive(Parser)]
#[command(name = "livemusic", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve live sessions over WebSocket.
    Serve(ServeArgs),
    /// Render a fixed duration offline to WAV plus per-chunk metrics.
    Render(RenderArgs),
    /// Stream for a while and report real-time factors.
    Bench(BenchArgs),
    /// Re-render a recorded session log.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct EngineArgs {
    /// JSON session config; the flags below override its fields.
    #[arg(long, env = "LIVEMUSIC_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "LIVEMUSIC_BACKEND")]
    backend: Option<String>,
    /// Sampling seed.
    #[arg(long, env = "LIVEMUSIC_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "LIVEMUSIC_TEMPERATURE")]
    temperature: Option<f64>,
    #[arg(long = "topk", env = "LIVEMUSIC_TOPK")]
    top_k: Option<usize>,
    #[arg(long, env = "LIVEMUSIC_CFG_WEIGHT")]
    cfg_weight: Option<f64>,
    /// Audio injection mode.
    #[arg(long, value_enum, env = "LIVEMUSIC_MODE")]
    mode: Option<ModeName>,
    /// Looper tempo.
    #[arg(long, env = "LIVEMUSIC_BPM")]
    bpm: Option<f64>,
    /// Looper length in beats.
    #[arg(long, env = "LIVEMUSIC_LOOP_BEATS")]
    loop_beats: Option<u32>,
    /// Initial text prompt (weight 1).
    #[arg(long, env = "LIVEMUSIC_PROMPT")]
    prompt: Option<String>,
}

impl EngineArgs {
    fn session_config(&self) -> anyhow::Result<SessionConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
                serde_json::from_reader(BufReader::new(file))
                    .with_context(|| format!("parsing {}", path.display()))?
            }
            None => SessionConfig::default(),
        };
        if let Some(b) = &self.backend {
            config.backend = b.clone();
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(t) = self.temperature {
            config.sampler.temperature = t;
        }
        if let Some(k) = self.top_k {
            config.sampler.top_k = k;
        }
        if let Some(w) = self.cfg_weight {
            config.sampler.cfg_weight = w;
        }
        if let Some(m) = self.mode {
            config.injection.mode = m;
        }
        if self.bpm.is_some() {
            config.injection.bpm = self.bpm;
        }
        if self.loop_beats.is_some() {
            config.injection.loop_beats = self.loop_beats;
        }
        if let Some(p) = &self.prompt {
            config.prompts = vec![PromptSpec::text(p, 1.0)];
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long, default_value = "127.0.0.1", env = "LIVEMUSIC_HOST")]
    host: String,
    #[arg(long, default_value_t = 8765, env = "LIVEMUSIC_PORT")]
    port: u16,
    /// Directory receiving one JSONL log per closed session.
    #[arg(long, env = "LIVEMUSIC_LOG_DIR")]
    log_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// Prompt schedule: `start_seconds<TAB>weight<TAB>text` per line.
    #[arg(long, env = "LIVEMUSIC_PROMPTS")]
    prompts: Option<PathBuf>,
    #[arg(long, default_value_t = 47.0, env = "LIVEMUSIC_DURATION")]
    duration: f64,
    #[arg(long, env = "LIVEMUSIC_OUT")]
    out: PathBuf,
    #[arg(long, env = "LIVEMUSIC_METRICS")]
    metrics: PathBuf,
    /// Render a 60 s transition over a pair from this `from<TAB>to` file
    /// instead of following a prompt schedule.
    #[arg(long, env = "LIVEMUSIC_TRANSITION")]
    transition: Option<PathBuf>,
    /// Use the bundled pair list for the transition.
    #[arg(long, conflicts_with = "transition")]
    bundled_pairs: bool,
    /// Zero-based pair index for the transition.
    #[arg(long, default_value_t = 0, env = "LIVEMUSIC_PAIR")]
    pair: usize,
    /// Similarity trace CSV; defaults to the metrics path with a `.trace.csv` suffix.
    #[arg(long, env = "LIVEMUSIC_TRACE")]
    trace: Option<PathBuf>,
    /// Also write the session log for later replay.
    #[arg(long, env = "LIVEMUSIC_SESSION_LOG")]
    session_log: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long, default_value_t = 60.0, env = "LIVEMUSIC_SECONDS")]
    seconds: f64,
    /// Generate back to back instead of pacing against the playback clock.
    #[arg(long)]
    offline: bool,
    #[arg(long, env = "LIVEMUSIC_METRICS")]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// JSONL session log written by `serve --log-dir` or `render --session-log`.
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    metrics: Option<PathBuf>,
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Serve(args) => serve(args),
        Command::Render(args) => render_cmd(args),
        Command::Bench(args) => bench_cmd(args),
        Command::Replay(args) => replay_cmd(args),
    }
}

fn serve(args: ServeArgs) -> anyhow::Result<()> {
    let options = ServerOptions {
        config: args.engine.session_config()?,
        log_dir: args.log_dir,
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let server = Server::bind(&format!("{}:{}", args.host, args.port), options).await?;
        tracing::info!(addr = %server.local_addr()?, "listening");
        server.run().await
    })
}

fn write_metrics(path: &Path, metrics: &StreamMetrics) -> anyhow::Result<()> {
    write_csv(path, |out| metrics.write_csv(out))?;
    Ok(())
}

fn render_cmd(args: RenderArgs) -> anyhow::Result<()> {
    let config = args.engine.session_config()?;
    if args.transition.is_some() || args.bundled_pairs {
        let (a, b) = load_pair(args.transition.as_deref(), args.pair)?;
        let trace: TransitionTrace = render_transition(&config, &a, &b)?;
        let trace_path = args
            .trace
            .unwrap_or_else(|| args.metrics.with_extension("trace.csv"));
        trace.audio.write_wav(&args.out)?;
        write_metrics(&args.metrics, &trace.metrics)?;
        write_csv(&trace_path, |out| trace.write_csv(out))?;
        eprintln!(
            "transition {a} -> {b}: {} windows, trace {}",
            trace.windows.len(),
            trace_path.display()
        );
        return Ok(());
    }
    let schedule = match &args.prompts {
        Some(path) => PromptSchedule::load(path)?,
        None => PromptSchedule::default(),
    };
    let rendered = render(config, &schedule, args.duration)?;
    rendered.audio.write_wav(&args.out)?;
    write_metrics(&args.metrics, &rendered.metrics)?;
    if let Some(path) = &args.session_log {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        livemusic_server::session::write_log(&rendered.log, std::io::BufWriter::new(file))?;
    }
    eprintln!(
        "rendered {} chunks, {} samples per channel, rtf_cum {:.2}",
        rendered.metrics.chunks(),
        rendered.audio.len(),
        rendered.metrics.cumulative_rtf()
    );
    Ok(())
}

fn bench_cmd(args: BenchArgs) -> anyhow::Result<()> {
    let config = args.engine.session_config()?;
    let pacing = if args.offline { Pacing::Offline } else { Pacing::Realtime };
    let backend = config.backend.clone();
    let metrics = bench(config, args.seconds, &SystemClock::new(), pacing)?;
    let latencies: Vec<f64> = metrics.rows.iter().map(|r| r.latency).collect();
    let max = latencies.iter().copied().fold(0.0, f64::max);
    let mean = metrics.total_latency / latencies.len().max(1) as f64;
    println!("backend      {backend}");
    println!("pacing       {}", if args.offline { "offline" } else { "realtime" });
    println!("chunks       {} ({:.1} s of audio)", metrics.chunks(), metrics.audio_seconds());
    println!("L_chunk      mean {mean:.4} s, max {max:.4} s");
    println!("rtf_cum      {:.3}", metrics.cumulative_rtf());
    println!("underruns    {} ({:.3} s of silence)", metrics.underruns, metrics.silence_seconds);
    if let Some(path) = &args.metrics {
        write_metrics(path, &metrics)?;
    }
    Ok(())
}

fn replay_cmd(args: ReplayArgs) -> anyhow::Result<()> {
    let file = File::open(&args.log).with_context(|| format!("opening {}", args.log.display()))?;
    let log = read_log(BufReader::new(file))?;
    let rendered = replay(&log)?;
    rendered.audio.write_wav(&args.out)?;
    if let Some(path) = &args.metrics {
        write_metrics(path, &rendered.metrics)?;
    }
    eprintln!("replayed {} chunks", rendered.metrics.chunks());
    Ok(())
}
