//! The live loop: one chunk per step from a bounded coarse history, paced
//! against a clock, with per-chunk metrics.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::RngCore;

use crate::audio::{StereoAudio, CHUNK_SAMPLES};
use crate::codec::{Codec, Synthesizer};
use crate::controls::ControlPrior;
use crate::error::{Error, Result};
use crate::inject::{mixed_history, InjectionConfig, UserTimeline, CONTEXT_SAMPLES};
use crate::model::{generate_chunk, Backend, ChunkRequest, DecoderLayout, EncoderSequence, InjectionGuidance};
use crate::sampling::{seeded_rng, SamplerConfig, SamplerRng};
use crate::style::{
    cosine, mix, quantize_style, Embedder, Prompt, PromptMix, StyleEmbedding, StyleTokens,
    DEFAULT_ACTIVE_DEPTH, TRANSITION_SCHEDULE,
};
use crate::tokens::{Chunk, CHUNK_SECONDS, HISTORY_CHUNKS};

/// Per-chunk conditioning; replaced only at chunk boundaries.
#[derive(Clone, Debug, Default)]
pub struct Conditioning {
    pub prompts: PromptMix,
    pub sampler: SamplerConfig,
    /// Offsets for the control-token prefix; ignored without self-conditioning.
    pub prior: Option<ControlPrior>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StreamConfig {
    pub seed: u64,
    pub layout: DecoderLayout,
    /// Style quantizer levels kept; deeper levels are padded.
    pub style_depth: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            layout: DecoderLayout::ACOUSTIC_ONLY,
            style_depth: DEFAULT_ACTIVE_DEPTH,
        }
    }
}

/// Everything a step reads from or writes to between chunks.
#[derive(Clone)]
pub struct StreamState {
    history: VecDeque<Chunk>,
    chunk_index: u64,
    rng: SamplerRng,
    synth: Synthesizer,
    /// The last (up to) ten seconds of output.
    recent: StereoAudio,
}

impl StreamState {
    pub fn new(seed: u64) -> Self {
        Self {
            history: VecDeque::with_capacity(HISTORY_CHUNKS),
            chunk_index: 0,
            rng: seeded_rng(seed),
            synth: Synthesizer::new(),
            recent: StereoAudio::default(),
        }
    }

    pub fn history(&self) -> Vec<Chunk> {
        self.history.iter().cloned().collect()
    }

    pub fn chunk_index(&self) -> u64 {
        self.chunk_index
    }

    pub fn recent_audio(&self) -> &StereoAudio {
        &self.recent
    }

    /// Output-timeline sample at which the next chunk starts.
    pub fn timeline_end(&self) -> i64 {
        self.chunk_index as i64 * CHUNK_SAMPLES as i64
    }
}

/// Optional live-audio input for a step.
#[derive(Clone, Copy)]
pub struct InjectionInput<'a> {
    pub config: &'a InjectionConfig,
    pub user: &'a UserTimeline,
}

/// What one step produced, with enough recorded to replay it.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub chunk_index: u64,
    pub audio: StereoAudio,
    /// Generated tokens at depth 16.
    pub tokens: Chunk,
    pub controls: Option<[u16; 4]>,
    pub style: StyleEmbedding,
    pub style_tokens: StyleTokens,
    pub encoder: EncoderSequence,
    /// Seed of the chunk's sampling generator.
    pub rng_seed: u64,
    /// Whether the chunk was sampled against a mixed (injected) context.
    pub injected: bool,
}

/// A stream engine: one backend, one embedder, one state.
pub struct Stream {
    backend: Arc<dyn Backend>,
    embedder: Arc<dyn Embedder>,
    codec: &'static Codec,
    config: StreamConfig,
    state: StreamState,
}

impl Stream {
    pub fn new(backend: Arc<dyn Backend>, embedder: Arc<dyn Embedder>, config: StreamConfig) -> Self {
        Self {
            backend,
            embedder,
            codec: Codec::shared(),
            config,
            state: StreamState::new(config.seed),
        }
    }

    pub fn state(&self) -> &StreamState {
        &self.state
    }

    pub fn config(&self) -> &StreamConfig {
        &self.config
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend.as_ref()
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn chunk_index(&self) -> u64 {
        self.state.chunk_index
    }

    /// Generates and decodes the next 2 s chunk. On failure the state is left
    /// untouched and the error carries the chunk index.
    pub fn step(&mut self, cond: &Conditioning, injection: Option<InjectionInput<'_>>) -> Result<StepOutput> {
        let index = self.state.chunk_index;
        self.try_step(cond, injection).map_err(|e| Error::Stream {
            chunk: index,
            source: Box::new(e),
        })
    }

    fn try_step(&mut self, cond: &Conditioning, injection: Option<InjectionInput<'_>>) -> Result<StepOutput> {
        let index = self.state.chunk_index;
        let style = cond.prompts.resolve(self.embedder.as_ref())?;
        let style_tokens = quantize_style(&style, self.config.style_depth)?;
        let history = self.state.history();
        let seq = EncoderSequence::assemble(&history, &style_tokens)?;

        let mixed = match injection {
            Some(inj) => mixed_history(
                self.codec,
                &history,
                &self.state.recent,
                self.state.timeline_end(),
                inj.user,
                inj.config,
            )?
            .map(|h| EncoderSequence::assemble(&h, &style_tokens))
            .transpose()?,
            None => None,
        };

        let mut rng = self.state.rng.clone();
        let rng_seed = rng.next_u64();
        let request = ChunkRequest {
            seq: mixed.as_ref().unwrap_or(&seq),
            layout: self.config.layout,
            sampler: &cond.sampler,
            prior: cond.prior.as_ref(),
            injection: match (&mixed, injection) {
                (Some(_), Some(inj)) => Some(InjectionGuidance {
                    model_only: &seq,
                    weight: inj.config.guidance_weight,
                }),
                _ => None,
            },
            rng_seed,
        };
        let generated = generate_chunk(self.backend.as_ref(), &request)?;
        let mut synth = self.state.synth.clone();
        let audio = self.codec.decode_chunk(&generated.chunk, &mut synth)?;
        let coarse = generated.chunk.coarse_view()?;

        // Commit only after every fallible step succeeded.
        let state = &mut self.state;
        state.rng = rng;
        state.synth = synth;
        if state.history.len() == HISTORY_CHUNKS {
            state.history.pop_front();
        }
        state.history.push_back(coarse);
        state.recent.append(&audio);
        let excess = state.recent.len().saturating_sub(CONTEXT_SAMPLES);
        if excess > 0 {
            state.recent.left.drain(..excess);
            state.recent.right.drain(..excess);
        }
        state.chunk_index += 1;

        Ok(StepOutput {
            chunk_index: index,
            audio,
            tokens: generated.chunk,
            controls: generated.controls,
            style,
            style_tokens,
            injected: mixed.is_some(),
            encoder: seq,
            rng_seed,
        })
    }
}

/// Seconds on some timeline; real or simulated.
pub trait Clock: Send + Sync {
    fn now(&self) -> f64;
    /// Blocks until `now() >= t`.
    fn sleep_until(&self, t: f64);
}

pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }

    fn sleep_until(&self, t: f64) {
        let wait = t - self.now();
        if wait > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

/// A manually advanced clock; sleeping jumps straight to the deadline.
#[derive(Default)]
pub struct FakeClock {
    now: Mutex<f64>,
}

impl FakeClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, seconds: f64) {
        *self.now.lock().expect("clock lock") += seconds;
    }
}

impl Clock for FakeClock {
    fn now(&self) -> f64 {
        *self.now.lock().expect("clock lock")
    }

    fn sleep_until(&self, t: f64) {
        let mut now = self.now.lock().expect("clock lock");
        if *now < t {
            *now = t;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pacing {
    /// Generate chunk i+1 while chunk i plays; late chunks cause underruns.
    Realtime,
    /// Generate as fast as possible.
    Offline,
}

/// Playback placement of one chunk.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Slot {
    pub play_start: f64,
    /// Silence inserted before this chunk because it was late.
    pub silence: f64,
}

impl Slot {
    pub fn underrun(&self) -> bool {
        self.silence > 0.0
    }
}

/// Playback schedule: chunk `i + 1` starts at `max(start_i + 2 s, ready_{i+1})`.
#[derive(Clone, Debug, Default)]
pub struct Pacer {
    last_start: Option<f64>,
}

impl Pacer {
    /// When chunk `i` begins playing, the producer may start on chunk `i + 1`.
    pub fn generation_start(&self) -> Option<f64> {
        self.last_start
    }

    pub fn schedule(&mut self, ready: f64) -> Slot {
        let slot = match self.last_start {
            None => Slot { play_start: ready, silence: 0.0 },
            Some(prev) => {
                let due = prev + CHUNK_SECONDS as f64;
                Slot {
                    play_start: due.max(ready),
                    silence: (ready - due).max(0.0),
                }
            }
        };
        self.last_start = Some(slot.play_start);
        slot
    }

    /// When the audio scheduled so far finishes playing.
    pub fn playback_end(&self) -> Option<f64> {
        self.last_start.map(|s| s + CHUNK_SECONDS as f64)
    }
}

/// Inputs for one chunk boundary.
#[derive(Clone, Debug, Default)]
pub struct Boundary {
    pub conditioning: Conditioning,
    pub injection: Option<(InjectionConfig, UserTimeline)>,
    /// Receipt times of the control changes that take effect with this chunk.
    pub received: Vec<f64>,
}

/// One generated chunk with its schedule and measurements.
#[derive(Clone, Debug)]
pub struct PacedChunk {
    pub output: StepOutput,
    pub latency: f64,
    pub slot: Slot,
    /// Control delays (first affected sample minus receipt time).
    pub delays: Vec<f64>,
}

/// Per-chunk measurements and their running totals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StreamMetrics {
    pub rows: Vec<MetricsRow>,
    pub total_latency: f64,
    pub underruns: u64,
    pub silence_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub chunk_index: u64,
    pub latency: f64,
    pub rtf_chunk: f64,
    pub rtf_cum: f64,
    pub delays: Vec<f64>,
    pub underrun: bool,
}

/// `T / L` with `T` seconds of audio produced in `L` seconds.
pub fn rtf(audio_seconds: f64, latency: f64) -> f64 {
    if latency > 0.0 {
        audio_seconds / latency
    } else {
        f64::INFINITY
    }
}

impl StreamMetrics {
    pub fn record(&mut self, chunk_index: u64, latency: f64, slot: Slot, delays: Vec<f64>) -> &MetricsRow {
        self.total_latency += latency;
        if slot.underrun() {
            self.underruns += 1;
            self.silence_seconds += slot.silence;
        }
        let produced = (self.rows.len() + 1) as f64 * CHUNK_SECONDS as f64;
        self.rows.push(MetricsRow {
            chunk_index,
            latency,
            rtf_chunk: rtf(CHUNK_SECONDS as f64, latency),
            rtf_cum: rtf(produced, self.total_latency),
            delays,
            underrun: slot.underrun(),
        });
        self.rows.last().expect("just pushed")
    }

    pub fn chunks(&self) -> usize {
        self.rows.len()
    }

    /// Seconds of audio generated (`T`).
    pub fn audio_seconds(&self) -> f64 {
        self.rows.len() as f64 * CHUNK_SECONDS as f64
    }

    pub fn cumulative_rtf(&self) -> f64 {
        rtf(self.audio_seconds(), self.total_latency)
    }

    pub const CSV_HEADER: &'static str = "chunk_index,L_chunk,rtf_chunk,rtf_cum,delay_events";

    /// One line per chunk; delays are `;`-separated seconds.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for row in &self.rows {
            let delays: Vec<String> = row.delays.iter().map(|d| format!("{d:.6}")).collect();
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{}",
                row.chunk_index,
                row.latency,
                row.rtf_chunk,
                row.rtf_cum,
                delays.join(";")
            )?;
        }
        Ok(())
    }
}

/// Drives `stream` until `boundary` returns `None`.
///
/// At each boundary (in realtime mode: when the previous chunk starts
/// playing) `boundary` receives the next chunk index and the current time and
/// returns that chunk's inputs. `emit` sees every chunk with its schedule.
/// In realtime mode the call returns once the last chunk has finished playing.
pub fn run<B, E>(
    stream: &mut Stream,
    clock: &dyn Clock,
    pacing: Pacing,
    mut boundary: B,
    mut emit: E,
) -> Result<StreamMetrics>
where
    B: FnMut(u64, f64) -> Result<Option<Boundary>>,
    E: FnMut(&PacedChunk) -> Result<()>,
{
    let mut pacer = Pacer::default();
    let mut metrics = StreamMetrics::default();
    loop {
        if pacing == Pacing::Realtime {
            if let Some(t) = pacer.generation_start() {
                clock.sleep_until(t);
            }
        }
        let start = clock.now();
        let Some(b) = boundary(stream.chunk_index(), start)? else {
            break;
        };
        let injection = b
            .injection
            .as_ref()
            .map(|(config, user)| InjectionInput { config, user });
        let output = stream.step(&b.conditioning, injection)?;
        let ready = clock.now();
        let latency = ready - start;
        let slot = match pacing {
            Pacing::Realtime => pacer.schedule(ready),
            Pacing::Offline => Slot { play_start: ready, silence: 0.0 },
        };
        let delays: Vec<f64> = b.received.iter().map(|&t| slot.play_start - t).collect();
        metrics.record(output.chunk_index, latency, slot, delays.clone());
        emit(&PacedChunk {
            output,
            latency,
            slot,
            delays,
        })?;
    }
    if pacing == Pacing::Realtime {
        if let Some(end) = pacer.playback_end() {
            clock.sleep_until(end);
        }
    }
    Ok(metrics)
}

/// Number of 2 s chunks needed to cover `seconds`.
pub fn chunks_for(seconds: f64) -> u64 {
    (seconds / CHUNK_SECONDS as f64).ceil().max(0.0) as u64
}

/// Chunks per 10 s transition window and windows per transition.
pub const TRANSITION_WINDOW_CHUNKS: u64 = 5;
pub const TRANSITION_WINDOWS: usize = TRANSITION_SCHEDULE.len();

/// Cosine similarities against the two endpoints and the interpolated target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarities {
    pub to_a: f64,
    pub to_b: f64,
    pub to_target: f64,
}

impl Similarities {
    fn of(x: &[f64], a: &StyleEmbedding, b: &StyleEmbedding, target: &StyleEmbedding) -> Self {
        Self {
            to_a: cosine(x, a.vector()),
            to_b: cosine(x, b.vector()),
            to_target: cosine(x, target.vector()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TransitionWindow {
    /// `(weight_b, weight_a)`.
    pub weights: (f64, f64),
    pub target: StyleEmbedding,
    /// The style actually used to condition the window's chunks.
    pub conditioning: StyleEmbedding,
    pub conditioning_similarity: Similarities,
    /// Audio embedding of the window's output; zero similarity if silent.
    pub audio_similarity: Similarities,
}

#[derive(Clone, Debug)]
pub struct TransitionTrace {
    pub windows: Vec<TransitionWindow>,
    pub audio: StereoAudio,
    pub metrics: StreamMetrics,
}

impl TransitionTrace {
    pub const CSV_HEADER: &'static str =
        "window,weight_b,weight_a,cond_sim_a,cond_sim_b,cond_sim_target,audio_sim_a,audio_sim_b,audio_sim_target";

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for (i, w) in self.windows.iter().enumerate() {
            let (c, a) = (w.conditioning_similarity, w.audio_similarity);
            writeln!(
                out,
                "{i},{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
                w.weights.0, w.weights.1, c.to_a, c.to_b, c.to_target, a.to_a, a.to_b, a.to_target
            )?;
        }
        Ok(())
    }
}

/// Runs a 60 s stepwise transition from `a` to `b`: six 10 s windows whose
/// style mix follows the interpolation schedule.
pub fn run_transition(stream: &mut Stream, a: &Prompt, b: &Prompt, sampler: SamplerConfig) -> Result<TransitionTrace> {
    let ea = a.embed(stream.embedder())?;
    let eb = b.embed(stream.embedder())?;
    let mut windows = Vec::with_capacity(TRANSITION_WINDOWS);
    let mut audio = StereoAudio::default();
    let mut metrics = StreamMetrics::default();
    for &(wb, wa) in &TRANSITION_SCHEDULE {
        let cond = Conditioning {
            prompts: PromptMix {
                entries: vec![(a.clone(), wa), (b.clone(), wb)],
            },
            sampler,
            prior: None,
        };
        let target = mix(&[(ea.clone(), wa), (eb.clone(), wb)])?;
        let mut window_audio = StereoAudio::default();
        let mut conditioning = None;
        for _ in 0..TRANSITION_WINDOW_CHUNKS {
            let started = Instant::now();
            let out = stream.step(&cond, None)?;
            let latency = started.elapsed().as_secs_f64();
            metrics.record(out.chunk_index, latency, Slot { play_start: 0.0, silence: 0.0 }, Vec::new());
            window_audio.append(&out.audio);
            conditioning = Some(out.style);
        }
        let conditioning = conditioning.expect("windows are non-empty");
        let heard = stream
            .embedder()
            .embed_audio(&window_audio)
            .map(|e| e.vector().to_vec())
            .unwrap_or_else(|_| vec![0.0; ea.vector().len()]);
        windows.push(TransitionWindow {
            weights: (wb, wa),
            conditioning_similarity: Similarities::of(conditioning.vector(), &ea, &eb, &target),
            audio_similarity: Similarities::of(&heard, &ea, &eb, &target),
            target,
            conditioning,
        });
        audio.append(&window_audio);
    }
    Ok(TransitionTrace { windows, audio, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PatternBackend, TinyBackend, DecodeState, TINY_DEFAULT_SEED};
    use crate::style::ToyEmbedder;
    use crate::tokens::PAD_ID;

    fn stream(seed: u64) -> Stream {
        Stream::new(Arc::new(PatternBackend), Arc::new(ToyEmbedder), StreamConfig { seed, ..Default::default() })
    }

    fn cond(text: &str) -> Conditioning {
        Conditioning {
            prompts: PromptMix::text(text),
            ..Default::default()
        }
    }

    /// Pattern backend that advances a fake clock whenever decoding starts.
    struct Slow {
        clock: Arc<FakeClock>,
        seconds: f64,
    }

    impl Backend for Slow {
        fn name(&self) -> &str {
            "slow"
        }

        fn start<'a>(&'a self, seq: &'a EncoderSequence, layout: DecoderLayout) -> Box<dyn DecodeState + 'a> {
            self.clock.advance(self.seconds);
            PatternBackend.start(seq, layout)
        }
    }

    fn slow_stream(clock: &Arc<FakeClock>, seconds: f64) -> Stream {
        let backend = Arc::new(Slow { clock: clock.clone(), seconds });
        Stream::new(backend, Arc::new(ToyEmbedder), StreamConfig::default())
    }

    fn greedy(text: &str) -> Conditioning {
        Conditioning {
            sampler: SamplerConfig::greedy(),
            ..cond(text)
        }
    }

    #[test]
    fn cold_start_and_history_eviction() {
        let mut s = stream(1);
        let c = cond("Ambient");
        let first = s.step(&c, None).unwrap();
        assert_eq!(first.encoder.audio().iter().filter(|&&i| i == PAD_ID).count(), 1000);
        assert_eq!(first.audio.len(), 96_000);
        let mut coarse = vec![first.tokens.coarse_view().unwrap()];
        for _ in 1..7 {
            coarse.push(s.step(&c, None).unwrap().tokens.coarse_view().unwrap());
        }
        assert_eq!(s.chunk_index(), 7);
        assert_eq!(s.state().history(), coarse[2..7].to_vec());
        assert_eq!(s.state().recent_audio().len(), CONTEXT_SAMPLES);
    }

    #[test]
    fn chunk_rtf_arithmetic() {
        assert_eq!(rtf(2.0, 1.0), 2.0);
        let mut m = StreamMetrics::default();
        m.record(0, 1.0, Slot { play_start: 0.0, silence: 0.0 }, vec![]);
        m.record(1, 3.0, Slot { play_start: 2.0, silence: 1.0 }, vec![2.5]);
        assert_eq!(m.rows[0].rtf_chunk, 2.0);
        assert_eq!(m.cumulative_rtf(), 1.0);
        assert_eq!(m.underruns, 1);
        let mut csv = Vec::new();
        m.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().next().unwrap(), StreamMetrics::CSV_HEADER);
        assert_eq!(text.lines().nth(2).unwrap(), "1,3.000000,0.666667,1.000000,2.500000");
    }

    #[test]
    fn replay_of_recorded_trace_is_token_exact() {
        let mut s = Stream::new(
            Arc::new(TinyBackend::new(TINY_DEFAULT_SEED)),
            Arc::new(ToyEmbedder),
            StreamConfig { seed: 9, ..Default::default() },
        );
        let c = Conditioning {
            sampler: SamplerConfig { cfg_weight: 0.0, ..Default::default() },
            ..cond("Bongos")
        };
        for _ in 0..3 {
            let out = s.step(&c, None).unwrap();
            let replay = generate_chunk(&TinyBackend::new(TINY_DEFAULT_SEED), &ChunkRequest::new(&out.encoder, &c.sampler, out.rng_seed)).unwrap();
            assert_eq!(replay.chunk, out.tokens);
        }
    }

    #[test]
    fn identical_seeds_give_identical_audio() {
        let c = cond("Harp");
        let run = |seed| {
            let mut s = stream(seed);
            (0..3).map(|_| s.step(&c, None).unwrap().audio).collect::<Vec<_>>()
        };
        assert_eq!(run(4), run(4));
    }

    #[test]
    fn failed_step_reports_chunk_and_keeps_state() {
        let mut s = stream(0);
        s.step(&cond("Harp"), None).unwrap();
        let bad = Conditioning {
            prompts: PromptMix { entries: vec![(Prompt::Text("x".into()), 0.0)] },
            ..Default::default()
        };
        match s.step(&bad, None) {
            Err(Error::Stream { chunk, .. }) => assert_eq!(chunk, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.chunk_index(), 1);
    }

    #[test]
    fn fast_backend_never_underruns() {
        let clock = Arc::new(FakeClock::new());
        let mut s = slow_stream(&clock, 0.5);
        let c = greedy("Techno");
        let metrics = run(
            &mut s,
            clock.as_ref(),
            Pacing::Realtime,
            |i, _| Ok((i < 30).then(|| Boundary { conditioning: c.clone(), ..Default::default() })),
            |_| Ok(()),
        )
        .unwrap();
        assert_eq!(metrics.chunks(), 30);
        assert_eq!(metrics.underruns, 0);
        assert_eq!(metrics.cumulative_rtf(), 4.0);
        // First chunk plays at 0.5 s; the last ends 60 s later.
        assert_eq!(clock.now(), 60.5);
    }

    #[test]
    fn slow_backend_underruns_but_stays_continuous() {
        let clock = Arc::new(FakeClock::new());
        let mut s = slow_stream(&clock, 3.0);
        let c = greedy("Techno");
        let mut starts = Vec::new();
        let mut samples = 0;
        let metrics = run(
            &mut s,
            clock.as_ref(),
            Pacing::Realtime,
            |i, _| Ok((i < 5).then(|| Boundary { conditioning: c.clone(), ..Default::default() })),
            |p| {
                starts.push(p.slot.play_start);
                samples += p.output.audio.len();
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(metrics.underruns, 4);
        assert_eq!(metrics.silence_seconds, 4.0);
        assert_eq!(starts, vec![3.0, 6.0, 9.0, 12.0, 15.0]);
        assert_eq!(samples, 5 * CHUNK_SAMPLES);
    }

    #[test]
    fn control_delay_covers_buffered_audio() {
        let clock = Arc::new(FakeClock::new());
        let mut s = slow_stream(&clock, 0.5);
        let received = 1.5;
        let mut pending = vec![received];
        let mut delays: Vec<f64> = Vec::new();
        let mut applied_at = None;
        run(
            &mut s,
            clock.as_ref(),
            Pacing::Realtime,
            |i, now| {
                if i == 4 {
                    return Ok(None);
                }
                let mut b = Boundary { conditioning: greedy("Techno"), ..Default::default() };
                if pending.first().is_some_and(|&t| t <= now) {
                    b.received = std::mem::take(&mut pending);
                    applied_at = Some(i);
                }
                Ok(Some(b))
            },
            |p| {
                delays.extend(&p.delays);
                Ok(())
            },
        )
        .unwrap();
        // Chunk 0 plays [0.5, 2.5), chunk 1 is buffered for [2.5, 4.5).
        let buffered = 4.5 - received;
        assert_eq!(applied_at, Some(2));
        assert_eq!(delays.len(), 1);
        assert!(delays[0] >= buffered, "{} < {buffered}", delays[0]);
        assert_eq!(delays[0], 3.0);
    }

    #[test]
    fn transition_follows_the_schedule() {
        let mut s = stream(2);
        let a = Prompt::Text("Accordion".into());
        let b = Prompt::Text("Ambient".into());
        let trace = run_transition(&mut s, &a, &b, SamplerConfig::default()).unwrap();
        assert_eq!(trace.windows.len(), 6);
        assert_eq!(trace.audio.len(), 30 * CHUNK_SAMPLES);
        let ea = ToyEmbedder.embed_text("Accordion").unwrap();
        let eb = ToyEmbedder.embed_text("Ambient").unwrap();
        assert_eq!(trace.windows[0].conditioning, ea);
        assert_eq!(trace.windows[5].conditioning, eb);
        for (w, &(wb, wa)) in trace.windows.iter().zip(&TRANSITION_SCHEDULE) {
            assert_eq!(w.weights, (wb, wa));
            assert_eq!(w.conditioning, mix(&[(ea.clone(), wa), (eb.clone(), wb)]).unwrap());
        }
        for pair in trace.windows.windows(2) {
            assert!(pair[1].conditioning_similarity.to_a <= pair[0].conditioning_similarity.to_a);
            assert!(pair[1].conditioning_similarity.to_b >= pair[0].conditioning_similarity.to_b);
        }
        let mut csv = Vec::new();
        trace.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 7);
    }

    #[test]
    fn chunk_counts() {
        assert_eq!(chunks_for(47.0), 24);
        assert_eq!(chunks_for(2.0), 1);
        assert_eq!(chunks_for(60.0), 30);
    }
}
