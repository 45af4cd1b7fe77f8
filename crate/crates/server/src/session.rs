//! Per-connection session state.
//!
//! Client messages are validated when they arrive and staged; staged changes
//! and captured user audio are applied together at the next chunk boundary.
//! Every applied change is logged with the chunk it first affected, so a log
//! replays through a fresh session to the same audio regardless of timing.

use std::io::{BufRead, Write};
use std::sync::Arc;

use livemusic::audio::{StereoAudio, SAMPLE_RATE};
use livemusic::inject::{live_audio_prompt, UserTimeline};
use livemusic::stream::{run, Boundary, Clock, Conditioning, PacedChunk, Pacing, Stream, StreamMetrics, SystemClock};
use livemusic::style::{Embedder, EmbeddingStore, Prompt, PromptMix};
use livemusic::tokens::{CHUNK_SECONDS, FRAME_RATE_HZ, HISTORY_CHUNKS};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{validate_prompts, ControlSettings, InjectionSettings, PromptSpec, SamplerSettings, SessionConfig};
use crate::error::{ServiceError, ServiceResult};
use crate::protocol::{BinaryFrame, ClientMessage, ServerMessage};

/// Settings that condition generation; changed only at chunk boundaries.
#[derive(Clone, Debug, PartialEq)]
struct Settings {
    prompts: Vec<PromptSpec>,
    sampler: SamplerSettings,
    controls: Option<ControlSettings>,
    injection: InjectionSettings,
}

impl Settings {
    fn from_config(config: &SessionConfig) -> Self {
        Self {
            prompts: config.prompts.clone(),
            sampler: config.sampler,
            controls: config.controls,
            injection: config.injection,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Config {
        config: SessionConfig,
    },
    Message {
        chunk: u64,
        message: ClientMessage,
    },
    /// User audio; `samples` is the interleaved s16 payload of the frame.
    Audio {
        chunk: u64,
        timestamp: u32,
        samples: Vec<i16>,
    },
}

impl LogEntry {
    fn chunk(&self) -> Option<u64> {
        match self {
            LogEntry::Config { .. } => None,
            LogEntry::Message { chunk, .. } | LogEntry::Audio { chunk, .. } => Some(*chunk),
        }
    }
}

/// What the caller must do after a handled message.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub reply: Option<ServerMessage>,
    /// The session just started and nothing is generating yet.
    pub start_generation: bool,
}

impl Outcome {
    fn reply(msg: ServerMessage) -> Self {
        Self {
            reply: Some(msg),
            start_generation: false,
        }
    }
}

struct Staged {
    message: ClientMessage,
    received: f64,
}

pub struct Session {
    config: SessionConfig,
    store: Option<Arc<EmbeddingStore>>,
    embedder: Arc<dyn Embedder>,
    active: Settings,
    /// `active` with every staged change applied; new messages validate against it.
    staged_view: Settings,
    staged: Vec<Staged>,
    pending_audio: Vec<(u32, StereoAudio)>,
    user: UserTimeline,
    running: bool,
    stop_requested: bool,
    closed: bool,
    next_chunk: u64,
    limit: Option<u64>,
    log: Vec<LogEntry>,
}

impl Session {
    pub fn new(config: SessionConfig) -> ServiceResult<Self> {
        config.validate()?;
        let store = config.load_store()?;
        let embedder = config.create_embedder(store.as_deref());
        let active = Settings::from_config(&config);
        Ok(Self {
            log: vec![LogEntry::Config { config: config.clone() }],
            config,
            store,
            embedder,
            staged_view: active.clone(),
            active,
            staged: Vec::new(),
            pending_audio: Vec::new(),
            user: UserTimeline::new(),
            running: false,
            stop_requested: false,
            closed: false,
            next_chunk: 0,
            limit: None,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn create_stream(&self) -> ServiceResult<Stream> {
        Ok(Stream::new(
            self.config.create_backend()?,
            self.embedder.clone(),
            self.config.stream_config(),
        ))
    }

    pub fn hello(&self) -> ServerMessage {
        ServerMessage::Session {
            sample_rate: SAMPLE_RATE,
            chunk_seconds: CHUNK_SECONDS,
            history_chunks: HISTORY_CHUNKS,
            frame_rate_hz: FRAME_RATE_HZ,
            config: self.config.clone(),
        }
    }

    /// Stop after `chunks` chunks in total have been generated.
    pub fn set_limit(&mut self, chunks: Option<u64>) {
        self.limit = chunks;
    }

    pub fn is_running(&self) -> bool {
        self.running
    }

    pub fn next_chunk(&self) -> u64 {
        self.next_chunk
    }

    /// Ends the session; the next boundary stops generation.
    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn write_log(&self, out: impl Write) -> ServiceResult<()> {
        write_log(&self.log, out)
    }

    /// Text frame in, at most one reply out; failures become error frames.
    pub fn handle_text(&mut self, text: &str, now: f64) -> Outcome {
        match ClientMessage::parse(text).and_then(|msg| self.handle(msg, now)) {
            Ok(outcome) => outcome,
            Err(e) => Outcome::reply(ServerMessage::error(&e)),
        }
    }

    /// Binary frame in; only user-audio frames are accepted from clients.
    pub fn handle_binary(&mut self, bytes: &[u8]) -> Option<ServerMessage> {
        let result = BinaryFrame::decode(bytes).and_then(|frame| match frame {
            BinaryFrame::Input { timestamp, audio } => {
                self.push_audio(timestamp, audio);
                Ok(())
            }
            BinaryFrame::Audio { .. } => Err(ServiceError::rejected(
                "bad_frame",
                "clients send MRTI input frames, not MRTA",
            )),
        });
        result.err().map(|e| ServerMessage::error(&e))
    }

    /// Queues user audio placed at output-timeline sample `timestamp`.
    pub fn push_audio(&mut self, timestamp: u32, audio: StereoAudio) {
        if !audio.is_empty() {
            self.pending_audio.push((timestamp, audio));
        }
    }

    pub fn handle(&mut self, msg: ClientMessage, now: f64) -> ServiceResult<Outcome> {
        match msg {
            ClientMessage::Ping => Ok(Outcome::reply(ServerMessage::Pong {
                next_chunk: self.next_chunk,
            })),
            ClientMessage::Start => {
                let start_generation = !self.running;
                // Start before a pending stop took effect just cancels it.
                self.stop_requested = false;
                if start_generation {
                    self.running = true;
                    self.log.push(LogEntry::Message {
                        chunk: self.next_chunk,
                        message: ClientMessage::Start,
                    });
                }
                Ok(Outcome {
                    reply: Some(self.ack("start", None)),
                    start_generation,
                })
            }
            ClientMessage::Stop => {
                if self.running {
                    self.stop_requested = true;
                }
                Ok(Outcome::reply(self.ack("stop", None)))
            }
            mutation => {
                let kind = mutation.kind();
                let mut next = self.staged_view.clone();
                let echo = self.apply(&mut next, &mutation)?;
                self.staged_view = next;
                self.staged.push(Staged {
                    message: mutation,
                    received: now,
                });
                Ok(Outcome::reply(self.ack(kind, Some(echo))))
            }
        }
    }

    fn ack(&self, kind: &str, echo: Option<serde_json::Value>) -> ServerMessage {
        ServerMessage::Ack {
            for_type: kind.to_string(),
            active_from_chunk: self.next_chunk,
            echo,
        }
    }

    /// Applies a mutation to `settings`, returning the resulting section.
    fn apply(&self, settings: &mut Settings, msg: &ClientMessage) -> ServiceResult<serde_json::Value> {
        match msg {
            ClientMessage::SetPrompts { prompts } => {
                validate_prompts(prompts)?;
                for p in prompts {
                    if let Some(key) = &p.embedding_ref {
                        self.lookup(key)?;
                    }
                }
                settings.prompts = prompts.clone();
                Ok(json!({ "prompts": prompts }))
            }
            ClientMessage::SetSampler {
                temperature,
                top_k,
                cfg_weight,
            } => {
                let mut s = settings.sampler;
                s.temperature = temperature.unwrap_or(s.temperature);
                s.top_k = top_k.unwrap_or(s.top_k);
                s.cfg_weight = cfg_weight.unwrap_or(s.cfg_weight);
                s.to_config()?;
                settings.sampler = s;
                Ok(serde_json::to_value(s)?)
            }
            ClientMessage::SetControls { controls, stems } => {
                if stems.is_some() {
                    return Err(ServiceError::rejected(
                        "unsupported",
                        "stem controls are not supported by this engine",
                    ));
                }
                controls.to_prior()?;
                settings.controls = Some(*controls);
                Ok(serde_json::to_value(controls)?)
            }
            ClientMessage::SetInjection { injection } => {
                injection.to_config()?;
                settings.injection = *injection;
                Ok(serde_json::to_value(injection)?)
            }
            ClientMessage::Start | ClientMessage::Stop | ClientMessage::Ping => {
                unreachable!("control messages are not mutations")
            }
        }
    }

    fn lookup(&self, key: &str) -> ServiceResult<Prompt> {
        let store = self
            .store
            .as_ref()
            .ok_or_else(|| ServiceError::invalid("embedding_ref needs an embedding store"))?;
        store
            .get(key)
            .map(|e| Prompt::Embedding(e.clone()))
            .ok_or_else(|| ServiceError::invalid(format!("no stored embedding `{key}`")))
    }

    /// Applies staged changes and audio, then returns the inputs of chunk
    /// `chunk`, or `None` once the session has stopped.
    pub fn boundary(&mut self, chunk: u64, _now: f64) -> ServiceResult<Option<Boundary>> {
        debug_assert_eq!(chunk, self.next_chunk, "boundaries arrive in order");
        let limit_hit = self.limit.is_some_and(|l| chunk >= l);
        if !self.running || self.stop_requested || self.closed || limit_hit {
            if self.running {
                self.running = false;
                self.stop_requested = false;
                self.log.push(LogEntry::Message {
                    chunk,
                    message: ClientMessage::Stop,
                });
            }
            return Ok(None);
        }

        let mut received = Vec::new();
        for staged in self.staged.drain(..) {
            received.push(staged.received);
            self.log.push(LogEntry::Message {
                chunk,
                message: staged.message,
            });
        }
        self.active = self.staged_view.clone();
        for (timestamp, audio) in self.pending_audio.drain(..) {
            self.user.write(timestamp as i64, &audio);
            self.log.push(LogEntry::Audio {
                chunk,
                timestamp,
                samples: to_i16(&audio),
            });
        }
        self.next_chunk = chunk + 1;
        Ok(Some(self.conditioning_for(received)?))
    }

    fn conditioning_for(&self, received: Vec<f64>) -> ServiceResult<Boundary> {
        let settings = &self.active;
        let mut prompts = PromptMix::default();
        for p in &settings.prompts {
            if let Some(text) = &p.text {
                prompts.push(Prompt::Text(text.clone()), p.weight);
            } else if let Some(key) = &p.embedding_ref {
                prompts.push(self.lookup(key)?, p.weight);
            } else if let Some((prompt, w)) = live_audio_prompt(&self.user, self.embedder.as_ref(), p.weight) {
                prompts.push(prompt, w);
            }
        }
        let injection = settings.injection.to_config()?;
        if injection.live_prompt_weight > 0.0 {
            if let Some((prompt, w)) =
                live_audio_prompt(&self.user, self.embedder.as_ref(), injection.live_prompt_weight)
            {
                prompts.push(prompt, w);
            }
        }
        let prior = match &settings.controls {
            Some(c) => Some(c.to_prior()?).filter(|p| !p.is_zero()),
            None => None,
        };
        // Gain 0 or no captured audio: run exactly as without injection.
        let injection = (injection.gain > 0.0 && self.user.coverage().is_some())
            .then(|| (injection, self.user.clone()));
        Ok(Boundary {
            conditioning: Conditioning {
                prompts,
                sampler: settings.sampler.to_config()?,
                prior,
            },
            injection,
            received,
        })
    }
}

fn to_i16(audio: &StereoAudio) -> Vec<i16> {
    audio
        .to_s16le()
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]))
        .collect()
}

fn from_i16(samples: &[i16]) -> ServiceResult<StereoAudio> {
    let bytes: Vec<u8> = samples.iter().flat_map(|s| s.to_le_bytes()).collect();
    Ok(StereoAudio::from_s16le(&bytes)?)
}

/// One JSON object per line, config first.
pub fn write_log(log: &[LogEntry], mut out: impl Write) -> ServiceResult<()> {
    for entry in log {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n").map_err(|e| ServiceError::io("session log", e))?;
    }
    out.flush().map_err(|e| ServiceError::io("session log", e))
}

pub fn read_log(input: impl BufRead) -> ServiceResult<Vec<LogEntry>> {
    let mut entries = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| ServiceError::io("session log", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line)
            .map_err(|e| ServiceError::Config(format!("session log line {}: {e}", n + 1)))?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Output of a session run to completion without pacing.
pub struct Rendered {
    pub audio: StereoAudio,
    pub metrics: StreamMetrics,
    pub chunks: Vec<PacedChunk>,
    pub log: Vec<LogEntry>,
}

/// Runs `session` offline, feeding `inject(chunk, session)` before each
/// boundary, until the session stops. Resumes after a stop while `more()`
/// reports that `inject` still has input.
pub fn run_offline(
    mut session: Session,
    clock: &dyn Clock,
    mut inject: impl FnMut(u64, f64, &mut Session) -> ServiceResult<()>,
    more: impl Fn(u64) -> bool,
) -> ServiceResult<Rendered> {
    let mut stream = session.create_stream()?;
    let mut audio = StereoAudio::silence(0);
    let mut chunks = Vec::new();
    let mut metrics = StreamMetrics::default();
    loop {
        let mut failure = None;
        let segment = run(
            &mut stream,
            clock,
            Pacing::Offline,
            |chunk, now| {
                let result = inject(chunk, now, &mut session).and_then(|()| session.boundary(chunk, now));
                result.or_else(|e| {
                    failure = Some(e);
                    Ok(None)
                })
            },
            |pc| {
                audio.append(&pc.output.audio);
                chunks.push(pc.clone());
                Ok(())
            },
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        for row in segment.rows {
            metrics.rows.push(row);
        }
        metrics.total_latency += segment.total_latency;
        let next = stream.chunk_index();
        if !more(next) {
            break;
        }
        // Stopped with input left: give the input a chance to restart it.
        inject(next, clock.now(), &mut session)?;
        if !session.is_running() {
            break;
        }
    }
    Ok(Rendered {
        audio,
        metrics,
        chunks,
        log: session.log,
    })
}

/// Re-runs a recorded session log through a fresh session.
pub fn replay(log: &[LogEntry]) -> ServiceResult<Rendered> {
    let config = match log.first() {
        Some(LogEntry::Config { config }) => config.clone(),
        _ => return Err(ServiceError::Config("session log must start with its config".into())),
    };
    let entries: Vec<&LogEntry> = log.iter().skip(1).collect();
    let last = entries.iter().filter_map(|e| e.chunk()).max().unwrap_or(0);
    let mut cursor = 0;
    let session = Session::new(config)?;
    run_offline(
        session,
        &SystemClock::new(),
        |chunk, now, session| {
            while let Some(entry) = entries.get(cursor) {
                if entry.chunk() != Some(chunk) {
                    break;
                }
                // A restart waits until the stop it follows has taken effect.
                if matches!(entry, LogEntry::Message { message: ClientMessage::Start, .. }) && session.is_running() {
                    break;
                }
                cursor += 1;
                match entry {
                    LogEntry::Message { message, .. } => {
                        // Accepted once already, so acceptance is deterministic.
                        session.handle(message.clone(), now)?;
                    }
                    LogEntry::Audio { timestamp, samples, .. } => {
                        session.push_audio(*timestamp, from_i16(samples)?);
                    }
                    LogEntry::Config { .. } => {
                        return Err(ServiceError::Config("config entry inside a session log".into()))
                    }
                }
            }
            Ok(())
        },
        |next| next <= last,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> SessionConfig {
        SessionConfig {
            seed: 11,
            ..Default::default()
        }
    }

    fn ack_chunk(o: &Outcome) -> u64 {
        match &o.reply {
            Some(ServerMessage::Ack { active_from_chunk, .. }) => *active_from_chunk,
            other => panic!("expected ack, got {other:?}"),
        }
    }

    #[test]
    fn changes_activate_at_the_next_boundary() {
        let mut s = Session::new(config()).unwrap();
        assert!(s.boundary(0, 0.0).unwrap().is_none(), "not started");
        let start = s.handle(ClientMessage::Start, 0.0).unwrap();
        assert!(start.start_generation);
        assert!(!s.handle(ClientMessage::Start, 0.0).unwrap().start_generation);
        let b0 = s.boundary(0, 0.0).unwrap().unwrap();
        assert!(b0.received.is_empty());
        assert_eq!(b0.conditioning.sampler.temperature, SamplerSettings::default().temperature);

        let o = s.handle_text(r#"{"type":"set_sampler","temperature":1.3,"top_k":40,"cfg_weight":5.0}"#, 0.5);
        assert_eq!(ack_chunk(&o), 1);
        match o.reply.unwrap() {
            ServerMessage::Ack { echo: Some(echo), .. } => {
                assert_eq!(echo, json!({"temperature":1.3,"top_k":40,"cfg_weight":5.0}));
            }
            other => panic!("{other:?}"),
        }
        let b1 = s.boundary(1, 2.0).unwrap().unwrap();
        assert_eq!(b1.received, vec![0.5]);
        assert_eq!(b1.conditioning.sampler.top_k, 40);
        assert_eq!(b1.conditioning.sampler.cfg_weight, 5.0);
    }

    #[test]
    fn prompt_weights_reach_the_conditioning() {
        let mut s = Session::new(config()).unwrap();
        s.handle(ClientMessage::Start, 0.0).unwrap();
        s.handle_text(
            r#"{"type":"set_prompts","prompts":[{"text":"Accordion","weight":0.2},{"text":"Ambient","weight":0.8}]}"#,
            0.0,
        );
        let b = s.boundary(0, 0.0).unwrap().unwrap();
        let weights: Vec<f64> = b.conditioning.prompts.entries.iter().map(|(_, w)| *w).collect();
        assert_eq!(weights, vec![0.2, 0.8]);
    }

    #[test]
    fn rejected_messages_leave_the_session_intact() {
        let mut s = Session::new(config()).unwrap();
        for (text, code) in [
            (r#"{"type":"warp"}"#, "unknown_type"),
            (r#"{"type":"set_sampler","temperature":-1}"#, "invalid_value"),
            (r#"{"type":"set_controls","stems":{"drums":false},"strength":1}"#, "unsupported"),
            (r#"{"type":"set_prompts","prompts":[{"embedding_ref":"x","weight":1}]}"#, "invalid_value"),
            (r#"{"type":"set_injection","mode":"looper"}"#, "invalid_value"),
        ] {
            match s.handle_text(text, 0.0).reply {
                Some(ServerMessage::Error { code: c, .. }) => assert_eq!(c, code, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        s.handle(ClientMessage::Start, 0.0).unwrap();
        let b = s.boundary(0, 0.0).unwrap().unwrap();
        assert!(b.received.is_empty());
        assert!(s.handle_binary(b"MRTA\0\0\0\0").is_some());
        assert!(s.handle_binary(b"MRTI\0\0\0\0\x01\0\x02\0").is_none());
    }

    #[test]
    fn stop_and_limit_end_generation() {
        let mut s = Session::new(config()).unwrap();
        s.handle(ClientMessage::Start, 0.0).unwrap();
        s.boundary(0, 0.0).unwrap().unwrap();
        s.handle(ClientMessage::Stop, 1.0).unwrap();
        assert!(s.boundary(1, 2.0).unwrap().is_none());
        assert!(!s.is_running());
        assert!(s.handle(ClientMessage::Start, 3.0).unwrap().start_generation);
        s.set_limit(Some(2));
        s.boundary(1, 3.0).unwrap().unwrap();
        assert!(s.boundary(2, 5.0).unwrap().is_none());
    }

    #[test]
    fn injection_only_with_gain_and_audio() {
        let mut s = Session::new(config()).unwrap();
        s.handle(ClientMessage::Start, 0.0).unwrap();
        assert!(s.boundary(0, 0.0).unwrap().unwrap().injection.is_none());
        s.push_audio(0, StereoAudio::mono(vec![0.1; 4800]));
        assert!(s.boundary(1, 0.0).unwrap().unwrap().injection.is_some());
        s.handle_text(r#"{"type":"set_injection","gain":0}"#, 0.0);
        assert!(s.boundary(2, 0.0).unwrap().unwrap().injection.is_none());
    }

    #[test]
    fn log_round_trips_and_replays() {
        let mut s = Session::new(config()).unwrap();
        s.handle(ClientMessage::Start, 0.0).unwrap();
        s.set_limit(Some(3));
        let mut stream = s.create_stream().unwrap();
        let mut live = StereoAudio::silence(0);
        let clock = livemusic::stream::FakeClock::new();
        run(
            &mut stream,
            &clock,
            Pacing::Offline,
            |chunk, now| {
                if chunk == 1 {
                    s.handle_text(r#"{"type":"set_controls","bpm":90,"strength":6}"#, now);
                    s.push_audio(90_000, StereoAudio::mono(vec![0.25; 24_000]));
                }
                Ok(s.boundary(chunk, now).unwrap())
            },
            |pc| {
                live.append(&pc.output.audio);
                Ok(())
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        s.write_log(&mut buf).unwrap();
        let log = read_log(&buf[..]).unwrap();
        assert_eq!(log, s.log());
        let replayed = replay(&log).unwrap();
        assert_eq!(replayed.audio.to_wav_bytes(), live.to_wav_bytes());
        assert_eq!(replayed.log, log);
    }
}
