//! Offline rendering: fixed-duration renders driven by a prompt schedule, and
//! prompt-pair transitions.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use livemusic::audio::SAMPLE_RATE;
use livemusic::stream::{chunks_for, run, run_transition, Clock, Pacing, StreamMetrics, SystemClock, TransitionTrace};
use livemusic::style::{parse_pairs, transition_pairs, Prompt};
use livemusic::tokens::CHUNK_SECONDS;

use crate::config::{validate_prompts, PromptSpec, SessionConfig};
use crate::error::{ServiceError, ServiceResult};
use crate::protocol::ClientMessage;
use crate::session::{run_offline, Rendered, Session};

/// Prompt mixes keyed by the chunk they first condition.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PromptSchedule {
    pub changes: Vec<(u64, Vec<PromptSpec>)>,
}

impl PromptSchedule {
    /// Parses `start_seconds<TAB>weight<TAB>text` lines. Lines sharing a start
    /// time form one mix, which takes effect at the first chunk boundary at or
    /// after that time. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> ServiceResult<Self> {
        let mut groups: Vec<(f64, Vec<PromptSpec>)> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| ServiceError::Config(format!("prompt schedule line {}: {what}", n + 1));
            let mut fields = line.splitn(3, '\t');
            let (Some(start), Some(weight), Some(prompt)) = (fields.next(), fields.next(), fields.next()) else {
                return Err(bad("expected `start<TAB>weight<TAB>text`"));
            };
            let start: f64 = start.trim().parse().map_err(|_| bad("start is not a number"))?;
            let weight: f64 = weight.trim().parse().map_err(|_| bad("weight is not a number"))?;
            if !(start.is_finite() && start >= 0.0) {
                return Err(bad("start must be a non-negative number of seconds"));
            }
            let spec = PromptSpec::text(prompt.trim(), weight);
            match groups.iter_mut().find(|(s, _)| *s == start) {
                Some((_, specs)) => specs.push(spec),
                None => groups.push((start, vec![spec])),
            }
        }
        groups.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut changes: Vec<(u64, Vec<PromptSpec>)> = Vec::new();
        for (start, specs) in groups {
            validate_prompts(&specs)?;
            let chunk = (start / CHUNK_SECONDS as f64).ceil() as u64;
            // A later mix landing on the same boundary replaces the earlier one.
            match changes.last_mut() {
                Some((c, prev)) if *c == chunk => *prev = specs,
                _ => changes.push((chunk, specs)),
            }
        }
        Ok(Self { changes })
    }

    pub fn load(path: &Path) -> ServiceResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::io(path, e))?;
        Self::parse(&text)
    }
}

/// Renders `duration` seconds without pacing. The audio is trimmed to
/// exactly `duration * 48000` samples per channel.
pub fn render(config: SessionConfig, schedule: &PromptSchedule, duration: f64) -> ServiceResult<Rendered> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(ServiceError::Config(format!("duration must be positive, got {duration}")));
    }
    let mut session = Session::new(config)?;
    session.set_limit(Some(chunks_for(duration)));
    session.handle(ClientMessage::Start, 0.0)?;
    let mut rendered = run_offline(
        session,
        &SystemClock::new(),
        |chunk, now, session| {
            for (_, prompts) in schedule.changes.iter().filter(|(c, _)| *c == chunk) {
                let msg = ClientMessage::SetPrompts {
                    prompts: prompts.clone(),
                };
                session.handle(msg, now)?;
            }
            Ok(())
        },
        |_| false,
    )?;
    rendered
        .audio
        .truncate((duration * SAMPLE_RATE as f64).round() as usize);
    Ok(rendered)
}

/// Streams `seconds` of audio under `pacing` and returns the measurements.
pub fn bench(config: SessionConfig, seconds: f64, clock: &dyn Clock, pacing: Pacing) -> ServiceResult<StreamMetrics> {
    let mut session = Session::new(config)?;
    session.set_limit(Some(chunks_for(seconds)));
    session.handle(ClientMessage::Start, clock.now())?;
    let mut stream = session.create_stream()?;
    let mut failure = None;
    let metrics = run(
        &mut stream,
        clock,
        pacing,
        |chunk, now| {
            session.boundary(chunk, now).or_else(|e| {
                failure = Some(e);
                Ok(None)
            })
        },
        |_| Ok(()),
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(metrics),
    }
}

/// Picks pair `index` from a pair file, or from the bundled list.
pub fn load_pair(path: Option<&Path>, index: usize) -> ServiceResult<(String, String)> {
    let pairs = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| ServiceError::io(p, e))?;
            parse_pairs(&text)?
        }
        None => transition_pairs(),
    };
    let count = pairs.len();
    pairs
        .into_iter()
        .nth(index)
        .ok_or_else(|| ServiceError::Config(format!("pair {index} out of range ({count} pairs)")))
}

/// The 60 s transition from prompt `a` to prompt `b`.
pub fn render_transition(config: &SessionConfig, a: &str, b: &str) -> ServiceResult<TransitionTrace> {
    let session = Session::new(config.clone())?;
    let mut stream = session.create_stream()?;
    let sampler = config.sampler.to_config()?;
    Ok(run_transition(
        &mut stream,
        &Prompt::Text(a.to_string()),
        &Prompt::Text(b.to_string()),
        sampler,
    )?)
}

pub fn write_csv(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> ServiceResult<()> {
    let file = File::create(path).map_err(|e| ServiceError::io(path, e))?;
    let mut out = BufWriter::new(file);
    write(&mut out)
        .and_then(|()| std::io::Write::flush(&mut out))
        .map_err(|e| ServiceError::io(path, e))
}
