//! Encoder-sequence assembly, the generative backend contract and chunk
//! generation.
//!
//! A backend sees the 1012-token encoder sequence (five coarse history chunks
//! followed by twelve style tokens) and predicts the decoder target one
//! position at a time: optionally four control tokens, then 50 frames of 16
//! RVQ levels, frame-major.

mod pattern;
mod tiny;

use std::sync::Arc;

pub use pattern::PatternBackend;
pub use tiny::{TinyBackend, TINY_DEFAULT_SEED};

use crate::controls::ControlPrior;
use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::sampling::{cfg_combine, sample_position, seeded_rng, SamplerConfig};
use crate::style::{StyleTokens, STYLE_TOKENS};
use crate::tokens::{
    unify, Chunk, Depth, Token, CODEBOOK_SIZE, CONTROL_BINS, FRAMES_PER_CHUNK, HISTORY_CHUNKS,
    PAD_ID,
};

/// Ids of coarse history per chunk (50 frames x 4 levels).
pub const COARSE_CHUNK_IDS: usize = FRAMES_PER_CHUNK * 4;
pub const AUDIO_SPAN: usize = HISTORY_CHUNKS * COARSE_CHUNK_IDS;
pub const ENCODER_LEN: usize = AUDIO_SPAN + STYLE_TOKENS;
/// RVQ levels generated per frame.
pub const TARGET_DEPTH: usize = 16;
pub const ACOUSTIC_TARGET_LEN: usize = FRAMES_PER_CHUNK * TARGET_DEPTH;
pub const CONTROL_SLOTS: usize = CONTROL_BINS.len();

/// The unified-id conditioning sequence for one chunk.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EncoderSequence {
    ids: Vec<u16>,
}

impl EncoderSequence {
    /// Concatenates up to five coarse chunks oldest-first, left-pads the audio
    /// span with `<P>` and appends the style ids.
    pub fn assemble(history: &[Chunk], style: &StyleTokens) -> Result<Self> {
        if history.len() > HISTORY_CHUNKS {
            return Err(Error::Config(format!(
                "{} history chunks given, at most {HISTORY_CHUNKS} allowed",
                history.len()
            )));
        }
        if let Some(bad) = history.iter().find(|c| c.depth() != Depth::Coarse) {
            return Err(Error::Depth(format!(
                "history chunks must be coarse (depth 4), got depth {}",
                bad.depth()
            )));
        }
        let mut ids = vec![PAD_ID; AUDIO_SPAN - history.len() * COARSE_CHUNK_IDS];
        ids.reserve(ENCODER_LEN - ids.len());
        for chunk in history {
            ids.extend(chunk.indices().iter().map(|&i| unify(Token::Codec(i)).expect("valid")));
        }
        ids.extend_from_slice(&style.unified());
        Ok(Self { ids })
    }

    pub fn from_ids(ids: Vec<u16>) -> Result<Self> {
        if ids.len() != ENCODER_LEN {
            return Err(Error::Shape {
                expected: ENCODER_LEN,
                actual: ids.len(),
            });
        }
        let audio_ok = ids[..AUDIO_SPAN]
            .iter()
            .all(|&i| i == PAD_ID || crate::tokens::is_codec_id(i));
        let style_ok = ids[AUDIO_SPAN..]
            .iter()
            .all(|&i| i == PAD_ID || crate::tokens::is_style_id(i));
        if !(audio_ok && style_ok) {
            return Err(Error::Format("encoder sequence spans hold foreign ids".into()));
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[u16] {
        &self.ids
    }

    pub fn audio(&self) -> &[u16] {
        &self.ids[..AUDIO_SPAN]
    }

    pub fn style(&self) -> &[u16] {
        &self.ids[AUDIO_SPAN..]
    }

    /// The same audio context with every style id replaced by `<P>`; the
    /// unconditioned branch for style guidance.
    pub fn without_style(&self) -> Self {
        let mut ids = self.ids.clone();
        ids[AUDIO_SPAN..].fill(PAD_ID);
        Self { ids }
    }

    /// Coarse ids of the most recent history chunk, if any history exists.
    pub fn latest_chunk(&self) -> Option<&[u16]> {
        let last = &self.ids[AUDIO_SPAN - COARSE_CHUNK_IDS..AUDIO_SPAN];
        (last[0] != PAD_ID).then_some(last)
    }

    /// Number of `<P>` ids in the audio span.
    pub fn audio_padding(&self) -> usize {
        self.audio().iter().filter(|&&i| i == PAD_ID).count()
    }
}

/// Whether the decoder target starts with the four control tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct DecoderLayout {
    pub self_conditioning: bool,
}

impl DecoderLayout {
    pub const ACOUSTIC_ONLY: DecoderLayout = DecoderLayout {
        self_conditioning: false,
    };
    pub const SELF_CONDITIONED: DecoderLayout = DecoderLayout {
        self_conditioning: true,
    };

    pub fn prefix_len(&self) -> usize {
        if self.self_conditioning {
            CONTROL_SLOTS
        } else {
            0
        }
    }

    pub fn len(&self) -> usize {
        self.prefix_len() + ACOUSTIC_TARGET_LEN
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn position(&self, p: usize) -> Result<TargetPosition> {
        if p >= self.len() {
            return Err(Error::range("target position", p, self.len()));
        }
        Ok(match p.checked_sub(self.prefix_len()) {
            None => TargetPosition::Control(p),
            Some(a) => TargetPosition::Acoustic {
                frame: a / TARGET_DEPTH,
                level: a % TARGET_DEPTH,
            },
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetPosition {
    Control(usize),
    Acoustic { frame: usize, level: usize },
}

impl TargetPosition {
    /// Number of logits a backend returns at this position.
    pub fn vocab(&self) -> usize {
        match self {
            TargetPosition::Control(slot) => CONTROL_BINS[*slot],
            TargetPosition::Acoustic { .. } => CODEBOOK_SIZE,
        }
    }
}

/// Incremental decoding state for one (sequence, layout) pair.
pub trait DecodeState {
    /// Logits for the next target position.
    fn logits(&mut self) -> Result<Vec<f64>>;
    /// Appends the token chosen at the current position.
    fn push(&mut self, token: u16) -> Result<()>;
}

/// A generative model over decoder targets.
///
/// Implementations must be causal (logits at position `p` ignore target
/// tokens at positions `>= p`) and deterministic given their inputs and seed.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn start<'a>(
        &'a self,
        seq: &'a EncoderSequence,
        layout: DecoderLayout,
    ) -> Box<dyn DecodeState + 'a>;

    /// Logits for the position following `prefix`, computed from scratch.
    fn next_logits(
        &self,
        seq: &EncoderSequence,
        layout: DecoderLayout,
        prefix: &[u16],
    ) -> Result<Vec<f64>> {
        let mut state = self.start(seq, layout);
        for &token in prefix {
            state.push(token)?;
        }
        state.logits()
    }
}

/// Checks a target token against the vocabulary of its position.
pub(crate) fn check_target_token(layout: DecoderLayout, p: usize, token: u16) -> Result<()> {
    let vocab = layout.position(p)?.vocab();
    if (token as usize) < vocab {
        Ok(())
    } else {
        Err(Error::range("target token", token as usize, vocab))
    }
}

pub type BackendRegistry = Registry<dyn Backend, u64>;

/// Registry holding the built-in `pattern` and `tiny` backends; the factory
/// argument is the weight seed.
pub fn default_backends() -> BackendRegistry {
    let mut reg = BackendRegistry::new("backend");
    reg.register("pattern", |_| Ok(Arc::new(PatternBackend) as Arc<dyn Backend>));
    reg.register("tiny", |seed| Ok(Arc::new(TinyBackend::new(*seed)) as Arc<dyn Backend>));
    reg
}

/// Audio-injection guidance: a second context holding only the model's own
/// output, contrasted against the mixed context with weight `weight`.
#[derive(Clone, Copy, Debug)]
pub struct InjectionGuidance<'a> {
    pub model_only: &'a EncoderSequence,
    pub weight: f64,
}

/// Conditioning for one chunk.
#[derive(Clone, Copy, Debug)]
pub struct ChunkRequest<'a> {
    pub seq: &'a EncoderSequence,
    pub layout: DecoderLayout,
    pub sampler: &'a SamplerConfig,
    pub prior: Option<&'a ControlPrior>,
    pub injection: Option<InjectionGuidance<'a>>,
    pub rng_seed: u64,
}

impl<'a> ChunkRequest<'a> {
    pub fn new(seq: &'a EncoderSequence, sampler: &'a SamplerConfig, rng_seed: u64) -> Self {
        Self {
            seq,
            layout: DecoderLayout::ACOUSTIC_ONLY,
            sampler,
            prior: None,
            injection: None,
            rng_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratedChunk {
    pub chunk: Chunk,
    /// Sampled control bins when the layout is self-conditioned.
    pub controls: Option<[u16; CONTROL_SLOTS]>,
}

/// Style-guided branch pair over one context.
struct GuidedBranch<'a> {
    cond: Box<dyn DecodeState + 'a>,
    uncond: Option<Box<dyn DecodeState + 'a>>,
    weight: f64,
}

impl<'a> GuidedBranch<'a> {
    fn new(
        backend: &'a dyn Backend,
        seq: &'a EncoderSequence,
        uncond: Option<&'a EncoderSequence>,
        layout: DecoderLayout,
        weight: f64,
    ) -> Self {
        Self {
            cond: backend.start(seq, layout),
            uncond: uncond.map(|u| backend.start(u, layout)),
            weight,
        }
    }

    fn logits(&mut self) -> Result<Vec<f64>> {
        let pos = self.cond.logits()?;
        match &mut self.uncond {
            Some(uncond) => cfg_combine(&pos, &uncond.logits()?, self.weight),
            None => Ok(pos),
        }
    }

    fn push(&mut self, token: u16) -> Result<()> {
        self.cond.push(token)?;
        if let Some(uncond) = &mut self.uncond {
            uncond.push(token)?;
        }
        Ok(())
    }
}

/// Samples one full decoder target.
///
/// Per position: style guidance on each context, then injection guidance
/// between the mixed and model-only contexts, then the control prior (control
/// positions only), temperature / top-k shaping and a seeded draw.
pub fn generate_chunk(backend: &dyn Backend, request: &ChunkRequest<'_>) -> Result<GeneratedChunk> {
    request.sampler.validate()?;
    let layout = request.layout;
    let style_guided = request.sampler.cfg_weight > 0.0;
    let uncond_seq = style_guided.then(|| request.seq.without_style());
    let injection = request
        .injection
        .filter(|inj| inj.weight > 0.0 && inj.model_only != request.seq);
    let uncond_model = injection
        .filter(|_| style_guided)
        .map(|inj| inj.model_only.without_style());

    let mut main = GuidedBranch::new(
        backend,
        request.seq,
        uncond_seq.as_ref(),
        layout,
        request.sampler.cfg_weight,
    );
    let mut model_only = injection.map(|inj| {
        GuidedBranch::new(
            backend,
            inj.model_only,
            uncond_model.as_ref(),
            layout,
            request.sampler.cfg_weight,
        )
    });

    let mut rng = seeded_rng(request.rng_seed);
    let mut controls = [0u16; CONTROL_SLOTS];
    let mut acoustic = Vec::with_capacity(ACOUSTIC_TARGET_LEN);
    for p in 0..layout.len() {
        let position = layout.position(p)?;
        let mut logits = main.logits()?;
        if let (Some(branch), Some(inj)) = (&mut model_only, injection) {
            logits = cfg_combine(&logits, &branch.logits()?, inj.weight)?;
        }
        let prior = match (position, request.prior) {
            (TargetPosition::Control(slot), Some(prior)) => prior.offsets(slot),
            _ => &[],
        };
        let token = sample_position(&logits, None, prior, request.sampler, &mut rng)? as u16;
        match position {
            TargetPosition::Control(slot) => controls[slot] = token,
            TargetPosition::Acoustic { .. } => acoustic.push(token),
        }
        main.push(token)?;
        if let Some(branch) = &mut model_only {
            branch.push(token)?;
        }
    }
    Ok(GeneratedChunk {
        chunk: Chunk::from_indices(Depth::Medium, acoustic)?,
        controls: layout.self_conditioning.then_some(controls),
    })
}
