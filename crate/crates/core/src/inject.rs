//! Live audio injection.
//!
//! User audio never reaches the output. It is mixed into the model's own
//! recent output to form an alternative context, that context is re-encoded
//! into coarse tokens, and sampling contrasts the mixed context against the
//! model-only context with a guidance weight.

use std::sync::mpsc::{channel, Receiver, Sender};

use crate::audio::{StereoAudio, CHUNK_SAMPLES, SAMPLE_RATE};
use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::model::{Backend, DecoderLayout, EncoderSequence};
use crate::sampling::cfg_combine;
use crate::style::{Embedder, Prompt};
use crate::tokens::{Chunk, Depth};

/// Length of the model's audio context (five 2 s chunks).
pub const CONTEXT_SECONDS: usize = 10;
pub const CONTEXT_SAMPLES: usize = CONTEXT_SECONDS * SAMPLE_RATE as usize;
/// Linear fade applied before the user audio cuts to silence in free mode.
pub const FADE_SAMPLES: usize = SAMPLE_RATE as usize / 4;
/// Captured user audio older than this is dropped.
const RETAIN_SAMPLES: i64 = 2 * CONTEXT_SAMPLES as i64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InjectionMode {
    /// User audio is mixed in where it was heard; the rest of the window is model-only.
    Free,
    /// The previous loop of user audio is tiled across the whole window.
    Looper { bpm: f64, loop_beats: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InjectionConfig {
    pub mode: InjectionMode,
    /// Linear gain applied to user audio before mixing.
    pub gain: f64,
    pub fade: bool,
    /// Guidance weight of the mixed context over the model-only context.
    pub guidance_weight: f64,
    /// Weight of the live audio prompt in the style mix; 0 disables it.
    pub live_prompt_weight: f64,
    /// Manual loop length in seconds, overriding `loop_beats * 60 / bpm`.
    pub loop_seconds: Option<f64>,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        Self {
            mode: InjectionMode::Free,
            gain: 1.0,
            fade: true,
            guidance_weight: 0.0,
            live_prompt_weight: 0.0,
            loop_seconds: None,
        }
    }
}

impl InjectionConfig {
    pub fn validate(&self) -> Result<()> {
        let non_negative = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")))
            }
        };
        non_negative("injection gain", self.gain)?;
        non_negative("injection guidance weight", self.guidance_weight)?;
        non_negative("live prompt weight", self.live_prompt_weight)?;
        if let InjectionMode::Looper { bpm, loop_beats } = self.mode {
            if !(bpm > 0.0 && bpm.is_finite()) || loop_beats == 0 {
                return Err(Error::Config(format!(
                    "looper needs a positive bpm and beat count, got {bpm} bpm x {loop_beats}"
                )));
            }
            let samples = self.loop_samples().expect("looper");
            if samples == 0 || samples > CONTEXT_SAMPLES {
                return Err(Error::Config(format!(
                    "loop length {:.3} s must be in (0, {CONTEXT_SECONDS}] s",
                    samples as f64 / SAMPLE_RATE as f64
                )));
            }
        }
        Ok(())
    }

    /// Loop length rounded to the nearest sample; `None` in free mode.
    pub fn loop_samples(&self) -> Option<usize> {
        match self.mode {
            InjectionMode::Free => None,
            InjectionMode::Looper { bpm, loop_beats } => {
                let seconds = self.loop_seconds.unwrap_or(loop_beats as f64 * 60.0 / bpm);
                Some((seconds * SAMPLE_RATE as f64).round().max(0.0) as usize)
            }
        }
    }
}

/// Captured user audio starting at `start`, in output-stream samples.
#[derive(Clone, Debug)]
pub struct UserFrame {
    pub start: i64,
    pub audio: StereoAudio,
}

pub type CaptureSender = Sender<UserFrame>;

/// A capture producer never blocks on the stream worker: frames go through
/// an unbounded channel and are drained at chunk boundaries.
pub fn capture_channel() -> (CaptureSender, Receiver<UserFrame>) {
    channel()
}

/// User audio placed on the output timeline. Gaps between captured frames
/// read as silence; coverage runs from the first captured sample to the end
/// of the latest one.
#[derive(Clone, Debug, Default)]
pub struct UserTimeline {
    origin: i64,
    audio: StereoAudio,
    covered_from: Option<i64>,
}

impl UserTimeline {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn write(&mut self, start: i64, audio: &StereoAudio) {
        if audio.is_empty() {
            return;
        }
        let Some(covered_from) = self.covered_from else {
            self.origin = start;
            self.audio = audio.clone();
            self.covered_from = Some(start);
            return;
        };
        if start < self.origin {
            let shift = (self.origin - start) as usize;
            let mut grown = StereoAudio::silence(shift);
            grown.append(&self.audio);
            self.audio = grown;
            self.origin = start;
        }
        let offset = (start - self.origin) as usize;
        let end = offset + audio.len();
        if end > self.audio.len() {
            self.audio.left.resize(end, 0.0);
            self.audio.right.resize(end, 0.0);
        }
        self.audio.left[offset..end].copy_from_slice(&audio.left);
        self.audio.right[offset..end].copy_from_slice(&audio.right);
        self.covered_from = Some(covered_from.min(start));
        self.trim();
    }

    /// Moves every pending frame from the capture channel onto the timeline.
    pub fn drain(&mut self, frames: &Receiver<UserFrame>) -> usize {
        let mut n = 0;
        while let Ok(frame) = frames.try_recv() {
            self.write(frame.start, &frame.audio);
            n += 1;
        }
        n
    }

    fn trim(&mut self) {
        let excess = self.audio.len() as i64 - RETAIN_SAMPLES;
        if excess > 0 {
            let cut = excess as usize;
            self.audio.left.drain(..cut);
            self.audio.right.drain(..cut);
            self.origin += excess;
            self.covered_from = self.covered_from.map(|c| c.max(self.origin));
        }
    }

    /// `[start, end)` of captured audio, if any.
    pub fn coverage(&self) -> Option<(i64, i64)> {
        self.covered_from
            .map(|from| (from, self.origin + self.audio.len() as i64))
    }

    /// Timeline samples `[start, end)`, silent where nothing was captured.
    pub fn read(&self, start: i64, end: i64) -> StereoAudio {
        self.audio.slice_padded(start - self.origin, end - self.origin)
    }

    /// The most recent `samples` of captured audio (fewer if less exists).
    pub fn latest(&self, samples: usize) -> StereoAudio {
        match self.coverage() {
            Some((from, end)) => self.read((end - samples as i64).max(from), end),
            None => StereoAudio::default(),
        }
    }
}

/// Mixes user audio into the model window `[window_start, window_start +
/// model.len())` at its original alignment. Samples past the end of user
/// coverage stay model-only; with `fade`, the last 250 ms of coverage ramp
/// linearly to zero when the cut falls inside the window.
pub fn build_context_free(
    model: &StereoAudio,
    window_start: i64,
    user: &UserTimeline,
    gain: f64,
    fade: bool,
) -> StereoAudio {
    let mut mixed = model.clone();
    let window_end = window_start + model.len() as i64;
    let Some((from, to)) = user.coverage() else {
        return mixed;
    };
    let lo = from.max(window_start);
    let hi = to.min(window_end);
    if gain == 0.0 || lo >= hi {
        return mixed;
    }
    let fading = fade && to < window_end;
    let user_span = user.read(lo, hi);
    let g = gain as f32;
    for (i, t) in (lo..hi).enumerate() {
        let k = (t - window_start) as usize;
        let ramp = if fading && to - t <= FADE_SAMPLES as i64 {
            (to - t) as f32 / FADE_SAMPLES as f32
        } else {
            1.0
        };
        mixed.left[k] += g * ramp * user_span.left[i];
        mixed.right[k] += g * ramp * user_span.right[i];
    }
    mixed
}

/// Tiles `user_loop` (one loop, phase 0 first) across the whole window from
/// its first sample, mixed at `gain`.
pub fn build_context_looper(
    model: &StereoAudio,
    user_loop: &StereoAudio,
    gain: f64,
    loop_samples: usize,
) -> Result<StereoAudio> {
    if loop_samples == 0 || loop_samples > CONTEXT_SAMPLES {
        return Err(Error::Config(format!(
            "loop of {loop_samples} samples does not fit the {CONTEXT_SECONDS} s context"
        )));
    }
    let mut mixed = model.clone();
    if user_loop.is_empty() || gain == 0.0 {
        return Ok(mixed);
    }
    let g = gain as f32;
    for k in 0..mixed.len() {
        let phase = k % loop_samples;
        if phase < user_loop.len() {
            mixed.left[k] += g * user_loop.left[phase];
            mixed.right[k] += g * user_loop.right[phase];
        }
    }
    Ok(mixed)
}

/// The user's most recent complete loop, rotated so index 0 is the loop phase
/// at `window_start`. Loops are aligned to multiples of the loop length on
/// the timeline.
pub fn previous_loop(user: &UserTimeline, loop_samples: usize, window_start: i64) -> StereoAudio {
    let Some((from, to)) = user.coverage() else {
        return StereoAudio::default();
    };
    let l = loop_samples as i64;
    let start = (to.div_euclid(l) - 1) * l;
    if start < from {
        return StereoAudio::default();
    }
    let mut buffer = user.read(start, start + l);
    let shift = window_start.rem_euclid(l) as usize;
    buffer.left.rotate_left(shift);
    buffer.right.rotate_left(shift);
    buffer
}

/// Coarse history for the mixed context, or `None` when no chunk of the
/// window carries user audio (the mixed and model-only contexts coincide).
///
/// `recent` is the model output ending at `window_end`, at least as long as
/// the history. Only chunks that receive user audio are re-encoded; the rest
/// keep their generated tokens.
pub fn mixed_history(
    codec: &Codec,
    history: &[Chunk],
    recent: &StereoAudio,
    window_end: i64,
    user: &UserTimeline,
    config: &InjectionConfig,
) -> Result<Option<Vec<Chunk>>> {
    if history.is_empty() || config.gain == 0.0 {
        return Ok(None);
    }
    let span = history.len() * CHUNK_SAMPLES;
    let window_start = window_end - span as i64;
    let model = recent.slice_padded(recent.len() as i64 - span as i64, recent.len() as i64);

    let (mixed, touched): (StereoAudio, Vec<bool>) = match config.mode {
        InjectionMode::Free => {
            let touched = match user.coverage() {
                Some((from, to)) => (0..history.len())
                    .map(|c| {
                        let lo = window_start + (c * CHUNK_SAMPLES) as i64;
                        from < lo + CHUNK_SAMPLES as i64 && to > lo
                    })
                    .collect(),
                None => vec![false; history.len()],
            };
            (build_context_free(&model, window_start, user, config.gain, config.fade), touched)
        }
        InjectionMode::Looper { .. } => {
            let l = config.loop_samples().expect("looper");
            let user_loop = previous_loop(user, l, window_start);
            let touched = vec![!user_loop.is_empty(); history.len()];
            (build_context_looper(&model, &user_loop, config.gain, l)?, touched)
        }
    };
    if !touched.iter().any(|&t| t) {
        return Ok(None);
    }
    let encoded = codec.encode_audio(&mixed, Depth::Coarse)?;
    Ok(Some(
        history
            .iter()
            .zip(encoded)
            .zip(&touched)
            .map(|((model_chunk, mixed_chunk), &t)| if t { mixed_chunk } else { model_chunk.clone() })
            .collect(),
    ))
}

/// Injection guidance for the next position: the mixed context is the
/// positive branch and the model-only context the negative one.
pub fn injection_logits(
    backend: &dyn Backend,
    mixed: &EncoderSequence,
    model_only: &EncoderSequence,
    layout: DecoderLayout,
    prefix: &[u16],
    weight: f64,
) -> Result<Vec<f64>> {
    let pos = backend.next_logits(mixed, layout, prefix)?;
    let neg = backend.next_logits(model_only, layout, prefix)?;
    cfg_combine(&pos, &neg, weight)
}

/// A prompt entry embedding the last 10 s of user audio, or `None` when there
/// is no usable audio.
pub fn live_audio_prompt(user: &UserTimeline, embedder: &dyn Embedder, weight: f64) -> Option<(Prompt, f64)> {
    let audio = user.latest(CONTEXT_SAMPLES);
    if audio.is_empty() {
        return None;
    }
    embedder
        .embed_audio(&audio)
        .ok()
        .map(|e| (Prompt::Embedding(e), weight))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PatternBackend;
    use crate::style::{quantize_style, ToyEmbedder};

    fn ramp(n: usize, scale: f32) -> StereoAudio {
        let left: Vec<f32> = (0..n).map(|i| scale * ((i % 97) as f32 / 97.0 - 0.5)).collect();
        let right: Vec<f32> = left.iter().map(|x| -0.5 * x).collect();
        StereoAudio::new(left, right).unwrap()
    }

    #[test]
    fn free_mode_gain_zero_is_identity() {
        let model = ramp(CONTEXT_SAMPLES, 0.5);
        let mut user = UserTimeline::new();
        user.write(0, &ramp(7 * SAMPLE_RATE as usize, 0.3));
        assert_eq!(build_context_free(&model, 0, &user, 0.0, true), model);
    }

    #[test]
    fn free_mode_covers_seven_of_ten_seconds() {
        let model = ramp(CONTEXT_SAMPLES, 0.5);
        let user_audio = ramp(7 * SAMPLE_RATE as usize, 0.3);
        let mut user = UserTimeline::new();
        user.write(1_000_000, &user_audio);
        let mixed = build_context_free(&model, 1_000_000, &user, 0.7, false);
        let split = 7 * SAMPLE_RATE as usize;
        for k in (0..split).step_by(997) {
            assert_eq!(mixed.left[k], model.left[k] + 0.7f32 * user_audio.left[k]);
            assert_eq!(mixed.right[k], model.right[k] + 0.7f32 * user_audio.right[k]);
        }
        assert_eq!(mixed.left[split..], model.left[split..]);
        assert_eq!(mixed.right[split..], model.right[split..]);
    }

    #[test]
    fn free_mode_fade_ramps_before_the_cut() {
        let model = StereoAudio::silence(CONTEXT_SAMPLES);
        let mut user = UserTimeline::new();
        user.write(0, &StereoAudio::mono(vec![1.0; 7 * SAMPLE_RATE as usize]));
        let mixed = build_context_free(&model, 0, &user, 1.0, true);
        let cut = 7 * SAMPLE_RATE as usize;
        assert_eq!(mixed.left[cut - FADE_SAMPLES - 1], 1.0);
        assert_eq!(mixed.left[cut - FADE_SAMPLES], 1.0);
        assert_eq!(mixed.left[cut - FADE_SAMPLES / 2], 0.5);
        assert_eq!(mixed.left[cut - 1], 1.0 / FADE_SAMPLES as f32);
        assert_eq!(mixed.left[cut], 0.0);
    }

    #[test]
    fn inverted_user_audio_cancels() {
        let model = ramp(CONTEXT_SAMPLES, 0.5);
        let inverted = StereoAudio::new(
            model.left.iter().map(|x| -x).collect(),
            model.right.iter().map(|x| -x).collect(),
        )
        .unwrap();
        let mut user = UserTimeline::new();
        user.write(0, &inverted);
        let mixed = build_context_free(&model, 0, &user, 1.0, false);
        assert_eq!(mixed.rms(), 0.0);
    }

    #[test]
    fn looper_tiles_a_click_at_loop_offsets() {
        let config = InjectionConfig {
            mode: InjectionMode::Looper { bpm: 120.0, loop_beats: 8 },
            ..Default::default()
        };
        let l = config.loop_samples().unwrap();
        assert_eq!(l, 4 * SAMPLE_RATE as usize);
        let mut click = StereoAudio::silence(l);
        click.left[0] = 1.0;
        click.right[0] = 1.0;
        let mixed = build_context_looper(&StereoAudio::silence(CONTEXT_SAMPLES), &click, 1.0, l).unwrap();
        let hits: Vec<usize> = (0..mixed.len()).filter(|&k| mixed.left[k] != 0.0).collect();
        assert_eq!(hits, vec![0, l, 2 * l]);
        let empty = build_context_looper(&StereoAudio::silence(10), &StereoAudio::default(), 1.0, l).unwrap();
        assert_eq!(empty, StereoAudio::silence(10));
        assert!(build_context_looper(&click, &click, 1.0, CONTEXT_SAMPLES + 1).is_err());
    }

    #[test]
    fn looper_config_validation() {
        let long = InjectionConfig {
            mode: InjectionMode::Looper { bpm: 60.0, loop_beats: 16 },
            ..Default::default()
        };
        assert!(long.validate().is_err());
        let ok = InjectionConfig {
            mode: InjectionMode::Looper { bpm: 120.0, loop_beats: 8 },
            ..Default::default()
        };
        assert!(ok.validate().is_ok());
        assert!(InjectionConfig { gain: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn previous_loop_is_phase_aligned() {
        let l = 1000usize;
        let mut user = UserTimeline::new();
        let mut audio = StereoAudio::silence(3 * l + 200);
        for k in 0..audio.len() {
            audio.left[k] = (k % l) as f32;
        }
        user.write(0, &audio);
        let buffer = previous_loop(&user, l, 2500);
        assert_eq!(buffer.len(), l);
        // Index 0 holds timeline phase 2500 mod 1000.
        assert_eq!(buffer.left[0], 500.0);
        assert_eq!(buffer.left[499], 999.0);
        assert_eq!(buffer.left[500], 0.0);
    }

    #[test]
    fn timeline_reads_and_trims() {
        let mut user = UserTimeline::new();
        assert_eq!(user.coverage(), None);
        user.write(100, &StereoAudio::mono(vec![1.0; 50]));
        user.write(200, &StereoAudio::mono(vec![2.0; 50]));
        assert_eq!(user.coverage(), Some((100, 250)));
        let r = user.read(90, 260);
        assert_eq!(r.left[5], 0.0);
        assert_eq!(r.left[10], 1.0);
        assert_eq!(r.left[80], 0.0);
        assert_eq!(r.left[110], 2.0);
        assert_eq!(r.left[165], 0.0);
        user.write(RETAIN_SAMPLES * 2, &StereoAudio::mono(vec![3.0; 10]));
        let (from, to) = user.coverage().unwrap();
        assert_eq!(to, RETAIN_SAMPLES * 2 + 10);
        assert_eq!(to - from, RETAIN_SAMPLES);
    }

    #[test]
    fn capture_is_drained_in_order() {
        let (tx, rx) = capture_channel();
        for i in 0..3 {
            tx.send(UserFrame { start: i * 10, audio: StereoAudio::mono(vec![i as f32; 10]) }).unwrap();
        }
        let mut user = UserTimeline::new();
        assert_eq!(user.drain(&rx), 3);
        assert_eq!(user.read(0, 30).left[25], 2.0);
        assert_eq!(user.drain(&rx), 0);
    }

    #[test]
    fn mixed_history_without_user_audio_is_none() {
        let codec = Codec::shared();
        let history = vec![Chunk::zeros(Depth::Coarse); 2];
        let recent = StereoAudio::silence(2 * CHUNK_SAMPLES);
        let end = 2 * CHUNK_SAMPLES as i64;
        let config = InjectionConfig::default();
        assert!(mixed_history(codec, &history, &recent, end, &UserTimeline::new(), &config).unwrap().is_none());
        let mut user = UserTimeline::new();
        user.write(0, &ramp(CHUNK_SAMPLES / 2, 0.8));
        let silent = InjectionConfig { gain: 0.0, ..config };
        assert!(mixed_history(codec, &history, &recent, end, &user, &silent).unwrap().is_none());
        let mixed = mixed_history(codec, &history, &recent, end, &user, &config).unwrap().unwrap();
        assert_ne!(mixed[0], history[0]);
        assert_eq!(mixed[1], history[1]);
    }

    #[test]
    fn injection_logit_contracts() {
        let style = quantize_style(&ToyEmbedder.embed_text("Synth").unwrap(), 6).unwrap();
        let a = Chunk::from_indices(Depth::Coarse, (0..200).map(|i| i as u16).collect()).unwrap();
        let b = Chunk::from_indices(Depth::Coarse, (0..200).map(|i| 500 + i as u16).collect()).unwrap();
        let mixed = EncoderSequence::assemble(&[a], &style).unwrap();
        let model = EncoderSequence::assemble(&[b], &style).unwrap();
        let layout = DecoderLayout::ACOUSTIC_ONLY;
        let backend = PatternBackend;
        let pos = backend.next_logits(&mixed, layout, &[]).unwrap();
        let neg = backend.next_logits(&model, layout, &[]).unwrap();
        assert_eq!(injection_logits(&backend, &mixed, &model, layout, &[], 0.0).unwrap(), pos);
        assert_eq!(injection_logits(&backend, &mixed, &mixed, layout, &[], 5.0).unwrap(), pos);
        assert_eq!(
            injection_logits(&backend, &mixed, &model, layout, &[], 5.0).unwrap(),
            cfg_combine(&pos, &neg, 5.0).unwrap()
        );
    }

    #[test]
    fn live_prompt_entries() {
        let embedder = ToyEmbedder;
        assert!(live_audio_prompt(&UserTimeline::new(), &embedder, 1.0).is_none());
        let mut user = UserTimeline::new();
        user.write(0, &ramp(CHUNK_SAMPLES, 0.5));
        let (first, w) = live_audio_prompt(&user, &embedder, 0.0).unwrap();
        assert_eq!(w, 0.0);
        let (second, _) = live_audio_prompt(&user, &embedder, 0.0).unwrap();
        match (first, second) {
            (Prompt::Embedding(a), Prompt::Embedding(b)) => assert_eq!(a, b),
            _ => panic!("expected embeddings"),
        }
    }
}
