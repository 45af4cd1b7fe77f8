//! Deterministic desk-scale audio codec.
//!
//! Audio is analyzed into 40 ms log-mel feature frames, each frame is quantized
//! with a 64-level seeded ladder RVQ, and decoding sums codewords back into
//! features that drive a phase-continuous sinusoid bank at the mel band centres.

use std::sync::OnceLock;

use crate::audio::{StereoAudio, FRAME_HOP, SAMPLE_RATE};
use crate::dsp::{analysis_bank, MEL_BANDS};
use crate::error::{Error, Result};
use crate::rvq::{LadderCodebook, LadderSpec};
use crate::tokens::{Chunk, Depth, TokenFrame, FRAMES_PER_CHUNK};

pub const FEATURE_DIM: usize = 2 * MEL_BANDS;
pub const CODEC_SEED: u64 = 0x000C_0DEC;
pub const CODEC_LEVELS: usize = 64;
pub const ENERGY_FLOOR: f64 = 1e-10;
/// Feature units per neper of band energy above the floor.
pub const FEATURE_LOG_SCALE: f64 = 0.1;
const ANALYSIS_WINDOW: usize = 2048;

pub const CODEC_LADDER: LadderSpec = LadderSpec {
    seed: CODEC_SEED,
    dim: FEATURE_DIM,
    levels: CODEC_LEVELS,
    base_scale: 2.0,
    ratio: 0.7,
    entry_scale: 1.0,
};

/// Log-mel energies of one frame: 64 left-channel bands then 64 right-channel
/// bands, measured in [`FEATURE_LOG_SCALE`] units above [`ENERGY_FLOOR`]
/// (silence is exactly zero).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFrame {
    values: Vec<f64>,
}

impl FeatureFrame {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != FEATURE_DIM {
            return Err(Error::Shape {
                expected: FEATURE_DIM,
                actual: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Value(format!("non-finite feature value {bad}")));
        }
        Ok(Self { values })
    }

    pub fn zeros() -> Self {
        Self {
            values: vec![0.0; FEATURE_DIM],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn left(&self) -> &[f64] {
        &self.values[..MEL_BANDS]
    }

    pub fn right(&self) -> &[f64] {
        &self.values[MEL_BANDS..]
    }
}

pub fn energy_to_feature(energy: f64) -> f64 {
    FEATURE_LOG_SCALE * (energy.max(ENERGY_FLOOR) / ENERGY_FLOOR).ln()
}

/// Inverse of [`energy_to_feature`] with the floor removed, capped at full scale.
pub fn feature_to_energy(feature: f64) -> f64 {
    (ENERGY_FLOOR * ((feature / FEATURE_LOG_SCALE).min(60.0).exp() - 1.0)).clamp(0.0, 1.0)
}

/// Splits `audio` into 1920-sample hops (zero-padding the tail) and returns one
/// feature frame per hop. Frame `t` reads only samples before `(t + 1) * 1920`.
pub fn analyze(audio: &StereoAudio) -> Vec<FeatureFrame> {
    let frames = audio.len().div_ceil(FRAME_HOP);
    let (spectrum, mel) = analysis_bank();
    let mut scratch = Vec::with_capacity(ANALYSIS_WINDOW);
    let mut window = vec![0.0; ANALYSIS_WINDOW];
    let mut power = vec![0.0; spectrum.bins()];
    let mut bands = vec![0.0; MEL_BANDS];
    (0..frames)
        .map(|t| {
            let end = (t + 1) * FRAME_HOP;
            let start = end as i64 - ANALYSIS_WINDOW as i64;
            let mut values = Vec::with_capacity(FEATURE_DIM);
            for channel in [&audio.left, &audio.right] {
                for (i, w) in window.iter_mut().enumerate() {
                    let src = start + i as i64;
                    *w = if src >= 0 && (src as usize) < channel.len() {
                        channel[src as usize] as f64
                    } else {
                        0.0
                    };
                }
                spectrum.compute(&window, &mut scratch, &mut power);
                mel.apply(&power, &mut bands);
                values.extend(bands.iter().map(|&e| energy_to_feature(e)));
            }
            FeatureFrame { values }
        })
        .collect()
}

/// Band energy produced in the analysis by a unit-amplitude sine at each band centre.
fn band_gains() -> &'static [f64] {
    static GAINS: OnceLock<Vec<f64>> = OnceLock::new();
    GAINS.get_or_init(|| {
        let (spectrum, mel) = analysis_bank();
        let mut scratch = Vec::new();
        let mut power = vec![0.0; spectrum.bins()];
        let mut bands = vec![0.0; MEL_BANDS];
        mel.centers_hz()
            .iter()
            .enumerate()
            .map(|(b, &hz)| {
                let w = 2.0 * std::f64::consts::PI * hz / SAMPLE_RATE as f64;
                let frame: Vec<f64> = (0..ANALYSIS_WINDOW).map(|n| (w * n as f64).sin()).collect();
                spectrum.compute(&frame, &mut scratch, &mut power);
                mel.apply(&power, &mut bands);
                bands[b]
            })
            .collect()
    })
}

/// Sinusoid bank whose oscillator phases persist across frames and chunks.
#[derive(Clone, Debug)]
pub struct Synthesizer {
    phases: Vec<f64>,
}

impl Default for Synthesizer {
    fn default() -> Self {
        Self {
            phases: vec![0.0; MEL_BANDS],
        }
    }
}

impl Synthesizer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Renders one 1920-sample frame per channel, appending to `out`.
    pub fn render_frame(&mut self, feature: &FeatureFrame, out: &mut StereoAudio) {
        let centers = analysis_bank().1.centers_hz();
        let gains = band_gains();
        let base = out.len();
        out.left.resize(base + FRAME_HOP, 0.0);
        out.right.resize(base + FRAME_HOP, 0.0);
        let left = &mut out.left[base..];
        let right = &mut out.right[base..];
        for b in 0..MEL_BANDS {
            let omega = 2.0 * std::f64::consts::PI * centers[b] / SAMPLE_RATE as f64;
            let amp_l = (feature_to_energy(feature.left()[b]) / gains[b]).sqrt();
            let amp_r = (feature_to_energy(feature.right()[b]) / gains[b]).sqrt();
            let phase = self.phases[b];
            if amp_l > 0.0 || amp_r > 0.0 {
                let (mut s, mut c) = phase.sin_cos();
                let (rs, rc) = omega.sin_cos();
                for (l, r) in left.iter_mut().zip(right.iter_mut()) {
                    *l += (amp_l * s) as f32;
                    *r += (amp_r * s) as f32;
                    let next_s = s * rc + c * rs;
                    c = c * rc - s * rs;
                    s = next_s;
                }
            }
            self.phases[b] = (phase + omega * FRAME_HOP as f64) % (2.0 * std::f64::consts::PI);
        }
    }
}

/// The codec: analysis, ladder RVQ and sinusoid-bank synthesis.
pub struct Codec {
    book: LadderCodebook,
}

impl Codec {
    pub fn new() -> Self {
        Self {
            book: LadderCodebook::new(CODEC_LADDER),
        }
    }

    /// The process-wide codec instance; codebooks are built on first use.
    pub fn shared() -> &'static Codec {
        static CODEC: OnceLock<Codec> = OnceLock::new();
        CODEC.get_or_init(Codec::new)
    }

    pub fn codebook(&self) -> &LadderCodebook {
        &self.book
    }

    pub fn rvq_encode(&self, feature: &FeatureFrame, depth: Depth) -> Result<TokenFrame> {
        let (indices, _) = self.book.quantize(feature.values(), depth.levels())?;
        TokenFrame::new(indices)
    }

    pub fn rvq_decode(&self, frame: &TokenFrame) -> Result<FeatureFrame> {
        self.decode_levels(frame.levels())
    }

    /// Decodes a prefix of levels of any length up to 64.
    pub fn decode_levels(&self, levels: &[u16]) -> Result<FeatureFrame> {
        Ok(FeatureFrame {
            values: self.book.reconstruct(levels)?,
        })
    }

    /// Analysis plus per-frame RVQ, grouped into chunks; the final partial chunk
    /// is padded with zero features (which quantize to all-zero tokens).
    pub fn encode_audio(&self, audio: &StereoAudio, depth: Depth) -> Result<Vec<Chunk>> {
        let features = analyze(audio);
        self.encode_features(&features, depth)
    }

    pub fn encode_features(&self, features: &[FeatureFrame], depth: Depth) -> Result<Vec<Chunk>> {
        let chunks = features.len().div_ceil(FRAMES_PER_CHUNK);
        let zero = FeatureFrame::zeros();
        (0..chunks)
            .map(|c| {
                let mut indices = Vec::with_capacity(FRAMES_PER_CHUNK * depth.levels());
                for f in 0..FRAMES_PER_CHUNK {
                    let feature = features.get(c * FRAMES_PER_CHUNK + f).unwrap_or(&zero);
                    indices.extend(self.rvq_encode(feature, depth)?.levels());
                }
                Chunk::from_indices(depth, indices)
            })
            .collect()
    }

    pub fn decode_chunk(&self, chunk: &Chunk, synth: &mut Synthesizer) -> Result<StereoAudio> {
        let mut out = StereoAudio::default();
        for frame in chunk.frames() {
            synth.render_frame(&self.decode_levels(frame)?, &mut out);
        }
        Ok(out)
    }

    /// Decodes uniform-depth chunks with one continuous synthesizer.
    pub fn decode_audio(&self, chunks: &[Chunk]) -> Result<StereoAudio> {
        if let Some(first) = chunks.first() {
            if chunks.iter().any(|c| c.depth() != first.depth()) {
                return Err(Error::Depth("chunks passed to decode have mixed depths".into()));
            }
        }
        let mut synth = Synthesizer::new();
        let mut out = StereoAudio::default();
        for chunk in chunks {
            out.append(&self.decode_chunk(chunk, &mut synth)?);
        }
        Ok(out)
    }
}

impl Default for Codec {
    fn default() -> Self {
        Self::new()
    }
}
