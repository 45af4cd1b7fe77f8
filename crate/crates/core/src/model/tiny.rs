//! A small forward-only transformer with seeded weights.
//!
//! The temporal module runs causally over 25 summary positions (the mean
//! embedding of each 40-token block of coarse history), a start position that
//! carries the style and control tokens, and one embedding per generated frame
//! (the sum of its level embeddings). The depth module then predicts the 16
//! RVQ levels of a frame autoregressively from that frame's temporal state.
//! Both modules keep key/value caches so incremental decoding costs one
//! position per token, and every position is computed identically whether it
//! is reached incrementally or by replay.

use super::{
    check_target_token, Backend, DecodeState, DecoderLayout, EncoderSequence, TargetPosition,
    AUDIO_SPAN, CONTROL_SLOTS, TARGET_DEPTH,
};
use crate::error::Result;
use crate::hash::{hash4, to_signed_unit};
use crate::tokens::{BASE_VOCAB_SIZE, CODEBOOK_SIZE, CONTROL_BINS, FRAMES_PER_CHUNK};

pub const TINY_DEFAULT_SEED: u64 = 0x7EA7;
const WIDTH: usize = 64;
const HIDDEN: usize = 128;
const LAYERS: usize = 2;
const SUMMARY_POSITIONS: usize = 25;
const SUMMARY_BLOCK: usize = AUDIO_SPAN / SUMMARY_POSITIONS;
const HEAD_GAIN: f64 = 4.0;

/// Hands out seeded uniform tensors, one tensor id per call.
struct Init {
    seed: u64,
    next: u64,
}

impl Init {
    fn uniform(&mut self, n: usize, bound: f64) -> Vec<f64> {
        let id = self.next;
        self.next += 1;
        (0..n)
            .map(|i| bound * to_signed_unit(hash4(self.seed, id, i as u64, 0)))
            .collect()
    }

    fn linear(&mut self, inp: usize, out: usize, gain: f64) -> Linear {
        let bound = gain / (inp as f64).sqrt();
        Linear {
            w: self.uniform(inp * out, bound),
            b: self.uniform(out, bound),
            inp,
        }
    }
}

struct Linear {
    /// Row-major `out x inp`.
    w: Vec<f64>,
    b: Vec<f64>,
    inp: usize,
}

impl Linear {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.w
            .chunks_exact(self.inp)
            .zip(&self.b)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }
}

fn layer_norm(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + 1e-5).sqrt();
    x.iter().map(|v| (v - mean) * inv).collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (0.797_884_560_802_865_4 * (x + 0.044_715 * x * x * x)).tanh())
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += v;
    }
}

fn row(table: &[f64], i: usize) -> &[f64] {
    &table[i * WIDTH..(i + 1) * WIDTH]
}

#[derive(Clone, Default)]
struct LayerCache {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

/// Pre-norm single-head causal transformer block.
struct Block {
    qkv: Linear,
    proj: Linear,
    fc1: Linear,
    fc2: Linear,
}

impl Block {
    fn new(init: &mut Init) -> Self {
        Self {
            qkv: init.linear(WIDTH, 3 * WIDTH, 1.0),
            proj: init.linear(WIDTH, WIDTH, 1.0),
            fc1: init.linear(WIDTH, HIDDEN, 1.0),
            fc2: init.linear(HIDDEN, WIDTH, 1.0),
        }
    }

    fn step(&self, x: &[f64], cache: &mut LayerCache) -> Vec<f64> {
        let qkv = self.qkv.apply(&layer_norm(x));
        let (q, kv) = qkv.split_at(WIDTH);
        let (k, v) = kv.split_at(WIDTH);
        cache.keys.push(k.to_vec());
        cache.values.push(v.to_vec());

        let scale = 1.0 / (WIDTH as f64).sqrt();
        let scores: Vec<f64> = cache
            .keys
            .iter()
            .map(|key| scale * key.iter().zip(q).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut attended = vec![0.0; WIDTH];
        for (w, value) in weights.iter().zip(&cache.values) {
            for (a, v) in attended.iter_mut().zip(value) {
                *a += w / total * v;
            }
        }

        let mut h = x.to_vec();
        add_into(&mut h, &self.proj.apply(&attended));
        let inner: Vec<f64> = self.fc1.apply(&layer_norm(&h)).into_iter().map(gelu).collect();
        add_into(&mut h, &self.fc2.apply(&inner));
        h
    }
}

struct Stack {
    blocks: Vec<Block>,
}

impl Stack {
    fn new(init: &mut Init) -> Self {
        Self {
            blocks: (0..LAYERS).map(|_| Block::new(init)).collect(),
        }
    }

    fn step(&self, x: &[f64], caches: &mut [LayerCache]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (block, cache) in self.blocks.iter().zip(caches.iter_mut()) {
            h = block.step(&h, cache);
        }
        layer_norm(&h)
    }

    fn caches() -> Vec<LayerCache> {
        vec![LayerCache::default(); LAYERS]
    }
}

pub struct TinyBackend {
    seed: u64,
    encoder_embed: Vec<f64>,
    encoder_level: Vec<f64>,
    summary_pos: Vec<f64>,
    start: Vec<f64>,
    control_embed: Vec<Vec<f64>>,
    control_pos: Vec<f64>,
    control_mlp: Linear,
    control_heads: Vec<Linear>,
    /// `TARGET_DEPTH x CODEBOOK_SIZE` rows.
    level_embed: Vec<f64>,
    frame_pos: Vec<f64>,
    temporal: Stack,
    depth_in: Linear,
    depth_pos: Vec<f64>,
    depth: Stack,
    head: Linear,
}

impl TinyBackend {
    pub fn new(seed: u64) -> Self {
        let mut init = Init { seed, next: 0 };
        Self {
            seed,
            encoder_embed: init.uniform(BASE_VOCAB_SIZE * WIDTH, 1.0),
            encoder_level: init.uniform(4 * WIDTH, 1.0),
            summary_pos: init.uniform(SUMMARY_POSITIONS * WIDTH, 1.0),
            start: init.uniform(WIDTH, 1.0),
            control_embed: CONTROL_BINS.iter().map(|&b| init.uniform(b * WIDTH, 1.0)).collect(),
            control_pos: init.uniform(CONTROL_SLOTS * WIDTH, 1.0),
            control_mlp: init.linear(WIDTH, WIDTH, 1.0),
            control_heads: CONTROL_BINS
                .iter()
                .map(|&b| init.linear(WIDTH, b, HEAD_GAIN))
                .collect(),
            level_embed: init.uniform(TARGET_DEPTH * CODEBOOK_SIZE * WIDTH, 1.0),
            frame_pos: init.uniform(FRAMES_PER_CHUNK * WIDTH, 1.0),
            temporal: Stack::new(&mut init),
            depth_in: init.linear(WIDTH, WIDTH, 1.0),
            depth_pos: init.uniform(TARGET_DEPTH * WIDTH, 1.0),
            depth: Stack::new(&mut init),
            head: init.linear(WIDTH, CODEBOOK_SIZE, HEAD_GAIN),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn level_row(&self, level: usize, token: u16) -> &[f64] {
        row(&self.level_embed, level * CODEBOOK_SIZE + token as usize)
    }
}

impl Default for TinyBackend {
    fn default() -> Self {
        Self::new(TINY_DEFAULT_SEED)
    }
}

struct TinyState<'a> {
    model: &'a TinyBackend,
    seq: &'a EncoderSequence,
    layout: DecoderLayout,
    position: usize,
    controls: Vec<u16>,
    temporal_caches: Vec<LayerCache>,
    /// Temporal outputs, one per processed temporal position.
    temporal_out: Vec<Vec<f64>>,
    /// Completed frames not yet fed to the temporal module.
    frames: Vec<Vec<u16>>,
    current: Vec<u16>,
    depth_caches: Vec<LayerCache>,
    depth_out: Vec<Vec<f64>>,
}

impl<'a> TinyState<'a> {
    fn new(model: &'a TinyBackend, seq: &'a EncoderSequence, layout: DecoderLayout) -> Self {
        let mut state = Self {
            model,
            seq,
            layout,
            position: 0,
            controls: Vec::with_capacity(CONTROL_SLOTS),
            temporal_caches: Stack::caches(),
            temporal_out: Vec::new(),
            frames: Vec::new(),
            current: Vec::with_capacity(TARGET_DEPTH),
            depth_caches: Stack::caches(),
            depth_out: Vec::new(),
        };
        state.run_summaries();
        state
    }

    fn run_summaries(&mut self) {
        let m = self.model;
        let audio = self.seq.audio();
        for b in 0..SUMMARY_POSITIONS {
            let mut x = vec![0.0; WIDTH];
            for (i, &id) in audio[b * SUMMARY_BLOCK..(b + 1) * SUMMARY_BLOCK].iter().enumerate() {
                add_into(&mut x, row(&m.encoder_embed, id as usize));
                add_into(&mut x, row(&m.encoder_level, i % 4));
            }
            x.iter_mut().for_each(|v| *v /= SUMMARY_BLOCK as f64);
            add_into(&mut x, row(&m.summary_pos, b));
            let out = m.temporal.step(&x, &mut self.temporal_caches);
            self.temporal_out.push(out);
        }
    }

    fn control_logits(&self, slot: usize) -> Vec<f64> {
        let m = self.model;
        let mut h = self.temporal_out[SUMMARY_POSITIONS - 1].clone();
        add_into(&mut h, row(&m.control_pos, slot));
        for (q, &bin) in self.controls.iter().enumerate() {
            add_into(&mut h, row(&m.control_embed[q], bin as usize));
        }
        let z: Vec<f64> = m.control_mlp.apply(&layer_norm(&h)).into_iter().map(f64::tanh).collect();
        m.control_heads[slot].apply(&z)
    }

    /// Temporal state used to predict `frame`.
    fn temporal_state(&mut self, frame: usize) -> &[f64] {
        let m = self.model;
        let target = SUMMARY_POSITIONS + frame;
        while self.temporal_out.len() <= target {
            let p = self.temporal_out.len();
            let x = if p == SUMMARY_POSITIONS {
                let mut x = m.start.clone();
                let style = self.seq.style();
                let mut style_mean = vec![0.0; WIDTH];
                for &id in style {
                    add_into(&mut style_mean, row(&m.encoder_embed, id as usize));
                }
                style_mean.iter_mut().for_each(|v| *v /= style.len() as f64);
                add_into(&mut x, &style_mean);
                for (q, &bin) in self.controls.iter().enumerate() {
                    add_into(&mut x, row(&m.control_embed[q], bin as usize));
                }
                x
            } else {
                let f = p - SUMMARY_POSITIONS - 1;
                let mut x = row(&m.frame_pos, f).to_vec();
                for (level, &tok) in self.frames[f].iter().enumerate() {
                    add_into(&mut x, m.level_row(level, tok));
                }
                x
            };
            let out = m.temporal.step(&x, &mut self.temporal_caches);
            self.temporal_out.push(out);
        }
        &self.temporal_out[target]
    }

    fn acoustic_logits(&mut self, frame: usize, level: usize) -> Vec<f64> {
        let m = self.model;
        let base = m.depth_in.apply(self.temporal_state(frame));
        while self.depth_out.len() <= level {
            let l = self.depth_out.len();
            let mut x = base.clone();
            add_into(&mut x, row(&m.depth_pos, l));
            if l > 0 {
                add_into(&mut x, m.level_row(l - 1, self.current[l - 1]));
            }
            let out = m.depth.step(&x, &mut self.depth_caches);
            self.depth_out.push(out);
        }
        m.head.apply(&self.depth_out[level])
    }
}

impl DecodeState for TinyState<'_> {
    fn logits(&mut self) -> Result<Vec<f64>> {
        Ok(match self.layout.position(self.position)? {
            TargetPosition::Control(slot) => self.control_logits(slot),
            TargetPosition::Acoustic { frame, level } => self.acoustic_logits(frame, level),
        })
    }

    fn push(&mut self, token: u16) -> Result<()> {
        check_target_token(self.layout, self.position, token)?;
        match self.layout.position(self.position)? {
            TargetPosition::Control(_) => self.controls.push(token),
            TargetPosition::Acoustic { .. } => {
                self.current.push(token);
                if self.current.len() == TARGET_DEPTH {
                    self.frames.push(std::mem::take(&mut self.current));
                    self.depth_caches = Stack::caches();
                    self.depth_out.clear();
                }
            }
        }
        self.position += 1;
        Ok(())
    }
}

impl Backend for TinyBackend {
    fn name(&self) -> &str {
        "tiny"
    }

    fn start<'a>(&'a self, seq: &'a EncoderSequence, layout: DecoderLayout) -> Box<dyn DecodeState + 'a> {
        Box::new(TinyState::new(self, seq, layout))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_chunk, ChunkRequest};
    use crate::sampling::SamplerConfig;
    use crate::style::{quantize_style, Embedder, ToyEmbedder};
    use crate::tokens::{Chunk, Depth};
    use std::sync::OnceLock;

    fn backend() -> &'static TinyBackend {
        static B: OnceLock<TinyBackend> = OnceLock::new();
        B.get_or_init(TinyBackend::default)
    }

    fn seq() -> EncoderSequence {
        let style = quantize_style(&ToyEmbedder.embed_text("Harp").unwrap(), 6).unwrap();
        let history = Chunk::from_indices(
            Depth::Coarse,
            (0..200).map(|i| (i * 31 % 1024) as u16).collect(),
        )
        .unwrap();
        EncoderSequence::assemble(&[history], &style).unwrap()
    }

    #[test]
    fn deterministic_across_instances() {
        let seq = seq();
        let prefix: Vec<u16> = (0..40).map(|i| (i * 17 % 1024) as u16).collect();
        let a = backend().next_logits(&seq, DecoderLayout::ACOUSTIC_ONLY, &prefix).unwrap();
        let b = TinyBackend::new(TINY_DEFAULT_SEED)
            .next_logits(&seq, DecoderLayout::ACOUSTIC_ONLY, &prefix)
            .unwrap();
        assert_eq!(a, b);
        let c = TinyBackend::new(1)
            .next_logits(&seq, DecoderLayout::ACOUSTIC_ONLY, &prefix)
            .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn depth_perturbation_only_moves_later_levels() {
        let seq = seq();
        let layout = DecoderLayout::ACOUSTIC_ONLY;
        let frame = 3;
        let prefix: Vec<u16> = (0..(frame * 16 + 16)).map(|i| (i * 7 % 1024) as u16).collect();
        let mut changed = prefix.clone();
        changed[frame * 16 + 5] ^= 0x155;
        for level in 0..16 {
            let p = frame * 16 + level;
            let a = backend().next_logits(&seq, layout, &prefix[..p]).unwrap();
            let b = backend().next_logits(&seq, layout, &changed[..p]).unwrap();
            if level <= 5 {
                assert_eq!(a, b, "level {level}");
            } else {
                assert_ne!(a, b, "level {level}");
            }
        }
    }

    #[test]
    fn style_conditions_the_output() {
        let seq = seq();
        let a = backend().next_logits(&seq, DecoderLayout::ACOUSTIC_ONLY, &[]).unwrap();
        let b = backend()
            .next_logits(&seq.without_style(), DecoderLayout::ACOUSTIC_ONLY, &[])
            .unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn incremental_matches_replay() {
        let seq = seq();
        let layout = DecoderLayout::SELF_CONDITIONED;
        let tokens: Vec<u16> = (0..60)
            .map(|p| match layout.position(p).unwrap() {
                TargetPosition::Control(slot) => (p as u16 * 5) % CONTROL_BINS[slot] as u16,
                TargetPosition::Acoustic { .. } => (p as u16 * 97) % 1024,
            })
            .collect();
        let mut state = backend().start(&seq, layout);
        for (p, &tok) in tokens.iter().enumerate() {
            let incremental = state.logits().unwrap();
            let replay = backend().next_logits(&seq, layout, &tokens[..p]).unwrap();
            assert_eq!(incremental, replay, "position {p}");
            state.push(tok).unwrap();
        }
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let seq = seq();
        let cfg = SamplerConfig::default();
        let a = generate_chunk(backend(), &ChunkRequest::new(&seq, &cfg, 5)).unwrap();
        let b = generate_chunk(backend(), &ChunkRequest::new(&seq, &cfg, 5)).unwrap();
        assert_eq!(a, b);
        let c = generate_chunk(backend(), &ChunkRequest::new(&seq, &cfg, 6)).unwrap();
        assert_ne!(a.chunk, c.chunk);
    }
}
