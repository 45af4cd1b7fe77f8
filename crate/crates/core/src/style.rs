//! Style conditioning: 768-d embeddings, weighted prompt mixing and the 12-token
//! style quantizer.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use crate::audio::StereoAudio;
use crate::codec::{analyze, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::hash::{fnv1a64, hash4, to_signed_unit};
use crate::rvq::{LadderCodebook, LadderSpec};
use crate::tokens::{unify, Token, PAD_ID};

pub const STYLE_DIM: usize = 768;
pub const STYLE_TOKENS: usize = 12;
pub const DEFAULT_ACTIVE_DEPTH: usize = 6;
pub const STYLE_SEED: u64 = 0x0005_717E;
const TEXT_SEED: u64 = 0x7E57;
const PROJECTION_SEED: u64 = 0x00A0_D10E;
/// Audio prompts are pooled over windows of this many codec frames (10 s).
pub const AUDIO_WINDOW_FRAMES: usize = 250;

/// Codebooks are scaled so a level-`l` codeword has RMS norm about `0.7^l`,
/// matching the unit norm of the embeddings being quantized.
pub const STYLE_LADDER: LadderSpec = LadderSpec {
    seed: STYLE_SEED,
    dim: STYLE_DIM,
    levels: STYLE_TOKENS,
    base_scale: 1.0,
    ratio: 0.7,
    // sqrt(3 / 768): uniform entries on [-1, 1] have variance 1/3.
    entry_scale: 0.0625,
};

/// A unit-norm point in the shared audio/text style space.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleEmbedding {
    vector: Vec<f64>,
}

impl StyleEmbedding {
    /// Normalizes `vector`; fails on wrong length, non-finite values or zero norm.
    pub fn from_vector(mut vector: Vec<f64>) -> Result<Self> {
        if vector.len() != STYLE_DIM {
            return Err(Error::Shape {
                expected: STYLE_DIM,
                actual: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Value("non-finite style vector".into()));
        }
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Value("style vector has zero norm".into()));
        }
        vector.iter_mut().for_each(|v| *v /= norm);
        Ok(Self { vector })
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn cosine(&self, other: &StyleEmbedding) -> f64 {
        cosine(&self.vector, &other.vector)
    }
}

/// Cosine similarity; zero when either side has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Lowercases and collapses runs of whitespace.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Something that maps text and audio into the style space.
pub trait Embedder: Send + Sync {
    fn name(&self) -> &str;
    fn embed_text(&self, text: &str) -> Result<StyleEmbedding>;
    fn embed_audio(&self, audio: &StereoAudio) -> Result<StyleEmbedding>;
}

/// Hash-seeded text vectors and a fixed random projection of pooled log-mel
/// features for audio.
#[derive(Debug, Default, Clone, Copy)]
pub struct ToyEmbedder;

impl ToyEmbedder {
    fn projection() -> &'static [f64] {
        static PROJ: OnceLock<Vec<f64>> = OnceLock::new();
        PROJ.get_or_init(|| {
            let scale = 1.0 / (FEATURE_DIM as f64).sqrt();
            (0..FEATURE_DIM * STYLE_DIM)
                .map(|i| {
                    let (row, col) = (i / STYLE_DIM, i % STYLE_DIM);
                    scale * to_signed_unit(hash4(PROJECTION_SEED, row as u64, col as u64, 0))
                })
                .collect()
        })
    }

    /// Mean feature of each 10 s window, after zero-padding to whole windows.
    pub fn window_means(audio: &StereoAudio) -> Vec<Vec<f64>> {
        let frames = analyze(audio);
        let windows = frames.len().div_ceil(AUDIO_WINDOW_FRAMES);
        (0..windows)
            .map(|w| {
                let mut mean = vec![0.0; FEATURE_DIM];
                for frame in frames.iter().skip(w * AUDIO_WINDOW_FRAMES).take(AUDIO_WINDOW_FRAMES) {
                    for (m, v) in mean.iter_mut().zip(frame.values()) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= AUDIO_WINDOW_FRAMES as f64);
                mean
            })
            .collect()
    }

    pub fn project(features: &[f64]) -> Vec<f64> {
        let proj = Self::projection();
        let mut out = vec![0.0; STYLE_DIM];
        for (row, &x) in features.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(&proj[row * STYLE_DIM..(row + 1) * STYLE_DIM]) {
                *o += x * p;
            }
        }
        out
    }

    /// Unnormalized pooled audio vector (zero for silence).
    pub fn pooled_audio_vector(audio: &StereoAudio) -> Vec<f64> {
        let windows = Self::window_means(audio);
        let mut pooled = vec![0.0; STYLE_DIM];
        for w in &windows {
            for (p, v) in pooled.iter_mut().zip(Self::project(w)) {
                *p += v;
            }
        }
        if !windows.is_empty() {
            pooled.iter_mut().for_each(|p| *p /= windows.len() as f64);
        }
        pooled
    }
}

impl Embedder for ToyEmbedder {
    fn name(&self) -> &str {
        "toy"
    }

    fn embed_text(&self, text: &str) -> Result<StyleEmbedding> {
        let normalized = normalize_text(text);
        if normalized.is_empty() {
            return Err(Error::Value("empty text prompt".into()));
        }
        let seed = fnv1a64(normalized.as_bytes());
        let vector = (0..STYLE_DIM)
            .map(|k| to_signed_unit(hash4(TEXT_SEED, seed, k as u64, 0)))
            .collect();
        StyleEmbedding::from_vector(vector)
    }

    fn embed_audio(&self, audio: &StereoAudio) -> Result<StyleEmbedding> {
        if audio.is_empty() {
            return Err(Error::Value("empty audio prompt".into()));
        }
        StyleEmbedding::from_vector(Self::pooled_audio_vector(audio))
            .map_err(|_| Error::Value("audio prompt carries no energy".into()))
    }
}

/// Precomputed embeddings: a flat file of 768 little-endian f32 per record and
/// an index file with one key per line, in record order.
#[derive(Debug, Default, Clone)]
pub struct EmbeddingStore {
    records: HashMap<String, StyleEmbedding>,
}

impl EmbeddingStore {
    pub fn load(data: impl AsRef<Path>, index: impl AsRef<Path>) -> Result<Self> {
        let (data, index) = (data.as_ref(), index.as_ref());
        let bytes = std::fs::read(data).map_err(|e| Error::io(data, e))?;
        let keys = std::fs::read_to_string(index).map_err(|e| Error::io(index, e))?;
        Self::from_parts(&bytes, &keys)
    }

    pub fn from_parts(bytes: &[u8], index: &str) -> Result<Self> {
        let record_bytes = 4 * STYLE_DIM;
        if !bytes.len().is_multiple_of(record_bytes) {
            return Err(Error::Format(format!(
                "embedding file of {} bytes is not a multiple of {record_bytes}",
                bytes.len()
            )));
        }
        let keys: Vec<&str> = index.lines().filter(|l| !l.trim().is_empty()).collect();
        let count = bytes.len() / record_bytes;
        if keys.len() != count {
            return Err(Error::Format(format!(
                "index lists {} keys for {count} records",
                keys.len()
            )));
        }
        let records = keys
            .iter()
            .zip(bytes.chunks_exact(record_bytes))
            .map(|(key, rec)| {
                let vector = rec
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                    .collect();
                Ok((normalize_text(key), StyleEmbedding::from_vector(vector)?))
            })
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }

    /// Serializes the given records in the on-disk layout.
    pub fn encode(records: &[(&str, &StyleEmbedding)]) -> (Vec<u8>, String) {
        let mut bytes = Vec::with_capacity(records.len() * 4 * STYLE_DIM);
        let mut index = String::new();
        for (key, emb) in records {
            for &v in emb.vector() {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
            index.push_str(key);
            index.push('\n');
        }
        (bytes, index)
    }

    pub fn get(&self, key: &str) -> Option<&StyleEmbedding> {
        self.records.get(&normalize_text(key))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Looks text up in an [`EmbeddingStore`] first, falling back to another embedder.
pub struct StoreEmbedder {
    store: EmbeddingStore,
    fallback: Arc<dyn Embedder>,
}

impl StoreEmbedder {
    pub fn new(store: EmbeddingStore, fallback: Arc<dyn Embedder>) -> Self {
        Self { store, fallback }
    }
}

impl Embedder for StoreEmbedder {
    fn name(&self) -> &str {
        "store"
    }

    fn embed_text(&self, text: &str) -> Result<StyleEmbedding> {
        match self.store.get(text) {
            Some(e) => Ok(e.clone()),
            None => self.fallback.embed_text(text),
        }
    }

    fn embed_audio(&self, audio: &StereoAudio) -> Result<StyleEmbedding> {
        self.fallback.embed_audio(audio)
    }
}

/// One prompt of a mix.
#[derive(Clone, Debug)]
pub enum Prompt {
    Text(String),
    Audio(Arc<StereoAudio>),
    Embedding(StyleEmbedding),
}

impl Prompt {
    pub fn embed(&self, embedder: &dyn Embedder) -> Result<StyleEmbedding> {
        match self {
            Prompt::Text(t) => embedder.embed_text(t),
            Prompt::Audio(a) => embedder.embed_audio(a),
            Prompt::Embedding(e) => Ok(e.clone()),
        }
    }
}

/// Weighted prompts whose embeddings are averaged into one style.
#[derive(Clone, Debug, Default)]
pub struct PromptMix {
    pub entries: Vec<(Prompt, f64)>,
}

impl PromptMix {
    pub fn single(prompt: Prompt) -> Self {
        Self {
            entries: vec![(prompt, 1.0)],
        }
    }

    pub fn text(text: &str) -> Self {
        Self::single(Prompt::Text(text.to_string()))
    }

    pub fn push(&mut self, prompt: Prompt, weight: f64) {
        self.entries.push((prompt, weight));
    }

    pub fn validate(&self) -> Result<()> {
        check_weights(self.entries.iter().map(|(_, w)| *w))
    }

    /// Embeds every positively weighted entry and mixes them.
    pub fn resolve(&self, embedder: &dyn Embedder) -> Result<StyleEmbedding> {
        self.validate()?;
        let embedded = self
            .entries
            .iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|(p, w)| Ok((p.embed(embedder)?, *w)))
            .collect::<Result<Vec<_>>>()?;
        mix(&embedded)
    }
}

fn check_weights(weights: impl Iterator<Item = f64>) -> Result<()> {
    let mut total = 0.0;
    for w in weights {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::Value(format!("prompt weight {w} must be finite and non-negative")));
        }
        total += w;
    }
    if total > 0.0 {
        Ok(())
    } else {
        Err(Error::Value("prompt weights sum to zero".into()))
    }
}

/// Weighted average of embeddings, renormalized to unit length.
///
/// Entries are accumulated in a canonical order so the result does not depend
/// on the order they were given in.
pub fn mix(entries: &[(StyleEmbedding, f64)]) -> Result<StyleEmbedding> {
    check_weights(entries.iter().map(|(_, w)| *w))?;
    let total: f64 = {
        let mut ws: Vec<f64> = entries.iter().map(|(_, w)| *w).collect();
        ws.sort_by(f64::total_cmp);
        ws.iter().sum()
    };
    let mut order: Vec<&(StyleEmbedding, f64)> = entries.iter().filter(|(_, w)| *w > 0.0).collect();
    order.sort_by(|a, b| {
        a.1.total_cmp(&b.1).then_with(|| {
            a.0.vector
                .iter()
                .zip(&b.0.vector)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    if let [(only, _)] = order.as_slice() {
        return Ok(only.clone());
    }
    let mut acc = vec![0.0; STYLE_DIM];
    for (emb, w) in order {
        let share = w / total;
        for (a, v) in acc.iter_mut().zip(&emb.vector) {
            *a += share * v;
        }
    }
    StyleEmbedding::from_vector(acc)
        .map_err(|_| Error::Value("mixed style vector cancelled to zero".into()))
}

/// Twelve style positions; levels at or beyond `active_depth` are padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StyleTokens {
    indices: [u16; STYLE_TOKENS],
    active_depth: usize,
}

impl StyleTokens {
    pub fn active_depth(&self) -> usize {
        self.active_depth
    }

    /// The quantizer index at `level`, or `None` for a padded level.
    pub fn get(&self, level: usize) -> Option<u16> {
        (level < self.active_depth).then(|| self.indices[level])
    }

    pub fn active_indices(&self) -> &[u16] {
        &self.indices[..self.active_depth]
    }

    /// Unified ids: style ids for active levels, `<P>` beyond.
    pub fn unified(&self) -> [u16; STYLE_TOKENS] {
        let mut out = [PAD_ID; STYLE_TOKENS];
        for (level, o) in out.iter_mut().enumerate().take(self.active_depth) {
            *o = unify(Token::Style(self.indices[level])).expect("quantizer index < 1024");
        }
        out
    }
}

pub struct StyleQuantizer {
    book: LadderCodebook,
}

impl StyleQuantizer {
    pub fn new() -> Self {
        Self {
            book: LadderCodebook::new(STYLE_LADDER),
        }
    }

    pub fn shared() -> &'static StyleQuantizer {
        static Q: OnceLock<StyleQuantizer> = OnceLock::new();
        Q.get_or_init(StyleQuantizer::new)
    }

    pub fn codebook(&self) -> &LadderCodebook {
        &self.book
    }

    pub fn quantize(&self, embedding: &StyleEmbedding, active_depth: usize) -> Result<StyleTokens> {
        if !(1..=STYLE_TOKENS).contains(&active_depth) {
            return Err(Error::Config(format!(
                "active style depth {active_depth} outside [1, {STYLE_TOKENS}]"
            )));
        }
        let (levels, _) = self.book.quantize(embedding.vector(), active_depth)?;
        let mut indices = [0u16; STYLE_TOKENS];
        indices[..active_depth].copy_from_slice(&levels);
        Ok(StyleTokens {
            indices,
            active_depth,
        })
    }

    pub fn reconstruct(&self, tokens: &StyleTokens) -> Vec<f64> {
        self.book
            .reconstruct(tokens.active_indices())
            .expect("style tokens are in range by construction")
    }
}

impl Default for StyleQuantizer {
    fn default() -> Self {
        Self::new()
    }
}

pub fn quantize_style(embedding: &StyleEmbedding, active_depth: usize) -> Result<StyleTokens> {
    StyleQuantizer::shared().quantize(embedding, active_depth)
}

/// Interpolation weights per 10 s segment of a 60 s transition, as
/// `(weight_b, weight_a)`.
pub const TRANSITION_SCHEDULE: [(f64, f64); 6] =
    [(0.0, 1.0), (0.2, 0.8), (0.4, 0.6), (0.6, 0.4), (0.8, 0.2), (1.0, 0.0)];

/// The bundled list of 128 `(from, to)` prompt pairs.
pub fn transition_pairs() -> Vec<(String, String)> {
    parse_pairs(include_str!("../data/transition_pairs.tsv")).expect("bundled pair list is well-formed")
}

/// Parses tab-separated `from<TAB>to` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(n, l)| match l.split_once('\t') {
            Some((a, b)) if !a.trim().is_empty() && !b.trim().is_empty() => {
                Ok((a.trim().to_string(), b.trim().to_string()))
            }
            _ => Err(Error::Format(format!("pair line {}: expected `from<TAB>to`", n + 1))),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rvq::squared_distance;
    use crate::tokens::CODEBOOK_SIZE;

    fn emb(text: &str) -> StyleEmbedding {
        ToyEmbedder.embed_text(text).unwrap()
    }

    #[test]
    fn text_embedding_is_deterministic_and_normalized() {
        let a = emb("Ambient");
        assert_eq!(a, emb("  ambient "));
        assert!((a.cosine(&emb("ambient")) - 1.0).abs() < 1e-12);
        let norm: f64 = a.vector().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        assert!(a.cosine(&emb("Accordion")) < 1.0);
        assert!(ToyEmbedder.embed_text("   ").is_err());
    }

    #[test]
    fn audio_pools_over_ten_second_windows() {
        let n = 25 * 48_000;
        let tone: Vec<f32> = (0..n)
            .map(|i| 0.3 * (2.0 * std::f64::consts::PI * 330.0 * i as f64 / 48_000.0).sin() as f32)
            .collect();
        let audio = StereoAudio::mono(tone);
        let windows = ToyEmbedder::window_means(&audio);
        assert_eq!(windows.len(), 3);
        let mut pooled = vec![0.0; STYLE_DIM];
        for w in &windows {
            for (p, v) in pooled.iter_mut().zip(ToyEmbedder::project(w)) {
                *p += v / 3.0;
            }
        }
        let expected = StyleEmbedding::from_vector(pooled).unwrap();
        let got = ToyEmbedder.embed_audio(&audio).unwrap();
        assert!((got.cosine(&expected) - 1.0).abs() < 1e-12);
        assert!(ToyEmbedder.embed_audio(&StereoAudio::default()).is_err());
        assert!(ToyEmbedder.embed_audio(&StereoAudio::silence(48_000)).is_err());
    }

    #[test]
    fn mix_single_entry_is_identity() {
        let a = emb("Accordion");
        assert_eq!(mix(&[(a.clone(), 1.0)]).unwrap(), a);
        assert_eq!(mix(&[(a.clone(), 3.5)]).unwrap(), a);
    }

    #[test]
    fn mix_of_two() {
        let (a, b) = (emb("Accordion"), emb("Ambient"));
        let got = mix(&[(a.clone(), 0.2), (b.clone(), 0.8)]).unwrap();
        let raw: Vec<f64> = a.vector().iter().zip(b.vector()).map(|(x, y)| 0.2 * x + 0.8 * y).collect();
        let expected = StyleEmbedding::from_vector(raw).unwrap();
        for (g, e) in got.vector().iter().zip(expected.vector()) {
            assert!((g - e).abs() < 1e-12);
        }
        assert_eq!(mix(&[(a.clone(), 2.0), (b.clone(), 8.0)]).unwrap(), got);
        assert_eq!(mix(&[(b.clone(), 0.8), (a.clone(), 0.2)]).unwrap(), got);
    }

    #[test]
    fn mix_endpoints_and_errors() {
        let (a, b) = (emb("Bongos"), emb("Lute"));
        assert_eq!(mix(&[(a.clone(), 1.0), (b.clone(), 0.0)]).unwrap(), a);
        assert_eq!(mix(&[(a.clone(), 0.0), (b.clone(), 1.0)]).unwrap(), b);
        assert!(mix(&[(a.clone(), 0.0), (b.clone(), 0.0)]).is_err());
        assert!(mix(&[(a.clone(), -1.0), (b.clone(), 2.0)]).is_err());
        assert!(mix(&[(a, f64::NAN)]).is_err());
    }

    #[test]
    fn quantize_pads_inactive_levels() {
        let tokens = quantize_style(&emb("Techno"), 6).unwrap();
        assert_eq!(tokens.active_depth(), 6);
        let ids = tokens.unified();
        assert!(ids[..6].iter().all(|&i| crate::tokens::is_style_id(i)));
        assert!(ids[6..].iter().all(|&i| i == PAD_ID));
        assert!(tokens.get(6).is_none());
        assert!(quantize_style(&emb("Techno"), 0).is_err());
        assert!(quantize_style(&emb("Techno"), 13).is_err());
    }

    #[test]
    fn codeword_embedding_quantizes_to_its_index() {
        let q = StyleQuantizer::shared();
        for j in [1usize, 77, 1023] {
            let e = StyleEmbedding::from_vector(q.codebook().codeword(0, j).to_vec()).unwrap();
            let oracle = (0..CODEBOOK_SIZE)
                .min_by(|&a, &b| {
                    squared_distance(e.vector(), q.codebook().codeword(0, a))
                        .total_cmp(&squared_distance(e.vector(), q.codebook().codeword(0, b)))
                })
                .unwrap();
            assert_eq!(oracle, j);
            assert_eq!(q.quantize(&e, 12).unwrap().get(0), Some(j as u16));
        }
    }

    #[test]
    fn distinct_prompts_get_distinct_tokens() {
        let a = quantize_style(&emb("Accordion"), 6).unwrap();
        let b = quantize_style(&emb("Ambient"), 6).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn store_round_trip_and_fallback() {
        let a = emb("custom one");
        let (bytes, index) = EmbeddingStore::encode(&[("Custom One", &a)]);
        assert_eq!(bytes.len(), 4 * STYLE_DIM);
        let store = EmbeddingStore::from_parts(&bytes, &index).unwrap();
        assert_eq!(store.len(), 1);
        let embedder = StoreEmbedder::new(store, Arc::new(ToyEmbedder));
        assert!(embedder.embed_text("custom one").unwrap().cosine(&a) > 1.0 - 1e-6);
        assert_eq!(embedder.embed_text("Lute").unwrap(), emb("Lute"));
        assert!(EmbeddingStore::from_parts(&bytes[..100], &index).is_err());
        assert!(EmbeddingStore::from_parts(&bytes, "a\nb\n").is_err());
    }

    #[test]
    fn bundled_pairs() {
        let pairs = transition_pairs();
        assert_eq!(pairs.len(), 128);
        assert_eq!(pairs[0], ("Accordion".to_string(), "Ambient".to_string()));
        assert!(parse_pairs("only-one-field\n").is_err());
    }

    #[test]
    fn transition_schedule_endpoints() {
        assert_eq!(TRANSITION_SCHEDULE[0], (0.0, 1.0));
        assert_eq!(TRANSITION_SCHEDULE[5], (1.0, 0.0));
        for (b, a) in TRANSITION_SCHEDULE {
            assert!((a + b - 1.0).abs() < 1e-12);
        }
    }
}
