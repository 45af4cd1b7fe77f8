//! Token geometry: RVQ frames, fixed-length chunks and the unified vocabulary
//! shared by the encoder sequence, the decoder target and the wire format.

use std::fmt;

use crate::error::{Error, Result};

/// Entries per RVQ codebook level and per style codebook level.
pub const CODEBOOK_SIZE: usize = 1024;
/// Codec frame rate.
pub const FRAME_RATE_HZ: usize = 25;
/// Seconds of audio covered by one chunk.
pub const CHUNK_SECONDS: usize = 2;
pub const FRAMES_PER_CHUNK: usize = CHUNK_SECONDS * FRAME_RATE_HZ;
/// Number of past chunks the model conditions on.
pub const HISTORY_CHUNKS: usize = 5;

pub const PAD_ID: u16 = 0;
pub const START_ID: u16 = 1;
pub const CODEC_OFFSET: u16 = 2;
pub const STYLE_OFFSET: u16 = CODEC_OFFSET + CODEBOOK_SIZE as u16;
/// Size of the pad/start/codec/style vocabulary.
pub const BASE_VOCAB_SIZE: usize = STYLE_OFFSET as usize + CODEBOOK_SIZE;
/// Control tokens live in a block appended after the style range.
pub const CONTROL_OFFSET: u16 = BASE_VOCAB_SIZE as u16;
/// Bin counts of the control slots, in prefix order (bpm, brightness, density, key).
pub const CONTROL_BINS: [usize; 4] = [64, 32, 32, 12];
pub const VOCAB_SIZE: usize = BASE_VOCAB_SIZE + 64 + 32 + 32 + 12;

const CHUNK_MAGIC: &[u8; 4] = b"MRT0";

/// Supported RVQ depth tiers.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Depth {
    Coarse,
    Medium,
    Full,
}

impl Depth {
    pub const fn levels(self) -> usize {
        match self {
            Depth::Coarse => 4,
            Depth::Medium => 16,
            Depth::Full => 64,
        }
    }

    pub fn from_levels(levels: usize) -> Result<Self> {
        match levels {
            4 => Ok(Depth::Coarse),
            16 => Ok(Depth::Medium),
            64 => Ok(Depth::Full),
            other => Err(Error::Depth(format!(
                "unsupported depth {other}, expected one of 4, 16, 64"
            ))),
        }
    }
}

impl fmt::Display for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.levels())
    }
}

/// A vocabulary entry before it is mapped into the unified id space.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Token {
    Pad,
    Start,
    Codec(u16),
    Style(u16),
    /// A control-token bin; `slot` indexes [`CONTROL_BINS`].
    Control { slot: u8, bin: u16 },
}

fn control_slot_offset(slot: usize) -> u16 {
    CONTROL_OFFSET + CONTROL_BINS[..slot].iter().sum::<usize>() as u16
}

/// Maps a token into the unified id space.
pub fn unify(token: Token) -> Result<u16> {
    match token {
        Token::Pad => Ok(PAD_ID),
        Token::Start => Ok(START_ID),
        Token::Codec(i) if (i as usize) < CODEBOOK_SIZE => Ok(CODEC_OFFSET + i),
        Token::Codec(i) => Err(Error::range("codec index", i as usize, CODEBOOK_SIZE)),
        Token::Style(i) if (i as usize) < CODEBOOK_SIZE => Ok(STYLE_OFFSET + i),
        Token::Style(i) => Err(Error::range("style index", i as usize, CODEBOOK_SIZE)),
        Token::Control { slot, bin } => {
            let slot = slot as usize;
            if slot >= CONTROL_BINS.len() {
                return Err(Error::range("control slot", slot, CONTROL_BINS.len()));
            }
            if bin as usize >= CONTROL_BINS[slot] {
                return Err(Error::range("control bin", bin as usize, CONTROL_BINS[slot]));
            }
            Ok(control_slot_offset(slot) + bin)
        }
    }
}

/// Inverse of [`unify`].
pub fn from_unified(id: u16) -> Result<Token> {
    match id {
        PAD_ID => Ok(Token::Pad),
        START_ID => Ok(Token::Start),
        id if id < STYLE_OFFSET => Ok(Token::Codec(id - CODEC_OFFSET)),
        id if id < CONTROL_OFFSET => Ok(Token::Style(id - STYLE_OFFSET)),
        id if (id as usize) < VOCAB_SIZE => {
            let mut rel = (id - CONTROL_OFFSET) as usize;
            for (slot, &bins) in CONTROL_BINS.iter().enumerate() {
                if rel < bins {
                    return Ok(Token::Control {
                        slot: slot as u8,
                        bin: rel as u16,
                    });
                }
                rel -= bins;
            }
            unreachable!("control block covers every id below VOCAB_SIZE")
        }
        id => Err(Error::range("unified id", id as usize, VOCAB_SIZE)),
    }
}

pub fn is_codec_id(id: u16) -> bool {
    (CODEC_OFFSET..STYLE_OFFSET).contains(&id)
}

pub fn is_style_id(id: u16) -> bool {
    (STYLE_OFFSET..CONTROL_OFFSET).contains(&id)
}

fn check_indices(levels: &[u16]) -> Result<()> {
    match levels.iter().find(|&&i| i as usize >= CODEBOOK_SIZE) {
        Some(&bad) => Err(Error::range("codec index", bad as usize, CODEBOOK_SIZE)),
        None => Ok(()),
    }
}

/// RVQ indices of a single 40 ms frame.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenFrame {
    levels: Vec<u16>,
}

impl TokenFrame {
    pub fn new(levels: Vec<u16>) -> Result<Self> {
        Depth::from_levels(levels.len())?;
        check_indices(&levels)?;
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[u16] {
        &self.levels
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }
}

/// Fifty frames (two seconds) of RVQ indices at a shared depth, stored frame-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Chunk {
    depth: Depth,
    indices: Vec<u16>,
}

impl Chunk {
    /// Builds a chunk from frame-major indices (`FRAMES_PER_CHUNK * depth` values).
    pub fn from_indices(depth: Depth, indices: Vec<u16>) -> Result<Self> {
        let expected = FRAMES_PER_CHUNK * depth.levels();
        if indices.len() != expected {
            return Err(Error::Shape {
                expected,
                actual: indices.len(),
            });
        }
        check_indices(&indices)?;
        Ok(Self { depth, indices })
    }

    pub fn from_frames(frames: &[TokenFrame]) -> Result<Self> {
        if frames.len() != FRAMES_PER_CHUNK {
            return Err(Error::Shape {
                expected: FRAMES_PER_CHUNK,
                actual: frames.len(),
            });
        }
        let depth = Depth::from_levels(frames[0].depth())?;
        if frames.iter().any(|f| f.depth() != depth.levels()) {
            return Err(Error::Depth("frames of a chunk must share one depth".into()));
        }
        let indices = frames.iter().flat_map(|f| f.levels().iter().copied()).collect();
        Ok(Self { depth, indices })
    }

    /// A chunk whose every index is zero.
    pub fn zeros(depth: Depth) -> Self {
        Self {
            depth,
            indices: vec![0; FRAMES_PER_CHUNK * depth.levels()],
        }
    }

    pub fn depth(&self) -> Depth {
        self.depth
    }

    pub fn frame_count(&self) -> usize {
        FRAMES_PER_CHUNK
    }

    pub fn frame(&self, f: usize) -> &[u16] {
        let d = self.depth.levels();
        &self.indices[f * d..(f + 1) * d]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[u16]> + '_ {
        self.indices.chunks_exact(self.depth.levels())
    }

    pub fn indices(&self) -> &[u16] {
        &self.indices
    }

    /// Keeps the first four RVQ levels of every frame.
    pub fn coarse_view(&self) -> Result<Chunk> {
        if self.depth == Depth::Coarse {
            return Ok(self.clone());
        }
        let coarse = Depth::Coarse.levels();
        let indices = self.frames().flat_map(|f| f[..coarse].iter().copied()).collect();
        Ok(Chunk {
            depth: Depth::Coarse,
            indices,
        })
    }

    /// Serializes as `MRT0 | depth:u16 | frames:u16` followed by little-endian
    /// unified ids, frame-major then level-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 2 * self.indices.len());
        out.extend_from_slice(CHUNK_MAGIC);
        out.extend_from_slice(&(self.depth.levels() as u16).to_le_bytes());
        out.extend_from_slice(&(FRAMES_PER_CHUNK as u16).to_le_bytes());
        for &i in &self.indices {
            out.extend_from_slice(&(CODEC_OFFSET + i).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != CHUNK_MAGIC {
            return Err(Error::Format("missing MRT0 chunk header".into()));
        }
        let depth = Depth::from_levels(u16::from_le_bytes([bytes[4], bytes[5]]) as usize)?;
        let frames = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        if frames != FRAMES_PER_CHUNK {
            return Err(Error::Shape {
                expected: FRAMES_PER_CHUNK,
                actual: frames,
            });
        }
        let payload = &bytes[8..];
        let expected = 2 * frames * depth.levels();
        if payload.len() != expected {
            return Err(Error::Shape {
                expected,
                actual: payload.len(),
            });
        }
        let indices = payload
            .chunks_exact(2)
            .map(|b| match from_unified(u16::from_le_bytes([b[0], b[1]]))? {
                Token::Codec(i) => Ok(i),
                other => Err(Error::Format(format!("non-codec token {other:?} in chunk"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Chunk::from_indices(depth, indices)
    }
}
