use super::{check_target_token, Backend, DecodeState, DecoderLayout, EncoderSequence, TargetPosition};
use crate::error::Result;
use crate::tokens::{CODEBOOK_SIZE, CODEC_OFFSET};

const HIT: f64 = 10.0;
const MISS: f64 = -10.0;

/// Deterministic test backend: each target position repeats the coarse token
/// at the same frame (and level, clamped to 3) of the latest history chunk,
/// or predicts index 0 at cold start. Control positions are uniform.
#[derive(Debug, Default, Clone, Copy)]
pub struct PatternBackend;

struct PatternState<'a> {
    latest: Option<&'a [u16]>,
    layout: DecoderLayout,
    position: usize,
}

impl DecodeState for PatternState<'_> {
    fn logits(&mut self) -> Result<Vec<f64>> {
        match self.layout.position(self.position)? {
            TargetPosition::Control(slot) => Ok(vec![0.0; TargetPosition::Control(slot).vocab()]),
            TargetPosition::Acoustic { frame, level } => {
                let target = self
                    .latest
                    .map_or(0, |chunk| (chunk[frame * 4 + level.min(3)] - CODEC_OFFSET) as usize);
                let mut logits = vec![MISS; CODEBOOK_SIZE];
                logits[target] = HIT;
                Ok(logits)
            }
        }
    }

    fn push(&mut self, token: u16) -> Result<()> {
        check_target_token(self.layout, self.position, token)?;
        self.position += 1;
        Ok(())
    }
}

impl Backend for PatternBackend {
    fn name(&self) -> &str {
        "pattern"
    }

    fn start<'a>(&'a self, seq: &'a EncoderSequence, layout: DecoderLayout) -> Box<dyn DecodeState + 'a> {
        Box::new(PatternState {
            latest: seq.latest_chunk(),
            layout,
            position: 0,
        })
    }
}
