//! Stereo 48 kHz audio buffers and their WAV / raw s16le encodings.

use std::path::Path;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 48_000;
/// Samples per channel in one codec frame (40 ms).
pub const FRAME_HOP: usize = SAMPLE_RATE as usize / crate::tokens::FRAME_RATE_HZ;
/// Samples per channel in one chunk (2 s).
pub const CHUNK_SAMPLES: usize = FRAME_HOP * crate::tokens::FRAMES_PER_CHUNK;

/// Planar stereo audio at [`SAMPLE_RATE`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StereoAudio {
    pub left: Vec<f32>,
    pub right: Vec<f32>,
}

impl StereoAudio {
    pub fn new(left: Vec<f32>, right: Vec<f32>) -> Result<Self> {
        if left.len() != right.len() {
            return Err(Error::Shape {
                expected: left.len(),
                actual: right.len(),
            });
        }
        Ok(Self { left, right })
    }

    pub fn silence(samples: usize) -> Self {
        Self {
            left: vec![0.0; samples],
            right: vec![0.0; samples],
        }
    }

    /// Same signal on both channels.
    pub fn mono(samples: Vec<f32>) -> Self {
        Self {
            right: samples.clone(),
            left: samples,
        }
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    pub fn seconds(&self) -> f64 {
        self.len() as f64 / SAMPLE_RATE as f64
    }

    pub fn append(&mut self, other: &StereoAudio) {
        self.left.extend_from_slice(&other.left);
        self.right.extend_from_slice(&other.right);
    }

    pub fn truncate(&mut self, samples: usize) {
        self.left.truncate(samples);
        self.right.truncate(samples);
    }

    /// Samples `[start, end)`, zero-filled where the range leaves the buffer.
    pub fn slice_padded(&self, start: i64, end: i64) -> StereoAudio {
        let n = (end - start).max(0) as usize;
        let mut out = StereoAudio::silence(n);
        for i in 0..n {
            let src = start + i as i64;
            if src >= 0 && (src as usize) < self.len() {
                out.left[i] = self.left[src as usize];
                out.right[i] = self.right[src as usize];
            }
        }
        out
    }

    /// Mean of both channels.
    pub fn to_mono(&self) -> Vec<f32> {
        self.left
            .iter()
            .zip(&self.right)
            .map(|(l, r)| 0.5 * (l + r))
            .collect()
    }

    /// Root-mean-square level over both channels.
    pub fn rms(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let sum: f64 = self
            .left
            .iter()
            .chain(&self.right)
            .map(|&s| (s as f64) * (s as f64))
            .sum();
        (sum / (2 * self.len()) as f64).sqrt()
    }

    /// Interleaved little-endian signed 16-bit PCM, clipped to full scale.
    pub fn to_s16le(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * 4);
        for (&l, &r) in self.left.iter().zip(&self.right) {
            out.extend_from_slice(&to_i16(l).to_le_bytes());
            out.extend_from_slice(&to_i16(r).to_le_bytes());
        }
        out
    }

    pub fn from_s16le(bytes: &[u8]) -> Result<Self> {
        if !bytes.len().is_multiple_of(4) {
            return Err(Error::Format(format!(
                "s16le stereo payload of {} bytes is not a whole number of frames",
                bytes.len()
            )));
        }
        let (left, right) = bytes
            .chunks_exact(4)
            .map(|b| {
                (
                    i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0,
                    i16::from_le_bytes([b[2], b[3]]) as f32 / 32768.0,
                )
            })
            .unzip();
        Ok(Self { left, right })
    }

    /// 16-bit stereo 48 kHz WAV file contents.
    pub fn to_wav_bytes(&self) -> Vec<u8> {
        let mut cursor = std::io::Cursor::new(Vec::with_capacity(44 + self.len() * 4));
        let mut writer = hound::WavWriter::new(&mut cursor, WAV_SPEC).expect("in-memory writer");
        for (&l, &r) in self.left.iter().zip(&self.right) {
            writer.write_sample(to_i16(l)).expect("in-memory write");
            writer.write_sample(to_i16(r)).expect("in-memory write");
        }
        writer.finalize().expect("in-memory finalize");
        cursor.into_inner()
    }

    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_wav_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Reads a 48 kHz WAV; mono files are duplicated to both channels.
    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
        let spec = reader.spec();
        if spec.sample_rate != SAMPLE_RATE {
            return Err(Error::Format(format!(
                "{}: sample rate {} Hz, expected {SAMPLE_RATE}",
                path.display(),
                spec.sample_rate
            )));
        }
        let samples: Vec<f32> = match spec.sample_format {
            hound::SampleFormat::Int => {
                let scale = (1u64 << (spec.bits_per_sample - 1)) as f32;
                reader
                    .samples::<i32>()
                    .map(|s| s.map(|v| v as f32 / scale))
                    .collect::<Result<_, _>>()
                    .map_err(|e| wav_error(path, e))?
            }
            hound::SampleFormat::Float => reader
                .samples::<f32>()
                .collect::<Result<_, _>>()
                .map_err(|e| wav_error(path, e))?,
        };
        match spec.channels {
            1 => Ok(StereoAudio::mono(samples)),
            2 => {
                let (left, right) = samples.chunks_exact(2).map(|p| (p[0], p[1])).unzip();
                Ok(StereoAudio { left, right })
            }
            n => Err(Error::Format(format!(
                "{}: {n} channels, expected mono or stereo",
                path.display()
            ))),
        }
    }
}

const WAV_SPEC: hound::WavSpec = hound::WavSpec {
    channels: 2,
    sample_rate: SAMPLE_RATE,
    bits_per_sample: 16,
    sample_format: hound::SampleFormat::Int,
};

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

fn to_i16(s: f32) -> i16 {
    (s.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

/// Level in dB relative to full scale.
pub fn dbfs(rms: f64) -> f64 {
    20.0 * rms.max(1e-300).log10()
}
