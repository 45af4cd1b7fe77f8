//! Wire protocol.
//!
//! Control plane: UTF-8 text frames, each one JSON object with a `type`
//! field. Data plane: binary frames with an 8-byte little-endian header (a
//! 4-byte magic, then a u32 chunk index for `MRTA` output audio or a u32
//! output-timeline sample timestamp for `MRTI` user input) followed by
//! interleaved stereo s16le samples.

use livemusic::audio::StereoAudio;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{ControlSettings, InjectionSettings, PromptSpec, SessionConfig};
use crate::error::{ServiceError, ServiceResult};

pub const AUDIO_MAGIC: [u8; 4] = *b"MRTA";
pub const INPUT_MAGIC: [u8; 4] = *b"MRTI";
pub const HEADER_BYTES: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    SetPrompts {
        prompts: Vec<PromptSpec>,
    },
    SetSampler {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        temperature: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        top_k: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cfg_weight: Option<f64>,
    },
    SetControls {
        #[serde(flatten)]
        controls: ControlSettings,
        /// Reserved; always rejected.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stems: Option<Value>,
    },
    SetInjection {
        #[serde(flatten)]
        injection: InjectionSettings,
    },
    Start,
    Stop,
    Ping,
}

pub const CLIENT_MESSAGE_TYPES: [&str; 8] = [
    "set_prompts",
    "set_sampler",
    "set_controls",
    "set_injection",
    "start",
    "stop",
    "ping",
    "inject_audio",
];

impl ClientMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            ClientMessage::SetPrompts { .. } => "set_prompts",
            ClientMessage::SetSampler { .. } => "set_sampler",
            ClientMessage::SetControls { .. } => "set_controls",
            ClientMessage::SetInjection { .. } => "set_injection",
            ClientMessage::Start => "start",
            ClientMessage::Stop => "stop",
            ClientMessage::Ping => "ping",
        }
    }

    /// Parses a text frame, telling unknown types apart from malformed ones.
    pub fn parse(text: &str) -> ServiceResult<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| ServiceError::rejected("bad_json", format!("not a JSON object: {e}")))?;
        let kind = value
            .get("type")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ServiceError::rejected("bad_message", "missing string field `type`"))?;
        if !CLIENT_MESSAGE_TYPES.contains(&kind.as_str()) {
            return Err(ServiceError::rejected(
                "unknown_type",
                format!("unknown message type `{kind}`"),
            ));
        }
        if kind == "inject_audio" {
            return Err(ServiceError::rejected(
                "bad_message",
                "inject_audio is sent as a binary MRTI frame",
            ));
        }
        serde_json::from_value(value)
            .map_err(|e| ServiceError::rejected("bad_message", format!("malformed `{kind}`: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Descriptors {
    pub bpm: Option<f64>,
    pub centroid_hz: f64,
    pub bandwidth_hz: f64,
    pub density: f64,
    pub key: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    /// Sent once on connect; echoes the fixed stream constants.
    Session {
        sample_rate: u32,
        chunk_seconds: usize,
        history_chunks: usize,
        frame_rate_hz: usize,
        config: SessionConfig,
    },
    Ack {
        #[serde(rename = "for")]
        for_type: String,
        /// First chunk generated with the change applied.
        active_from_chunk: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        echo: Option<Value>,
    },
    Error {
        code: String,
        reason: String,
    },
    Pong {
        next_chunk: u64,
    },
    Metrics {
        chunk_index: u64,
        latency: f64,
        rtf_chunk: f64,
        rtf_cum: f64,
        underruns: u64,
        delays: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        controls: Option<[u16; 4]>,
        descriptors: Descriptors,
    },
    Stopped {
        chunks: u64,
    },
}

impl ServerMessage {
    pub fn error(e: &ServiceError) -> Self {
        ServerMessage::Error {
            code: e.code().to_string(),
            reason: e.to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BinaryFrame {
    Audio { chunk_index: u32, audio: StereoAudio },
    Input { timestamp: u32, audio: StereoAudio },
}

impl BinaryFrame {
    pub fn encode(&self) -> Vec<u8> {
        let (magic, field, audio) = match self {
            BinaryFrame::Audio { chunk_index, audio } => (AUDIO_MAGIC, *chunk_index, audio),
            BinaryFrame::Input { timestamp, audio } => (INPUT_MAGIC, *timestamp, audio),
        };
        let mut out = Vec::with_capacity(HEADER_BYTES + audio.len() * 4);
        out.extend_from_slice(&magic);
        out.extend_from_slice(&field.to_le_bytes());
        out.extend_from_slice(&audio.to_s16le());
        out
    }

    pub fn decode(bytes: &[u8]) -> ServiceResult<Self> {
        if bytes.len() < HEADER_BYTES {
            return Err(ServiceError::rejected(
                "bad_frame",
                format!("binary frame of {} bytes is shorter than its header", bytes.len()),
            ));
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("four bytes");
        let field = u32::from_le_bytes(bytes[4..8].try_into().expect("four bytes"));
        let audio = StereoAudio::from_s16le(&bytes[HEADER_BYTES..])
            .map_err(|e| ServiceError::rejected("bad_frame", e.to_string()))?;
        match magic {
            AUDIO_MAGIC => Ok(BinaryFrame::Audio {
                chunk_index: field,
                audio,
            }),
            INPUT_MAGIC => Ok(BinaryFrame::Input {
                timestamp: field,
                audio,
            }),
            other => Err(ServiceError::rejected(
                "bad_frame",
                format!("unknown frame magic {:?}", String::from_utf8_lossy(&other)),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_message_type() {
        let cases = [
            r#"{"type":"set_prompts","prompts":[{"text":"Ambient","weight":0.2},{"embedding_ref":"k","weight":0.8},{"live":true,"weight":0.5}]}"#,
            r#"{"type":"set_sampler","temperature":1.3,"top_k":40,"cfg_weight":5.0}"#,
            r#"{"type":"set_controls","bpm":120,"key":9,"strength":4.0}"#,
            r#"{"type":"set_injection","mode":"looper","bpm":120,"loop_beats":8,"gain":0.5}"#,
            r#"{"type":"start"}"#,
            r#"{"type":"stop"}"#,
            r#"{"type":"ping"}"#,
        ];
        for text in cases {
            let msg = ClientMessage::parse(text).unwrap();
            let again = ClientMessage::parse(&serde_json::to_string(&msg).unwrap()).unwrap();
            assert_eq!(msg, again);
        }
        match ClientMessage::parse(cases[2]).unwrap() {
            ClientMessage::SetControls { controls, stems } => {
                assert_eq!(controls.bpm, Some(120.0));
                assert_eq!(controls.key, Some(9));
                assert_eq!(controls.density, None);
                assert_eq!(stems, None);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn error_codes() {
        let code = |t: &str| ClientMessage::parse(t).unwrap_err().code();
        assert_eq!(code("{"), "bad_json");
        assert_eq!(code(r#"{"kind":"ping"}"#), "bad_message");
        assert_eq!(code(r#"{"type":"dance"}"#), "unknown_type");
        assert_eq!(code(r#"{"type":"set_prompts"}"#), "bad_message");
        assert_eq!(code(r#"{"type":"inject_audio"}"#), "bad_message");
    }

    #[test]
    fn ack_wire_shape() {
        let ack = ServerMessage::Ack {
            for_type: "set_sampler".into(),
            active_from_chunk: 3,
            echo: None,
        };
        assert_eq!(ack.to_json(), r#"{"type":"ack","for":"set_sampler","active_from_chunk":3}"#);
    }

    #[test]
    fn binary_frames_round_trip() {
        let audio = StereoAudio::new(vec![0.5, -0.25], vec![0.0, 1.0]).unwrap();
        let frame = BinaryFrame::Audio {
            chunk_index: 7,
            audio: audio.clone(),
        };
        let bytes = frame.encode();
        assert_eq!(&bytes[..4], b"MRTA");
        assert_eq!(&bytes[4..8], &[7, 0, 0, 0]);
        assert_eq!(bytes.len(), 8 + 2 * 4);
        assert_eq!(&bytes[8..], &audio.to_s16le()[..]);
        let input = BinaryFrame::Input {
            timestamp: 96_000,
            audio: StereoAudio::silence(3),
        };
        assert_eq!(BinaryFrame::decode(&input.encode()).unwrap(), input);
        assert!(BinaryFrame::decode(b"MRT").is_err());
        assert!(BinaryFrame::decode(b"XXXX\0\0\0\0").is_err());
        assert!(BinaryFrame::decode(b"MRTI\0\0\0\0\0").is_err());
    }
}
