//! Session configuration as it appears on the wire, in session logs and on
//! the command line.

use std::path::PathBuf;
use std::sync::Arc;

use livemusic::controls::{prior_from_targets, ControlPrior, ControlTargets};
use livemusic::inject::{InjectionConfig, InjectionMode};
use livemusic::model::{default_backends, Backend, DecoderLayout, TINY_DEFAULT_SEED};
use livemusic::sampling::SamplerConfig;
use livemusic::stream::StreamConfig;
use livemusic::style::{Embedder, EmbeddingStore, StoreEmbedder, ToyEmbedder, DEFAULT_ACTIVE_DEPTH, STYLE_TOKENS};
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

/// One entry of a prompt mix: exactly one of `text`, `embedding_ref` or `live`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_ref: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub live: bool,
    pub weight: f64,
}

impl PromptSpec {
    pub fn text(text: &str, weight: f64) -> Self {
        Self {
            text: Some(text.to_string()),
            embedding_ref: None,
            live: false,
            weight,
        }
    }

    fn validate(&self) -> ServiceResult<()> {
        let kinds = self.text.is_some() as u8 + self.embedding_ref.is_some() as u8 + self.live as u8;
        if kinds != 1 {
            return Err(ServiceError::invalid(
                "a prompt needs exactly one of `text`, `embedding_ref` or `live`",
            ));
        }
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(ServiceError::invalid(format!(
                "prompt weight must be finite and non-negative, got {}",
                self.weight
            )));
        }
        Ok(())
    }
}

/// A prompt list is usable when every entry is well formed and the entries
/// that are always available (not live) carry positive total weight.
pub fn validate_prompts(prompts: &[PromptSpec]) -> ServiceResult<()> {
    for p in prompts {
        p.validate()?;
    }
    let fixed: f64 = prompts.iter().filter(|p| !p.live).map(|p| p.weight).sum();
    if fixed > 0.0 {
        Ok(())
    } else {
        Err(ServiceError::invalid(
            "prompt weights of text and embedding prompts must sum to more than zero",
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSettings {
    pub temperature: f64,
    pub top_k: usize,
    pub cfg_weight: f64,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        SamplerConfig::default().into()
    }
}

impl From<SamplerConfig> for SamplerSettings {
    fn from(c: SamplerConfig) -> Self {
        Self {
            temperature: c.temperature,
            top_k: c.top_k,
            cfg_weight: c.cfg_weight,
        }
    }
}

impl SamplerSettings {
    pub fn to_config(self) -> ServiceResult<SamplerConfig> {
        let config = SamplerConfig {
            temperature: self.temperature,
            top_k: self.top_k,
            cfg_weight: self.cfg_weight,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    #[default]
    Free,
    Looper,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InjectionSettings {
    pub mode: ModeName,
    pub gain: f64,
    pub fade: bool,
    pub guidance_weight: f64,
    pub live_prompt_weight: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bpm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loop_beats: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loop_seconds: Option<f64>,
}

impl Default for InjectionSettings {
    fn default() -> Self {
        Self {
            mode: ModeName::Free,
            gain: 1.0,
            fade: true,
            guidance_weight: 1.0,
            live_prompt_weight: 0.0,
            bpm: None,
            loop_beats: None,
            loop_seconds: None,
        }
    }
}

impl InjectionSettings {
    pub fn to_config(self) -> ServiceResult<InjectionConfig> {
        let mode = match (self.mode, self.bpm, self.loop_beats) {
            (ModeName::Free, None, None) => InjectionMode::Free,
            (ModeName::Free, _, _) => {
                return Err(ServiceError::invalid("bpm and loop_beats only apply in looper mode"))
            }
            (ModeName::Looper, Some(bpm), Some(loop_beats)) => InjectionMode::Looper { bpm, loop_beats },
            (ModeName::Looper, _, _) => {
                return Err(ServiceError::invalid("looper mode needs both bpm and loop_beats"))
            }
        };
        let config = InjectionConfig {
            mode,
            gain: self.gain,
            fade: self.fade,
            guidance_weight: self.guidance_weight,
            live_prompt_weight: self.live_prompt_weight,
            loop_seconds: self.loop_seconds,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Descriptor targets and the height of their prior bumps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bpm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brightness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<u8>,
    #[serde(default)]
    pub strength: f64,
}

impl ControlSettings {
    pub fn targets(&self) -> ControlTargets {
        ControlTargets {
            bpm: self.bpm,
            brightness: self.brightness,
            density: self.density,
            key: self.key,
        }
    }

    pub fn to_prior(&self) -> ServiceResult<ControlPrior> {
        Ok(prior_from_targets(&self.targets(), self.strength)?)
    }
}

/// Optional flat embedding store resolving `embedding_ref` prompts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingFiles {
    pub data: PathBuf,
    pub index: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub backend: String,
    /// Weight seed for seeded backends.
    pub backend_seed: u64,
    /// Sampling seed of the stream.
    pub seed: u64,
    pub sampler: SamplerSettings,
    pub injection: InjectionSettings,
    pub prompts: Vec<PromptSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub controls: Option<ControlSettings>,
    /// Predict the four control tokens before each chunk's acoustic tokens.
    pub self_conditioning: bool,
    pub style_depth: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<EmbeddingFiles>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            backend: "pattern".into(),
            backend_seed: TINY_DEFAULT_SEED,
            seed: 0,
            sampler: SamplerSettings::default(),
            injection: InjectionSettings::default(),
            prompts: vec![PromptSpec::text("Ambient", 1.0)],
            controls: None,
            self_conditioning: true,
            style_depth: DEFAULT_ACTIVE_DEPTH,
            embeddings: None,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> ServiceResult<()> {
        if !default_backends().contains(&self.backend) {
            return Err(ServiceError::Config(format!("unknown backend `{}`", self.backend)));
        }
        self.sampler.to_config()?;
        self.injection.to_config()?;
        validate_prompts(&self.prompts)?;
        if let Some(c) = &self.controls {
            c.to_prior()?;
        }
        if !(1..=STYLE_TOKENS).contains(&self.style_depth) {
            return Err(ServiceError::Config(format!(
                "style depth {} outside [1, {STYLE_TOKENS}]",
                self.style_depth
            )));
        }
        Ok(())
    }

    pub fn stream_config(&self) -> StreamConfig {
        StreamConfig {
            seed: self.seed,
            layout: DecoderLayout {
                self_conditioning: self.self_conditioning,
            },
            style_depth: self.style_depth,
        }
    }

    pub fn create_backend(&self) -> ServiceResult<Arc<dyn Backend>> {
        Ok(default_backends().create(&self.backend, &self.backend_seed)?)
    }

    pub fn load_store(&self) -> ServiceResult<Option<Arc<EmbeddingStore>>> {
        match &self.embeddings {
            None => Ok(None),
            Some(files) => Ok(Some(Arc::new(EmbeddingStore::load(&files.data, &files.index)?))),
        }
    }

    /// The toy embedder, fronted by the embedding store when one is configured.
    pub fn create_embedder(&self, store: Option<&EmbeddingStore>) -> Arc<dyn Embedder> {
        match store {
            None => Arc::new(ToyEmbedder),
            Some(store) => Arc::new(StoreEmbedder::new(store.clone(), Arc::new(ToyEmbedder))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let config = SessionConfig::default();
        config.validate().unwrap();
        let json = serde_json::to_string(&config).unwrap();
        let back: SessionConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);
        let sparse: SessionConfig = serde_json::from_str(r#"{"backend":"tiny","seed":3}"#).unwrap();
        assert_eq!(sparse.sampler, SamplerSettings::default());
        assert_eq!(sparse.seed, 3);
    }

    #[test]
    fn looper_fields_required_iff_looper() {
        let mut s = InjectionSettings {
            mode: ModeName::Looper,
            ..Default::default()
        };
        assert!(s.to_config().is_err());
        s.bpm = Some(120.0);
        s.loop_beats = Some(8);
        assert!(s.to_config().is_ok());
        s.mode = ModeName::Free;
        assert!(s.to_config().is_err());
    }

    #[test]
    fn prompt_validation() {
        assert!(validate_prompts(&[PromptSpec::text("a", 1.0)]).is_ok());
        assert!(validate_prompts(&[PromptSpec::text("a", 0.0)]).is_err());
        let live = PromptSpec {
            text: None,
            embedding_ref: None,
            live: true,
            weight: 1.0,
        };
        assert!(validate_prompts(std::slice::from_ref(&live)).is_err());
        assert!(validate_prompts(&[live, PromptSpec::text("a", 0.5)]).is_ok());
        let both = PromptSpec {
            embedding_ref: Some("k".into()),
            ..PromptSpec::text("a", 1.0)
        };
        assert!(validate_prompts(&[both]).is_err());
    }

    #[test]
    fn unknown_backend_is_rejected() {
        let config = SessionConfig {
            backend: "nope".into(),
            ..Default::default()
        };
        assert!(config.validate().is_err());
    }
}
