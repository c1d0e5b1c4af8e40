use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acoustic::PosteriorConfig;
use crate::attention::ChunkConfig;
use crate::error::{Error, Result};
use crate::metrics::MelConfig;
use crate::vocoder::GeneratorConfig;

pub const CONFIG_VERSION: u32 = 1;

/// Architecture toggles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flags {
    pub causal_posterior: bool,
    pub natural_padding: bool,
    pub smooth_layer: bool,
}

/// Everything needed to interpret a weight file. Every field is required in
/// the JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleConfig {
    pub version: u32,
    pub sample_rate: u32,
    /// Scale applied to the unit-normal draws when sampling the prior.
    pub noise_scale: f32,
    pub vocab: Vec<String>,
    pub decoder: ChunkConfig,
    pub generator: GeneratorConfig,
    pub posterior: PosteriorConfig,
    pub mel: MelConfig,
    pub flags: Flags,
}

impl BundleConfig {
    /// 44.1 kHz, hop 512 layout with the given vocabulary.
    pub fn default_44k(vocab: Vec<String>) -> Self {
        let decoder = ChunkConfig::default();
        Self {
            version: CONFIG_VERSION,
            sample_rate: 44100,
            noise_scale: 0.667,
            vocab,
            generator: GeneratorConfig::for_strides(decoder.hidden, &[8, 8, 4, 2]),
            posterior: PosteriorConfig {
                mcep_dim: 80,
                hidden: decoder.hidden,
                kernel_size: 5,
                num_layers: 4,
            },
            mel: MelConfig::new(44100, 512),
            decoder,
            flags: Flags {
                causal_posterior: true,
                natural_padding: true,
                smooth_layer: true,
            },
        }
    }

    /// 16 kHz, hop 256 layout.
    pub fn default_16k(vocab: Vec<String>) -> Self {
        let mut c = Self::default_44k(vocab);
        c.sample_rate = 16000;
        c.generator = GeneratorConfig::for_strides(c.decoder.hidden, &[8, 8, 2, 2]);
        c.mel = MelConfig::new(16000, 256);
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.decoder.validate()?;
        self.generator.validate()?;
        self.mel.validate()?;
        if self.vocab.is_empty() {
            return Err(Error::config("vocab is empty"));
        }
        if self.decoder.hidden < 2 {
            return Err(Error::config("decoder hidden size must be at least 2"));
        }
        if self.mel.hop != self.generator.hop() {
            return Err(Error::config(format!(
                "mel hop {} differs from generator hop {}",
                self.mel.hop,
                self.generator.hop()
            )));
        }
        if self.mel.sample_rate != self.sample_rate {
            return Err(Error::config("mel sample_rate differs from bundle sample_rate"));
        }
        let p = &self.posterior;
        if p.mcep_dim == 0 || p.hidden == 0 || p.kernel_size == 0 {
            return Err(Error::config("posterior sizes must be positive"));
        }
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return Err(Error::config("noise_scale must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vec<String> {
        vec!["sil".into(), "a".into()]
    }

    #[test]
    fn defaults_are_consistent() {
        BundleConfig::default_44k(vocab()).validate().unwrap();
        let c = BundleConfig::default_16k(vocab());
        c.validate().unwrap();
        assert_eq!(c.generator.hop(), 256);
    }

    #[test]
    fn hop_mismatch_rejected() {
        let mut c = BundleConfig::default_44k(vocab());
        c.mel.hop = 256;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_and_missing_keys_rejected() {
        let c = BundleConfig::default_44k(vocab());
        let mut v = serde_json::to_value(&c).unwrap();
        v["extra"] = 1.into();
        assert!(serde_json::from_value::<BundleConfig>(v.clone()).is_err());
        v.as_object_mut().unwrap().remove("extra");
        v["decoder"].as_object_mut().unwrap().remove("memory_slots");
        assert!(serde_json::from_value::<BundleConfig>(v).is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = BundleConfig::default_16k(vocab());
        let back: BundleConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
