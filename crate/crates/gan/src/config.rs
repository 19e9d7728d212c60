//! Training and network configuration.
//!
//! A config file is either a JSON object or flat `key = value` lines
//! (`#` starts a comment, lists are comma separated). Both spellings map
//! onto [`TrainConfig`]; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{GanError, Result};

/// Which output head the generator has.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Direct inverse-depth output, no drop sampler.
    Baseline,
    /// Inverse depth plus pixel-level measurability logits.
    Dusty1,
    /// Adds an image-level measurability branch.
    Dusty2,
}

impl Variant {
    pub fn output_channels(self) -> usize {
        match self {
            Variant::Baseline => 1,
            Variant::Dusty1 => 2,
            Variant::Dusty2 => 3,
        }
    }

    pub fn has_sampler(self) -> bool {
        self != Variant::Baseline
    }

    pub fn multilevel(self) -> bool {
        self == Variant::Dusty2
    }
}

impl std::str::FromStr for Variant {
    type Err = GanError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_ascii_lowercase()))
            .map_err(|_| GanError::Config(format!("unknown variant {s:?} (baseline|dusty1|dusty2)")))
    }
}

/// Shapes of both networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub variant: Variant,
    pub height: usize,
    pub width: usize,
    pub latent_dim: usize,
    /// Channels after the first (1×1 → H/16×W/16) layer and after each of
    /// the three following upsampling layers.
    pub gen_channels: [usize; 4],
    /// Channels after each of the four downsampling convolutions.
    pub disc_channels: [usize; 4],
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.height % 16 != 0 || self.width % 16 != 0 {
            return Err(GanError::Config(format!(
                "raster {}x{} must be positive multiples of 16",
                self.height, self.width
            )));
        }
        if self.latent_dim == 0 {
            return Err(GanError::Config("latent_dim must be positive".into()));
        }
        if self.gen_channels.iter().chain(&self.disc_channels).any(|&c| c == 0) {
            return Err(GanError::Config("channel counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    /// Fresh Gumbel noise on both branches.
    Train,
    /// Pixel branch stochastic, image-level noise cancelled.
    Test,
    /// All noise cancelled: plain thresholding of the logits.
    Deterministic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub temperature: f32,
    pub multilevel: bool,
    pub mode: SamplerMode,
}

impl SamplerConfig {
    pub fn new(temperature: f32, multilevel: bool, mode: SamplerMode) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(GanError::Config(format!("temperature must be positive, got {temperature}")));
        }
        Ok(SamplerConfig { temperature, multilevel, mode })
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            temperature: 1.0,
            multilevel: false,
            mode: SamplerMode::Train,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub color: bool,
    pub translation: bool,
    pub cutout: bool,
}

impl AugmentConfig {
    pub fn all() -> Self {
        AugmentConfig { color: true, translation: true, cutout: true }
    }

    pub fn any(&self) -> bool {
        self.color || self.translation || self.cutout
    }
}

/// Everything a training run needs. Defaults are the 16×64 desk preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub height: usize,
    pub width: usize,
    pub latent_dim: usize,
    pub gen_channels: [usize; 4],
    pub disc_channels: [usize; 4],
    pub batch_size: usize,
    pub lr: f32,
    pub r1_gamma: f32,
    /// Apply R1 every `r1_interval` discriminator steps, scaled by the interval.
    pub r1_interval: u64,
    pub augment_color: bool,
    pub augment_translation: bool,
    pub augment_cutout: bool,
    pub ema_decay: f32,
    pub temperature: f32,
    pub steps: u64,
    pub seed: u64,
    pub log_every: u64,
    pub sample_every: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

impl TrainConfig {
    /// 16×64 preset sized for a single CPU core.
    pub fn desk() -> Self {
        TrainConfig {
            variant: Variant::Dusty1,
            height: 16,
            width: 64,
            latent_dim: 64,
            gen_channels: [64, 32, 16, 16],
            disc_channels: [16, 32, 32, 64],
            batch_size: 16,
            lr: 0.002,
            r1_gamma: 1.0,
            r1_interval: 4,
            augment_color: true,
            augment_translation: true,
            augment_cutout: true,
            ema_decay: 0.999,
            temperature: 1.0,
            steps: 3000,
            seed: 0,
            log_every: 50,
            sample_every: 500,
            checkpoint_every: 1000,
        }
    }

    /// 32×128 preset with wider layers.
    pub fn desk_large() -> Self {
        TrainConfig {
            height: 32,
            width: 128,
            latent_dim: 128,
            gen_channels: [128, 64, 32, 32],
            disc_channels: [32, 64, 64, 128],
            ..TrainConfig::desk()
        }
    }

    pub fn net(&self) -> NetConfig {
        NetConfig {
            variant: self.variant,
            height: self.height,
            width: self.width,
            latent_dim: self.latent_dim,
            gen_channels: self.gen_channels,
            disc_channels: self.disc_channels,
        }
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            color: self.augment_color,
            translation: self.augment_translation,
            cutout: self.augment_cutout,
        }
    }

    pub fn sampler(&self, mode: SamplerMode) -> Result<SamplerConfig> {
        SamplerConfig::new(self.temperature, self.variant.multilevel(), mode)
    }

    pub fn validate(&self) -> Result<()> {
        self.net().validate()?;
        let positive = [
            ("batch_size", self.batch_size as f64),
            ("lr", self.lr as f64),
            ("temperature", self.temperature as f64),
            ("r1_interval", self.r1_interval as f64),
            ("log_every", self.log_every as f64),
            ("sample_every", self.sample_every as f64),
            ("checkpoint_every", self.checkpoint_every as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GanError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.r1_gamma >= 0.0 && self.r1_gamma.is_finite()) {
            return Err(GanError::Config(format!("r1_gamma must be >= 0, got {}", self.r1_gamma)));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(GanError::Config(format!("ema_decay must lie in [0, 1], got {}", self.ema_decay)));
        }
        Ok(())
    }

    /// Parses JSON (when the text starts with `{`) or `key = value` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let value = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            key_values(text)?
        };
        let cfg: TrainConfig =
            serde_json::from_value(value).map_err(|e| GanError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Applies `key=value` overrides on top of this config.
    pub fn with_overrides(&self, pairs: &[String]) -> Result<Self> {
        let mut base = serde_json::to_value(self)?;
        let Value::Object(extra) = key_values(&pairs.join("\n"))? else {
            unreachable!("key_values returns an object")
        };
        let obj = base.as_object_mut().expect("struct serializes to an object");
        for (k, v) in extra {
            obj.insert(k, v);
        }
        let cfg: TrainConfig =
            serde_json::from_value(base).map_err(|e| GanError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn key_values(text: &str) -> Result<Value> {
    let mut map = Map::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| GanError::Config(format!("line {}: expected key = value", lineno + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        let value = if v.contains(',') {
            Value::Array(v.split(',').map(|p| scalar(p.trim())).collect())
        } else {
            scalar(v)
        };
        if map.insert(k.to_string(), value).is_some() {
            return Err(GanError::Config(format!("duplicate key {k}")));
        }
    }
    Ok(Value::Object(map))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_value_and_json_agree() {
        let kv = "variant = dusty2\nheight = 32 # rows\nwidth=128\ngen_channels = 8,8,8,8\nlr = 0.001\n";
        let js = r#"{"variant":"dusty2","height":32,"width":128,"gen_channels":[8,8,8,8],"lr":0.001}"#;
        let a = TrainConfig::parse(kv).unwrap();
        let b = TrainConfig::parse(js).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.variant, Variant::Dusty2);
        assert_eq!(a.gen_channels, [8, 8, 8, 8]);
        assert_eq!(a.batch_size, TrainConfig::desk().batch_size);
    }

    #[test]
    fn unknown_keys_and_bad_shapes_rejected() {
        assert!(matches!(TrainConfig::parse("bogus = 1"), Err(GanError::Config(_))));
        assert!(matches!(TrainConfig::parse("height = 24"), Err(GanError::Config(_))));
        assert!(matches!(TrainConfig::parse("lr = 0"), Err(GanError::Config(_))));
        assert!(matches!(TrainConfig::parse("ema_decay = 1.5"), Err(GanError::Config(_))));
    }

    #[test]
    fn overrides_replace_fields() {
        let cfg = TrainConfig::desk()
            .with_overrides(&["steps=7".into(), "variant=baseline".into()])
            .unwrap();
        assert_eq!(cfg.steps, 7);
        assert_eq!(cfg.variant, Variant::Baseline);
    }

    #[test]
    fn variant_channels() {
        assert_eq!(Variant::Baseline.output_channels(), 1);
        assert_eq!(Variant::Dusty1.output_channels(), 2);
        assert_eq!(Variant::Dusty2.output_channels(), 3);
        assert_eq!("DUSTY1".parse::<Variant>().unwrap(), Variant::Dusty1);
        assert!("dusty3".parse::<Variant>().is_err());
    }

    #[test]
    fn temperature_must_be_positive() {
        assert!(SamplerConfig::new(0.0, false, SamplerMode::Train).is_err());
        assert!(SamplerConfig::new(f32::NAN, false, SamplerMode::Train).is_err());
    }
}
