//! Architecture + refocus hyperparameters.
//!
//! The two published variants carry fixed distraction-dimension lists and
//! identification thresholds; `custom` is used by the synthetic test
//! fixture and anything else.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Activation;

/// Distraction dimensions of the base (patch-16) model.
pub const DISTRACTION_DIMS_B16: [usize; 8] = [4, 162, 189, 326, 429, 474, 633, 713];
/// Distraction dimensions of the large (patch-14) model.
pub const DISTRACTION_DIMS_L14: [usize; 8] = [250, 261, 437, 650, 720, 779, 936, 1005];

/// Channel normalization constants of the published checkpoints. These are
/// checkpoint properties, not method parameters; override via config.
pub const DEFAULT_CHANNEL_MEAN: [f32; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
pub const DEFAULT_CHANNEL_STD: [f32; 3] = [0.268_629_54, 0.261_302_58, 0.275_777_11];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    B16,
    L14,
    Custom,
}

/// Fully resolved model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    pub patch_size: usize,
    /// Side of the square inference window in pixels.
    pub image_size: usize,
    /// Embedding dimensions prone to over-activation.
    pub distraction_dims: Vec<usize>,
    /// Identification threshold on the maximum relative embedding weight.
    pub tau: f64,
    /// Attenuation factor for attention redistribution.
    pub beta: f64,
    /// When set, a token is a distraction token only if its cumulative
    /// attention column mass also exceeds this floor (the large-model rule,
    /// where embedding weight alone yields too many false positives).
    pub attn_weight_floor: Option<f64>,
    /// Inclusive 1-based layer range in which redistribution runs.
    pub redistribution_layers: (usize, usize),
    /// Side of the square neighborhood for embedding redistribution.
    pub receptive_field: usize,
    pub activation: Activation,
    pub ln_eps: f64,
    /// Explicit attention logit scale; defaults to `1/sqrt(width/heads)`.
    pub attn_scale: Option<f64>,
    pub channel_mean: [f32; 3],
    pub channel_std: [f32; 3],
}

impl ModelConfig {
    pub fn b16() -> Self {
        let width = 768;
        ModelConfig {
            variant: Variant::B16,
            layers: 12,
            heads: 12,
            width,
            patch_size: 16,
            image_size: 224,
            distraction_dims: DISTRACTION_DIMS_B16.to_vec(),
            tau: 5.0 / width as f64,
            beta: 0.7,
            attn_weight_floor: None,
            redistribution_layers: (1, 12),
            receptive_field: 3,
            activation: Activation::QuickGelu,
            ln_eps: 1e-5,
            attn_scale: None,
            channel_mean: DEFAULT_CHANNEL_MEAN,
            channel_std: DEFAULT_CHANNEL_STD,
        }
    }

    pub fn l14() -> Self {
        let width = 1024;
        ModelConfig {
            variant: Variant::L14,
            layers: 24,
            heads: 16,
            width,
            patch_size: 14,
            image_size: 224,
            distraction_dims: DISTRACTION_DIMS_L14.to_vec(),
            tau: 6.0 / width as f64,
            beta: 0.7,
            attn_weight_floor: Some(15.0),
            redistribution_layers: (1, 24),
            receptive_field: 3,
            activation: Activation::QuickGelu,
            ln_eps: 1e-5,
            attn_scale: None,
            channel_mean: DEFAULT_CHANNEL_MEAN,
            channel_std: DEFAULT_CHANNEL_STD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.width == 0 {
            return Err(Error::Parameter("layers/heads/width must be nonzero".into()));
        }
        if self.width % self.heads != 0 {
            return Err(Error::Parameter(format!(
                "width {} not divisible by heads {}",
                self.width, self.heads
            )));
        }
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::Parameter(format!(
                "window {} is not a whole number of {}-pixel patches",
                self.image_size, self.patch_size
            )));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Parameter(format!("tau {} outside (0,1)", self.tau)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Parameter(format!("beta {} outside (0,1)", self.beta)));
        }
        if let Some(&bad) = self.distraction_dims.iter().find(|&&d| d >= self.width) {
            return Err(Error::Parameter(format!(
                "distraction dimension {bad} outside [0, {})",
                self.width
            )));
        }
        let (lo, hi) = self.redistribution_layers;
        if lo == 0 || lo > hi || hi > self.layers {
            return Err(Error::Parameter(format!(
                "redistribution layer range {lo}-{hi} invalid for {} layers",
                self.layers
            )));
        }
        if self.receptive_field < 3 || self.receptive_field % 2 == 0 {
            return Err(Error::Parameter(format!(
                "receptive field {} must be an odd number >= 3",
                self.receptive_field
            )));
        }
        if self.ln_eps <= 0.0 {
            return Err(Error::Parameter("ln_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn grid_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn patch_count(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    /// Patch tokens plus the global token.
    pub fn token_count(&self) -> usize {
        self.patch_count() + 1
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    /// Attention logit scale; the per-head convention of the real
    /// checkpoints unless overridden.
    pub fn attention_scale(&self) -> f64 {
        self.attn_scale
            .unwrap_or_else(|| 1.0 / (self.head_dim() as f64).sqrt())
    }

    pub fn layer_in_redistribution_range(&self, layer: usize) -> bool {
        layer >= self.redistribution_layers.0 && layer <= self.redistribution_layers.1
    }
}

/// Partial configuration as read from a JSON file or CLI flags; unset fields
/// fall back to the variant preset.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfigPatch {
    pub variant: Option<Variant>,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub width: Option<usize>,
    pub patch_size: Option<usize>,
    pub image_size: Option<usize>,
    pub distraction_dims: Option<Vec<usize>>,
    pub tau: Option<f64>,
    pub beta: Option<f64>,
    /// `Some(None)` clears the floor; encoded in JSON as `null`.
    #[serde(default, with = "double_option")]
    pub attn_weight_floor: Option<Option<f64>>,
    pub redistribution_layers: Option<(usize, usize)>,
    pub receptive_field: Option<usize>,
    pub activation: Option<Activation>,
    pub ln_eps: Option<f64>,
    pub attn_scale: Option<f64>,
    pub channel_mean: Option<[f32; 3]>,
    pub channel_std: Option<[f32; 3]>,
}

mod double_option {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(
        v: &Option<Option<f64>>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        match v {
            Some(inner) => inner.serialize(s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Option<Option<f64>>, D::Error> {
        Ok(Some(Option::<f64>::deserialize(d)?))
    }
}

impl ModelConfigPatch {
    /// Expand onto the variant preset (custom starts from the base preset
    /// with an empty distraction list) and validate.
    pub fn resolve(&self) -> Result<ModelConfig> {
        let variant = self.variant.unwrap_or(Variant::B16);
        let mut cfg = match variant {
            Variant::B16 => ModelConfig::b16(),
            Variant::L14 => ModelConfig::l14(),
            Variant::Custom => {
                let mut base = ModelConfig::b16();
                base.variant = Variant::Custom;
                base.distraction_dims = Vec::new();
                base
            }
        };
        if let Some(v) = self.layers {
            cfg.layers = v;
            // Keep the default range covering the whole tower unless the
            // patch pins it explicitly below.
            cfg.redistribution_layers = (1, v);
        }
        if let Some(v) = self.heads {
            cfg.heads = v;
        }
        if let Some(v) = self.width {
            cfg.width = v;
        }
        if let Some(v) = self.patch_size {
            cfg.patch_size = v;
        }
        if let Some(v) = self.image_size {
            cfg.image_size = v;
        }
        if let Some(v) = &self.distraction_dims {
            cfg.distraction_dims = v.clone();
        }
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.attn_weight_floor {
            cfg.attn_weight_floor = v;
        }
        if let Some(v) = self.redistribution_layers {
            cfg.redistribution_layers = v;
        }
        if let Some(v) = self.receptive_field {
            cfg.receptive_field = v;
        }
        if let Some(v) = self.activation {
            cfg.activation = v;
        }
        if let Some(v) = self.ln_eps {
            cfg.ln_eps = v;
        }
        if let Some(v) = self.attn_scale {
            cfg.attn_scale = Some(v);
        }
        if let Some(v) = self.channel_mean {
            cfg.channel_mean = v;
        }
        if let Some(v) = self.channel_std {
            cfg.channel_std = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::b16().validate().unwrap();
        ModelConfig::l14().validate().unwrap();
        assert_eq!(ModelConfig::b16().patch_count(), 196);
        assert_eq!(ModelConfig::l14().patch_count(), 256);
    }

    #[test]
    fn patch_resolution_overrides_preset() {
        let patch: ModelConfigPatch =
            serde_json::from_str(r#"{"variant":"l14","beta":0.5}"#).unwrap();
        let cfg = patch.resolve().unwrap();
        assert_eq!(cfg.layers, 24);
        assert_eq!(cfg.beta, 0.5);
        assert_eq!(cfg.attn_weight_floor, Some(15.0));
        assert!((cfg.tau - 6.0 / 1024.0).abs() < 1e-12);
    }

    #[test]
    fn null_floor_clears_joint_rule() {
        let patch: ModelConfigPatch =
            serde_json::from_str(r#"{"variant":"l14","attn_weight_floor":null}"#).unwrap();
        let cfg = patch.resolve().unwrap();
        assert_eq!(cfg.attn_weight_floor, None);
    }

    #[test]
    fn invalid_grid_rejected() {
        let patch: ModelConfigPatch =
            serde_json::from_str(r#"{"image_size":230}"#).unwrap();
        assert!(patch.resolve().is_err());
    }
}
