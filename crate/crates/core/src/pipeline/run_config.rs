//! End-to-end run configuration: the model plus the inference protocol.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::ProxyAttention;
use crate::model_io::{ModelConfig, ModelConfigPatch};
use crate::refocus::SuppressionStrategy;
use crate::spectral::{SimilaritySource, ThresholdRule};

/// Inference mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Full pipeline: distraction localization, defocus localization, and
    /// weight redistribution at every configured layer.
    #[default]
    Refocus,
    /// Plain tower with the proxy attention in the final layer; the
    /// reference the refocus pipeline degenerates to when nothing fires.
    KkProxyBaseline,
    /// Completely unmodified tower (final residual and MLP included).
    PlainClip,
    /// Plain tower plus one of the suppression ablations.
    Suppression(SuppressionStrategy),
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "refocus" => Ok(Mode::Refocus),
            "kk_proxy_baseline" => Ok(Mode::KkProxyBaseline),
            "plain_clip" => Ok(Mode::PlainClip),
            other => {
                if let Some(strategy) = other.strip_prefix("suppression:") {
                    Ok(Mode::Suppression(strategy.parse()?))
                } else {
                    Err(Error::Parameter(format!(
                        "unknown mode '{other}' (refocus | kk_proxy_baseline | plain_clip | \
                         suppression:<strategy>)"
                    )))
                }
            }
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Refocus => f.write_str("refocus"),
            Mode::KkProxyBaseline => f.write_str("kk_proxy_baseline"),
            Mode::PlainClip => f.write_str("plain_clip"),
            Mode::Suppression(s) => write!(f, "suppression:{s}"),
        }
    }
}

impl Serialize for Mode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Mode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Everything one inference run needs beyond the input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// Sliding-window side; must equal the model window.
    pub window: usize,
    pub stride: usize,
    /// Short side of the resized input.
    pub short_side: usize,
    pub mode: Mode,
    pub threshold_rule: ThresholdRule,
    pub similarity_source: SimilaritySource,
    pub proxy_attention: ProxyAttention,
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Standard protocol around a model: window = model input, half-window
    /// stride, short side 336 (the urban-scenes benchmark uses 560 via
    /// config).
    pub fn for_model(model: ModelConfig) -> Self {
        let window = model.image_size;
        RunConfig {
            model,
            window,
            stride: (window / 2).max(1),
            short_side: 336.max(window),
            mode: Mode::Refocus,
            threshold_rule: ThresholdRule::Mean,
            similarity_source: SimilaritySource::KkCumAvg,
            proxy_attention: ProxyAttention::KkAvg,
            output_dir: PathBuf::from("out"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.window != self.model.image_size {
            return Err(Error::Parameter(format!(
                "window {} differs from the model input side {}",
                self.window, self.model.image_size
            )));
        }
        if self.stride == 0 || self.stride > self.window {
            return Err(Error::Parameter(format!(
                "stride {} outside 1..={}",
                self.stride, self.window
            )));
        }
        if self.short_side < self.window {
            return Err(Error::Parameter(format!(
                "short side {} smaller than the window {}",
                self.short_side, self.window
            )));
        }
        Ok(())
    }
}

/// Partial run configuration (file or flags); unset fields fall back to
/// [`RunConfig::for_model`] around the resolved model.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigPatch {
    #[serde(default)]
    pub model: ModelConfigPatch,
    pub window: Option<usize>,
    pub stride: Option<usize>,
    pub short_side: Option<usize>,
    pub mode: Option<Mode>,
    pub threshold_rule: Option<ThresholdRule>,
    pub similarity_source: Option<SimilaritySource>,
    pub proxy_attention: Option<ProxyAttention>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfigPatch {
    pub fn resolve(&self) -> Result<RunConfig> {
        let model = self.model.resolve()?;
        let mut run = RunConfig::for_model(model);
        if let Some(v) = self.window {
            run.window = v;
        }
        if let Some(v) = self.stride {
            run.stride = v;
        }
        if let Some(v) = self.short_side {
            run.short_side = v;
        } else if self.window.is_some() || self.model.image_size.is_some() {
            // A non-default window implies the bundled-fixture scale; keep
            // the resize protocol proportionate unless pinned explicitly.
            run.short_side = run.short_side.max(run.window);
            if run.window < 336 {
                run.short_side = (run.window * 3 / 2).max(run.window);
            }
        }
        if let Some(v) = self.mode {
            run.mode = v;
        }
        if let Some(v) = self.threshold_rule {
            run.threshold_rule = v;
        }
        if let Some(v) = self.similarity_source {
            run.similarity_source = v;
        }
        if let Some(v) = self.proxy_attention {
            run.proxy_attention = v;
        }
        if let Some(v) = &self.output_dir {
            run.output_dir = v.clone();
        }
        run.validate()?;
        Ok(run)
    }

    /// Later fields win; used to stack file config under CLI flags.
    pub fn overlay(mut self, over: RunConfigPatch) -> RunConfigPatch {
        let RunConfigPatch {
            model,
            window,
            stride,
            short_side,
            mode,
            threshold_rule,
            similarity_source,
            proxy_attention,
            output_dir,
        } = over;
        self.model = overlay_model(self.model, model);
        self.window = window.or(self.window);
        self.stride = stride.or(self.stride);
        self.short_side = short_side.or(self.short_side);
        self.mode = mode.or(self.mode);
        self.threshold_rule = threshold_rule.or(self.threshold_rule);
        self.similarity_source = similarity_source.or(self.similarity_source);
        self.proxy_attention = proxy_attention.or(self.proxy_attention);
        self.output_dir = output_dir.or(self.output_dir);
        self
    }
}

fn overlay_model(base: ModelConfigPatch, over: ModelConfigPatch) -> ModelConfigPatch {
    ModelConfigPatch {
        variant: over.variant.or(base.variant),
        layers: over.layers.or(base.layers),
        heads: over.heads.or(base.heads),
        width: over.width.or(base.width),
        patch_size: over.patch_size.or(base.patch_size),
        image_size: over.image_size.or(base.image_size),
        distraction_dims: over.distraction_dims.or(base.distraction_dims),
        tau: over.tau.or(base.tau),
        beta: over.beta.or(base.beta),
        attn_weight_floor: over.attn_weight_floor.or(base.attn_weight_floor),
        redistribution_layers: over.redistribution_layers.or(base.redistribution_layers),
        receptive_field: over.receptive_field.or(base.receptive_field),
        activation: over.activation.or(base.activation),
        ln_eps: over.ln_eps.or(base.ln_eps),
        attn_scale: over.attn_scale.or(base.attn_scale),
        channel_mean: over.channel_mean.or(base.channel_mean),
        channel_std: over.channel_std.or(base.channel_std),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_strings_roundtrip() {
        for s in [
            "refocus",
            "kk_proxy_baseline",
            "plain_clip",
            "suppression:mean_filter",
            "suppression:neg_inf_mask",
        ] {
            let m: Mode = s.parse().unwrap();
            assert_eq!(m.to_string(), s);
        }
        assert!("suppress_everything".parse::<Mode>().is_err());
        assert!("suppression:blur".parse::<Mode>().is_err());
    }

    #[test]
    fn defaults_follow_protocol() {
        let run = RunConfig::for_model(ModelConfig::b16());
        run.validate().unwrap();
        assert_eq!(run.window, 224);
        assert_eq!(run.stride, 112);
        assert_eq!(run.short_side, 336);
    }

    #[test]
    fn stride_larger_than_window_rejected() {
        let mut run = RunConfig::for_model(ModelConfig::b16());
        run.stride = 300;
        assert!(run.validate().is_err());
    }

    #[test]
    fn patch_json_roundtrip() {
        let json = r#"{"model":{"variant":"custom","layers":2,"heads":2,"width":16,
            "patch_size":8,"image_size":24,"distraction_dims":[4,11],"tau":0.2},
            "stride":12,"mode":"suppression:median_filter"}"#;
        let patch: RunConfigPatch = serde_json::from_str(json).unwrap();
        let run = patch.resolve().unwrap();
        assert_eq!(run.window, 24);
        assert_eq!(run.stride, 12);
        assert_eq!(run.mode, Mode::Suppression(SuppressionStrategy::MedianFilter));
        assert_eq!(run.short_side, 36);
    }
}
