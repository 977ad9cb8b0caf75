//! Parameter sweeps: one evaluation per value with everything else held
//! fixed, reported as CSV.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_io::{CheckpointStore, ClassEmbeddingSet, DatasetManifest};

use super::evaluate::evaluate;
use super::run_config::RunConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub miou: Option<f64>,
}

const PARAMS: &[&str] = &[
    "tau",
    "beta",
    "similarity_source",
    "threshold_rule",
    "receptive_field",
    "layer_range",
];

/// Apply one sweep value to a copy of the run configuration.
/// `tau` accepts plain floats or the `k/d` notation (multiples of the
/// reciprocal model width); `layer_range` accepts `a-b` or a single layer.
pub fn apply_sweep_value(run: &RunConfig, param: &str, value: &str) -> Result<RunConfig> {
    let mut run = run.clone();
    match param {
        "tau" => {
            run.model.tau = if let Some(num) = value.strip_suffix("/d") {
                let k: f64 = num
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parameter(format!("bad tau value '{value}'")))?;
                k / run.model.width as f64
            } else {
                value
                    .parse()
                    .map_err(|_| Error::Parameter(format!("bad tau value '{value}'")))?
            };
        }
        "beta" => {
            run.model.beta = value
                .parse()
                .map_err(|_| Error::Parameter(format!("bad beta value '{value}'")))?;
        }
        "similarity_source" => {
            run.similarity_source = serde_json::from_value(serde_json::Value::String(
                value.to_string(),
            ))
            .map_err(|_| Error::Parameter(format!("bad similarity source '{value}'")))?;
        }
        "threshold_rule" => {
            run.threshold_rule = serde_json::from_value(serde_json::Value::String(
                value.to_string(),
            ))
            .map_err(|_| Error::Parameter(format!("bad threshold rule '{value}'")))?;
        }
        "receptive_field" => {
            run.model.receptive_field = value
                .parse()
                .map_err(|_| Error::Parameter(format!("bad receptive field '{value}'")))?;
        }
        "layer_range" => {
            let (lo, hi) = if let Some((a, b)) = value.split_once('-') {
                (
                    a.trim().parse().map_err(|_| bad_range(value))?,
                    b.trim().parse().map_err(|_| bad_range(value))?,
                )
            } else {
                let l: usize = value.trim().parse().map_err(|_| bad_range(value))?;
                (l, l)
            };
            run.model.redistribution_layers = (lo, hi);
        }
        other => {
            return Err(Error::Parameter(format!(
                "unknown sweep parameter '{other}' (expected one of {PARAMS:?})"
            )))
        }
    }
    run.validate()?;
    Ok(run)
}

fn bad_range(value: &str) -> Error {
    Error::Parameter(format!("bad layer range '{value}' (use 'a-b' or 'a')"))
}

/// Evaluate once per value and write `param,value,miou` CSV rows.
pub fn sweep(
    param: &str,
    values: &[String],
    manifest: &DatasetManifest,
    ckpt: &CheckpointStore,
    classes: &ClassEmbeddingSet,
    base: &RunConfig,
    csv_path: &Path,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Parameter("sweep needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for value in values {
        let run = apply_sweep_value(base, param, value)?;
        let report = evaluate(manifest, ckpt, classes, &run)?;
        rows.push(SweepRow {
            value: value.clone(),
            miou: report.miou,
        });
    }
    let mut text = String::from("param,value,miou\n");
    for row in &rows {
        let miou = row
            .miou
            .map_or_else(|| "".to_string(), |m| format!("{m}"));
        text.push_str(&format!("{param},{},{miou}\n", row.value));
    }
    if let Some(parent) = csv_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(csv_path, text).map_err(|e| Error::io(csv_path, e))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::ModelConfig;

    #[test]
    fn tau_accepts_reciprocal_width_notation() {
        let run = RunConfig::for_model(ModelConfig::b16());
        let swept = apply_sweep_value(&run, "tau", "3/d").unwrap();
        assert!((swept.model.tau - 3.0 / 768.0).abs() < 1e-12);
        let swept = apply_sweep_value(&run, "tau", "0.01").unwrap();
        assert!((swept.model.tau - 0.01).abs() < 1e-12);
    }

    #[test]
    fn layer_range_forms() {
        let run = RunConfig::for_model(ModelConfig::b16());
        assert_eq!(
            apply_sweep_value(&run, "layer_range", "6-12")
                .unwrap()
                .model
                .redistribution_layers,
            (6, 12)
        );
        assert_eq!(
            apply_sweep_value(&run, "layer_range", "9")
                .unwrap()
                .model
                .redistribution_layers,
            (9, 9)
        );
        assert!(apply_sweep_value(&run, "layer_range", "0-13").is_err());
    }

    #[test]
    fn unknown_parameter_rejected() {
        let run = RunConfig::for_model(ModelConfig::b16());
        assert!(matches!(
            apply_sweep_value(&run, "learning_rate", "0.1"),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn enum_values_parse() {
        let run = RunConfig::for_model(ModelConfig::b16());
        apply_sweep_value(&run, "similarity_source", "kk_cum_avg").unwrap();
        apply_sweep_value(&run, "similarity_source", "qq").unwrap();
        apply_sweep_value(&run, "threshold_rule", "otsu").unwrap();
        assert!(apply_sweep_value(&run, "threshold_rule", "triangle").is_err());
        apply_sweep_value(&run, "receptive_field", "5").unwrap();
        assert!(apply_sweep_value(&run, "receptive_field", "4").is_err());
    }
}
