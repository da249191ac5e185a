//! Effective settings of one invocation. Flags fill a [`RunConfig`], then the
//! keys of a `--config` file replace the matching fields.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use oxyauth::classifiers::{self, Algorithm, ModelSpec};
use oxyauth::evaluation::{ExperimentConfig, Scheme, DEFAULT_SPLIT, DEFAULT_SWEEP_COUNTS};
use oxyauth::features::Modality;
use oxyauth::selection::{SelectionConfig, SelectionMethod, DEFAULT_CORRELATION_THRESHOLD};
use oxyauth::stats::{ComparisonMode, DEFAULT_ALPHA};
use oxyauth::synth::ActivityProfile;
use oxyauth::windowing::DEFAULT_GAP_TOLERANCE_S;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SynthPreset {
    Default,
    Separable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Stage input directory. Each stage has its own default under `out_dir`.
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub alpha: f64,
    pub correlation_threshold: f64,
    pub gap_tolerance: f64,
    pub split: f64,
    pub modality: Option<Modality>,
    /// Algorithm name or preset name.
    pub model: String,
    /// Hyperparameter overrides on top of the resolved preset.
    pub params: BTreeMap<String, f64>,
    pub scheme: Option<Scheme>,
    pub selection: Option<SelectionMethod>,
    pub k: Option<usize>,

    pub preset: SynthPreset,
    pub subjects: usize,
    pub duration_s: f64,
    pub dropout: Option<f64>,
    pub activity: Option<ActivityProfile>,

    pub mode: Option<ComparisonMode>,

    pub valid_user: Option<String>,
    pub grid_search: bool,
    pub folds: usize,

    pub counts: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
            alpha: DEFAULT_ALPHA,
            correlation_threshold: DEFAULT_CORRELATION_THRESHOLD,
            gap_tolerance: DEFAULT_GAP_TOLERANCE_S,
            split: DEFAULT_SPLIT,
            modality: None,
            model: "rf".into(),
            params: BTreeMap::new(),
            scheme: None,
            selection: None,
            k: None,
            preset: SynthPreset::Default,
            subjects: 25,
            duration_s: 1800.0,
            dropout: None,
            activity: None,
            mode: None,
            valid_user: None,
            grid_search: false,
            folds: classifiers::DEFAULT_FOLDS,
            counts: DEFAULT_SWEEP_COUNTS.to_vec(),
        }
    }
}

/// Parses `key=value` hyperparameter overrides.
pub fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let v: f64 = v
        .trim()
        .parse()
        .map_err(|_| format!("`{v}` is not a number"))?;
    Ok((k.trim().to_string(), v))
}

impl RunConfig {
    /// Replaces every field named in the JSON object at `path`.
    pub fn overlay_file(self, path: &Path) -> CliResult<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::missing(format!("config {}: {e}", path.display())))?;
        let overlay: serde_json::Value = serde_json::from_str(&text)?;
        let serde_json::Value::Object(fields) = overlay else {
            return Err(CliError::malformed("config file must hold a JSON object"));
        };
        let mut base = serde_json::to_value(&self)?;
        let obj = base
            .as_object_mut()
            .expect("RunConfig serializes to an object");
        for (k, v) in fields {
            obj.insert(k, v);
        }
        Ok(serde_json::from_value(base)?)
    }

    pub fn data_path(&self, default: &str) -> PathBuf {
        self.data_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join(default))
    }

    pub fn modality_or(&self, default: Modality) -> Modality {
        self.modality.unwrap_or(default)
    }

    /// Model spec from the `model` token and `params`, with `seed` applied.
    pub fn model_spec(&self, modality: Modality) -> CliResult<ModelSpec> {
        let mut spec = match self.model.parse::<Algorithm>() {
            Ok(alg) => classifiers::preset_for(modality, alg),
            Err(_) => classifiers::preset(&self.model).ok_or_else(|| {
                CliError::malformed(format!(
                    "`{}` is neither an algorithm nor a preset",
                    self.model
                ))
            })?,
        };
        for (k, v) in &self.params {
            spec.hyperparameters.insert(k.clone(), *v);
        }
        spec = spec.with_seed(self.seed);
        spec.validate()?;
        Ok(spec)
    }

    pub fn experiment(&self, modality: Modality) -> CliResult<ExperimentConfig> {
        let spec = self.model_spec(modality)?;
        let implied = if spec.algorithm.is_unary() {
            Scheme::Unary
        } else {
            Scheme::Binary
        };
        let scheme = self.scheme.unwrap_or(implied);
        let method = self.selection.unwrap_or(match scheme {
            Scheme::Binary => SelectionMethod::SelectKBest,
            Scheme::Unary => SelectionMethod::LowVariance,
        });
        let k = self.k.unwrap_or(match modality {
            Modality::HrSpo2 => 31,
            Modality::Hr | Modality::Spo2 => 21,
        });
        let mut selection = SelectionConfig::new(method, k);
        selection.correlation_threshold = self.correlation_threshold;
        let mut config = ExperimentConfig::new(spec, scheme, selection);
        config.split = self.split;
        config.validate()?;
        Ok(config)
    }

    /// File-name stem shared by the artifacts of one model run.
    pub fn run_stem(&self, prefix: &str, config: &ExperimentConfig, modality: Modality) -> String {
        format!(
            "{prefix}_{}_{}_{}",
            modality.as_str(),
            config.scheme,
            self.model
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_replaces_named_fields_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"seed": 9, "model": "knn"}"#).unwrap();
        let base = RunConfig {
            alpha: 0.01,
            ..RunConfig::default()
        };
        let c = base.overlay_file(&p).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.model, "knn");
        assert_eq!(c.alpha, 0.01);
    }

    #[test]
    fn unknown_keys_are_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"sead": 9}"#).unwrap();
        let e = RunConfig::default().overlay_file(&p).unwrap_err();
        assert_eq!(e.code, crate::error::EXIT_MALFORMED);
    }

    #[test]
    fn round_trips_through_json() {
        let mut c = RunConfig::default();
        c.params.insert("C".into(), 3.0);
        c.modality = Some(Modality::Spo2);
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn experiment_defaults_follow_scheme_and_modality() {
        let c = RunConfig::default();
        let e = c.experiment(Modality::HrSpo2).unwrap();
        assert_eq!(e.scheme, Scheme::Binary);
        assert_eq!(e.selection.method, SelectionMethod::SelectKBest);
        assert_eq!(e.selection.k, 31);

        let u = RunConfig {
            model: "ocsvm_rbf".into(),
            ..RunConfig::default()
        };
        let e = u.experiment(Modality::Hr).unwrap();
        assert_eq!(e.scheme, Scheme::Unary);
        assert_eq!(e.selection.method, SelectionMethod::LowVariance);
        assert_eq!(e.selection.k, 21);
    }

    #[test]
    fn scheme_mismatch_is_rejected() {
        let c = RunConfig {
            scheme: Some(Scheme::Unary),
            ..RunConfig::default()
        };
        assert!(c.experiment(Modality::Hr).is_err());
    }

    #[test]
    fn presets_and_params_resolve() {
        let c = RunConfig {
            model: "spo2_unary_poly_d4".into(),
            ..RunConfig::default()
        };
        assert_eq!(
            c.model_spec(Modality::Spo2).unwrap().hyperparameters["degree"],
            4.0
        );
        let c = RunConfig {
            model: "svm_rbf".into(),
            params: BTreeMap::from([("C".to_string(), 7.0)]),
            seed: 3,
            ..RunConfig::default()
        };
        let s = c.model_spec(Modality::Hr).unwrap();
        assert_eq!(s.hyperparameters["C"], 7.0);
        assert_eq!(s.seed, 3);
        assert!(RunConfig {
            model: "nope".into(),
            ..RunConfig::default()
        }
        .model_spec(Modality::Hr)
        .is_err());
    }

    #[test]
    fn parse_param_accepts_key_value() {
        assert_eq!(parse_param("gamma=0.5").unwrap(), ("gamma".into(), 0.5));
        assert!(parse_param("gamma").is_err());
        assert!(parse_param("gamma=x").is_err());
    }
}
