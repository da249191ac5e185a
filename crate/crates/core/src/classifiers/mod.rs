//! Binary and one-class classifiers behind a single spec/train/score surface.
//!
//! Every classifier produces a continuous valid-class score. `predict` is the
//! score compared strictly against the algorithm's boundary, so ties and
//! boundary values go to imposter.

pub mod forest;
pub mod knn;
pub mod naive_bayes;
pub mod svm;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, Label, Modality};
use crate::selection::{SelectionConfig, Selector};

pub use forest::RandomForest;
pub use knn::Knn;
pub use naive_bayes::GaussianNb;
pub use svm::{Kernel, SupportVectors};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_FOLDS: usize = 3;
pub const DEFAULT_VAR_SMOOTHING: f64 = 1e-9;
pub const DEFAULT_MINKOWSKI_P: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Rf,
    Knn,
    Nb,
    SvmRbf,
    SvmPoly,
    OcsvmRbf,
    OcsvmPoly,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Rf,
        Algorithm::Knn,
        Algorithm::Nb,
        Algorithm::SvmRbf,
        Algorithm::SvmPoly,
        Algorithm::OcsvmRbf,
        Algorithm::OcsvmPoly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Rf => "rf",
            Algorithm::Knn => "knn",
            Algorithm::Nb => "nb",
            Algorithm::SvmRbf => "svm_rbf",
            Algorithm::SvmPoly => "svm_poly",
            Algorithm::OcsvmRbf => "ocsvm_rbf",
            Algorithm::OcsvmPoly => "ocsvm_poly",
        }
    }

    /// Trained on valid rows only.
    pub fn is_unary(self) -> bool {
        matches!(self, Algorithm::OcsvmRbf | Algorithm::OcsvmPoly)
    }

    /// Scores strictly above this value predict valid.
    pub fn boundary(self) -> f64 {
        match self {
            Algorithm::Rf | Algorithm::Knn | Algorithm::Nb => 0.5,
            _ => 0.0,
        }
    }

    fn required(self) -> &'static [&'static str] {
        match self {
            Algorithm::Rf => &["n_estimators"],
            Algorithm::Knn => &["k"],
            Algorithm::Nb => &[],
            Algorithm::SvmRbf => &["gamma", "C"],
            Algorithm::SvmPoly => &["degree", "C"],
            Algorithm::OcsvmRbf => &["gamma", "nu"],
            Algorithm::OcsvmPoly => &["degree", "nu"],
        }
    }

    fn optional(self) -> &'static [&'static str] {
        match self {
            Algorithm::Knn => &["minkowski_p"],
            Algorithm::Nb => &["var_smoothing"],
            Algorithm::SvmPoly | Algorithm::OcsvmPoly => &["gamma"],
            _ => &[],
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub algorithm: Algorithm,
    pub hyperparameters: BTreeMap<String, f64>,
    pub seed: u64,
}

fn positive_int(name: &str, v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v.is_finite() {
        Ok(v as usize)
    } else {
        Err(Error::Validation(format!(
            "{name} must be a positive integer, got {v}"
        )))
    }
}

impl ModelSpec {
    pub fn new(algorithm: Algorithm, hyperparameters: &[(&str, f64)], seed: u64) -> Self {
        ModelSpec {
            algorithm,
            hyperparameters: hyperparameters
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn get(&self, name: &str) -> Option<f64> {
        self.hyperparameters.get(name).copied()
    }

    fn req(&self, name: &str) -> Result<f64> {
        self.get(name).ok_or_else(|| {
            Error::Validation(format!(
                "{} requires hyperparameter `{name}`",
                self.algorithm
            ))
        })
    }

    pub fn validate(&self) -> Result<()> {
        let alg = self.algorithm;
        for name in self.hyperparameters.keys() {
            if !alg.required().contains(&name.as_str()) && !alg.optional().contains(&name.as_str())
            {
                return Err(Error::Validation(format!(
                    "{alg} has no hyperparameter `{name}`"
                )));
            }
        }
        for name in alg.required() {
            self.req(name)?;
        }
        for (name, &v) in &self.hyperparameters {
            match name.as_str() {
                "n_estimators" | "k" | "degree" => {
                    positive_int(name, v)?;
                }
                "gamma" | "C" | "minkowski_p" if v.is_nan() || v <= 0.0 || v.is_infinite() => {
                    return Err(Error::Validation(format!(
                        "{name} must be positive and finite, got {v}"
                    )));
                }
                "minkowski_p" if v < 1.0 => {
                    return Err(Error::Validation(format!(
                        "minkowski_p must be >= 1, got {v}"
                    )));
                }
                "var_smoothing" if v.is_nan() || v < 0.0 => {
                    return Err(Error::Validation(format!(
                        "var_smoothing must be >= 0, got {v}"
                    )));
                }
                "nu" if !(v > 0.0 && v <= 1.0) => {
                    return Err(Error::Validation(format!("nu must lie in (0, 1], got {v}")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn kernel(&self, dim: usize) -> Result<Kernel> {
        match self.algorithm {
            Algorithm::SvmRbf | Algorithm::OcsvmRbf => Ok(Kernel::Rbf {
                gamma: self.req("gamma")?,
            }),
            Algorithm::SvmPoly | Algorithm::OcsvmPoly => Ok(Kernel::Poly {
                gamma: self.get("gamma").unwrap_or(1.0 / dim.max(1) as f64),
                degree: positive_int("degree", self.req("degree")?)? as u32,
            }),
            other => Err(Error::Contract(format!("{other} has no kernel"))),
        }
    }
}

/// Named hyperparameter presets. `spo2_unary_poly_d4` is the alternate
/// degree for the unary SpO2 polynomial kernel.
pub fn preset(name: &str) -> Option<ModelSpec> {
    use Algorithm::*;
    let p = |a, h: &[(&str, f64)]| Some(ModelSpec::new(a, h, 0));
    match name {
        "hr_binary_rf" | "spo2_binary_rf" | "hrspo2_binary_rf" => p(Rf, &[("n_estimators", 50.0)]),
        "hr_binary_knn" | "spo2_binary_knn" => p(Knn, &[("k", 5.0), ("minkowski_p", 2.0)]),
        "hrspo2_binary_knn" => p(Knn, &[("k", 2.0), ("minkowski_p", 2.0)]),
        "hr_binary_nb" | "spo2_binary_nb" | "hrspo2_binary_nb" => {
            p(Nb, &[("var_smoothing", DEFAULT_VAR_SMOOTHING)])
        }
        "hr_binary_rbf" | "spo2_binary_rbf" => p(SvmRbf, &[("gamma", 0.05), ("C", 5.0)]),
        "hrspo2_binary_rbf" => p(SvmRbf, &[("gamma", 0.08), ("C", 3.0)]),
        "hr_binary_poly" => p(SvmPoly, &[("degree", 3.0), ("C", 12.0)]),
        "spo2_binary_poly" => p(SvmPoly, &[("degree", 3.0), ("C", 14.0)]),
        "hrspo2_binary_poly" => p(SvmPoly, &[("degree", 4.0), ("C", 16.0)]),
        "hr_unary_rbf" | "spo2_unary_rbf" | "hrspo2_unary_rbf" => {
            p(OcsvmRbf, &[("gamma", 0.05), ("nu", 0.5)])
        }
        "hr_unary_poly" => p(OcsvmPoly, &[("degree", 1.0), ("nu", 0.5)]),
        "spo2_unary_poly" => p(OcsvmPoly, &[("degree", 2.0), ("nu", 0.5)]),
        "spo2_unary_poly_d4" => p(OcsvmPoly, &[("degree", 4.0), ("nu", 0.5)]),
        "hrspo2_unary_poly" => p(OcsvmPoly, &[("degree", 1.0), ("nu", 0.75)]),
        _ => None,
    }
}

pub const PRESET_NAMES: [&str; 22] = [
    "hr_binary_rf",
    "hr_binary_knn",
    "hr_binary_nb",
    "hr_binary_rbf",
    "hr_binary_poly",
    "hr_unary_rbf",
    "hr_unary_poly",
    "spo2_binary_rf",
    "spo2_binary_knn",
    "spo2_binary_nb",
    "spo2_binary_rbf",
    "spo2_binary_poly",
    "spo2_unary_rbf",
    "spo2_unary_poly",
    "spo2_unary_poly_d4",
    "hrspo2_binary_rf",
    "hrspo2_binary_knn",
    "hrspo2_binary_nb",
    "hrspo2_binary_rbf",
    "hrspo2_binary_poly",
    "hrspo2_unary_rbf",
    "hrspo2_unary_poly",
];

/// Preset for a modality and algorithm, e.g. `(HrSpo2, OcsvmRbf)` gives
/// `hrspo2_unary_rbf`.
pub fn preset_for(modality: Modality, algorithm: Algorithm) -> ModelSpec {
    let m = match modality {
        Modality::Hr => "hr",
        Modality::Spo2 => "spo2",
        Modality::HrSpo2 => "hrspo2",
    };
    let (scheme, short) = match algorithm {
        Algorithm::Rf => ("binary", "rf"),
        Algorithm::Knn => ("binary", "knn"),
        Algorithm::Nb => ("binary", "nb"),
        Algorithm::SvmRbf => ("binary", "rbf"),
        Algorithm::SvmPoly => ("binary", "poly"),
        Algorithm::OcsvmRbf => ("unary", "rbf"),
        Algorithm::OcsvmPoly => ("unary", "poly"),
    };
    preset(&format!("{m}_{scheme}_{short}")).expect("every modality/algorithm pair has a preset")
}

/// Learned parameters of one fitted classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Classifier {
    Forest(RandomForest),
    Knn(Knn),
    NaiveBayes(GaussianNb),
    Svm(SupportVectors),
    OneClass(SupportVectors),
}

impl Classifier {
    /// Fits on already-transformed rows. `valid[i]` is the label of row `i`.
    pub fn fit(spec: &ModelSpec, rows: &[Vec<f64>], valid: &[bool]) -> Result<Classifier> {
        spec.validate()?;
        if rows.is_empty() {
            return Err(Error::Contract("empty training set".into()));
        }
        if rows.len() != valid.len() {
            return Err(Error::Contract(format!(
                "{} rows but {} labels",
                rows.len(),
                valid.len()
            )));
        }
        let dim = rows[0].len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Contract("ragged training rows".into()));
        }
        let n_valid = valid.iter().filter(|v| **v).count();
        if spec.algorithm.is_unary() {
            if n_valid != rows.len() {
                return Err(Error::Contract(format!(
                    "{} trains on valid rows only, got {} imposter rows",
                    spec.algorithm,
                    rows.len() - n_valid
                )));
            }
        } else if n_valid == 0 || n_valid == rows.len() {
            return Err(Error::Contract(format!(
                "{} needs both labels in training",
                spec.algorithm
            )));
        }

        Ok(match spec.algorithm {
            Algorithm::Rf => {
                let n = positive_int("n_estimators", spec.req("n_estimators")?)?;
                Classifier::Forest(RandomForest::fit(rows, valid, n, spec.seed))
            }
            Algorithm::Knn => {
                let k = positive_int("k", spec.req("k")?)?;
                let p = spec.get("minkowski_p").unwrap_or(DEFAULT_MINKOWSKI_P);
                Classifier::Knn(Knn::fit(rows, valid, k, p))
            }
            Algorithm::Nb => {
                let floor = spec.get("var_smoothing").unwrap_or(DEFAULT_VAR_SMOOTHING);
                Classifier::NaiveBayes(GaussianNb::fit(rows, valid, floor))
            }
            Algorithm::SvmRbf | Algorithm::SvmPoly => {
                let y: Vec<f64> = valid.iter().map(|&v| if v { 1.0 } else { -1.0 }).collect();
                let (sv, _) = svm::fit_svc(rows, &y, spec.kernel(dim)?, spec.req("C")?)?;
                Classifier::Svm(sv)
            }
            Algorithm::OcsvmRbf | Algorithm::OcsvmPoly => {
                let (sv, _) = svm::fit_one_class(rows, spec.kernel(dim)?, spec.req("nu")?)?;
                Classifier::OneClass(sv)
            }
        })
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        match self {
            Classifier::Forest(f) => f.score(x),
            Classifier::Knn(k) => k.score(x),
            Classifier::NaiveBayes(nb) => nb.score(x),
            Classifier::Svm(sv) | Classifier::OneClass(sv) => sv.decision(x),
        }
    }
}

/// A classifier together with the selection chain fitted on the same rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub selector: Selector,
    pub classifier: Classifier,
    pub valid_user: Option<String>,
    pub modality: Modality,
}

fn valid_flags(m: &FeatureMatrix) -> Result<Vec<bool>> {
    Ok(m.labels()?.into_iter().map(Label::is_valid).collect())
}

/// Fits the selection chain and then the classifier on `train`.
pub fn train(
    spec: &ModelSpec,
    selection: SelectionConfig,
    train: &FeatureMatrix,
) -> Result<TrainedModel> {
    spec.validate()?;
    if train.n_rows() == 0 {
        return Err(Error::Contract("empty training set".into()));
    }
    let valid = valid_flags(train)?;
    if spec.algorithm.is_unary() && valid.iter().any(|v| !v) {
        return Err(Error::Contract(format!(
            "{} trains on valid rows only",
            spec.algorithm
        )));
    }
    let selector = Selector::fit(selection, train)?;
    let rows = selector.apply(train)?.values();
    let classifier = Classifier::fit(spec, &rows, &valid)?;
    let valid_user = train
        .rows
        .iter()
        .find(|r| r.label == Some(Label::Valid))
        .map(|r| r.subject_id.clone());
    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        spec: spec.clone(),
        selector,
        classifier,
        valid_user,
        modality: train.modality,
    })
}

impl TrainedModel {
    fn transformed(&self, m: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        if m.column_names != self.selector.input_columns() {
            return Err(Error::Contract(format!(
                "model expects {} input columns, got {}",
                self.selector.input_columns().len(),
                m.n_cols()
            )));
        }
        Ok(m.rows
            .iter()
            .map(|r| self.selector.apply_row(&r.values))
            .collect())
    }

    pub fn score(&self, m: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(self
            .transformed(m)?
            .iter()
            .map(|x| self.classifier.score(x))
            .collect())
    }

    pub fn predict(&self, m: &FeatureMatrix) -> Result<Vec<Label>> {
        let b = self.spec.algorithm.boundary();
        Ok(self
            .score(m)?
            .into_iter()
            .map(|s| if s > b { Label::Valid } else { Label::Imposter })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<TrainedModel> {
        let m: TrainedModel = serde_json::from_str(s)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported model format version {}",
                m.format_version
            )));
        }
        Ok(m)
    }
}

/// Default search grids around the preset values.
pub fn default_grid(algorithm: Algorithm) -> BTreeMap<String, Vec<f64>> {
    let g = |pairs: &[(&str, &[f64])]| {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_vec()))
            .collect()
    };
    match algorithm {
        Algorithm::Rf => g(&[("n_estimators", &[10.0, 50.0, 100.0])]),
        Algorithm::Knn => g(&[("k", &[1.0, 2.0, 3.0, 5.0, 7.0])]),
        Algorithm::Nb => g(&[("var_smoothing", &[DEFAULT_VAR_SMOOTHING])]),
        Algorithm::SvmRbf => g(&[
            ("gamma", &[0.01, 0.05, 0.08, 0.1]),
            ("C", &[1.0, 3.0, 5.0, 12.0, 16.0]),
        ]),
        Algorithm::SvmPoly => g(&[
            ("degree", &[1.0, 2.0, 3.0, 4.0]),
            ("C", &[1.0, 3.0, 5.0, 12.0, 14.0, 16.0]),
        ]),
        Algorithm::OcsvmRbf => g(&[
            ("gamma", &[0.01, 0.05, 0.08, 0.1]),
            ("nu", &[0.25, 0.5, 0.75]),
        ]),
        Algorithm::OcsvmPoly => g(&[
            ("degree", &[1.0, 2.0, 3.0, 4.0]),
            ("nu", &[0.25, 0.5, 0.75]),
        ]),
    }
}

/// Cartesian product in key order, last key varying fastest.
fn candidates(grid: &BTreeMap<String, Vec<f64>>) -> Vec<Vec<(String, f64)>> {
    grid.iter().fold(vec![Vec::new()], |acc, (name, values)| {
        acc.iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push((name.clone(), *v));
                    c
                })
            })
            .collect()
    })
}

/// Stratified contiguous folds: each class's rows, in order, are cut into
/// `folds` nearly equal runs and fold `f` takes run `f` of every class.
pub fn stratified_folds(valid: &[bool], folds: usize) -> Result<Vec<usize>> {
    let mut assignment = vec![0; valid.len()];
    for class in [true, false] {
        let idx: Vec<usize> = (0..valid.len()).filter(|&i| valid[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < folds {
            return Err(Error::Infeasible(format!(
                "{} rows of one class cannot fill {folds} folds",
                idx.len()
            )));
        }
        for (pos, &i) in idx.iter().enumerate() {
            assignment[i] = pos * folds / idx.len();
        }
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub spec: ModelSpec,
    pub cv_accuracy: f64,
}

/// Exhaustive k-fold search over `grid` on already-transformed, labeled rows.
/// One-class candidates train on the valid rows of the training folds and are
/// scored on every held-out row. Ties keep the earliest candidate.
pub fn grid_search(
    algorithm: Algorithm,
    grid: &BTreeMap<String, Vec<f64>>,
    train: &FeatureMatrix,
    folds: usize,
    seed: u64,
) -> Result<GridResult> {
    if grid.is_empty() || grid.values().any(Vec::is_empty) {
        return Err(Error::Validation("empty search grid".into()));
    }
    if folds < 2 {
        return Err(Error::Validation(
            "grid search needs at least 2 folds".into(),
        ));
    }
    let valid = valid_flags(train)?;
    if !algorithm.is_unary() && (valid.iter().all(|v| *v) || valid.iter().all(|v| !v)) {
        return Err(Error::Infeasible(format!(
            "{algorithm} grid search needs both labels"
        )));
    }
    let fold_of = stratified_folds(&valid, folds)?;
    let rows = train.values();

    let specs: Vec<ModelSpec> = candidates(grid)
        .into_iter()
        .map(|c| ModelSpec {
            algorithm,
            hyperparameters: c.into_iter().collect(),
            seed,
        })
        .collect();
    for s in &specs {
        s.validate()?;
    }

    let scores: Vec<f64> = specs
        .par_iter()
        .map(|spec| -> Result<f64> {
            let (mut correct, mut total) = (0usize, 0usize);
            for f in 0..folds {
                let tr: Vec<usize> = (0..rows.len())
                    .filter(|&i| fold_of[i] != f && (!algorithm.is_unary() || valid[i]))
                    .collect();
                let te: Vec<usize> = (0..rows.len()).filter(|&i| fold_of[i] == f).collect();
                let x: Vec<Vec<f64>> = tr.iter().map(|&i| rows[i].clone()).collect();
                let y: Vec<bool> = tr.iter().map(|&i| valid[i]).collect();
                let model = Classifier::fit(spec, &x, &y)?;
                let b = algorithm.boundary();
                correct += te
                    .iter()
                    .filter(|&&i| (model.score(&rows[i]) > b) == valid[i])
                    .count();
                total += te.len();
            }
            Ok(correct as f64 / total as f64)
        })
        .collect::<Result<_>>()?;

    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(GridResult {
        spec: specs[best].clone(),
        cv_accuracy: scores[best],
    })
}
