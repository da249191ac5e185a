//! Metrics, the one-valid-user protocol, and report emission.
//!
//! Each subject in turn is the valid user. Its windows are split in time order
//! (earliest `split` fraction for training, the rest for testing). Every other
//! subject contributes the same number of imposter windows from the start of
//! its stream, split the same way.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::forest::derive_seed;
use crate::classifiers::{self, ModelSpec, TrainedModel};
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureRow, Label, Modality};
use crate::selection::{SelectionConfig, SelectionMethod};

pub const DEFAULT_SPLIT: f64 = 0.9;
pub const DEFAULT_SWEEP_COUNTS: [usize; 4] = [11, 21, 31, 41];

/// Guards floor/ceil against representation error in `split * n`.
const SPLIT_EPS: f64 = 1e-9;

/// Counts with valid as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn new(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        Confusion { tp, fn_, fp, tn }
    }

    pub fn from_predictions(truth: &[bool], predicted: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t, p) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }
}

/// `None` marks a metric whose denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub acc: f64,
    pub rmse: f64,
    pub grr: Option<f64>,
    pub gar: Option<f64>,
    pub f1: f64,
    pub auc_roc: Option<f64>,
    pub area: Option<f64>,
}

pub fn metrics_from_confusion(c: &Confusion) -> Result<MetricSet> {
    let total = c.total();
    if total == 0 {
        return Err(Error::Contract("empty confusion matrix".into()));
    }
    let total = total as f64;
    let wrong = (c.fp + c.fn_) as f64;
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let f1 = if c.tp == 0 {
        0.0
    } else {
        2.0 * c.tp as f64 / (2 * c.tp + c.fp + c.fn_) as f64
    };
    Ok(MetricSet {
        acc: (c.tp + c.tn) as f64 / total,
        rmse: (wrong / total).sqrt(),
        grr: ratio(c.tn, c.fp + c.tn),
        gar: ratio(c.tp, c.tp + c.fn_),
        f1,
        auc_roc: None,
        area: None,
    })
}

/// Probability that a random valid row outscores a random imposter row, ties
/// counting one half. `None` unless both classes are present.
pub fn auc_roc(scores: &[f64], valid: &[bool]) -> Option<f64> {
    let n_pos = valid.iter().filter(|v| **v).count();
    let n_neg = valid.len() - n_pos;
    if n_pos == 0 || n_neg == 0 || scores.len() != valid.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| valid[k]).count() as f64;
        i = j + 1;
    }
    let np = n_pos as f64;
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Radar-polygon area over `k` equally spaced axes, normalized by the
/// all-ones polygon: `Σ r_i r_{i+1} / k`.
pub fn area(metrics: &[f64]) -> Result<f64> {
    let k = metrics.len();
    if k != 4 && k != 5 {
        return Err(Error::Contract(format!(
            "area takes 4 or 5 metrics, got {k}"
        )));
    }
    if metrics.iter().any(|m| !m.is_finite()) {
        return Err(Error::Contract("area metrics must be finite".into()));
    }
    Ok((0..k)
        .map(|i| metrics[i] * metrics[(i + 1) % k])
        .sum::<f64>()
        / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Binary,
    Unary,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Binary => "binary",
            Scheme::Unary => "unary",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Scheme::Binary),
            "unary" => Ok(Scheme::Unary),
            other => Err(Error::Validation(format!("unknown scheme `{other}`"))),
        }
    }
}

/// Area axes: ACC, GRR, GAR, F1 and, for binary, AUC-ROC.
fn area_for(scheme: Scheme, m: &MetricSet) -> Option<f64> {
    let mut axes = vec![m.acc, m.grr?, m.gar?, m.f1];
    if scheme == Scheme::Binary {
        axes.push(m.auc_roc?);
    }
    area(&axes).ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "ACC")]
    Acc,
    #[serde(rename = "RMSE")]
    Rmse,
    #[serde(rename = "GRR")]
    Grr,
    #[serde(rename = "GAR")]
    Gar,
    #[serde(rename = "F1")]
    F1,
    #[serde(rename = "AUC_ROC")]
    AucRoc,
    #[serde(rename = "Area")]
    Area,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Acc,
        Metric::Rmse,
        Metric::Grr,
        Metric::Gar,
        Metric::F1,
        Metric::AucRoc,
        Metric::Area,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Acc => "ACC",
            Metric::Rmse => "RMSE",
            Metric::Grr => "GRR",
            Metric::Gar => "GAR",
            Metric::F1 => "F1",
            Metric::AucRoc => "AUC_ROC",
            Metric::Area => "Area",
        }
    }

    pub fn lower_is_better(self) -> bool {
        self == Metric::Rmse
    }

    pub fn of(self, m: &MetricSet) -> Option<f64> {
        match self {
            Metric::Acc => Some(m.acc),
            Metric::Rmse => Some(m.rmse),
            Metric::Grr => m.grr,
            Metric::Gar => m.gar,
            Metric::F1 => Some(m.f1),
            Metric::AucRoc => m.auc_roc,
            Metric::Area => m.area,
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Validation(format!("unknown metric `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub spec: ModelSpec,
    pub scheme: Scheme,
    pub selection: SelectionConfig,
    pub split: f64,
}

impl ExperimentConfig {
    pub fn new(spec: ModelSpec, scheme: Scheme, selection: SelectionConfig) -> Self {
        ExperimentConfig {
            spec,
            scheme,
            selection,
            split: DEFAULT_SPLIT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::Validation(format!(
                "split must lie in (0, 1), got {}",
                self.split
            )));
        }
        if self.scheme == Scheme::Unary && self.selection.method == SelectionMethod::SelectKBest {
            return Err(Error::Contract(
                "K-best scoring needs imposter rows, which unary training does not have".into(),
            ));
        }
        if self.spec.algorithm.is_unary() != (self.scheme == Scheme::Unary) {
            return Err(Error::Contract(format!(
                "{} does not belong to the {} scheme",
                self.spec.algorithm, self.scheme
            )));
        }
        Ok(())
    }

    /// Fewest windows a valid user needs for a non-empty test part.
    pub fn min_windows(&self) -> usize {
        (1.0 / (1.0 - self.split) - SPLIT_EPS).ceil() as usize
    }
}

/// Train and test rows for one valid user, labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSplit {
    pub valid_user: String,
    pub train: FeatureMatrix,
    pub test: FeatureMatrix,
}

/// Rows of every subject in window order, keyed by subject id.
pub fn group_by_subject(cohort: &FeatureMatrix) -> BTreeMap<String, Vec<FeatureRow>> {
    let mut by: BTreeMap<String, Vec<FeatureRow>> = BTreeMap::new();
    for r in &cohort.rows {
        by.entry(r.subject_id.clone()).or_default().push(r.clone());
    }
    for rows in by.values_mut() {
        rows.sort_by_key(|r| r.window_idx);
    }
    by
}

fn labeled(rows: &[FeatureRow], label: Label) -> impl Iterator<Item = FeatureRow> + '_ {
    rows.iter().map(move |r| FeatureRow {
        label: Some(label),
        ..r.clone()
    })
}

fn sequential_cut(n: usize, split: f64) -> usize {
    ((split * n as f64 + SPLIT_EPS).floor() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Builds the train/test partition for `valid_user` against every other
/// subject in `subjects`.
pub fn split_for_user(
    cohort: &FeatureMatrix,
    subjects: &BTreeMap<String, Vec<FeatureRow>>,
    valid_user: &str,
    config: &ExperimentConfig,
) -> Result<UserSplit> {
    let valid = subjects
        .get(valid_user)
        .ok_or_else(|| Error::Contract(format!("unknown subject {valid_user}")))?;
    let n_valid = valid.len();
    if n_valid < config.min_windows() {
        return Err(Error::InsufficientData(format!(
            "{valid_user} has {n_valid} windows, needs {}",
            config.min_windows()
        )));
    }
    let n_imposters = subjects.len() - 1;
    if n_imposters == 0 {
        return Err(Error::Infeasible(
            "the protocol needs at least 2 subjects".into(),
        ));
    }
    let cut = sequential_cut(n_valid, config.split);
    let quota = n_valid.div_ceil(n_imposters).max(2);

    let mut train: Vec<FeatureRow> = labeled(&valid[..cut], Label::Valid).collect();
    let mut test: Vec<FeatureRow> = labeled(&valid[cut..], Label::Valid).collect();
    for (id, rows) in subjects {
        if id == valid_user {
            continue;
        }
        let take = &rows[..quota.min(rows.len())];
        if take.len() < 2 {
            continue;
        }
        let c = sequential_cut(take.len(), config.split);
        if config.scheme == Scheme::Binary {
            train.extend(labeled(&take[..c], Label::Imposter));
        }
        test.extend(labeled(&take[c..], Label::Imposter));
    }
    Ok(UserSplit {
        valid_user: valid_user.to_string(),
        train: cohort.with_rows(train),
        test: cohort.with_rows(test),
    })
}

/// Fits the selection chain and classifier on the training part only.
pub fn train_for_user(
    split: &UserSplit,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<TrainedModel> {
    let spec = config.spec.clone().with_seed(seed);
    classifiers::train(&spec, config.selection, &split.train)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserResult {
    pub metrics: MetricSet,
    pub confusion: Confusion,
    pub n_train_valid: usize,
    pub n_train_imposter: usize,
    pub n_features: usize,
}

pub fn evaluate_split(
    split: &UserSplit,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<UserResult> {
    let model = train_for_user(split, config, seed)?;
    let truth: Vec<bool> = split
        .test
        .labels()?
        .into_iter()
        .map(Label::is_valid)
        .collect();
    let scores = model.score(&split.test)?;
    let b = config.spec.algorithm.boundary();
    let predicted: Vec<bool> = scores.iter().map(|s| *s > b).collect();
    let confusion = Confusion::from_predictions(&truth, &predicted);
    let mut metrics = metrics_from_confusion(&confusion)?;
    metrics.auc_roc = auc_roc(&scores, &truth);
    metrics.area = area_for(config.scheme, &metrics);
    let n_train_valid = split
        .train
        .rows
        .iter()
        .filter(|r| r.label == Some(Label::Valid))
        .count();
    Ok(UserResult {
        metrics,
        confusion,
        n_train_valid,
        n_train_imposter: split.train.n_rows() - n_train_valid,
        n_features: model.selector.output_dim(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    /// Population standard deviation.
    pub std: Option<f64>,
    pub n: usize,
    /// Users whose value was undefined.
    pub excluded: usize,
}

impl Summary {
    pub fn of(values: &[Option<f64>]) -> Summary {
        let defined: Vec<f64> = values.iter().flatten().copied().collect();
        let n = defined.len();
        let (mean, std) = if n == 0 {
            (None, None)
        } else {
            let mean = defined.iter().sum::<f64>() / n as f64;
            let var = defined.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            (Some(mean), Some(var.sqrt()))
        };
        Summary {
            mean,
            std,
            n,
            excluded: values.len() - n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSubject {
    pub subject_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub modality: Modality,
    pub scheme: Scheme,
    pub spec: ModelSpec,
    pub selection: SelectionConfig,
    pub split: f64,
    /// Requested feature count.
    pub feature_count: usize,
    pub per_user: BTreeMap<String, UserResult>,
    pub summary: BTreeMap<Metric, Summary>,
    /// Area of the polygon drawn through the mean metrics.
    pub area_of_means: Option<f64>,
    pub skipped: Vec<SkippedSubject>,
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn mean(&self, metric: Metric) -> Option<f64> {
        self.summary.get(&metric).and_then(|s| s.mean)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<EvalReport> {
        Ok(serde_json::from_str(s)?)
    }
}

type SubjectRows = BTreeMap<String, Vec<FeatureRow>>;

/// Subjects with enough windows to take part, and those left out.
fn eligible_subjects(
    cohort: &FeatureMatrix,
    config: &ExperimentConfig,
) -> Result<(SubjectRows, Vec<SkippedSubject>)> {
    let mut subjects = group_by_subject(cohort);
    let mut skipped = Vec::new();
    let min = config.min_windows();
    subjects.retain(|id, rows| {
        let keep = rows.len() >= min;
        if !keep {
            skipped.push(SkippedSubject {
                subject_id: id.clone(),
                reason: format!("{} windows, needs {min}", rows.len()),
            });
        }
        keep
    });
    if subjects.len() < 2 {
        return Err(Error::Infeasible(format!(
            "{} subject(s) with at least {min} windows, need 2",
            subjects.len()
        )));
    }
    Ok((subjects, skipped))
}

/// Trains the model [`run_experiment`] would fit for `valid_user`, with the
/// same split and seed.
pub fn train_user_model(
    cohort: &FeatureMatrix,
    config: &ExperimentConfig,
    valid_user: &str,
) -> Result<TrainedModel> {
    config.validate()?;
    let (subjects, _) = eligible_subjects(cohort, config)?;
    let i = subjects
        .keys()
        .position(|id| id == valid_user)
        .ok_or_else(|| Error::Validation(format!("{valid_user} is not an eligible subject")))?;
    let split = split_for_user(cohort, &subjects, valid_user, config)?;
    let mut model = train_for_user(&split, config, derive_seed(config.spec.seed, i as u64))?;
    model.valid_user = Some(valid_user.to_string());
    Ok(model)
}

/// Runs the protocol with every eligible subject as the valid user once.
/// `cohort` holds unlabeled windows of all subjects.
pub fn run_experiment(cohort: &FeatureMatrix, config: &ExperimentConfig) -> Result<EvalReport> {
    config.validate()?;
    let (subjects, skipped) = eligible_subjects(cohort, config)?;

    let ids: Vec<&String> = subjects.keys().collect();
    let results: Vec<UserResult> = ids
        .par_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = split_for_user(cohort, &subjects, id, config)?;
            evaluate_split(&split, config, derive_seed(config.spec.seed, i as u64))
        })
        .collect::<Result<_>>()?;
    let per_user: BTreeMap<String, UserResult> = ids.into_iter().cloned().zip(results).collect();

    let summary: BTreeMap<Metric, Summary> = Metric::ALL
        .into_iter()
        .map(|m| {
            let vals: Vec<Option<f64>> = per_user.values().map(|u| m.of(&u.metrics)).collect();
            (m, Summary::of(&vals))
        })
        .collect();
    let mean = |m: Metric| summary[&m].mean;
    let mut axes = vec![
        mean(Metric::Acc),
        mean(Metric::Grr),
        mean(Metric::Gar),
        mean(Metric::F1),
    ];
    if config.scheme == Scheme::Binary {
        axes.push(mean(Metric::AucRoc));
    }
    let area_of_means = axes
        .into_iter()
        .collect::<Option<Vec<f64>>>()
        .and_then(|a| area(&a).ok());

    let mut notes = Vec::new();
    if config.selection.method != SelectionMethod::None {
        let dims: Vec<usize> = per_user.values().map(|u| u.n_features).collect();
        let lo = *dims.iter().min().unwrap_or(&0);
        if lo < config.selection.k {
            notes.push(format!(
                "k={} clamped to as few as {lo} available features",
                config.selection.k
            ));
        }
    }

    Ok(EvalReport {
        modality: cohort.modality,
        scheme: config.scheme,
        spec: config.spec.clone(),
        selection: config.selection,
        split: config.split,
        feature_count: config.selection.k,
        per_user,
        summary,
        area_of_means,
        skipped,
        notes,
    })
}

/// One experiment per requested feature count.
pub fn feature_count_sweep(
    cohort: &FeatureMatrix,
    config: &ExperimentConfig,
    counts: &[usize],
) -> Result<BTreeMap<usize, EvalReport>> {
    counts
        .iter()
        .map(|&k| {
            let mut c = config.clone();
            c.selection.k = k;
            Ok((k, run_experiment(cohort, &c)?))
        })
        .collect()
}

/// Percentage change of each value from the best in its column. The best
/// entry is 0 and every other entry is negative when it is worse.
pub fn relative_loss_column(values: &[Option<f64>], lower_is_better: bool) -> Vec<Option<f64>> {
    let defined = values.iter().flatten().copied();
    let best = if lower_is_better {
        defined.fold(None, |b: Option<f64>, v| Some(b.map_or(v, |b| b.min(v))))
    } else {
        defined.fold(None, |b: Option<f64>, v| Some(b.map_or(v, |b| b.max(v))))
    };
    values
        .iter()
        .map(|v| {
            let (v, best) = (v.as_ref()?, best?);
            if best == 0.0 {
                return None;
            }
            let pct = 100.0 * (v - best) / best;
            Some(if lower_is_better { -pct } else { pct })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub label: String,
    /// `(mean, loss %)` per metric.
    pub cells: Vec<Option<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTable {
    pub metrics: Vec<Metric>,
    pub rows: Vec<LossRow>,
}

pub fn relative_loss(reports: &[(String, &EvalReport)], metrics: &[Metric]) -> Result<LossTable> {
    if reports.len() < 2 {
        return Err(Error::Contract(
            "relative loss needs at least 2 reports".into(),
        ));
    }
    let columns: Vec<Vec<Option<(f64, f64)>>> = metrics
        .iter()
        .map(|&m| {
            let vals: Vec<Option<f64>> = reports.iter().map(|(_, r)| r.mean(m)).collect();
            relative_loss_column(&vals, m.lower_is_better())
                .into_iter()
                .zip(vals)
                .map(|(l, v)| Some((v?, l?)))
                .collect()
        })
        .collect();
    let rows = reports
        .iter()
        .enumerate()
        .map(|(i, (label, _))| LossRow {
            label: label.clone(),
            cells: columns.iter().map(|c| c[i]).collect(),
        })
        .collect();
    Ok(LossTable {
        metrics: metrics.to_vec(),
        rows,
    })
}

pub fn write_loss_csv<W: Write>(writer: W, table: &LossTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["classifier".to_string()];
    header.extend(table.metrics.iter().map(|m| m.name().to_string()));
    w.write_record(&header)?;
    for row in &table.rows {
        let mut rec = vec![row.label.clone()];
        rec.extend(row.cells.iter().map(|c| match c {
            Some((v, l)) => format!("{v:.2} ({l:.2}%)"),
            None => "n/a".into(),
        }));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<table>", e))?;
    Ok(())
}

fn mean_std_cell(s: Option<&Summary>) -> String {
    match s.and_then(|s| Some((s.mean?, s.std?))) {
        Some((m, sd)) => format!("{m:.2} ({sd:.2})"),
        None => "n/a".into(),
    }
}

/// One row per report: `classifier,FC,ACC,RMSE,GRR,GAR,F1,AUC_ROC,Area`.
pub fn write_table_csv<W: Write>(writer: W, reports: &[(String, &EvalReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "classifier",
        "FC",
        "ACC",
        "RMSE",
        "GRR",
        "GAR",
        "F1",
        "AUC_ROC",
        "Area",
    ])?;
    for (label, r) in reports {
        let mut rec = vec![label.clone(), r.feature_count.to_string()];
        for m in [
            Metric::Acc,
            Metric::Rmse,
            Metric::Grr,
            Metric::Gar,
            Metric::F1,
            Metric::AucRoc,
        ] {
            rec.push(mean_std_cell(r.summary.get(&m)));
        }
        rec.push(
            r.mean(Metric::Area)
                .map_or("n/a".into(), |a| format!("{a:.2}")),
        );
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<table>", e))?;
    Ok(())
}

fn radar_axes(scheme: Scheme) -> &'static [Metric] {
    match scheme {
        Scheme::Binary => &[
            Metric::Acc,
            Metric::Grr,
            Metric::Gar,
            Metric::F1,
            Metric::AucRoc,
        ],
        Scheme::Unary => &[Metric::Acc, Metric::Grr, Metric::Gar, Metric::F1],
    }
}

/// Long-format radar data: `classifier,axis,value`.
pub fn write_spider_csv<W: Write>(writer: W, reports: &[(String, &EvalReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["classifier", "axis", "value"])?;
    for (label, r) in reports {
        for m in radar_axes(r.scheme) {
            let v = r.mean(*m).map_or("n/a".into(), |v| v.to_string());
            w.write_record([label.as_str(), m.name(), &v])?;
        }
    }
    w.flush().map_err(|e| Error::io("<spider>", e))?;
    Ok(())
}

/// Radar chart of the mean metrics of each report, one polygon per report.
pub fn radar_svg(title: &str, reports: &[(String, &EvalReport)]) -> String {
    const SIZE: f64 = 420.0;
    const R: f64 = 150.0;
    const COLORS: [&str; 7] = [
        "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf",
    ];
    let c = SIZE / 2.0;
    let scheme = reports.first().map_or(Scheme::Binary, |(_, r)| r.scheme);
    let axes = radar_axes(scheme);
    let k = axes.len();
    let point = |i: usize, r: f64| {
        let theta = -std::f64::consts::FRAC_PI_2 + 2.0 * std::f64::consts::PI * i as f64 / k as f64;
        (c + r * theta.cos(), c + r * theta.sin())
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{c}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        escape(title)
    );
    for ring in [0.25, 0.5, 0.75, 1.0] {
        let pts: Vec<String> = (0..k)
            .map(|i| {
                let (x, y) = point(i, R * ring);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r##"<polygon points="{}" fill="none" stroke="#cccccc"/>"##,
            pts.join(" ")
        );
    }
    for (i, m) in axes.iter().enumerate() {
        let (x, y) = point(i, R);
        let (lx, ly) = point(i, R + 18.0);
        let _ = writeln!(
            s,
            r##"<line x1="{c}" y1="{c}" x2="{x:.2}" y2="{y:.2}" stroke="#999999"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{lx:.2}" y="{ly:.2}" text-anchor="middle">{}</text>"#,
            m.name()
        );
    }
    for (j, (label, r)) in reports.iter().enumerate() {
        let color = COLORS[j % COLORS.len()];
        let pts: Vec<String> = axes
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let (x, y) = point(i, R * r.mean(*m).unwrap_or(0.0).clamp(0.0, 1.0));
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        let ly = SIZE - 12.0 - 16.0 * (reports.len() - 1 - j) as f64;
        let _ = writeln!(
            s,
            r#"<text x="10" y="{ly}" fill="{color}">{}</text>"#,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::preset;
    use crate::selection::SelectionMethod;
    use proptest::prelude::*;

    #[test]
    fn worked_confusion() {
        let m = metrics_from_confusion(&Confusion::new(2, 2, 1, 3)).unwrap();
        assert_eq!(m.acc, 0.625);
        assert!((m.rmse - 0.375f64.sqrt()).abs() < 1e-15);
        assert_eq!(m.grr, Some(0.75));
        assert_eq!(m.gar, Some(0.5));
        assert!((m.f1 - 4.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_degenerate_confusions() {
        let m = metrics_from_confusion(&Confusion::new(5, 0, 0, 5)).unwrap();
        assert_eq!(
            (m.acc, m.rmse, m.grr, m.gar, m.f1),
            (1.0, 0.0, Some(1.0), Some(1.0), 1.0)
        );
        let m = metrics_from_confusion(&Confusion::new(0, 3, 0, 2)).unwrap();
        assert_eq!((m.gar, m.f1), (Some(0.0), 0.0));
        let m = metrics_from_confusion(&Confusion::new(0, 0, 1, 1)).unwrap();
        assert_eq!(m.gar, None);
        assert!(metrics_from_confusion(&Confusion::default()).is_err());
    }

    #[test]
    fn auc_examples() {
        let v = [true, true, false, false];
        assert_eq!(auc_roc(&[0.9, 0.8, 0.4, 0.3], &v), Some(1.0));
        assert_eq!(auc_roc(&[0.3, 0.4, 0.8, 0.9], &v), Some(0.0));
        assert_eq!(auc_roc(&[0.5; 4], &v), Some(0.5));
        assert_eq!(auc_roc(&[0.5, 0.2], &[true, true]), None);
    }

    #[test]
    fn area_examples() {
        assert_eq!(area(&[1.0; 5]).unwrap(), 1.0);
        assert_eq!(area(&[0.5; 5]).unwrap(), 0.25);
        assert!((area(&[1.0, 1.0, 1.0, 1.0, 0.0]).unwrap() - 0.6).abs() < 1e-15);
        assert!((area(&[0.58, 0.72, 0.42, 0.31]).unwrap() - 0.2575).abs() < 1e-12);
        assert!(area(&[1.0; 3]).is_err());
        assert!(area(&[f64::NAN; 4]).is_err());
    }

    #[test]
    fn relative_loss_examples() {
        let l = relative_loss_column(&[Some(0.80), Some(0.79)], false);
        assert_eq!(l[0], Some(0.0));
        assert!((l[1].unwrap() + 1.25).abs() < 1e-9);
        let l = relative_loss_column(&[Some(0.68), Some(0.40)], false);
        assert!((l[1].unwrap() + 41.176).abs() < 1e-3);
        let l = relative_loss_column(&[Some(0.5), Some(0.6)], true);
        assert_eq!(l[0], Some(0.0));
        assert!(l[1].unwrap() < 0.0);
    }

    #[test]
    fn summary_excludes_undefined() {
        let s = Summary::of(&[Some(1.0), None, Some(3.0)]);
        assert_eq!(
            (s.mean, s.std, s.n, s.excluded),
            (Some(2.0), Some(1.0), 2, 1)
        );
    }

    fn cohort(n_subjects: usize, n_windows: usize) -> FeatureMatrix {
        let mut rows = Vec::new();
        for s in 0..n_subjects {
            for w in 0..n_windows {
                rows.push(FeatureRow {
                    subject_id: format!("s{s:02}"),
                    window_idx: w,
                    label: None,
                    values: vec![
                        s as f64 * 3.0 + (w as f64 * 0.7).sin(),
                        (w as f64 * 1.3).cos(),
                    ],
                });
            }
        }
        FeatureMatrix {
            modality: Modality::Hr,
            column_names: vec!["hr_mean".into(), "hr_std".into()],
            rows,
        }
    }

    #[test]
    fn split_sizes() {
        let c = cohort(3, 100);
        let subjects = group_by_subject(&c);
        let cfg = ExperimentConfig::new(
            preset("hr_binary_rf").unwrap(),
            Scheme::Binary,
            SelectionConfig::new(SelectionMethod::None, 2),
        );
        let s = split_for_user(&c, &subjects, "s00", &cfg).unwrap();
        let valid_train = s
            .train
            .rows
            .iter()
            .filter(|r| r.label == Some(Label::Valid))
            .count();
        let valid_test = s
            .test
            .rows
            .iter()
            .filter(|r| r.label == Some(Label::Valid))
            .count();
        assert_eq!((valid_train, valid_test), (90, 10));
        // quota ceil(100/2) = 50 per imposter, 45/5
        assert_eq!(s.train.n_rows() - valid_train, 90);
        assert_eq!(s.test.n_rows() - valid_test, 10);
        // test rows come after train rows in each stream
        let last_train = s
            .train
            .rows
            .iter()
            .filter(|r| r.subject_id == "s01")
            .map(|r| r.window_idx)
            .max();
        let first_test = s
            .test
            .rows
            .iter()
            .filter(|r| r.subject_id == "s01")
            .map(|r| r.window_idx)
            .min();
        assert!(last_train < first_test);
    }

    #[test]
    fn unary_split_has_no_imposter_training() {
        let c = cohort(3, 20);
        let subjects = group_by_subject(&c);
        let cfg = ExperimentConfig::new(
            preset("hr_unary_rbf").unwrap(),
            Scheme::Unary,
            SelectionConfig::new(SelectionMethod::LowVariance, 2),
        );
        let s = split_for_user(&c, &subjects, "s01", &cfg).unwrap();
        assert!(s.train.rows.iter().all(|r| r.label == Some(Label::Valid)));
        assert!(s.test.rows.iter().any(|r| r.label == Some(Label::Imposter)));
    }

    #[test]
    fn experiment_skips_short_subjects_and_is_deterministic() {
        let mut c = cohort(4, 30);
        c.rows.retain(|r| r.subject_id != "s03" || r.window_idx < 5);
        let cfg = ExperimentConfig::new(
            preset("hr_binary_rf").unwrap(),
            Scheme::Binary,
            SelectionConfig::new(SelectionMethod::None, 2),
        );
        let a = run_experiment(&c, &cfg).unwrap();
        assert_eq!(a.per_user.len(), 3);
        assert_eq!(a.skipped.len(), 1);
        assert!(a.mean(Metric::Acc).unwrap() > 0.9);
        let b = run_experiment(&c, &cfg).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(EvalReport::from_json(&a.to_json().unwrap()).unwrap(), a);
    }

    #[test]
    fn scheme_mismatch_and_too_few_subjects() {
        let c = cohort(3, 30);
        let cfg = ExperimentConfig::new(
            preset("hr_unary_rbf").unwrap(),
            Scheme::Binary,
            SelectionConfig::new(SelectionMethod::None, 2),
        );
        assert!(matches!(run_experiment(&c, &cfg), Err(Error::Contract(_))));
        let one = cohort(1, 30);
        let cfg = ExperimentConfig::new(
            preset("hr_binary_nb").unwrap(),
            Scheme::Binary,
            SelectionConfig::new(SelectionMethod::None, 2),
        );
        assert!(matches!(
            run_experiment(&one, &cfg),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn sweep_notes_clamping() {
        let c = cohort(3, 30);
        let cfg = ExperimentConfig::new(
            preset("hr_binary_nb").unwrap(),
            Scheme::Binary,
            SelectionConfig::new(SelectionMethod::SelectKBest, 1),
        );
        let r = feature_count_sweep(&c, &cfg, &[1, 5]).unwrap();
        assert_eq!(r.len(), 2);
        assert!(r[&1].notes.is_empty());
        assert!(!r[&5].notes.is_empty());
    }

    #[test]
    fn table_and_chart_render() {
        let c = cohort(3, 30);
        let cfg = ExperimentConfig::new(
            preset("hr_binary_knn").unwrap(),
            Scheme::Binary,
            SelectionConfig::new(SelectionMethod::None, 2),
        );
        let r = run_experiment(&c, &cfg).unwrap();
        let rows = vec![("knn".to_string(), &r)];
        let mut buf = Vec::new();
        write_table_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("classifier,FC,ACC,RMSE,GRR,GAR,F1,AUC_ROC,Area\n"));
        assert!(text.lines().nth(1).unwrap().starts_with("knn,2,"));
        let svg = radar_svg("hr", &rows);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<line").count(), 5);
    }

    proptest! {
        #[test]
        fn acc_plus_rmse_squared_is_one(tp in 0u64..500, fn_ in 0u64..500, fp in 0u64..500, tn in 0u64..500) {
            prop_assume!(tp + fn_ + fp + tn > 0);
            let m = metrics_from_confusion(&Confusion::new(tp, fn_, fp, tn)).unwrap();
            prop_assert!((m.acc + m.rmse * m.rmse - 1.0).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_under_monotone_transform(
            pairs in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..40)
        ) {
            let (s, v): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
            let t: Vec<f64> = s.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(auc_roc(&s, &v), auc_roc(&t, &v));
        }

        #[test]
        fn area_rotation_and_reversal(r in prop::collection::vec(0.0f64..=1.0, 5)) {
            let a = area(&r).unwrap();
            let mut rot = r.clone();
            rot.rotate_left(2);
            let rev: Vec<f64> = r.iter().rev().copied().collect();
            prop_assert!((area(&rot).unwrap() - a).abs() < 1e-12);
            prop_assert!((area(&rev).unwrap() - a).abs() < 1e-12);
        }
    }
}
