//! Two-level feature selection.
//!
//! The first level always drops one column of every highly correlated pair.
//! The second level is PCA or ANOVA K-best (binary scheme) or lowest
//! coefficient of variation (unary scheme). Non-PCA outputs are then z-scored
//! so that distance- and kernel-based classifiers see comparable scales.
//! Every transform is fitted from the rows it is given and nothing else.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, Label};

pub const DEFAULT_CORRELATION_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Identity,
    CorrelationFilter,
    Pca,
    SelectKBest,
    LowVariance,
    Standardize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TransformParams {
    /// Keeps the listed input columns, in this order.
    Keep {
        kept: Vec<usize>,
    },
    Pca {
        means: Vec<f64>,
        stds: Vec<f64>,
        /// One unit-length loading vector per output component.
        components: Vec<Vec<f64>>,
        /// Eigenvalue of every component, including those not kept.
        explained_variance: Vec<f64>,
    },
    Standardize {
        means: Vec<f64>,
        stds: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedTransform {
    pub kind: TransformKind,
    pub input_columns: Vec<String>,
    pub output_columns: Vec<String>,
    /// Requested output dimension before clamping.
    pub k: usize,
    pub params: TransformParams,
}

impl FittedTransform {
    pub fn identity(columns: &[String]) -> Self {
        FittedTransform {
            kind: TransformKind::Identity,
            input_columns: columns.to_vec(),
            output_columns: columns.to_vec(),
            k: columns.len(),
            params: TransformParams::Keep {
                kept: (0..columns.len()).collect(),
            },
        }
    }

    fn keep(kind: TransformKind, m: &FeatureMatrix, k: usize, mut kept: Vec<usize>) -> Self {
        kept.sort_unstable();
        FittedTransform {
            kind,
            input_columns: m.column_names.clone(),
            output_columns: kept.iter().map(|&j| m.column_names[j].clone()).collect(),
            k,
            params: TransformParams::Keep { kept },
        }
    }

    pub fn output_dim(&self) -> usize {
        self.output_columns.len()
    }

    /// Maps PCA scores back to input-column values. Exact when all
    /// components are kept.
    pub fn pca_reconstruct(&self, scores: &[f64]) -> Option<Vec<f64>> {
        let TransformParams::Pca {
            components,
            means,
            stds,
            ..
        } = &self.params
        else {
            return None;
        };
        let mut z = vec![0.0; means.len()];
        for (s, comp) in scores.iter().zip(components) {
            for (o, c) in z.iter_mut().zip(comp) {
                *o += s * c;
            }
        }
        Some(
            z.iter()
                .zip(means.iter().zip(stds))
                .map(|(z, (m, s))| if *s == 0.0 { *m } else { m + z * s })
                .collect(),
        )
    }

    /// Transforms a single row of input-column values.
    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        match &self.params {
            TransformParams::Keep { kept } => kept.iter().map(|&j| row[j]).collect(),
            TransformParams::Standardize { means, stds } => row
                .iter()
                .zip(means.iter().zip(stds))
                .map(|(v, (m, s))| standardize(*v, *m, *s))
                .collect(),
            TransformParams::Pca {
                means,
                stds,
                components,
                ..
            } => {
                let z: Vec<f64> = row
                    .iter()
                    .zip(means.iter().zip(stds))
                    .map(|(v, (m, s))| standardize(*v, *m, *s))
                    .collect();
                components
                    .iter()
                    .map(|c| c.iter().zip(&z).map(|(a, b)| a * b).sum())
                    .collect()
            }
        }
    }
}

fn standardize(v: f64, mean: f64, std: f64) -> f64 {
    if std == 0.0 {
        0.0
    } else {
        (v - mean) / std
    }
}

/// Per-column mean and population standard deviation.
fn column_moments(m: &FeatureMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.n_rows() as f64;
    (0..m.n_cols())
        .map(|j| {
            let col = m.column(j);
            if col.iter().all(|v| *v == col[0]) {
                return (col[0], 0.0);
            }
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .unzip()
}

fn require_rows(m: &FeatureMatrix, min: usize, what: &str) -> Result<()> {
    if m.n_rows() < min {
        return Err(Error::Contract(format!(
            "{what} needs at least {min} rows, got {}",
            m.n_rows()
        )));
    }
    Ok(())
}

/// Pearson correlation; 0 when either column is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    let constant = |v: &[f64]| v.iter().all(|e| *e == v[0]);
    if constant(x) || constant(y) || sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Drops the later column of every pair with |r| > `threshold`, scanning pairs
/// in column order and skipping columns that are already dropped.
pub fn correlation_filter(m: &FeatureMatrix, threshold: f64) -> Result<FittedTransform> {
    require_rows(m, 2, "correlation_filter")?;
    let cols: Vec<Vec<f64>> = (0..m.n_cols()).map(|j| m.column(j)).collect();
    let mut dropped = vec![false; cols.len()];
    for i in 0..cols.len() {
        if dropped[i] {
            continue;
        }
        for j in i + 1..cols.len() {
            if !dropped[j] && pearson(&cols[i], &cols[j]).abs() > threshold {
                dropped[j] = true;
            }
        }
    }
    let kept: Vec<usize> = (0..cols.len()).filter(|&j| !dropped[j]).collect();
    let k = kept.len();
    Ok(FittedTransform::keep(
        TransformKind::CorrelationFilter,
        m,
        k,
        kept,
    ))
}

/// PCA on z-scored columns (zero-variance columns map to 0). Keeps the top
/// `min(k, d)` eigenvectors of the sample covariance, each signed so that its
/// largest-magnitude loading is positive.
pub fn pca_fit(m: &FeatureMatrix, k: usize) -> Result<FittedTransform> {
    require_rows(m, 2, "pca_fit")?;
    if k == 0 {
        return Err(Error::Contract("pca_fit needs k >= 1".into()));
    }
    let (n, d) = (m.n_rows(), m.n_cols());
    let (means, stds) = column_moments(m);
    let z = DMatrix::from_fn(n, d, |i, j| {
        standardize(m.rows[i].values[j], means[j], stds[j])
    });
    let cov = (z.transpose() * &z) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let explained_variance: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let out_dim = k.min(d);
    let components: Vec<Vec<f64>> = order[..out_dim]
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let mut lead = 0;
            for (j, x) in v.iter().enumerate() {
                if x.abs() > v[lead].abs() {
                    lead = j;
                }
            }
            if v[lead] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();

    Ok(FittedTransform {
        kind: TransformKind::Pca,
        input_columns: m.column_names.clone(),
        output_columns: (1..=out_dim).map(|i| format!("pc{i}")).collect(),
        k,
        params: TransformParams::Pca {
            means,
            stds,
            components,
            explained_variance,
        },
    })
}

/// One-way ANOVA F statistic of every column between the valid and imposter rows.
pub fn anova_f_scores(m: &FeatureMatrix) -> Result<Vec<f64>> {
    let labels = m.labels()?;
    let n_valid = labels.iter().filter(|l| l.is_valid()).count();
    let n_imp = labels.len() - n_valid;
    if n_valid == 0 || n_imp == 0 {
        return Err(Error::Contract(
            "ANOVA scoring needs both labels present".into(),
        ));
    }
    let n = labels.len() as f64;
    Ok((0..m.n_cols())
        .map(|j| {
            let col = m.column(j);
            let group_mean = |want: Label| {
                let (s, c) = col
                    .iter()
                    .zip(&labels)
                    .filter(|(_, l)| **l == want)
                    .fold((0.0, 0.0), |(s, c), (v, _)| (s + v, c + 1.0));
                s / c
            };
            let mv = group_mean(Label::Valid);
            let mi = group_mean(Label::Imposter);
            let grand = col.iter().sum::<f64>() / n;
            let ssb = n_valid as f64 * (mv - grand).powi(2) + n_imp as f64 * (mi - grand).powi(2);
            let ssw: f64 = col
                .iter()
                .zip(&labels)
                .map(|(v, l)| (v - if l.is_valid() { mv } else { mi }).powi(2))
                .sum();
            if ssw == 0.0 {
                if ssb > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            } else {
                ssb / (ssw / (n - 2.0))
            }
        })
        .collect())
}

/// Keeps the `k` columns with the highest ANOVA F score (ties to the earlier column).
pub fn select_k_best(m: &FeatureMatrix, k: usize) -> Result<FittedTransform> {
    let scores = anova_f_scores(m)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k.min(scores.len()));
    Ok(FittedTransform::keep(
        TransformKind::SelectKBest,
        m,
        k,
        order,
    ))
}

/// Coefficient of variation used to rank columns; zero-mean columns rank last.
pub fn dispersion(col: &[f64]) -> f64 {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return f64::INFINITY;
    }
    if col.iter().all(|v| *v == col[0]) {
        return 0.0;
    }
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean.abs()
}

/// Keeps the `k` columns with the lowest coefficient of variation.
pub fn low_variance_select(m: &FeatureMatrix, k: usize) -> Result<FittedTransform> {
    require_rows(m, 2, "low_variance_select")?;
    let disp: Vec<f64> = (0..m.n_cols()).map(|j| dispersion(&m.column(j))).collect();
    let mut order: Vec<usize> = (0..disp.len()).collect();
    order.sort_by(|&a, &b| disp[a].total_cmp(&disp[b]).then(a.cmp(&b)));
    order.truncate(k.min(disp.len()));
    Ok(FittedTransform::keep(
        TransformKind::LowVariance,
        m,
        k,
        order,
    ))
}

/// Z-scores every column with the given rows' moments.
pub fn standardize_fit(m: &FeatureMatrix) -> Result<FittedTransform> {
    require_rows(m, 1, "standardize_fit")?;
    let (means, stds) = column_moments(m);
    Ok(FittedTransform {
        kind: TransformKind::Standardize,
        input_columns: m.column_names.clone(),
        output_columns: m.column_names.clone(),
        k: m.n_cols(),
        params: TransformParams::Standardize { means, stds },
    })
}

/// Applies a fitted transform. Ids and labels pass through untouched.
pub fn apply(t: &FittedTransform, m: &FeatureMatrix) -> Result<FeatureMatrix> {
    if m.column_names != t.input_columns {
        return Err(Error::Contract(format!(
            "transform expects columns [{}], matrix has [{}]",
            t.input_columns.join(","),
            m.column_names.join(",")
        )));
    }
    Ok(FeatureMatrix {
        modality: m.modality,
        column_names: t.output_columns.clone(),
        rows: m
            .rows
            .iter()
            .map(|r| {
                let mut out = r.clone();
                out.values = t.apply_row(&r.values);
                out
            })
            .collect(),
    })
}

/// Second-level method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    /// Correlation filter only.
    None,
    Pca,
    SelectKBest,
    LowVariance,
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMethod::None => "none",
            SelectionMethod::Pca => "pca",
            SelectionMethod::SelectKBest => "select_k_best",
            SelectionMethod::LowVariance => "low_variance",
        })
    }
}

impl FromStr for SelectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SelectionMethod::None),
            "pca" => Ok(SelectionMethod::Pca),
            "select_k_best" | "kbest" => Ok(SelectionMethod::SelectKBest),
            "low_variance" => Ok(SelectionMethod::LowVariance),
            other => Err(Error::Validation(format!(
                "unknown selection method `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub method: SelectionMethod,
    pub k: usize,
    pub correlation_threshold: f64,
}

impl SelectionConfig {
    pub fn new(method: SelectionMethod, k: usize) -> Self {
        Self {
            method,
            k,
            correlation_threshold: DEFAULT_CORRELATION_THRESHOLD,
        }
    }
}

/// The fitted chain: correlation filter, second-level method, then
/// standardization unless the second level is PCA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selector {
    pub config: SelectionConfig,
    pub stages: Vec<FittedTransform>,
}

impl Selector {
    pub fn fit(config: SelectionConfig, train: &FeatureMatrix) -> Result<Selector> {
        let filter = correlation_filter(train, config.correlation_threshold)?;
        let filtered = apply(&filter, train)?;
        let second = match config.method {
            SelectionMethod::None => FittedTransform::identity(&filtered.column_names),
            SelectionMethod::Pca => pca_fit(&filtered, config.k)?,
            SelectionMethod::SelectKBest => select_k_best(&filtered, config.k)?,
            SelectionMethod::LowVariance => low_variance_select(&filtered, config.k)?,
        };
        let mut stages = vec![filter, second];
        if config.method != SelectionMethod::Pca {
            let reduced = apply(&stages[1], &filtered)?;
            stages.push(standardize_fit(&reduced)?);
        }
        Ok(Selector { config, stages })
    }

    pub fn apply(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        self.stages
            .iter()
            .try_fold(m.clone(), |acc, t| apply(t, &acc))
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        self.stages
            .iter()
            .fold(row.to_vec(), |acc, t| t.apply_row(&acc))
    }

    pub fn input_columns(&self) -> &[String] {
        &self.stages[0].input_columns
    }

    pub fn output_dim(&self) -> usize {
        self.stages.last().map_or(0, FittedTransform::output_dim)
    }
}
