use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use oxyauth::classifiers::{self, GridResult};
use oxyauth::evaluation::{self, EvalReport, Metric, Scheme};
use oxyauth::features::{FeatureMatrix, Label, Modality};
use oxyauth::ingest::{self, RawSample, SubjectRecord, ValidityBounds, MANIFEST_FILE};
use oxyauth::pipeline;
use oxyauth::selection::Selector;
use oxyauth::stats::{self, ComparisonMode};
use oxyauth::synth::{self, CohortSpec};
use oxyauth::windowing::{self, Window};
use oxyauth::Error;
use serde::Serialize;

use crate::config::{RunConfig, SynthPreset};
use crate::error::{CliError, CliResult};

pub const RAW_DIR: &str = "data/raw";
pub const CLEAN_DIR: &str = "data/clean";
pub const FEATURES_DIR: &str = "features";
pub const MODELS_DIR: &str = "models";
pub const REPORTS_DIR: &str = "reports";

const ALL_MODALITIES: [Modality; 3] = [Modality::Hr, Modality::Spo2, Modality::HrSpo2];

fn io(path: &Path, e: std::io::Error) -> CliError {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into()
}

fn ensure_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| io(path, e))
}

fn require(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing(format!(
            "{what} not found at {}",
            path.display()
        )))
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| io(path, e))?))
}

/// Persists the effective configuration beside a stage's artifacts.
fn save_config(cfg: &RunConfig, dir: &Path, stem: &str) -> CliResult<()> {
    write_json(&dir.join(format!("{stem}.config.json")), cfg)
}

fn features_path(cfg: &RunConfig, modality: Modality) -> PathBuf {
    cfg.out_dir
        .join(FEATURES_DIR)
        .join(format!("{}.csv", modality.as_str()))
}

fn load_features(cfg: &RunConfig, modality: Modality) -> CliResult<FeatureMatrix> {
    let path = features_path(cfg, modality);
    require(&path, "feature matrix (run `features` first)")?;
    let file = File::open(&path).map_err(|e| io(&path, e))?;
    let m = FeatureMatrix::read_csv(file)?;
    if m.modality != modality {
        return Err(CliError::malformed(format!(
            "{} holds {} features, expected {}",
            path.display(),
            m.modality,
            modality
        )));
    }
    Ok(m)
}

pub fn synth(cfg: &RunConfig) -> CliResult<String> {
    let mut spec = match cfg.preset {
        SynthPreset::Separable => synth::separable_preset(cfg.subjects, cfg.seed)?,
        SynthPreset::Default => CohortSpec {
            n_subjects: cfg.subjects,
            seed: cfg.seed,
            ..CohortSpec::default()
        },
    };
    spec.duration_s = cfg.duration_s;
    if let Some(d) = cfg.dropout {
        spec.dropout_rate = d;
    }
    if let Some(a) = cfg.activity {
        spec.activity_profile = a;
    }
    let subjects = synth::generate_cohort(&spec)?;
    let dir = cfg.out_dir.join(RAW_DIR);
    synth::write_cohort(&dir, &subjects)?;
    save_config(cfg, &cfg.out_dir.join("data"), "synth")?;
    Ok(format!(
        "synth: {} subjects x {} samples -> {}",
        subjects.len(),
        spec.n_samples(),
        dir.display()
    ))
}

#[derive(Serialize)]
struct IngestEntry {
    raw_samples: usize,
    clean_samples: usize,
    windows: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    dropped: Option<String>,
}

pub fn ingest(cfg: &RunConfig) -> CliResult<String> {
    let src = cfg.data_path(RAW_DIR);
    require(&src.join(MANIFEST_FILE), "manifest")?;
    let raw = pipeline::load_raw_cohort(&src)?;
    let bounds = ValidityBounds::default();
    let dst = cfg.out_dir.join(CLEAN_DIR);
    ensure_dir(&dst)?;

    let mut kept: Vec<SubjectRecord> = Vec::new();
    let mut windows: Vec<Window> = Vec::new();
    let mut summary: BTreeMap<String, IngestEntry> = BTreeMap::new();
    for (record, samples) in &raw {
        let id = record.subject_id.clone();
        let mut entry = IngestEntry {
            raw_samples: samples.len(),
            clean_samples: 0,
            windows: 0,
            dropped: None,
        };
        match pipeline::prepare_subject(record, samples, &bounds, cfg.gap_tolerance) {
            Ok(p) => {
                let series = ingest::clean(&id, samples, &bounds)?;
                let rows: Vec<RawSample> = series
                    .samples
                    .iter()
                    .copied()
                    .map(RawSample::from)
                    .collect();
                ingest::write_samples(create(&ingest::subject_path(&dst, &id))?, &rows)?;
                entry.clean_samples = rows.len();
                entry.windows = p.windows.len();
                windows.extend(p.windows);
                kept.push(record.clone());
            }
            Err(Error::InsufficientData(reason)) => entry.dropped = Some(reason),
            Err(e) => return Err(e.into()),
        }
        summary.insert(id, entry);
    }
    write_json(&dst.join(MANIFEST_FILE), &kept)?;
    let data = cfg.out_dir.join("data");
    windowing::write_window_dump(create(&data.join("windows.csv"))?, &windows)?;
    write_json(&data.join("ingest_summary.json"), &summary)?;
    save_config(cfg, &data, "ingest")?;
    Ok(format!(
        "ingest: {} of {} subjects kept, {} windows -> {}",
        kept.len(),
        raw.len(),
        windows.len(),
        dst.display()
    ))
}

fn prepare(cfg: &RunConfig) -> CliResult<pipeline::PreparedCohort> {
    let src = cfg.data_path(CLEAN_DIR);
    require(&src.join(MANIFEST_FILE), "manifest (run `ingest` first)")?;
    let raw = pipeline::load_raw_cohort(&src)?;
    Ok(pipeline::prepare_cohort(
        &raw,
        &ValidityBounds::default(),
        cfg.gap_tolerance,
    )?)
}

pub fn features(cfg: &RunConfig) -> CliResult<String> {
    let cohort = prepare(cfg)?;
    let dir = cfg.out_dir.join(FEATURES_DIR);
    ensure_dir(&dir)?;
    let modalities: Vec<Modality> = cfg.modality.map_or(ALL_MODALITIES.to_vec(), |m| vec![m]);
    let mut parts = Vec::new();
    for m in modalities {
        let matrix = cohort.feature_matrix(m)?;
        matrix.write_csv(create(&features_path(cfg, m))?)?;
        parts.push(format!("{} {}x{}", m, matrix.n_rows(), matrix.n_cols()));
    }
    save_config(cfg, &dir, "features")?;
    Ok(format!(
        "features: {} subjects, {} -> {}",
        cohort.subjects.len(),
        parts.join(", "),
        dir.display()
    ))
}

pub fn ttest(cfg: &RunConfig) -> CliResult<String> {
    let cohort = prepare(cfg)?;
    let zoned = cohort.zoned();
    let dir = cfg.out_dir.join(REPORTS_DIR);
    ensure_dir(&dir)?;
    let modes: Vec<ComparisonMode> = cfg.mode.map_or(
        vec![ComparisonMode::OneVsRest, ComparisonMode::Pairwise],
        |m| vec![m],
    );
    let mut parts = Vec::new();
    for mode in modes {
        let s = stats::rejection_summary(&zoned, mode, cfg.alpha)?;
        let stem = format!("ttest_{mode}");
        s.write_csv(create(&dir.join(format!("{stem}.csv")))?)?;
        write_json(&dir.join(format!("{stem}.json")), &s)?;
        parts.push(format!("{mode} rejection {:.3}", s.overall));
    }
    save_config(cfg, &dir, "ttest")?;
    Ok(format!(
        "ttest: {} subjects, {}",
        zoned.len(),
        parts.join(", ")
    ))
}

pub fn train(cfg: &RunConfig) -> CliResult<String> {
    let modality = cfg.modality_or(Modality::HrSpo2);
    let user = cfg
        .valid_user
        .clone()
        .ok_or_else(|| CliError::malformed("train needs --valid-user"))?;
    let cohort = load_features(cfg, modality)?;
    let mut config = cfg.experiment(modality)?;
    let stem = format!("{}_{user}", cfg.run_stem("model", &config, modality));
    let dir = cfg.out_dir.join(MODELS_DIR);
    ensure_dir(&dir)?;

    if cfg.grid_search {
        let best = search(cfg, &cohort, &config, &user)?;
        config.spec = best.spec.clone().with_seed(cfg.seed);
        write_json(&dir.join(format!("{stem}.grid.json")), &best)?;
    }
    let model = evaluation::train_user_model(&cohort, &config, &user)?;
    let path = dir.join(format!("{stem}.json"));
    write_text(&path, &(model.to_json()? + "\n"))?;
    save_config(cfg, &dir, &stem)?;
    Ok(format!(
        "train: {} for {user} on {modality}, {} features -> {}",
        config.spec.algorithm,
        model.selector.output_dim(),
        path.display()
    ))
}

/// Grid search on the valid user's training part. The selection chain is fit
/// as in training; one-class candidates are scored against imposter rows too.
fn search(
    cfg: &RunConfig,
    cohort: &FeatureMatrix,
    config: &evaluation::ExperimentConfig,
    user: &str,
) -> CliResult<GridResult> {
    let subjects = evaluation::group_by_subject(cohort);
    let split = evaluation::split_for_user(cohort, &subjects, user, config)?;
    let selector = Selector::fit(config.selection, &split.train)?;
    let rows = if config.scheme == Scheme::Unary {
        let mut binary = config.clone();
        binary.scheme = Scheme::Binary;
        evaluation::split_for_user(cohort, &subjects, user, &binary)?.train
    } else {
        split.train
    };
    let transformed = selector.apply(&rows)?;
    if transformed.filter_label(Label::Valid).n_rows() == 0 {
        return Err(CliError::from(Error::Infeasible(format!(
            "{user} has no training rows"
        ))));
    }
    let alg = config.spec.algorithm;
    Ok(classifiers::grid_search(
        alg,
        &classifiers::default_grid(alg),
        &transformed,
        cfg.folds,
        cfg.seed,
    )?)
}

fn summary_line(r: &EvalReport) -> String {
    let f = |m: Metric| r.mean(m).map_or("n/a".to_string(), |v| format!("{v:.3}"));
    format!(
        "{} users, ACC {} GRR {} GAR {} Area {}",
        r.per_user.len(),
        f(Metric::Acc),
        f(Metric::Grr),
        f(Metric::Gar),
        f(Metric::Area)
    )
}

pub fn evaluate(cfg: &RunConfig) -> CliResult<String> {
    let modality = cfg.modality_or(Modality::HrSpo2);
    let cohort = load_features(cfg, modality)?;
    let config = cfg.experiment(modality)?;
    let report = evaluation::run_experiment(&cohort, &config)?;
    let dir = cfg.out_dir.join(REPORTS_DIR);
    ensure_dir(&dir)?;
    let stem = cfg.run_stem("eval", &config, modality);
    let path = dir.join(format!("{stem}.json"));
    write_text(&path, &(report.to_json()? + "\n"))?;
    save_config(cfg, &dir, &stem)?;
    Ok(format!(
        "evaluate: {stem}: {} -> {}",
        summary_line(&report),
        path.display()
    ))
}

pub fn sweep(cfg: &RunConfig) -> CliResult<String> {
    if cfg.counts.is_empty() {
        return Err(CliError::malformed(
            "sweep needs at least one feature count",
        ));
    }
    let modality = cfg.modality_or(Modality::HrSpo2);
    let cohort = load_features(cfg, modality)?;
    let config = cfg.experiment(modality)?;
    let reports = evaluation::feature_count_sweep(&cohort, &config, &cfg.counts)?;
    let dir = cfg.out_dir.join(REPORTS_DIR);
    ensure_dir(&dir)?;
    let stem = cfg.run_stem("sweep", &config, modality);
    write_json(&dir.join(format!("{stem}.json")), &reports)?;
    let rows: Vec<(String, &EvalReport)> =
        reports.values().map(|r| (cfg.model.clone(), r)).collect();
    evaluation::write_table_csv(create(&dir.join(format!("{stem}.csv")))?, &rows)?;
    save_config(cfg, &dir, &stem)?;
    let accs: Vec<String> = reports
        .iter()
        .map(|(k, r)| {
            format!(
                "{k}:{}",
                r.mean(Metric::Acc)
                    .map_or("n/a".into(), |v| format!("{v:.3}"))
            )
        })
        .collect();
    Ok(format!(
        "sweep: {stem}: ACC by feature count {}",
        accs.join(" ")
    ))
}

/// Reads every `eval_*.json` in the reports directory.
fn collect_reports(dir: &Path) -> CliResult<Vec<(String, EvalReport)>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("eval_") && n.ends_with(".json") && !n.ends_with(".config.json"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|n| {
            let path = dir.join(&n);
            let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
            let report = EvalReport::from_json(&text)?;
            let prefix = format!("eval_{}_{}_", report.modality.as_str(), report.scheme);
            let stem = n.trim_end_matches(".json");
            let label = stem.strip_prefix(&prefix).unwrap_or(stem).to_string();
            Ok((label, report))
        })
        .collect()
}

pub fn report(cfg: &RunConfig) -> CliResult<String> {
    let dir = cfg.out_dir.join(REPORTS_DIR);
    require(&dir, "reports directory (run `evaluate` first)")?;
    let all = collect_reports(&dir)?;
    if all.is_empty() {
        return Err(CliError::missing(format!(
            "no eval_*.json reports in {}",
            dir.display()
        )));
    }
    let mut groups: BTreeMap<(Modality, String), Vec<(String, &EvalReport)>> = BTreeMap::new();
    for (label, r) in &all {
        groups
            .entry((r.modality, r.scheme.to_string()))
            .or_default()
            .push((label.clone(), r));
    }
    for ((modality, scheme), rows) in &groups {
        let stem = format!("{}_{scheme}", modality.as_str());
        evaluation::write_table_csv(create(&dir.join(format!("table_{stem}.csv")))?, rows)?;
        evaluation::write_spider_csv(create(&dir.join(format!("spider_{stem}.csv")))?, rows)?;
        // Relative loss compares models, so a lone model gets none.
        if rows.len() >= 2 {
            let loss = evaluation::relative_loss(rows, &[Metric::Grr, Metric::Gar, Metric::Area])?;
            evaluation::write_loss_csv(create(&dir.join(format!("loss_{stem}.csv")))?, &loss)?;
        }
        write_text(
            &dir.join(format!("radar_{stem}.svg")),
            &evaluation::radar_svg(&format!("{modality} {scheme}"), rows),
        )?;
        for (label, r) in rows {
            write_text(
                &dir.join(format!("radar_{stem}_{label}.svg")),
                &evaluation::radar_svg(
                    &format!("{modality} {scheme} {label}"),
                    &[(label.clone(), *r)],
                ),
            )?;
        }
    }
    save_config(cfg, &dir, "report")?;
    Ok(format!(
        "report: {} reports in {} tables -> {}",
        all.len(),
        groups.len(),
        dir.display()
    ))
}
