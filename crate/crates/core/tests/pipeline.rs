use oxyauth::classifiers::{self, Algorithm};
use oxyauth::evaluation::{self, Confusion, ExperimentConfig, Scheme};
use oxyauth::features::{Label, Modality};
use oxyauth::ingest::ValidityBounds;
use oxyauth::pipeline;
use oxyauth::selection::{SelectionConfig, SelectionMethod};
use oxyauth::synth::{self, CohortSpec};
use oxyauth::windowing::DEFAULT_GAP_TOLERANCE_S;

fn cohort_on_disk(dir: &std::path::Path) -> pipeline::PreparedCohort {
    let spec = CohortSpec {
        n_subjects: 5,
        duration_s: 1200.0,
        seed: 3,
        ..CohortSpec::default()
    };
    synth::write_cohort(dir, &synth::generate_cohort(&spec).unwrap()).unwrap();
    let raw = pipeline::load_raw_cohort(dir).unwrap();
    pipeline::prepare_cohort(&raw, &ValidityBounds::default(), DEFAULT_GAP_TOLERANCE_S).unwrap()
}

#[test]
fn files_round_trip_into_feature_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = cohort_on_disk(dir.path());
    assert_eq!(cohort.subjects.len(), 5);
    assert!(cohort.dropped.is_empty());
    for m in [Modality::Hr, Modality::Spo2, Modality::HrSpo2] {
        let fm = cohort.feature_matrix(m).unwrap();
        assert_eq!(fm.n_cols(), m.width());
        let windows: usize = cohort.subjects.iter().map(|s| s.windows.len()).sum();
        assert_eq!(fm.n_rows(), windows);
        let mut buf = Vec::new();
        fm.write_csv(&mut buf).unwrap();
        assert_eq!(
            oxyauth::features::FeatureMatrix::read_csv(&buf[..]).unwrap(),
            fm
        );
    }
}

#[test]
fn single_user_training_matches_the_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let fm = cohort_on_disk(dir.path())
        .feature_matrix(Modality::Hr)
        .unwrap();
    for alg in [Algorithm::Rf, Algorithm::OcsvmRbf] {
        let scheme = if alg.is_unary() {
            Scheme::Unary
        } else {
            Scheme::Binary
        };
        let method = if alg.is_unary() {
            SelectionMethod::LowVariance
        } else {
            SelectionMethod::SelectKBest
        };
        let config = ExperimentConfig::new(
            classifiers::preset_for(Modality::Hr, alg).with_seed(5),
            scheme,
            SelectionConfig::new(method, 8),
        );
        let report = evaluation::run_experiment(&fm, &config).unwrap();
        let subjects = evaluation::group_by_subject(&fm);
        for (id, result) in &report.per_user {
            let model = evaluation::train_user_model(&fm, &config, id).unwrap();
            assert_eq!(model.valid_user.as_deref(), Some(id.as_str()));
            let split = evaluation::split_for_user(&fm, &subjects, id, &config).unwrap();
            let truth: Vec<bool> = split
                .test
                .labels()
                .unwrap()
                .into_iter()
                .map(Label::is_valid)
                .collect();
            let predicted: Vec<bool> = model
                .predict(&split.test)
                .unwrap()
                .into_iter()
                .map(Label::is_valid)
                .collect();
            assert_eq!(
                Confusion::from_predictions(&truth, &predicted),
                result.confusion,
                "{alg} {id}"
            );
        }
    }
}

#[test]
fn unknown_valid_user_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let fm = cohort_on_disk(dir.path())
        .feature_matrix(Modality::Spo2)
        .unwrap();
    let config = ExperimentConfig::new(
        classifiers::preset_for(Modality::Spo2, Algorithm::Nb),
        Scheme::Binary,
        SelectionConfig::new(SelectionMethod::SelectKBest, 5),
    );
    assert!(evaluation::train_user_model(&fm, &config, "nobody").is_err());
}
