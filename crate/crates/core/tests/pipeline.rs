use std::fs;
use std::path::Path;

use lfp_core::classify::{calibrate, score_subject, Method};
use lfp_core::io::write_sessions;
use lfp_core::pipeline::{run_pipeline, PipelineConfig, SubjectStatus};
use lfp_core::preprocess::preprocess;
use lfp_core::synth::{gen_cohort, CohortSpec, SubjectPair};

fn cohort(seed: u64) -> Vec<SubjectPair> {
    gen_cohort(&CohortSpec {
        subjects_per_group: 2,
        duration_s: 60.0,
        seed,
        ..CohortSpec::default()
    })
    .unwrap()
}

fn write(dir: &Path, pairs: &[SubjectPair]) {
    write_sessions(dir, pairs.iter().flat_map(|p| [&p.pre, &p.post])).unwrap();
}

fn calibrated_config(pairs: &[SubjectPair]) -> PipelineConfig {
    let mut config = PipelineConfig {
        validation_windows: 2,
        ..PipelineConfig::default()
    };
    let labelled: Vec<_> = pairs
        .iter()
        .map(|p| {
            let pre = p.pre.map_signals(|s| preprocess(s, &config.filter)).unwrap();
            let post = p.post.map_signals(|s| preprocess(s, &config.filter)).unwrap();
            (
                p.pre.treatment().unwrap(),
                score_subject(&pre, &post, &config.score_settings()).unwrap(),
            )
        })
        .collect();
    let cal = calibrate(&labelled).unwrap();
    assert!(cal.overlapping.is_empty(), "{:?}", cal.overlapping);
    config.thresholds = cal.thresholds;
    config
}

#[test]
fn calibrated_synthetic_cohort_is_classified_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("cohort");
    write(&input, &cohort(11));
    let config = calibrated_config(&cohort(12));
    let report = run_pipeline(&input, &tmp.path().join("out"), &config).unwrap();
    assert_eq!(report.subjects.len(), 6);
    assert!(
        report.subjects.iter().all(|s| s.status == SubjectStatus::Classified),
        "{:#?}",
        report.subjects
    );
    for method in [Method::Kld1d, Method::Kld2d, Method::Corr] {
        assert_eq!(report.accuracy[&method].accuracy, 1.0, "{method}");
    }
    let ids: Vec<&str> = report.subjects.iter().map(|s| s.subject_id.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    let svgs = &report.subjects[0].sdp.as_ref().unwrap().svgs;
    assert_eq!(svgs.len(), 4);
    assert!(tmp.path().join("out").join(&svgs[0]).exists());
}

#[test]
fn faulty_subjects_are_isolated() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("cohort");
    let pairs = cohort(13);
    write(&input, &pairs);
    // Corrupt line 5 of one CSV and drop the POST session of another subject.
    let bad = input.join("food-01_pre.csv");
    let text = fs::read_to_string(&bad).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[4] = "0.004,abc,1.0".into();
    fs::write(&bad, lines.join("\n")).unwrap();
    fs::remove_file(input.join("saline-02_post.csv")).unwrap();
    fs::remove_file(input.join("saline-02_post.json")).unwrap();

    let config = PipelineConfig {
        validation_windows: 1,
        ..PipelineConfig::default()
    };
    let report = run_pipeline(&input, &tmp.path().join("out"), &config).unwrap();
    assert_eq!(report.subjects.len(), 6);
    assert_eq!(report.error_count, 2);
    let food = report.subjects.iter().find(|s| s.subject_id == "food-01").unwrap();
    let msg = food.error.as_deref().unwrap();
    assert!(msg.contains("line 5"), "{msg}");
    let saline = report.subjects.iter().find(|s| s.subject_id == "saline-02").unwrap();
    assert!(saline.error.as_deref().unwrap().contains("no POST session"));
    let classified = report
        .subjects
        .iter()
        .filter(|s| s.status == SubjectStatus::Classified)
        .count();
    assert_eq!(classified, 4);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("cohort");
    let pairs: Vec<SubjectPair> = cohort(14).into_iter().step_by(2).collect();
    write(&input, &pairs);
    let config = PipelineConfig {
        validation_windows: 1,
        seed: 5,
        ..PipelineConfig::default()
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_pipeline(&input, &a, &config).unwrap();
    run_pipeline(&input, &b, &config).unwrap();
    let list = |d: &Path| {
        let mut v: Vec<_> = fs::read_dir(d.join("sdp"))
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        v.sort();
        v
    };
    assert_eq!(list(&a), list(&b));
    assert_eq!(
        fs::read(a.join("report.json")).unwrap(),
        fs::read(b.join("report.json")).unwrap()
    );
    for name in list(&a) {
        assert_eq!(
            fs::read(a.join("sdp").join(&name)).unwrap(),
            fs::read(b.join("sdp").join(&name)).unwrap()
        );
    }
}
