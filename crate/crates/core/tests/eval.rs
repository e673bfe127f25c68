use dsqa_core::classifier::{train_linear, TrainConfig};
use dsqa_core::corpus::{generate_synthetic_corpus, LabeledQuestion, SynthConfig};
use dsqa_core::eval::{
    average_score, cross_validate, load_grades, rer, score_classifier, score_tagger, succ_at,
    summarize, GradedAnswer,
};
use dsqa_core::ner::{train_crf, train_hmm, CrfTrainConfig};

fn corpus(seed: u64) -> Vec<LabeledQuestion> {
    generate_synthetic_corpus(
        &SynthConfig {
            size: 500,
            ..SynthConfig::default()
        },
        seed,
    )
    .unwrap()
}

fn grades(counts: [usize; 4]) -> Vec<GradedAnswer> {
    let mut out = Vec::new();
    for (g, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            out.push(GradedAnswer::new(format!("q{}", out.len()), "", g as u8 + 1, 0).unwrap());
        }
    }
    out
}

#[test]
fn linear_classifier_cross_validation() {
    let data = corpus(7);
    let config = TrainConfig {
        seed: 7,
        ..TrainConfig::desk_linear()
    };
    let report = cross_validate(
        &data,
        10,
        7,
        |train| train_linear(train, &config),
        score_classifier,
    )
    .unwrap();
    assert_eq!(report.folds.len(), 10);
    assert!(report.mean_f1 >= 0.95, "{}", report.to_table());
    let again = cross_validate(
        &data,
        10,
        7,
        |train| train_linear(train, &config),
        score_classifier,
    )
    .unwrap();
    assert_eq!(report, again);
}

#[test]
fn crf_spans_beat_hmm_spans() {
    for seed in 0..5 {
        let data = corpus(seed);
        let crf_config = CrfTrainConfig {
            seed,
            ..CrfTrainConfig::default()
        };
        let crf = cross_validate(
            &data,
            10,
            seed,
            |train| train_crf(train, &crf_config),
            score_tagger,
        )
        .unwrap();
        let hmm = cross_validate(&data, 10, seed, train_hmm, score_tagger).unwrap();
        assert!(crf.mean_f1 >= 0.95, "seed {seed}: {}", crf.to_table());
        assert!(
            hmm.mean_f1 <= crf.mean_f1,
            "seed {seed}: hmm {} crf {}",
            hmm.mean_f1,
            crf.mean_f1
        );
    }
}

#[test]
fn grade_mapping_is_a_shift_by_one() {
    // 50 grades with raw mean 141/50 = 2.82
    let g = grades([5, 12, 20, 13]);
    let raw: f64 = g.iter().map(|a| f64::from(a.grade())).sum::<f64>() / g.len() as f64;
    assert!((raw - 2.82).abs() < 1e-12);
    assert!((average_score(&g).unwrap() - 1.82).abs() < 1e-12);
}

#[test]
fn sixty_four_answer_reconstruction() {
    // 15 incorrect, 7 related, 42 correct: rer 15/64, succ@3+ 42/64
    for fours in [25, 26] {
        let g = grades([15, 7, 42 - fours, fours]);
        assert_eq!(g.len(), 64);
        assert!((rer(&g).unwrap() - 0.234).abs() < 1e-3);
        assert!((succ_at(&g, 3).unwrap() - 0.656).abs() < 1e-3);
        assert_eq!(rer(&g).unwrap() + succ_at(&g, 2).unwrap(), 1.0);
        // the reported 1.82 lies between the two nearest achievable averages
        assert!((average_score(&g).unwrap() - 1.82).abs() < 0.01);
    }
}

#[test]
fn grade_file_summary() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grades.csv");
    std::fs::write(&path, "id,grade,rank\na,4,1\nb,3,2\nc,2,0\nd,1,0\n").unwrap();
    let s = summarize(&load_grades(&path).unwrap()).unwrap();
    assert_eq!(
        (s.count, s.average_score, s.succ_at_2, s.succ_at_3, s.rer),
        (4, 1.5, 0.75, 0.5, 0.25)
    );
    assert_eq!(s.mrr, 0.375);
    assert!(load_grades(dir.path().join("missing.csv"))
        .unwrap_err()
        .to_string()
        .contains("missing.csv"));
}
