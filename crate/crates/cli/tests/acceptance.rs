//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use dsqa_core::classifier::{grad_conv, train_linear, ConvModel, TrainConfig};
use dsqa_core::corpus::{
    generate_synthetic_corpus, EntityType, LabeledQuestion, QuestionType, SynthConfig,
};
use dsqa_core::eval::{
    average_score, cross_validate, rer, score_classifier, score_tagger, succ_at, weighted_prf,
    GradedAnswer,
};
use dsqa_core::kb::{
    lookup_entity, parse_rrf, query, read_rrf, KbError, KnowledgeIndex, DEFAULT_MAX_FACTS,
};
use dsqa_core::ner::{
    crf_gradient, train_crf, train_hmm, CrfExample, CrfModel, CrfTrainConfig, NUM_TAGS,
};
use dsqa_core::textproc::{random_embeddings, FeatureInterner};
use dsqa_core::{fixtures, tokenize};
use dsqa_service::{
    router, AppState, ChatResponse, ClassifyResponse, HealthResponse, NerResponse, ServiceConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

type Check = fn() -> Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure!(took < limit, "took {took:?}, limit {limit:?}");
    Ok(())
}

// --- CRF oracle -----------------------------------------------------------

/// Path score straight from the weights, independent of the lattice code.
fn path_score(model: &CrfModel, features: &[Vec<(u32, f64)>], tags: &[usize]) -> f64 {
    let w = &model.weights;
    let mut s = w.start[tags[0]] + w.end[tags[tags.len() - 1]];
    for (t, active) in features.iter().enumerate() {
        for &(f, v) in active {
            s += model.emission_weight(f, tags[t]) * v;
        }
        if t > 0 {
            s += w.transitions[tags[t - 1] * NUM_TAGS + tags[t]];
        }
    }
    s
}

fn all_paths(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..NUM_TAGS.pow(n as u32)).map(move |mut code| {
        let mut p = vec![0; n];
        for slot in p.iter_mut() {
            *slot = code % NUM_TAGS;
            code /= NUM_TAGS;
        }
        p
    })
}

fn random_crf(rng: &mut ChaCha8Rng, integer: bool) -> CrfModel {
    let mut interner = FeatureInterner::new();
    for f in 0..6 {
        interner.intern(&format!("f{f}"));
    }
    let mut model = CrfModel::zeros(interner);
    for w in model.weights.iter_mut() {
        *w = if integer {
            rng.gen_range(-2..=2) as f64
        } else {
            rng.gen_range(-3.0..3.0)
        };
    }
    model
}

fn crf_oracle() -> Result<(), String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..120 {
        let integer = trial % 3 == 0;
        let model = random_crf(&mut rng, integer);
        let n = rng.gen_range(1..=5);
        let features: Vec<Vec<(u32, f64)>> = (0..n)
            .map(|_| {
                (0..rng.gen_range(0..4))
                    .map(|_| {
                        (
                            rng.gen_range(0..6),
                            if integer {
                                1.0
                            } else {
                                rng.gen_range(0.0..2.0)
                            },
                        )
                    })
                    .collect()
            })
            .collect();
        let lattice = model.lattice(&features);
        let (path, score) = lattice.viterbi();

        // brute force: best score; ties go to the path that is smallest
        // when read from the last position backwards
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut scores = Vec::new();
        for p in all_paths(n) {
            let s = path_score(&model, &features, &p);
            scores.push(s);
            let better = match &best {
                None => true,
                Some((bs, bp)) => s > *bs || (s == *bs && p.iter().rev().lt(bp.iter().rev())),
            };
            if better {
                best = Some((s, p));
            }
        }
        let (best_score, best_path) = best.expect("at least one path");
        ensure!(
            (score - best_score).abs() < 1e-9,
            "trial {trial}: viterbi {score} vs brute {best_score}"
        );
        ensure!(
            path == best_path,
            "trial {trial}: viterbi {path:?} vs brute {best_path:?}"
        );
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        let z = lattice.log_partition();
        ensure!(
            (z - lse).abs() < 1e-8,
            "trial {trial}: log Z {z} vs brute {lse}"
        );
    }
    within(start, Duration::from_secs(30))
}

// --- gradient checks ------------------------------------------------------

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

fn gradient_checks() -> Result<(), String> {
    let start = Instant::now();
    let h = 1e-5;

    // CRF objective with c1 = 0, c2 = 0.1 on a small real corpus
    let data: Vec<LabeledQuestion> = generate_synthetic_corpus(
        &SynthConfig {
            size: 6,
            ..SynthConfig::default()
        },
        5,
    )
    .map_err(|e| e.to_string())?;
    let mut interner = FeatureInterner::new();
    let examples: Vec<CrfExample> = dsqa_core::ner::crf_examples(&data, &mut interner);
    let mut model = CrfModel::zeros(interner);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for w in model.weights.iter_mut() {
        *w = rng.gen_range(-0.5..0.5);
    }
    let objective = |m: &CrfModel| {
        crf_gradient(m, &examples, 0.0, 0.1)
            .map(|(o, _)| o)
            .map_err(|e| e.to_string())
    };
    let (_, grad) = crf_gradient(&model, &examples, 0.0, 0.1).map_err(|e| e.to_string())?;
    let analytic: Vec<f64> = grad.iter().copied().collect();
    let count = analytic.len();
    for i in 0..count {
        let original = *model.weights.iter().nth(i).expect("index in range");
        *model.weights.iter_mut().nth(i).expect("index in range") = original + h;
        let up = objective(&model)?;
        *model.weights.iter_mut().nth(i).expect("index in range") = original - h;
        let down = objective(&model)?;
        *model.weights.iter_mut().nth(i).expect("index in range") = original;
        let numeric = (up - down) / (2.0 * h);
        ensure!(
            rel_err(analytic[i], numeric) < 1e-4,
            "CRF parameter {i}: analytic {} numeric {numeric}",
            analytic[i]
        );
    }

    // convolutional classifier: d = 4, widths {1, 2}, 2 filters
    let batch: Vec<LabeledQuestion> = [
        ("Does Niacin really work?", QuestionType::Effectiveness),
        ("Is kratom safe during pregnancy?", QuestionType::Safety),
        ("Where can I buy melatonin?", QuestionType::Availability),
    ]
    .iter()
    .enumerate()
    .map(|(i, (t, q))| LabeledQuestion::new(format!("g{i}"), *t, *q, []).expect("valid question"))
    .collect();
    let vocab: Vec<String> = batch
        .iter()
        .flat_map(|q| tokenize(&q.text))
        .map(|t| t.lower)
        .collect();
    let table = random_embeddings(&vocab, 4, 3).map_err(|e| e.to_string())?;
    let mut conv = ConvModel::init_random(table, &[1, 2], 2, 0.0, &mut rng);
    let (_, g) = grad_conv(&conv, &batch);
    let analytic: Vec<f64> = g.slices().into_iter().flatten().copied().collect();
    let sizes: Vec<usize> = conv.param_slices().iter().map(|s| s.len()).collect();
    let mut k = 0;
    for (block, &len) in sizes.iter().enumerate() {
        for j in 0..len {
            let original = conv.param_slices_mut()[block][j];
            conv.param_slices_mut()[block][j] = original + h;
            let up = grad_conv(&conv, &batch).0;
            conv.param_slices_mut()[block][j] = original - h;
            let down = grad_conv(&conv, &batch).0;
            conv.param_slices_mut()[block][j] = original;
            let numeric = (up - down) / (2.0 * h);
            ensure!(
                rel_err(analytic[k], numeric) < 1e-4,
                "conv block {block} entry {j}: analytic {} numeric {numeric}",
                analytic[k]
            );
            k += 1;
        }
    }
    ensure!(
        k == analytic.len(),
        "gradient has {} entries, parameters {k}",
        analytic.len()
    );
    within(start, Duration::from_secs(60))
}

// --- synthetic end-to-end -------------------------------------------------

fn synthetic_end_to_end() -> Result<(), String> {
    let start = Instant::now();
    let corpus = |seed| {
        generate_synthetic_corpus(
            &SynthConfig {
                size: 500,
                ..SynthConfig::default()
            },
            seed,
        )
        .map_err(|e| e.to_string())
    };
    let data = corpus(1)?;
    let config = TrainConfig {
        seed: 1,
        ..TrainConfig::desk_linear()
    };
    let linear = cross_validate(
        &data,
        10,
        1,
        |tr| train_linear(tr, &config),
        score_classifier,
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        linear.mean_f1 >= 0.95,
        "linear weighted F1 {}",
        linear.mean_f1
    );
    let mut crf_scores = Vec::new();
    let mut hmm_scores = Vec::new();
    for seed in 0..5 {
        let data = corpus(seed)?;
        let crf_config = CrfTrainConfig {
            seed,
            ..CrfTrainConfig::default()
        };
        let crf = cross_validate(
            &data,
            10,
            seed,
            |tr| train_crf(tr, &crf_config),
            score_tagger,
        )
        .map_err(|e| e.to_string())?;
        let hmm =
            cross_validate(&data, 10, seed, train_hmm, score_tagger).map_err(|e| e.to_string())?;
        crf_scores.push(crf.mean_f1);
        hmm_scores.push(hmm.mean_f1);
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    ensure!(
        crf_scores[1] >= 0.95,
        "CRF span F1 {} on the seed-1 corpus",
        crf_scores[1]
    );
    ensure!(
        crf_scores.iter().all(|&f| f >= 0.95),
        "CRF span F1 per seed {crf_scores:?}"
    );
    ensure!(
        mean(&hmm_scores) <= mean(&crf_scores),
        "HMM {hmm_scores:?} vs CRF {crf_scores:?}"
    );
    println!(
        "  linear F1 {:.4}; CRF span F1 {:.4}; HMM span F1 {:.4}",
        linear.mean_f1,
        mean(&crf_scores),
        mean(&hmm_scores)
    );
    within(start, Duration::from_secs(300))
}

// --- metric identities ----------------------------------------------------

fn graded(gs: &[u8]) -> Vec<GradedAnswer> {
    gs.iter()
        .enumerate()
        .map(|(i, &g)| GradedAnswer::new(i.to_string(), "", g, 0).expect("grade in range"))
        .collect()
}

fn metric_identities() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..500 {
        let gs: Vec<u8> = (0..rng.gen_range(1..100))
            .map(|_| rng.gen_range(1..=4))
            .collect();
        let g = graded(&gs);
        let s: Vec<f64> = (2..=4).map(|i| succ_at(&g, i).expect("valid")).collect();
        ensure!(s[0] >= s[1] && s[1] >= s[2], "succ_at not monotone: {s:?}");
        let r = rer(&g).expect("non-empty");
        ensure!(r + s[0] == 1.0, "rer {r} + succ@2+ {} != 1", s[0]);
    }
    let score = average_score(&graded(&[4, 3, 2, 1])).expect("non-empty");
    ensure!(score == 1.5, "average score {score}");
    let report =
        weighted_prf(&["A", "A", "B", "B"], &["A", "B", "B", "B"]).map_err(|e| e.to_string())?;
    ensure!(
        (report.f1 - 0.733_333_333_333_333).abs() < 1e-9,
        "weighted F1 {}",
        report.f1
    );
    // raw mean 141/50 = 2.82 maps to 1.82
    let mut gs = vec![1; 5];
    gs.extend([2; 12]);
    gs.extend([3; 20]);
    gs.extend([4; 13]);
    let score = average_score(&graded(&gs)).expect("non-empty");
    ensure!(
        (score - 1.82).abs() < 1e-12,
        "average score {score} for raw mean 2.82"
    );
    Ok(())
}

// --- knowledge base -------------------------------------------------------

fn kb_pipeline() -> Result<(), String> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures");
    let store = parse_rrf(
        format!("{dir}/conso.rrf"),
        format!("{dir}/rel.rrf"),
        format!("{dir}/sat.rrf"),
    )
    .map_err(|e| e.to_string())?;
    let index = KnowledgeIndex::build(&store).map_err(|e| e.to_string())?;
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    index.export_json(out.path()).map_err(|e| e.to_string())?;
    let back = KnowledgeIndex::import_json(out.path()).map_err(|e| e.to_string())?;
    ensure!(back == index, "export/import changed the index");
    let cui = lookup_entity(&index, "shark cartilage", false)
        .first()
        .map(|m| m.cui.clone())
        .ok_or("shark cartilage not found")?;
    let facts = query(
        &index,
        QuestionType::Effectiveness,
        &[(EntityType::DS, cui)],
        DEFAULT_MAX_FACTS,
    );
    let text = facts
        .first()
        .map(|f| f.predicate_text())
        .unwrap_or_default();
    ensure!(
        text == "is effective for Degenerative Polyarthritis",
        "fact text {text:?}"
    );
    // a drug cannot be effective for a supplement
    let conso = "C1|Ginkgo|SDSI|\nC2|Warfarin|SPD|\n";
    let bad_rel = "C2|is_effective_for|C1|NMCD\n";
    let err = read_rrf(conso.as_bytes(), bad_rel.as_bytes(), "".as_bytes());
    ensure!(
        matches!(err, Err(KbError::Parse { .. })),
        "signature violation accepted: {err:?}"
    );
    Ok(())
}

// --- dialogue totality ----------------------------------------------------

fn random_text(rng: &mut ChaCha8Rng) -> String {
    (0..rng.gen_range(0..40))
        .map(|_| match rng.gen_range(0..3) {
            0 => rng.gen_range(b'a'..=b'z') as char,
            1 => [' ', '?', '.', '\'', '-'][rng.gen_range(0..5)],
            _ => rng.gen::<char>(),
        })
        .collect()
}

fn dialogue_totality() -> Result<(), String> {
    let pipeline = fixtures::demo_pipeline(1);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let inputs: Vec<String> = (0..1000).map(|_| random_text(&mut rng)).collect();
    let run = || {
        inputs
            .iter()
            .map(|t| pipeline.handle_turn(t).without_timings())
            .collect::<Vec<_>>()
    };
    let first = run();
    for (text, turn) in inputs.iter().zip(&first) {
        ensure!(!turn.answer.trim().is_empty(), "empty answer for {text:?}");
        let stages = turn.trace.stages();
        for s in [
            dsqa_core::dialog::Stage::Classify,
            dsqa_core::dialog::Stage::Ner,
            dsqa_core::dialog::Stage::Link,
            dsqa_core::dialog::Stage::Render,
        ] {
            ensure!(stages.contains(&s), "{text:?}: trace lacks {s:?}");
        }
        let last = turn
            .trace
            .events
            .last()
            .map(|e| e.message.as_str())
            .unwrap_or("");
        ensure!(
            last.starts_with("answered via") || last.starts_with("fallback"),
            "{text:?}: trace ends with {last:?}"
        );
    }
    ensure!(first == run(), "second run differs");
    Ok(())
}

// --- service --------------------------------------------------------------

async fn call(app: axum::Router, method: Method, uri: &str, body: String) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body))
        .expect("valid request");
    let resp = app.oneshot(req).await.expect("router is infallible");
    let status = resp.status();
    (
        status,
        to_bytes(resp.into_body(), usize::MAX)
            .await
            .expect("body")
            .to_vec(),
    )
}

async fn service_checks() -> Result<(), String> {
    let state = Arc::new(AppState::new(fixtures::demo_pipeline(1)).map_err(|e| e.to_string())?);
    let app = router(state, &ServiceConfig::default());
    let parse = |b: &[u8]| String::from_utf8_lossy(b).to_string();

    let (status, body) = call(app.clone(), Method::GET, "/health", String::new()).await;
    let health: HealthResponse =
        serde_json::from_slice(&body).map_err(|e| format!("/health: {e}: {}", parse(&body)))?;
    ensure!(
        status == StatusCode::OK && health.status == "ok",
        "/health {status}"
    );

    let (status, body) = call(
        app.clone(),
        Method::POST,
        "/chat",
        r#"{"text":"Does Niacin really work?"}"#.into(),
    )
    .await;
    let chat: ChatResponse =
        serde_json::from_slice(&body).map_err(|e| format!("/chat: {e}: {}", parse(&body)))?;
    ensure!(
        status == StatusCode::OK && chat.qtype == "Effectiveness" && !chat.answer.is_empty(),
        "/chat {chat:?}"
    );
    let (status, body) = call(app.clone(), Method::POST, "/chat", r#"{"text":""}"#.into()).await;
    let chat: ChatResponse =
        serde_json::from_slice(&body).map_err(|e| format!("/chat empty: {e}"))?;
    ensure!(
        status == StatusCode::OK && !chat.answer.is_empty(),
        "/chat on empty text"
    );

    let text = r#"{"text":"Is kratom safe during pregnancy?"}"#;
    let (_, body) = call(app.clone(), Method::POST, "/classify", text.into()).await;
    let c: ClassifyResponse =
        serde_json::from_slice(&body).map_err(|e| format!("/classify: {e}"))?;
    ensure!(c.qtype == "Safety", "/classify {c:?}");
    let (_, body) = call(app.clone(), Method::POST, "/ner", text.into()).await;
    let n: NerResponse = serde_json::from_slice(&body).map_err(|e| format!("/ner: {e}"))?;
    ensure!(
        n.entities.len() == 1 && n.entities[0].surface == "kratom" && n.entities[0].etype == "DS",
        "/ner {n:?}"
    );

    let (status, _) = call(
        app.clone(),
        Method::POST,
        "/chat",
        r#"{"words":"hi"}"#.into(),
    )
    .await;
    ensure!(
        status == StatusCode::BAD_REQUEST,
        "missing field gave {status}"
    );
    let big = serde_json::json!({ "text": "a".repeat(2 * ServiceConfig::default().body_limit) })
        .to_string();
    let (status, _) = call(app.clone(), Method::POST, "/classify", big).await;
    ensure!(
        status == StatusCode::PAYLOAD_TOO_LARGE,
        "oversized body gave {status}"
    );

    let body = r#"{"text":"Can I take St. John's Wort with warfarin?"}"#.to_string();
    let tasks: Vec<_> = (0..64)
        .map(|_| tokio::spawn(call(app.clone(), Method::POST, "/chat", body.clone())))
        .collect();
    let mut bodies = Vec::new();
    for t in tasks {
        let (status, b) = t.await.map_err(|e| e.to_string())?;
        ensure!(status == StatusCode::OK, "parallel request gave {status}");
        bodies.push(b);
    }
    ensure!(
        bodies.windows(2).all(|w| w[0] == w[1]),
        "parallel responses differ"
    );
    Ok(())
}

fn service() -> Result<(), String> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .build()
        .map_err(|e| e.to_string())?;
    runtime.block_on(service_checks())
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 7] = [
        ("CRF oracle equivalence", crf_oracle),
        ("gradient checks", gradient_checks),
        ("synthetic end-to-end", synthetic_end_to_end),
        ("metric identities", metric_identities),
        ("KB pipeline", kb_pipeline),
        ("dialogue totality fuzz", dialogue_totality),
        ("service contract", service),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        match outcome {
            Ok(()) => println!("PASS {name} ({:.1}s)", start.elapsed().as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
