use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dsqa_core::classifier::{
    train_conv_with_log, train_linear_with_log, ClassifierModel, TrainConfig,
};
use dsqa_core::corpus::{
    generate_synthetic_corpus, load_corpus, save_corpus, LabeledQuestion, SynthConfig,
};
use dsqa_core::dialog::{Pipeline, PipelineConfig, TemplateSet};
use dsqa_core::eval::{
    cross_validate, load_grades, score_classifier, score_tagger, summarize, ClassificationReport,
    CvReport,
};
use dsqa_core::kb::{parse_rrf, KnowledgeIndex};
use dsqa_core::ner::{train_crf_with_log, train_hmm, CrfTrainConfig, NerModel};
use dsqa_core::textproc::{load_embeddings, EmbeddingTable};
use dsqa_service::{AppState, ChatResponse, ServiceConfig};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::{
    Algo, AskArgs, Cli, Command, EvalArgs, KbArgs, ServeArgs, SynthArgs, Task, TrainArgs,
    UsageError,
};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn existing_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!(
            "{what} {} does not exist or is not a file",
            path.display()
        )))
    }
}

fn existing_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(usage(format!(
            "{what} {} does not exist or is not a directory",
            path.display()
        )))
    }
}

fn parent_dir(path: &Path) -> Result<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
        }
        None => Ok(()),
    }
}

/// `base` with top-level keys replaced by those in a JSON or TOML file.
/// Keys the settings do not have are rejected.
fn with_overrides<T: Serialize + DeserializeOwned>(base: T, path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(base);
    };
    existing_file(path, "config")?;
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let overrides: Value = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
    } else {
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
    };
    let mut merged = serde_json::to_value(base)?;
    let (Value::Object(target), Value::Object(source)) = (&mut merged, overrides) else {
        return Err(usage(format!(
            "{}: expected a table of settings",
            path.display()
        )));
    };
    for (k, v) in source {
        if !target.contains_key(&k) {
            let known: Vec<&str> = target.keys().map(String::as_str).collect();
            return Err(usage(format!(
                "{}: unknown setting {k:?}; known: {}",
                path.display(),
                known.join(", ")
            )));
        }
        target.insert(k, v);
    }
    serde_json::from_value(merged).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn read_corpus(path: &Path) -> Result<Vec<LabeledQuestion>> {
    existing_file(path, "corpus")?;
    load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.into())
            .build_global()?;
    }
    match cli.command {
        Command::Synth(a) => synth(a, cli.json),
        Command::Train(a) => train(a, cli.json),
        Command::Eval(a) => eval(a, cli.json),
        Command::Kb(a) => kb(a, cli.json),
        Command::Ask(a) => ask(a, cli.json),
        Command::Serve(a) => serve(a),
    }
}

fn synth(a: SynthArgs, json: bool) -> Result<()> {
    let config = with_overrides(
        SynthConfig {
            size: a.size,
            ..SynthConfig::default()
        },
        a.config.as_deref(),
    )?;
    let config = SynthConfig {
        size: a.size,
        ..config
    };
    let data = generate_synthetic_corpus(&config, a.seed).map_err(|e| usage(e.to_string()))?;
    parent_dir(&a.out)?;
    save_corpus(&a.out, &data).with_context(|| format!("writing {}", a.out.display()))?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for q in &data {
        *counts.entry(q.qtype.to_string()).or_default() += 1;
    }
    if json {
        print_json(
            &json!({ "out": a.out, "size": data.len(), "seed": a.seed, "class_counts": counts }),
        )
    } else {
        println!("wrote {} questions to {}", data.len(), a.out.display());
        for (t, n) in counts {
            println!("  {t:<15} {n}");
        }
        Ok(())
    }
}

fn resolve_algo(task: Task, algo: Option<Algo>) -> Result<Algo> {
    match (task, algo) {
        (Task::Classifier, None) => Ok(Algo::Conv),
        (Task::Ner, None) => Ok(Algo::Crf),
        (Task::Classifier, Some(a @ (Algo::Linear | Algo::Conv)))
        | (Task::Ner, Some(a @ (Algo::Crf | Algo::Hmm))) => Ok(a),
        (Task::Grades, _) => Err(usage("grades are evaluated, not trained")),
        (t, Some(a)) => Err(usage(
            format!("--algo {a:?} does not fit --task {t:?}").to_lowercase(),
        )),
    }
}

fn classifier_config(algo: Algo, seed: Option<u64>, path: Option<&Path>) -> Result<TrainConfig> {
    let base = if algo == Algo::Linear {
        TrainConfig::desk_linear()
    } else {
        TrainConfig::desk()
    };
    let mut config = with_overrides(base, path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

fn crf_config(seed: Option<u64>, path: Option<&Path>) -> Result<CrfTrainConfig> {
    let mut config = with_overrides(CrfTrainConfig::default(), path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

fn embeddings(algo: Algo, path: Option<&Path>) -> Result<Option<EmbeddingTable>> {
    match path {
        None => Ok(None),
        Some(_) if algo != Algo::Conv => Err(usage("--embeddings only applies to --algo conv")),
        Some(p) => {
            existing_file(p, "embeddings")?;
            Ok(Some(
                load_embeddings(p).with_context(|| format!("loading {}", p.display()))?,
            ))
        }
    }
}

enum Trained {
    Classifier(ClassifierModel),
    Ner(NerModel),
}

fn train(a: TrainArgs, json: bool) -> Result<()> {
    let algo = resolve_algo(a.task, a.algo)?;
    let data = read_corpus(&a.corpus)?;
    let pretrained = embeddings(algo, a.embeddings.as_deref())?;
    let (model, log) = match algo {
        Algo::Linear | Algo::Conv => {
            let config = classifier_config(algo, a.seed, a.config.as_deref())?;
            if algo == Algo::Linear {
                let (m, log) = train_linear_with_log(&data, &config)?;
                (Trained::Classifier(ClassifierModel::Linear(m)), log)
            } else {
                let (m, log) = train_conv_with_log(&data, &config, pretrained.as_ref())?;
                (Trained::Classifier(ClassifierModel::Conv(m)), log)
            }
        }
        Algo::Crf => {
            let config = crf_config(a.seed, a.config.as_deref())?;
            let (m, log) = train_crf_with_log(&data, &config)?;
            (Trained::Ner(NerModel::Crf(m)), log)
        }
        Algo::Hmm => {
            if a.config.is_some() {
                return Err(usage("the HMM takes no training settings"));
            }
            (Trained::Ner(NerModel::Hmm(train_hmm(&data)?)), Vec::new())
        }
    };
    parent_dir(&a.out)?;
    let saved: Result<()> = match &model {
        Trained::Classifier(m) => m.save(&a.out).map_err(Into::into),
        Trained::Ner(m) => m.save(&a.out).map_err(Into::into),
    };
    saved.with_context(|| format!("writing {}", a.out.display()))?;
    let algo_name = format!("{algo:?}").to_lowercase();
    if json {
        print_json(
            &json!({ "algo": algo_name, "examples": data.len(), "out": a.out, "epoch_objective": log }),
        )
    } else {
        println!(
            "trained {algo_name} on {} questions in {} epochs",
            data.len(),
            log.len()
        );
        if let Some(last) = log.last() {
            println!("final training objective {last:.6}");
        }
        println!("saved to {}", a.out.display());
        Ok(())
    }
}

fn cross_validation(a: &EvalArgs, algo: Algo, data: &[LabeledQuestion]) -> Result<CvReport> {
    let seed = Some(a.seed);
    let report = match algo {
        Algo::Linear => {
            let config = classifier_config(algo, seed, a.config.as_deref())?;
            cross_validate(
                data,
                a.k,
                a.seed,
                |tr| dsqa_core::classifier::train_linear(tr, &config),
                score_classifier,
            )
        }
        Algo::Conv => {
            let config = classifier_config(algo, seed, a.config.as_deref())?;
            let pretrained = embeddings(algo, a.embeddings.as_deref())?;
            cross_validate(
                data,
                a.k,
                a.seed,
                |tr| dsqa_core::classifier::train_conv(tr, &config, pretrained.as_ref()),
                score_classifier,
            )
        }
        Algo::Crf => {
            let config = crf_config(seed, a.config.as_deref())?;
            cross_validate(
                data,
                a.k,
                a.seed,
                |tr| dsqa_core::ner::train_crf(tr, &config),
                score_tagger,
            )
        }
        Algo::Hmm => cross_validate(data, a.k, a.seed, train_hmm, score_tagger),
    };
    report.map_err(|e| match e {
        dsqa_core::eval::EvalError::Corpus(c) => usage(c.to_string()),
        other => other.into(),
    })
}

fn eval(a: EvalArgs, json: bool) -> Result<()> {
    if a.task == Task::Grades {
        let path = a
            .grades
            .as_deref()
            .ok_or_else(|| usage("--task grades needs --grades <csv>"))?;
        existing_file(path, "grades")?;
        let summary = summarize(&load_grades(path)?)?;
        return if json {
            print_json(&summary)
        } else {
            println!("answers        {}", summary.count);
            println!("average score  {:.4}", summary.average_score);
            println!("succ@2+        {:.4}", summary.succ_at_2);
            println!("succ@3+        {:.4}", summary.succ_at_3);
            println!("succ@4+        {:.4}", summary.succ_at_4);
            println!("RER            {:.4}", summary.rer);
            println!("MRR            {:.4}", summary.mrr);
            Ok(())
        };
    }
    let corpus = a
        .corpus
        .as_deref()
        .ok_or_else(|| usage("--corpus is required"))?;
    let data = read_corpus(corpus)?;
    if let Some(path) = &a.model {
        existing_file(path, "model")?;
        if a.algo.is_some() || a.config.is_some() {
            return Err(usage(
                "--model scores a saved model; --algo and --config do not apply",
            ));
        }
        let report: ClassificationReport = match a.task {
            Task::Classifier => score_classifier(&ClassifierModel::load(path)?, &data)?,
            _ => score_tagger(&NerModel::load(path)?, &data)?,
        };
        return if json {
            print_json(&report)
        } else {
            print!("{}", report.to_table());
            Ok(())
        };
    }
    let algo = resolve_algo(a.task, a.algo)?;
    let report = cross_validation(&a, algo, &data)?;
    let metric = if a.task == Task::Ner { "span F1" } else { "F1" };
    if json {
        print_json(
            &json!({ "task": format!("{:?}", a.task).to_lowercase(), "algo": format!("{algo:?}").to_lowercase(), "report": report }),
        )
    } else {
        print!("{}", report.to_table());
        println!(
            "mean weighted {metric}: {:.4} (std {:.4})",
            report.mean_f1, report.std_f1
        );
        Ok(())
    }
}

fn kb(a: KbArgs, json: bool) -> Result<()> {
    existing_file(&a.conso, "conso file")?;
    existing_file(&a.rel, "rel file")?;
    existing_file(&a.sat, "sat file")?;
    let store = parse_rrf(&a.conso, &a.rel, &a.sat)?;
    let index = KnowledgeIndex::build(&store)?;
    index.export_json(&a.out)?;
    let counts = json!({
        "concepts": index.num_concepts(),
        "relations": index.num_relations(),
        "attributes": index.num_attributes(),
        "out": a.out,
    });
    if json {
        print_json(&counts)
    } else {
        println!(
            "{} concepts, {} relations, {} attributes written to {}",
            index.num_concepts(),
            index.num_relations(),
            index.num_attributes(),
            a.out.display()
        );
        Ok(())
    }
}

fn ask(a: AskArgs, json: bool) -> Result<()> {
    existing_dir(&a.models, "models directory")?;
    existing_dir(&a.kb, "knowledge base directory")?;
    let classifier_path: PathBuf = a.models.join("classifier.json");
    let ner_path = a.models.join("ner.json");
    existing_file(&classifier_path, "classifier model")?;
    existing_file(&ner_path, "NER model")?;
    let templates = match &a.templates {
        Some(p) => {
            existing_file(p, "templates")?;
            TemplateSet::load(p)?
        }
        None => TemplateSet::default(),
    };
    let config = PipelineConfig {
        confidence_floor: a
            .confidence_floor
            .unwrap_or(PipelineConfig::default().confidence_floor),
        ..PipelineConfig::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let pipeline = Pipeline::new(
        ClassifierModel::load(&classifier_path)?,
        NerModel::load(&ner_path)?,
        KnowledgeIndex::import_json(&a.kb)?,
        templates,
        config,
    )?;
    let question = a.question.join(" ");
    let turn = pipeline.handle_turn(&question);
    if json {
        let state = AppState::new(pipeline)?;
        return print_json(&ChatResponse::from_turn(&turn, state.trace_id(&question)));
    }
    println!("{}", turn.answer);
    if a.explain {
        println!();
        println!("type        {} ({:.3})", turn.qtype, turn.confidence);
        for e in &turn.entities {
            let link = e
                .concept_name
                .as_deref()
                .map_or("unlinked".to_string(), |n| {
                    format!("{n} [{}]", e.cui.as_deref().unwrap_or(""))
                });
            println!(
                "entity      {} {:?} -> {link}",
                e.span.etype, e.span.surface
            );
        }
        for f in &turn.facts {
            println!(
                "fact        {} {} ({})",
                f.subject_name,
                f.predicate_text(),
                f.source
            );
        }
        for ev in &turn.trace.events {
            println!("trace       {:?}: {}", ev.stage, ev.message);
        }
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    existing_file(&a.config, "service config")?;
    let mut config = ServiceConfig::load(&a.config).map_err(|e| usage(e.to_string()))?;
    if let Some(bind) = a.bind {
        config.bind = bind;
        config
            .validate_settings()
            .map_err(|e| usage(e.to_string()))?;
    }
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(dsqa_service::serve(config))?;
    Ok(())
}
