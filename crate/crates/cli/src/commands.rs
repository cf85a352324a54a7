use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use avkm_core::avkmeans::{run, TwoViews};
use avkm_core::corpus::{load_corpus, load_embeddings, Corpus, EmbeddingTable, LoadSummary, ViewKind};
use avkm_core::dataprep::{
    build_question_clusters, load_pairs, load_questions, synthetic_embeddings, write_embeddings, write_records,
    DuplicateGraph, SyntheticSpec,
};
use avkm_core::encoders::{Encoder, EncoderConfig};
use avkm_core::error::{Error, Result};
use avkm_core::evaluation::{evaluate as score, MetricsReport};
use avkm_core::kmeans::{kmeans, read_assignment_csv, write_assignment_csv, KMeansOptions};
use avkm_core::pretrain::{check_vocabulary, pretrain_autoencoder, pretrain_quickthoughts, Method};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Algorithm, RunConfig};

const TOP_CONFUSIONS: usize = 10;

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.require(&cfg.out, "out")?.to_path_buf();
    fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let io = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

struct Inputs {
    corpus: Corpus,
    summary: LoadSummary,
    table: Arc<EmbeddingTable>,
    /// Vocabulary words found in the embeddings file.
    found: Option<usize>,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let path = cfg.require(&cfg.corpus, "corpus")?;
    let (corpus, summary) = load_corpus(path)?;
    log::info!(
        "loaded {} instances ({} words, {} rejected, {} without content)",
        corpus.len(),
        corpus.vocabulary.len(),
        summary.rejected_empty_query,
        summary.degenerate_content
    );
    let seed = cfg.seeds().embeddings;
    let (table, found) = match &cfg.embeddings {
        Some(p) => {
            let loaded = load_embeddings(p, &corpus.vocabulary, seed)?;
            log::info!(
                "{} of {} vocabulary words have pretrained vectors",
                loaded.found,
                corpus.vocabulary.len().saturating_sub(1)
            );
            (loaded.table, Some(loaded.found))
        }
        None => (EmbeddingTable::random(corpus.vocabulary.len(), cfg.embedding_dim, seed)?, None),
    };
    Ok(Inputs {
        corpus,
        summary,
        table: table.into_shared(),
        found,
    })
}

fn encoder_config(cfg: &RunConfig, arch: avkm_core::encoders::Architecture, seed: u64) -> EncoderConfig {
    EncoderConfig::new(arch, cfg.hidden)
        .with_tuned_embeddings(cfg.tune_embeddings)
        .with_seed(seed)
}

fn manifest_base(cfg: &RunConfig, command: &str, inputs: &Inputs) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("tool".into(), json!("avkm"));
    m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    m.insert("command".into(), json!(command));
    m.insert("config".into(), json!(cfg));
    m.insert("seeds".into(), json!(cfg.seeds()));
    m.insert(
        "corpus".into(),
        json!({
            "instances": inputs.corpus.len(),
            "vocabulary": inputs.corpus.vocabulary.len(),
            "K_gold": inputs.corpus.gold_cluster_count(),
            "load": inputs.summary,
        }),
    );
    m.insert(
        "embeddings".into(),
        json!({ "dimension": inputs.table.dimension(), "found": inputs.found }),
    );
    m
}

pub fn pretrain(cfg: &RunConfig) -> Result<()> {
    if cfg.method == Method::None {
        return Err(Error::Usage("nothing to pretrain: method is none".into()));
    }
    let dir = out_dir(cfg)?;
    let inputs = load_inputs(cfg)?;
    let arch = cfg.arch.utterance_family();
    let encoder = Encoder::new(encoder_config(cfg, arch, cfg.seeds().query_encoder), inputs.table.clone())?;
    let pcfg = cfg.pretraining();
    let (encoder, log, best_epoch, best_dev, initial_dev) = match cfg.method {
        Method::Autoencoder => {
            let o = pretrain_autoencoder(&inputs.corpus, encoder, &pcfg)?;
            let best = o.best_dev_loss();
            (o.model.into_encoder(), o.log, o.best_epoch, best, o.initial_dev_loss)
        }
        Method::Quickthoughts => {
            let o = pretrain_quickthoughts(&inputs.corpus, encoder, &pcfg)?;
            let best = o.best_dev_loss();
            (o.model.into_encoder(), o.log, o.best_epoch, best, o.initial_dev_loss)
        }
        Method::None => unreachable!(),
    };
    let ckpt = dir.join("pretrained_encoder.json");
    encoder.save(&ckpt)?;
    write_jsonl(&dir.join("pretrain_log.jsonl"), &log)?;
    let mut manifest = manifest_base(cfg, "pretrain", &inputs);
    manifest.insert(
        "result".into(),
        json!({
            "architecture": arch,
            "epochs_run": log.len(),
            "best_epoch": best_epoch,
            "best_dev_loss": best_dev,
            "initial_dev_loss": initial_dev,
            "checkpoint": "pretrained_encoder.json",
        }),
    );
    write_json(&dir.join("pretrain_manifest.json"), &manifest)?;
    println!(
        "{}: best dev loss {best_dev:.6} at epoch {best_epoch} of {}; checkpoint {}",
        cfg.method,
        log.len(),
        ckpt.display()
    );
    Ok(())
}

/// Query and content encoders, initialized from the pretrained checkpoint
/// when one is configured. A checkpoint carries the word vectors it was
/// trained with, and those replace the loaded table.
fn build_encoders(cfg: &RunConfig, inputs: &Inputs, arch: avkm_core::encoders::Architecture) -> Result<(Encoder, Encoder)> {
    if cfg.method != Method::None && cfg.checkpoint.is_none() {
        return Err(Error::Usage(format!(
            "method {} needs --checkpoint with the pretrained encoder",
            cfg.method
        )));
    }
    let seeds = cfg.seeds();
    let Some(path) = &cfg.checkpoint else {
        let q = Encoder::new(encoder_config(cfg, arch, seeds.query_encoder), inputs.table.clone())?;
        let c = Encoder::new(encoder_config(cfg, arch, seeds.content_encoder), inputs.table.clone())?;
        return Ok((q, c));
    };
    let pretrained = Encoder::load(path)?;
    check_vocabulary(&pretrained, &inputs.corpus)?;
    if cfg.embeddings.is_some() {
        log::warn!("using the word vectors stored in {} instead of --embeddings", path.display());
    }
    let table = pretrained.embeddings().clone();
    let mut q = Encoder::new(encoder_config(cfg, arch, seeds.query_encoder), table.clone())?;
    let mut c = Encoder::new(encoder_config(cfg, arch, seeds.content_encoder), table)?;
    let copied = q.initialize_from(&pretrained)?;
    c.initialize_from(&pretrained)?;
    log::info!("initialized {copied} tensors per encoder from {}", path.display());
    Ok((q, c))
}

fn resolve_k(cfg: &RunConfig, corpus: &Corpus) -> Result<usize> {
    cfg.k
        .or_else(|| corpus.gold_cluster_count())
        .ok_or_else(|| Error::Usage("--K is required for corpora without gold labels".into()))
}

fn report_metrics(corpus: &Corpus, assignment: &[usize], path: &Path) -> Result<Option<MetricsReport>> {
    if corpus.gold_cluster_count().is_none() {
        return Ok(None);
    }
    let gold: Vec<Option<usize>> = corpus.instances.iter().map(|i| i.gold_label).collect();
    let report = MetricsReport::new(&score(&gold, assignment)?, &corpus.label_names, TOP_CONFUSIONS);
    report.write_json(path)?;
    Ok(Some(report))
}

pub fn cluster(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let inputs = load_inputs(cfg)?;
    let k = resolve_k(cfg, &inputs.corpus)?;
    let avkm = cfg.avkm(k);
    avkm.validate()?;
    let ids = inputs.corpus.ids();
    let views = TwoViews::from_corpus(&inputs.corpus);
    let mut manifest = manifest_base(cfg, "cluster", &inputs);
    let mut outputs = vec!["assignment.csv"];

    let assignment = match cfg.algorithm {
        Algorithm::Avkmeans => {
            let (q, c) = build_encoders(cfg, &inputs, cfg.arch)?;
            let state = run(&views, q, c, &avkm)?;
            write_assignment_csv(dir.join("content_assignment.csv"), &ids, &state.z2)?;
            write_jsonl(&dir.join("losses.jsonl"), &state.loss_log)?;
            write_jsonl(&dir.join("diagnostics.jsonl"), &state.diagnostics)?;
            state.query_encoder.save(dir.join("query_encoder.json"))?;
            state.content_encoder.save(dir.join("content_encoder.json"))?;
            outputs.extend([
                "content_assignment.csv",
                "losses.jsonl",
                "diagnostics.jsonl",
                "query_encoder.json",
                "content_encoder.json",
            ]);
            manifest.insert(
                "result".into(),
                json!({
                    "K": k,
                    "semi_iterations": state.semi_iterations,
                    "final": state.diagnostics.last(),
                }),
            );
            state.z1
        }
        Algorithm::Kmeans => {
            let arch = cfg.arch.utterance_family();
            let (q, _) = build_encoders(cfg, &inputs, arch)?;
            let x = match cfg.view {
                ViewKind::Query => q.encode(&views.query)?,
                ViewKind::Content => q.encode_utterance_average(&views.content)?,
            };
            let state = kmeans(
                &x,
                k,
                &KMeansOptions {
                    max_steps: None,
                    init: None,
                    seed: avkm.kmeans_seed(0),
                },
            )?;
            manifest.insert(
                "result".into(),
                json!({
                    "K": k,
                    "objective": state.objective,
                    "iterations": state.iterations,
                    "converged": state.converged,
                }),
            );
            state.assignment
        }
    };
    write_assignment_csv(dir.join("assignment.csv"), &ids, &assignment)?;
    if let Some(report) = report_metrics(&inputs.corpus, &assignment, &dir.join("metrics.json"))? {
        outputs.push("metrics.json");
        println!(
            "ACC {:.4}  F1 {:.4}  P {:.4}  R {:.4}  over {} labeled instances",
            report.acc, report.f1, report.precision, report.recall, report.n_labeled
        );
    }
    manifest.insert("outputs".into(), json!(outputs));
    write_json(&dir.join("manifest.json"), &manifest)?;
    println!("wrote {} assignments to {}", assignment.len(), dir.join("assignment.csv").display());
    Ok(())
}

/// Predictions aligned with the corpus, for the instances the assignment
/// covers. Unknown or repeated ids, and labeled instances missing from the
/// assignment, are errors.
pub fn align_assignment(corpus: &Corpus, rows: &[(String, usize)]) -> Result<(Vec<Option<usize>>, Vec<usize>)> {
    let known: HashSet<&str> = corpus.ids().into_iter().collect();
    let mut by_id: HashMap<&str, usize> = HashMap::with_capacity(rows.len());
    let mut unknown = Vec::new();
    for (i, (id, z)) in rows.iter().enumerate() {
        if !known.contains(id.as_str()) {
            unknown.push(id.clone());
        } else if by_id.insert(id.as_str(), *z).is_some() {
            return Err(Error::Parse {
                line: i + 2,
                message: format!("instance {id} is assigned twice"),
            });
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownInstances(unknown));
    }
    let missing: Vec<String> = corpus
        .instances
        .iter()
        .filter(|i| i.gold_label.is_some() && !by_id.contains_key(i.id.as_str()))
        .map(|i| i.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingInstances(missing));
    }
    Ok(corpus
        .instances
        .iter()
        .filter_map(|i| by_id.get(i.id.as_str()).map(|&z| (i.gold_label, z)))
        .unzip())
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let (corpus, _) = load_corpus(cfg.require(&cfg.corpus, "corpus")?)?;
    if corpus.gold_cluster_count().is_none() {
        return Err(Error::InvalidArgument("the corpus has no gold labels".into()));
    }
    let rows = read_assignment_csv(cfg.require(&cfg.assignment, "assignment")?)?;
    let (gold, pred) = align_assignment(&corpus, &rows)?;
    let report = MetricsReport::new(&score(&gold, &pred)?, &corpus.label_names, TOP_CONFUSIONS);
    match &cfg.out {
        Some(path) => report.write_json(path)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    eprintln!(
        "ACC {:.4}  F1 {:.4}  P {:.4}  R {:.4}  over {} labeled instances",
        report.acc, report.f1, report.precision, report.recall, report.n_labeled
    );
    Ok(())
}

pub fn prep_askubuntu(cfg: &RunConfig) -> Result<()> {
    let pairs = load_pairs(cfg.require(&cfg.pairs, "pairs")?)?;
    let questions = load_questions(cfg.require(&cfg.questions, "questions")?)?;
    let dir = out_dir(cfg)?;
    let (graph, self_loops) = DuplicateGraph::from_parts(&questions, &pairs);
    if self_loops > 0 {
        log::warn!("skipped {self_loops} self-paired questions");
    }
    let selection = build_question_clusters(&graph, &questions, cfg.top_k, cfg.require_answer)?;
    write_records(dir.join("corpus.jsonl"), &selection.records)?;
    write_json(&dir.join("prep_stats.json"), &selection.stats)?;
    let s = &selection.stats;
    println!(
        "{} components from {} pairs over {} questions; top {} sizes {:?}; kept {} questions",
        s.components, s.pairs, s.questions, cfg.top_k, s.selected_sizes, s.kept_questions
    );
    Ok(())
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let spec = SyntheticSpec {
        n: cfg.n,
        k: cfg.k.unwrap_or(SyntheticSpec::default().k),
        query_noise: cfg.query_noise,
        content_noise: cfg.content_noise,
        seed: cfg.seed,
        ..SyntheticSpec::default()
    };
    let records = spec.records()?;
    write_records(dir.join("corpus.jsonl"), &records)?;
    let (corpus, _) = load_corpus(dir.join("corpus.jsonl"))?;
    let table = synthetic_embeddings(&corpus.vocabulary, cfg.embedding_dim, cfg.seed)?;
    write_embeddings(dir.join("embeddings.txt"), &corpus.vocabulary, &table)?;
    write_json(&dir.join("synth_spec.json"), &spec)?;
    println!(
        "wrote {} instances in {} clusters ({} words) to {}",
        corpus.len(),
        spec.k,
        corpus.vocabulary.len(),
        dir.display()
    );
    Ok(())
}
