mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use avkm_core::error::Error;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::{scalar, RunConfig};

#[derive(Parser)]
#[command(name = "avkm", version, about = "Alternating-view k-means for two-view corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain an utterance encoder and write its best held-out checkpoint.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: Model,
    },
    /// Cluster a corpus and write assignments, checkpoints and a manifest.
    Cluster {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: Model,
        #[arg(long = "K")]
        k: Option<usize>,
        #[arg(long = "T")]
        t: Option<usize>,
        #[arg(long = "M")]
        m: Option<usize>,
        /// Pretrained encoder checkpoint used to initialize both view encoders.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// avkmeans or kmeans (single view).
        #[arg(long)]
        algorithm: Option<String>,
        /// View clustered by the single-view algorithm: query or content.
        #[arg(long)]
        view: Option<String>,
    },
    /// Score an assignment CSV against the gold labels of a corpus.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        assignment: Option<PathBuf>,
    },
    /// Build a question-cluster corpus from duplicate pairs.
    PrepAskubuntu {
        #[command(flatten)]
        common: Common,
        /// CSV of duplicate question id pairs.
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// JSONL of questions with titles and answers.
        #[arg(long)]
        questions: Option<PathBuf>,
        #[arg(long)]
        top_k: Option<usize>,
        /// Keep questions without an answer.
        #[arg(long)]
        keep_unanswered: bool,
    },
    /// Write a planted-cluster corpus and matching word vectors.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long = "K")]
        k: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        embedding_dim: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON or key=value configuration file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (evaluate: metrics JSON file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra configuration entries, e.g. `--set n_episodes=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct Model {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Word vectors in `word v1 ... vD` text format.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Pretraining method: none, autoencoder or quickthoughts.
    #[arg(long)]
    method: Option<String>,
    /// Encoder architecture: averaging, sequence or hierarchical.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    hidden: Option<usize>,
}

#[derive(Default)]
struct Overrides(Map<String, Value>);

impl Overrides {
    fn put<T: Serialize>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.0.insert(key.to_string(), serde_json::to_value(v).expect("flag values serialize"));
        }
    }

    fn common(&mut self, c: &Common) -> Result<(), Error> {
        for entry in &c.set {
            let (k, v) = entry
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {entry:?}")))?;
            self.0.insert(k.trim().to_string(), scalar(v.trim()));
        }
        self.put("seed", c.seed);
        self.put("out", c.out.as_ref());
        Ok(())
    }

    fn model(&mut self, m: &Model) {
        self.put("corpus", m.corpus.as_ref());
        self.put("embeddings", m.embeddings.as_ref());
        self.put("method", m.method.as_ref());
        self.put("arch", m.arch.as_ref());
        self.put("hidden", m.hidden);
    }
}

fn resolve(common: &Common, extra: impl FnOnce(&mut Overrides)) -> Result<RunConfig, Error> {
    let mut o = Overrides::default();
    o.common(common)?;
    extra(&mut o);
    RunConfig::resolve(common.config.as_deref(), o.0)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Pretrain { common, model } => {
            let cfg = resolve(&common, |o| o.model(&model))?;
            commands::pretrain(&cfg)
        }
        Command::Cluster {
            common,
            model,
            k,
            t,
            m,
            checkpoint,
            algorithm,
            view,
        } => {
            let cfg = resolve(&common, |o| {
                o.model(&model);
                o.put("K", k);
                o.put("T", t);
                o.put("M", m);
                o.put("checkpoint", checkpoint);
                o.put("algorithm", algorithm);
                o.put("view", view);
            })?;
            commands::cluster(&cfg)
        }
        Command::Evaluate {
            common,
            corpus,
            assignment,
        } => {
            let cfg = resolve(&common, |o| {
                o.put("corpus", corpus);
                o.put("assignment", assignment);
            })?;
            commands::evaluate(&cfg)
        }
        Command::PrepAskubuntu {
            common,
            pairs,
            questions,
            top_k,
            keep_unanswered,
        } => {
            let cfg = resolve(&common, |o| {
                o.put("pairs", pairs);
                o.put("questions", questions);
                o.put("top_k", top_k);
                o.put("require_answer", keep_unanswered.then_some(false));
            })?;
            commands::prep_askubuntu(&cfg)
        }
        Command::Synth {
            common,
            k,
            n,
            embedding_dim,
        } => {
            let cfg = resolve(&common, |o| {
                o.put("K", k);
                o.put("n", n);
                o.put("embedding_dim", embedding_dim);
            })?;
            commands::synth(&cfg)
        }
    }
}

/// 1 for usage errors, 3 for numeric or degenerate-clustering failures, 2 for
/// every other data problem.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::InvalidArgument(_) => 1,
        Error::Numeric(_) | Error::DegenerateClustering(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
