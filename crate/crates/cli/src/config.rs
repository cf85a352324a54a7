//! Run configuration: defaults, then a config file, then command-line flags.
//!
//! Config files are either a JSON object or flat `key = value` lines (`#`
//! starts a comment). Both use the same flat key names as [`RunConfig`].

use std::path::{Path, PathBuf};

use avkm_core::avkmeans::AvkmConfig;
use avkm_core::corpus::ViewKind;
use avkm_core::encoders::Architecture;
use avkm_core::error::{Error, Result};
use avkm_core::pretrain::{Method, PretrainConfig};
use avkm_core::protonet::EpisodeConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Avkmeans,
    /// Single-view k-means on one view's encodings.
    Kmeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub assignment: Option<PathBuf>,
    pub out: Option<PathBuf>,

    pub method: Method,
    pub arch: Architecture,
    pub hidden: usize,
    /// Word-vector width when no embeddings file is given.
    pub embedding_dim: usize,
    pub tune_embeddings: bool,
    pub algorithm: Algorithm,
    /// View clustered by `algorithm = kmeans`.
    pub view: ViewKind,

    #[serde(rename = "K")]
    pub k: Option<usize>,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub seed: u64,
    pub n_episodes: usize,
    pub n_classes: usize,
    pub n_support: usize,
    pub n_query: usize,
    pub lr: f64,

    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub dev_fraction: f64,

    pub pairs: Option<PathBuf>,
    pub questions: Option<PathBuf>,
    pub top_k: usize,
    pub require_answer: bool,

    pub n: usize,
    pub query_noise: f64,
    pub content_noise: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let avkm = AvkmConfig::new(0);
        let ep = EpisodeConfig::default();
        let pre = PretrainConfig::default();
        let synth = avkm_core::dataprep::SyntheticSpec::default();
        RunConfig {
            corpus: None,
            embeddings: None,
            checkpoint: None,
            assignment: None,
            out: None,
            method: Method::None,
            arch: Architecture::Averaging,
            hidden: 300,
            embedding_dim: 300,
            tune_embeddings: true,
            algorithm: Algorithm::Avkmeans,
            view: ViewKind::Query,
            k: None,
            t: avkm.t,
            m: avkm.m,
            seed: 0,
            n_episodes: ep.n_episodes,
            n_classes: ep.n_classes,
            n_support: ep.n_support,
            n_query: ep.n_query,
            lr: ep.learning_rate,
            epochs: pre.epochs,
            patience: pre.patience,
            batch_size: pre.batch_size,
            dev_fraction: pre.dev_fraction,
            pairs: None,
            questions: None,
            top_k: 20,
            require_answer: true,
            n: synth.n,
            query_noise: synth.query_noise,
            content_noise: synth.content_noise,
        }
    }
}

/// Seeds handed to each consumer, all derived from `RunConfig::seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Seeds {
    pub embeddings: u64,
    pub query_encoder: u64,
    pub content_encoder: u64,
    pub clustering: u64,
    pub pretraining: u64,
}

impl RunConfig {
    pub fn seeds(&self) -> Seeds {
        let s = self.seed;
        Seeds {
            embeddings: s,
            query_encoder: s.wrapping_mul(2).wrapping_add(1),
            content_encoder: s.wrapping_mul(2).wrapping_add(2),
            clustering: s,
            pretraining: s,
        }
    }

    pub fn episodes(&self) -> EpisodeConfig {
        EpisodeConfig {
            n_episodes: self.n_episodes,
            n_classes: self.n_classes,
            n_support: self.n_support,
            n_query: self.n_query,
            learning_rate: self.lr,
        }
    }

    pub fn avkm(&self, k: usize) -> AvkmConfig {
        AvkmConfig {
            t: self.t,
            m: self.m,
            k,
            episodes: self.episodes(),
            seed: self.seeds().clustering,
        }
    }

    pub fn pretraining(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            dev_fraction: self.dev_fraction,
            seed: self.seeds().pretraining,
        }
    }

    /// Defaults overlaid with the config file (if any), then `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: Map<String, Value>) -> Result<Self> {
        let mut merged = match file {
            Some(path) => read_config_file(path)?,
            None => Map::new(),
        };
        merged.extend(overrides);
        serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Usage(format!("configuration: {e}")))
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Error::Usage(format!("missing --{} (or `{key}` in the config file)", key.replace('_', "-"))))
    }
}

fn read_config_file(path: &Path) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        return match serde_json::from_str(&text) {
            Ok(Value::Object(map)) => Ok(map),
            Ok(_) => Err(Error::Usage(format!("{}: expected a JSON object", path.display()))),
            Err(e) => Err(Error::Usage(format!("{}: {e}", path.display()))),
        };
    }
    parse_key_values(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
}

/// Parses `key = value` lines. Values that read as JSON numbers or booleans
/// keep that type; anything else is a string.
pub fn parse_key_values(text: &str) -> std::result::Result<Map<String, Value>, String> {
    let mut map = Map::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        map.insert(key.to_string(), scalar(value.trim()));
    }
    Ok(map)
}

/// Interprets a command-line or config-file value.
pub fn scalar(value: &str) -> Value {
    match serde_json::from_str::<Value>(value) {
        Ok(v @ (Value::Number(_) | Value::Bool(_))) => v,
        _ => Value::String(value.to_string()),
    }
}
