//! Planted-cluster two-view corpora.
//!
//! Each cluster owns a query vocabulary and a content vocabulary; a shared
//! noise vocabulary is common to all clusters. Every token of an instance is
//! drawn from its cluster's vocabulary for that view, or from the noise
//! vocabulary with the view's noise rate.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusBuilder, CorpusRecord, EmbeddingTable, Vocabulary};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n: usize,
    pub k: usize,
    /// Words per cluster in the query view.
    pub query_vocab: usize,
    /// Words per cluster in the content view.
    pub content_vocab: usize,
    pub noise_vocab: usize,
    pub query_noise: f64,
    pub content_noise: f64,
    /// Inclusive token-count range of the query utterance.
    pub query_len: (usize, usize),
    /// Inclusive range of content utterances per instance.
    pub content_turns: (usize, usize),
    pub content_len: (usize, usize),
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 1000,
            k: 10,
            query_vocab: 20,
            content_vocab: 20,
            noise_vocab: 100,
            query_noise: 0.5,
            content_noise: 0.1,
            query_len: (4, 8),
            content_turns: (1, 3),
            content_len: (6, 12),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [("query_noise", self.query_noise), ("content_noise", self.content_noise)] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {rate}")));
            }
        }
        if self.n == 0 || self.k == 0 {
            return Err(Error::invalid("synthetic corpus needs n >= 1 and K >= 1"));
        }
        if self.query_vocab == 0 || self.content_vocab == 0 || self.noise_vocab == 0 {
            return Err(Error::invalid("vocabulary sizes must be positive"));
        }
        for (name, (lo, hi)) in [
            ("query_len", self.query_len),
            ("content_len", self.content_len),
        ] {
            if lo == 0 || lo > hi {
                return Err(Error::invalid(format!("{name} range ({lo}, {hi}) is invalid")));
            }
        }
        let (lo, hi) = self.content_turns;
        if lo > hi {
            return Err(Error::invalid(format!("content_turns range ({lo}, {hi}) is invalid")));
        }
        Ok(())
    }

    fn query_word(c: usize, j: usize) -> String {
        format!("q{c}w{j}")
    }

    fn content_word(c: usize, j: usize) -> String {
        format!("a{c}w{j}")
    }

    fn noise_word(j: usize) -> String {
        format!("n{j}")
    }

    /// Raw records in generation order, labels `c0 .. c{K-1}`.
    pub fn records(&self) -> Result<Vec<CorpusRecord>> {
        self.validate()?;
        let mut r = rng::seeded(self.seed);
        let mut out = Vec::with_capacity(self.n);
        let width = (self.n - 1).to_string().len();
        for i in 0..self.n {
            let c = r.gen_range(0..self.k);
            let mut utterance = |len: (usize, usize), vocab: usize, noise: f64, word: fn(usize, usize) -> String| {
                let len = r.gen_range(len.0..=len.1);
                let words: Vec<String> = (0..len)
                    .map(|_| {
                        if r.gen_bool(noise) {
                            Self::noise_word(r.gen_range(0..self.noise_vocab))
                        } else {
                            word(c, r.gen_range(0..vocab))
                        }
                    })
                    .collect();
                words.join(" ")
            };
            let view1 = utterance(self.query_len, self.query_vocab, self.query_noise, Self::query_word);
            let turns = r.gen_range(self.content_turns.0..=self.content_turns.1);
            let view2 = (0..turns)
                .map(|_| {
                    let len = r.gen_range(self.content_len.0..=self.content_len.1);
                    (0..len)
                        .map(|_| {
                            if r.gen_bool(self.content_noise) {
                                Self::noise_word(r.gen_range(0..self.noise_vocab))
                            } else {
                                Self::content_word(c, r.gen_range(0..self.content_vocab))
                            }
                        })
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();
            out.push(CorpusRecord {
                id: format!("syn{i:0width$}"),
                view1,
                view2,
                label: Some(format!("c{c}")),
            });
        }
        Ok(out)
    }
}

/// Builds the planted-cluster corpus; deterministic under `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus> {
    let mut builder = CorpusBuilder::new();
    for record in spec.records()? {
        builder.push(record);
    }
    Ok(builder.finish()?.0)
}

/// Word vectors drawn uniformly from [-1, 1] for every vocabulary entry,
/// on the scale of common pretrained vectors.
pub fn synthetic_embeddings(vocab: &Vocabulary, dimension: usize, seed: u64) -> Result<EmbeddingTable> {
    if dimension == 0 {
        return Err(Error::invalid("embedding dimension must be positive"));
    }
    let mut r = rng::derive(seed, 1);
    let rows = vocab.len();
    let vectors = (0..rows * dimension).map(|_| r.gen_range(-1.0..1.0)).collect();
    EmbeddingTable::from_rows(dimension, vectors, vec![true; rows])
}

/// Writes `word v1 ... vD` lines for every vocabulary word except UNK.
pub fn write_embeddings(path: impl AsRef<Path>, vocab: &Vocabulary, table: &EmbeddingTable) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (id, word) in vocab.words().iter().enumerate().skip(1) {
        let mut line = word.clone();
        for v in table.row(id as u32) {
            line.push(' ');
            line.push_str(&v.to_string());
        }
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
