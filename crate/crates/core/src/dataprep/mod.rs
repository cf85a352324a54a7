//! Dataset construction: question clusters from a duplicate-question graph,
//! and a planted-cluster generator for two-view corpora.

mod askubuntu;
mod synthetic;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::corpus::CorpusRecord;
use crate::error::{Error, Result};

pub use askubuntu::{
    build_question_clusters, compare_ids, load_pairs, load_questions, read_pairs, read_questions,
    ClusterSelection, DuplicateGraph, PrepStats, Question, UnionFind,
};
pub use synthetic::{generate_synthetic, synthetic_embeddings, write_embeddings, SyntheticSpec};

/// Writes records in the corpus JSONL schema.
pub fn write_records(path: impl AsRef<Path>, records: &[CorpusRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
