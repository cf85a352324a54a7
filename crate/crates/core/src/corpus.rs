//! Two-view corpora, tokenization, vocabularies and word-embedding tables.
//!
//! A corpus file is JSONL, one instance per line:
//!
//! ```text
//! {"id": "d1", "view1": "my bag never arrived", "view2": ["sorry to hear", "dm us"], "label": "Baggage"}
//! ```
//!
//! `view1` is the query utterance, `view2` the remaining turns, `label` an
//! optional gold intent.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const UNK_TOKEN: &str = "<unk>";
pub const UNK_ID: u32 = 0;

/// Lowercases, splits on whitespace and strips leading/trailing punctuation.
/// Tokens that are pure punctuation disappear.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let trimmed = raw.trim_matches(is_punctuation);
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_lowercase())
            }
        })
        .collect()
}

pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(" ")
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{2026}' | '\u{2013}' | '\u{2014}'
        )
}

/// Token to id map. Id 0 is reserved for [`UNK_TOKEN`]; other ids follow
/// first-insertion order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut index = HashMap::new();
        index.insert(UNK_TOKEN.to_string(), UNK_ID);
        Vocabulary {
            words: vec![UNK_TOKEN.to_string()],
            index,
        }
    }

    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary::new();
        for w in words {
            vocab.insert(w.into());
        }
        vocab
    }

    pub fn insert(&mut self, word: String) -> u32 {
        if let Some(&id) = self.index.get(&word) {
            return id;
        }
        let id = self.words.len() as u32;
        self.index.insert(word.clone(), id);
        self.words.push(word);
        id
    }

    /// Id of `word`, or [`UNK_ID`] when out of vocabulary.
    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Number of entries, including UNK.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    /// True when only UNK is present.
    pub fn is_empty(&self) -> bool {
        self.words.len() == 1
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.word(i).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }
}

/// A tokenized, non-empty utterance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Utterance {
    tokens: Vec<u32>,
}

impl Utterance {
    pub fn new(tokens: Vec<u32>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::invalid("utterance has no tokens"));
        }
        Ok(Utterance { tokens })
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoViewInstance {
    pub id: String,
    /// Stored as a one-element slice so both views share the `&[Utterance]`
    /// shape expected by the encoders.
    query: [Utterance; 1],
    pub content_view: Vec<Utterance>,
    pub gold_label: Option<usize>,
}

impl TwoViewInstance {
    pub fn new(
        id: impl Into<String>,
        query: Utterance,
        content_view: Vec<Utterance>,
        gold_label: Option<usize>,
    ) -> Self {
        TwoViewInstance {
            id: id.into(),
            query: [query],
            content_view,
            gold_label,
        }
    }

    pub fn query(&self) -> &Utterance {
        &self.query[0]
    }

    pub fn query_view(&self) -> &[Utterance] {
        &self.query
    }

    pub fn content_view(&self) -> &[Utterance] {
        &self.content_view
    }

    /// Instances without content turns encode their content view as zero.
    pub fn is_degenerate(&self) -> bool {
        self.content_view.is_empty()
    }

    /// Query utterance followed by the content utterances, in dialog order.
    pub fn dialog(&self) -> impl Iterator<Item = &Utterance> {
        self.query.iter().chain(self.content_view.iter())
    }
}

/// Selects one of the two views of an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    Query,
    Content,
}

impl ViewKind {
    pub fn other(self) -> Self {
        match self {
            ViewKind::Query => ViewKind::Content,
            ViewKind::Content => ViewKind::Query,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub instances: Vec<TwoViewInstance>,
    pub vocabulary: Vocabulary,
    /// Gold label names indexed by label id.
    pub label_names: Vec<String>,
}

/// Non-fatal events from [`load_corpus`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadSummary {
    pub loaded: usize,
    pub rejected_empty_query: usize,
    pub degenerate_content: usize,
    pub dropped_empty_content_turns: usize,
}

impl Corpus {
    pub fn new(
        instances: Vec<TwoViewInstance>,
        vocabulary: Vocabulary,
        label_names: Vec<String>,
    ) -> Result<Self> {
        let corpus = Corpus {
            instances,
            vocabulary,
            label_names,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let mut dups = Vec::new();
        for inst in &self.instances {
            if !seen.insert(inst.id.as_str()) && !dups.contains(&inst.id) {
                dups.push(inst.id.clone());
            }
        }
        if !dups.is_empty() {
            return Err(Error::DuplicateIds(dups));
        }
        let vocab = self.vocabulary.len() as u32;
        for inst in &self.instances {
            if inst.dialog().flat_map(|u| u.tokens()).any(|&t| t >= vocab) {
                return Err(Error::invalid(format!(
                    "instance {} has a token id outside the vocabulary",
                    inst.id
                )));
            }
            if let Some(label) = inst.gold_label {
                if label >= self.label_names.len() {
                    return Err(Error::invalid(format!(
                        "instance {} has label {label} but only {} labels are named",
                        inst.id,
                        self.label_names.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Number of distinct gold labels, when any instance is labeled.
    pub fn gold_cluster_count(&self) -> Option<usize> {
        let labels: HashSet<usize> = self.instances.iter().filter_map(|i| i.gold_label).collect();
        if labels.is_empty() {
            None
        } else {
            Some(labels.len())
        }
    }

    pub fn views(&self, kind: ViewKind) -> Vec<&[Utterance]> {
        self.instances
            .iter()
            .map(|i| match kind {
                ViewKind::Query => i.query_view(),
                ViewKind::Content => i.content_view(),
            })
            .collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.instances.iter().map(|i| i.id.as_str()).collect()
    }

    /// Writes the corpus back out in the JSONL schema. Utterances are
    /// detokenized, so text differs from the original only by normalization.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for inst in &self.instances {
            let record = CorpusRecord {
                id: inst.id.clone(),
                view1: detokenize(&self.vocabulary.decode(inst.query().tokens())),
                view2: inst
                    .content_view
                    .iter()
                    .map(|u| detokenize(&self.vocabulary.decode(u.tokens())))
                    .collect(),
                label: inst.gold_label.map(|l| self.label_names[l].clone()),
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// One line of the corpus JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub id: String,
    pub view1: String,
    pub view2: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Incrementally assembles a corpus from raw records, growing the vocabulary
/// in insertion order.
#[derive(Debug, Default)]
pub struct CorpusBuilder {
    instances: Vec<TwoViewInstance>,
    vocabulary: Vocabulary,
    labels: Vec<String>,
    label_index: HashMap<String, usize>,
    summary: LoadSummary,
}

impl CorpusBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a record. Returns `false` when the record was rejected because
    /// its query view tokenizes to nothing.
    pub fn push(&mut self, record: CorpusRecord) -> bool {
        let query_tokens = tokenize(&record.view1);
        if query_tokens.is_empty() {
            self.summary.rejected_empty_query += 1;
            return false;
        }
        let query = self.intern(query_tokens);
        let mut content = Vec::with_capacity(record.view2.len());
        for turn in &record.view2 {
            let tokens = tokenize(turn);
            if tokens.is_empty() {
                self.summary.dropped_empty_content_turns += 1;
                continue;
            }
            content.push(self.intern(tokens));
        }
        if content.is_empty() {
            self.summary.degenerate_content += 1;
        }
        let gold = record.label.map(|name| {
            let next = self.labels.len();
            *self.label_index.entry(name.clone()).or_insert_with(|| {
                self.labels.push(name);
                next
            })
        });
        self.instances
            .push(TwoViewInstance::new(record.id, query, content, gold));
        self.summary.loaded += 1;
        true
    }

    fn intern(&mut self, tokens: Vec<String>) -> Utterance {
        let ids = tokens.into_iter().map(|t| self.vocabulary.insert(t)).collect();
        Utterance { tokens: ids }
    }

    pub fn finish(self) -> Result<(Corpus, LoadSummary)> {
        let corpus = Corpus::new(self.instances, self.vocabulary, self.labels)?;
        Ok((corpus, self.summary))
    }
}

/// Loads a JSONL two-view corpus.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<(Corpus, LoadSummary)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_corpus<R: BufRead>(reader: R) -> Result<(Corpus, LoadSummary)> {
    let mut builder = CorpusBuilder::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<corpus>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        builder.push(record);
    }
    let summary = builder.summary.clone();
    if summary.rejected_empty_query > 0 {
        log::warn!(
            "rejected {} instances with an empty query view",
            summary.rejected_empty_query
        );
    }
    builder.finish()
}

/// Dense word vectors indexed by vocabulary id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    dimension: usize,
    vectors: Vec<f64>,
    trainable: Vec<bool>,
}

impl EmbeddingTable {
    /// Rows drawn from uniform(-0.1, 0.1).
    pub fn random(rows: usize, dimension: usize, seed: u64) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        let rows = rows.max(1);
        let mut rng = rng::seeded(seed);
        let vectors = (0..rows * dimension)
            .map(|_| rng.gen_range(-0.1..0.1))
            .collect();
        Ok(EmbeddingTable {
            dimension,
            vectors,
            trainable: vec![true; rows],
        })
    }

    pub fn from_rows(dimension: usize, vectors: Vec<f64>, trainable: Vec<bool>) -> Result<Self> {
        if dimension == 0 || vectors.len() != dimension * trainable.len() || trainable.is_empty() {
            return Err(Error::shape(format!(
                "{} values and {} rows do not form a dimension-{dimension} table",
                vectors.len(),
                trainable.len()
            )));
        }
        Ok(EmbeddingTable {
            dimension,
            vectors,
            trainable,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn rows(&self) -> usize {
        self.trainable.len()
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let i = id as usize;
        &self.vectors[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn is_trainable(&self, id: u32) -> bool {
        self.trainable[id as usize]
    }

    pub fn trainable_mask(&self) -> &[bool] {
        &self.trainable
    }

    pub fn set_trainable(&mut self, id: u32, trainable: bool) {
        self.trainable[id as usize] = trainable;
    }

    pub fn into_shared(self) -> Arc<Self> {
        Arc::new(self)
    }
}

/// Result of [`load_embeddings`]: the table plus how many vocabulary words
/// were found in the file.
#[derive(Debug, Clone)]
pub struct LoadedEmbeddings {
    pub table: EmbeddingTable,
    pub found: usize,
}

/// Reads GloVe-style text vectors (`word v1 ... vD` per line, no header) for
/// the words of `vocab`. The dimension is taken from the first line. Rows for
/// words missing from the file, and UNK, are drawn from uniform(-0.1, 0.1)
/// with `seed`.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<LoadedEmbeddings> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), vocab, seed).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_embeddings<R: BufRead>(
    reader: R,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<LoadedEmbeddings> {
    let mut dimension = None;
    let mut found_rows: Vec<(u32, Vec<f64>)> = Vec::new();
    let mut seen = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<embeddings>", e))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        let word = parts.next().unwrap_or_default();
        let values: Vec<&str> = parts.filter(|p| !p.is_empty()).collect();
        let dim = *dimension.get_or_insert(values.len());
        if dim == 0 {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("no vector components for {word:?}"),
            });
        }
        if values.len() != dim {
            return Err(Error::EmbeddingDimension {
                word: word.to_string(),
                expected: dim,
                found: values.len(),
            });
        }
        let Some(id) = vocab.get(word) else {
            continue;
        };
        if id == UNK_ID || !seen.insert(id) {
            continue;
        }
        let vector = values
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: idx + 1,
                message: format!("bad component for {word:?}: {e}"),
            })?;
        found_rows.push((id, vector));
    }

    let dimension =
        dimension.ok_or_else(|| Error::invalid("embedding file contains no vectors"))?;
    let mut table = EmbeddingTable::random(vocab.len(), dimension, seed)?;
    let found = found_rows.len();
    for (id, vector) in found_rows {
        let i = id as usize;
        table.vectors[i * dimension..(i + 1) * dimension].copy_from_slice(&vector);
    }
    Ok(LoadedEmbeddings { table, found })
}

/// Train/dev partition of instance indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DevSplit {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
}

/// Randomly holds out `round(fraction * n)` instances (halves round away
/// from zero) as development data.
pub fn make_dev_split(n: usize, fraction: f64, seed: u64) -> Result<DevSplit> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "a dev split needs at least 2 instances, got {n}"
        )));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "dev fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let dev_size = (fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut dev = order[..dev_size].to_vec();
    let mut train = order[dev_size..].to_vec();
    dev.sort_unstable();
    train.sort_unstable();
    Ok(DevSplit { train, dev })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus_from(text: &str) -> Result<(Corpus, LoadSummary)> {
        read_corpus(text.as_bytes())
    }

    #[test]
    fn two_valid_lines_load() {
        let (corpus, summary) = corpus_from(concat!(
            r#"{"id": "a", "view1": "Lost my bag!", "view2": ["Sorry to hear.", "DM us"]}"#,
            "\n",
            r#"{"id": "b", "view1": "flight delayed", "view2": [], "label": "Delay"}"#,
            "\n"
        ))
        .unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(summary.loaded, 2);
        assert_eq!(summary.degenerate_content, 1);
        assert!(corpus.instances[1].is_degenerate());
        assert_eq!(corpus.instances[1].gold_label, Some(0));
        assert_eq!(corpus.gold_cluster_count(), Some(1));
        let words = corpus.vocabulary.decode(corpus.instances[0].query().tokens());
        assert_eq!(words, ["lost", "my", "bag"]);
    }

    #[test]
    fn missing_view1_reports_line() {
        let err = corpus_from(concat!(
            r#"{"id": "a", "view1": "x", "view2": []}"#,
            "\n",
            r#"{"id": "b", "view2": []}"#,
            "\n"
        ))
        .unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("view1"), "{message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_are_listed() {
        let err = corpus_from(concat!(
            r#"{"id": "a", "view1": "x", "view2": []}"#,
            "\n",
            r#"{"id": "a", "view1": "y", "view2": []}"#,
        ))
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateIds(ref ids) if ids == &["a".to_string()]));
    }

    #[test]
    fn empty_query_is_rejected_and_counted() {
        let (corpus, summary) = corpus_from(concat!(
            r#"{"id": "a", "view1": " ?! ", "view2": ["hello"]}"#,
            "\n",
            r#"{"id": "b", "view1": "ok", "view2": ["", "fine"]}"#,
        ))
        .unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(summary.rejected_empty_query, 1);
        assert_eq!(summary.dropped_empty_content_turns, 1);
    }

    #[test]
    fn vocabulary_ids_are_stable_across_loads() {
        let text = concat!(
            r#"{"id": "a", "view1": "one two", "view2": ["three"]}"#,
            "\n",
            r#"{"id": "b", "view1": "two four", "view2": ["one"]}"#,
        );
        let (a, _) = corpus_from(text).unwrap();
        let (b, _) = corpus_from(text).unwrap();
        assert_eq!(a.vocabulary, b.vocabulary);
        assert_eq!(a.vocabulary.words(), ["<unk>", "one", "two", "three", "four"]);
    }

    #[test]
    fn embedding_rows_parse_and_infer_dimension() {
        let vocab = Vocabulary::from_words(["cat"]);
        let loaded = read_embeddings("cat 0.1 0.2\n".as_bytes(), &vocab, 7).unwrap();
        assert_eq!(loaded.table.dimension(), 2);
        assert_eq!(loaded.table.row(vocab.id("cat")), [0.1, 0.2]);
        assert_eq!(loaded.found, 1);
    }

    #[test]
    fn empty_vocabulary_yields_unk_only() {
        let vocab = Vocabulary::new();
        let loaded = read_embeddings("dog 0.5 0.5 0.5\n".as_bytes(), &vocab, 1).unwrap();
        assert_eq!(loaded.table.rows(), 1);
        assert_eq!(loaded.table.dimension(), 3);
    }

    #[test]
    fn absent_words_are_seeded_uniform() {
        let vocab = Vocabulary::from_words(["cat", "zebra"]);
        let text = "cat 1 2 3\n";
        let a = read_embeddings(text.as_bytes(), &vocab, 11).unwrap().table;
        let b = read_embeddings(text.as_bytes(), &vocab, 11).unwrap().table;
        let zebra = vocab.id("zebra");
        assert!(a.row(zebra).iter().all(|v| (-0.1..=0.1).contains(v)));
        let bits = |t: &EmbeddingTable| t.vectors().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert!(a.row(UNK_ID).iter().all(|v| (-0.1..=0.1).contains(v)));
    }

    #[test]
    fn ragged_embedding_line_names_the_word() {
        let vocab = Vocabulary::from_words(["cat"]);
        let err = read_embeddings("cat 1 2\ndog 1 2 3\n".as_bytes(), &vocab, 0).unwrap_err();
        assert!(matches!(err, Error::EmbeddingDimension { ref word, expected: 2, found: 3 } if word == "dog"));
    }

    #[test]
    fn dev_split_sizes() {
        let split = make_dev_split(10, 0.1, 3).unwrap();
        assert_eq!((split.dev.len(), split.train.len()), (1, 9));
        assert_eq!(make_dev_split(10, 0.1, 3).unwrap(), split);
        // 1.5 rounds away from zero.
        assert_eq!(make_dev_split(3, 0.5, 0).unwrap().dev.len(), 2);
        assert!(make_dev_split(1, 0.5, 0).is_err());
        assert!(make_dev_split(5, 1.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn tokenization_is_idempotent(text in "[ a-zA-Z0-9.,!?'\u{e9}\u{2019}-]{0,60}") {
            let once = tokenize(&text);
            let twice = tokenize(&detokenize(&once));
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn dev_split_partitions(n in 2usize..200, fraction in 0.01f64..0.99, seed in any::<u64>()) {
            let split = make_dev_split(n, fraction, seed).unwrap();
            let mut all: Vec<usize> = split.train.iter().chain(&split.dev).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(split.dev.len(), (fraction * n as f64).round() as usize);
        }
    }
}
