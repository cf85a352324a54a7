//! Question-intent clusters from duplicate-question pairs. Clusters are the
//! connected components of the duplicate graph.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use crate::corpus::CorpusRecord;
use crate::error::{Error, Result};

/// Disjoint sets with union by rank and path halving.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when `a` and `b` were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            Ordering::Less => self.parent[ra] = rb,
            Ordering::Greater => self.parent[rb] = ra,
            Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Orders question ids numerically when both are integers; integers sort
/// before other ids, which compare as strings.
pub fn compare_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u128>(), b.parse::<u128>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

#[derive(Debug, Clone, Default)]
pub struct DuplicateGraph {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    edges: Vec<(usize, usize)>,
}

impl DuplicateGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_question(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }

    /// Adds both endpoints if needed. Self-loops are rejected.
    pub fn add_edge(&mut self, a: &str, b: &str) -> Result<()> {
        if a == b {
            return Err(Error::invalid(format!("self-loop on question {a}")));
        }
        let (i, j) = (self.add_question(a), self.add_question(b));
        self.edges.push((i, j));
        Ok(())
    }

    pub fn num_questions(&self) -> usize {
        self.ids.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Components with at least two members, largest first, ties broken by
    /// the smallest member id. Members are sorted by id.
    pub fn components(&self) -> Vec<Vec<String>> {
        let mut uf = UnionFind::new(self.ids.len());
        for &(a, b) in &self.edges {
            uf.union(a, b);
        }
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        for i in 0..self.ids.len() {
            groups.entry(uf.find(i)).or_default().push(i);
        }
        let mut comps: Vec<Vec<String>> = groups
            .into_values()
            .filter(|g| g.len() >= 2)
            .map(|g| {
                let mut members: Vec<String> = g.into_iter().map(|i| self.ids[i].clone()).collect();
                members.sort_by(|a, b| compare_ids(a, b));
                members
            })
            .collect();
        comps.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| compare_ids(&a[0], &b[0])));
        comps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    #[serde(deserialize_with = "string_or_number")]
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub answer_utterances: Vec<String>,
}

impl Question {
    pub fn has_answer(&self) -> bool {
        self.answer_utterances.iter().any(|a| !a.trim().is_empty())
    }
}

fn string_or_number<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        S(String),
        N(serde_json::Number),
    }
    Ok(match Id::deserialize(d)? {
        Id::S(s) => s,
        Id::N(n) => n.to_string(),
    })
}

/// Duplicate pairs from a `qid1,qid2` CSV. A header row is skipped when its
/// first field is literally `qid1`.
pub fn read_pairs<R: Read>(reader: R) -> Result<Vec<(String, String)>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut pairs = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if i == 0 && rec.get(0) == Some("qid1") {
            continue;
        }
        if rec.len() != 2 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        pairs.push((rec[0].to_string(), rec[1].to_string()));
    }
    Ok(pairs)
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    read_pairs(File::open(path).map_err(|e| Error::io(path, e))?)
}

pub fn read_questions<R: BufRead>(reader: R) -> Result<Vec<Question>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let q: Question = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(q);
    }
    Ok(out)
}

pub fn load_questions(path: impl AsRef<Path>) -> Result<Vec<Question>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_questions(BufReader::new(f))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepStats {
    pub questions: usize,
    pub pairs: usize,
    pub self_loops: usize,
    pub components: usize,
    pub selected_sizes: Vec<usize>,
    pub selected_questions: usize,
    pub dropped_unanswered: usize,
    pub dropped_missing_text: usize,
    pub kept_questions: usize,
}

#[derive(Debug, Clone)]
pub struct ClusterSelection {
    pub records: Vec<CorpusRecord>,
    pub stats: PrepStats,
}

impl DuplicateGraph {
    /// Graph over every listed question plus every pair endpoint. Self-loops
    /// are counted and skipped.
    pub fn from_parts(questions: &[Question], pairs: &[(String, String)]) -> (Self, usize) {
        let mut g = DuplicateGraph::new();
        for q in questions {
            g.add_question(&q.id);
        }
        let mut loops = 0;
        for (a, b) in pairs {
            if g.add_edge(a, b).is_err() {
                loops += 1;
            }
        }
        (g, loops)
    }
}

/// Picks the `top_k` largest components. With `require_answer`, questions
/// without a non-empty answer are dropped after selection. Each kept
/// question becomes a record whose label is its component's smallest id.
pub fn build_question_clusters(
    graph: &DuplicateGraph,
    questions: &[Question],
    top_k: usize,
    require_answer: bool,
) -> Result<ClusterSelection> {
    let comps = graph.components();
    if top_k > comps.len() {
        return Err(Error::invalid(format!(
            "asked for {top_k} clusters but the graph has {} components",
            comps.len()
        )));
    }
    let by_id: HashMap<&str, &Question> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut stats = PrepStats {
        questions: graph.num_questions(),
        pairs: graph.num_edges(),
        components: comps.len(),
        ..PrepStats::default()
    };
    let mut records = Vec::new();
    for comp in &comps[..top_k] {
        stats.selected_sizes.push(comp.len());
        stats.selected_questions += comp.len();
        let label = comp[0].clone();
        for id in comp {
            let Some(q) = by_id.get(id.as_str()) else {
                if require_answer {
                    stats.dropped_missing_text += 1;
                    continue;
                }
                return Err(Error::invalid(format!("question {id} has no text record")));
            };
            if require_answer && !q.has_answer() {
                stats.dropped_unanswered += 1;
                continue;
            }
            records.push(CorpusRecord {
                id: id.clone(),
                view1: q.title.clone(),
                view2: q.answer_utterances.clone(),
                label: Some(label.clone()),
            });
        }
    }
    stats.kept_questions = records.len();
    Ok(ClusterSelection { records, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;
    use std::collections::VecDeque;

    fn graph(edges: &[(&str, &str)]) -> DuplicateGraph {
        let mut g = DuplicateGraph::new();
        for (a, b) in edges {
            g.add_edge(a, b).unwrap();
        }
        g
    }

    fn q(id: &str, answers: &[&str]) -> Question {
        Question {
            id: id.into(),
            title: format!("title {id}"),
            answer_utterances: answers.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn transitive_closure() {
        let g = graph(&[("a", "b"), ("b", "c")]);
        assert_eq!(g.components(), vec![vec!["a", "b", "c"]]);
    }

    #[test]
    fn no_edges_no_components() {
        let mut g = DuplicateGraph::new();
        g.add_question("x");
        g.add_question("y");
        assert!(g.components().is_empty());
        assert!(g.clone().add_edge("x", "x").is_err());
    }

    #[test]
    fn ranking_is_by_size_then_smallest_numeric_id() {
        let g = graph(&[("10", "11"), ("9", "100"), ("5", "6"), ("5", "7"), ("20", "21")]);
        let comps = g.components();
        assert_eq!(comps[0], vec!["5", "6", "7"]);
        assert_eq!(comps[1], vec!["9", "100"]);
        assert_eq!(comps[2], vec!["10", "11"]);
        assert_eq!(comps[3], vec!["20", "21"]);
        assert_eq!(compare_ids("9", "10"), Ordering::Less);
        assert_eq!(compare_ids("10", "a"), Ordering::Less);
    }

    #[test]
    fn selection_then_answer_filter() {
        let g = graph(&[("1", "2"), ("2", "3"), ("4", "5"), ("6", "7")]);
        let qs = vec![q("1", &["yes"]), q("2", &[]), q("3", &["  "]), q("4", &["a"]), q("5", &["b"]), q("6", &["c"])];
        let sel = build_question_clusters(&g, &qs, 2, true).unwrap();
        assert_eq!(sel.stats.selected_sizes, vec![3, 2]);
        assert_eq!(sel.stats.dropped_unanswered, 2);
        assert_eq!(sel.stats.kept_questions, 3);
        let ids: Vec<&str> = sel.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["1", "4", "5"]);
        assert_eq!(sel.records[1].label.as_deref(), Some("4"));

        assert!(build_question_clusters(&g, &qs, 4, true).is_err());
        assert!(build_question_clusters(&g, &qs, 3, false).is_err(), "7 has no text");
    }

    #[test]
    fn reads_pairs_with_or_without_header() {
        let with = read_pairs("qid1,qid2\n1,2\n3, 4\n".as_bytes()).unwrap();
        let without = read_pairs("1,2\n3,4\n".as_bytes()).unwrap();
        assert_eq!(with, without);
        assert!(read_pairs("1,2,3\n".as_bytes()).is_err());
    }

    #[test]
    fn reads_questions_with_numeric_ids() {
        let text = "{\"id\": 12, \"title\": \"t\", \"answer_utterances\": [\"a\"]}\n\n{\"id\": \"x\", \"title\": \"u\"}\n";
        let qs = read_questions(text.as_bytes()).unwrap();
        assert_eq!(qs[0].id, "12");
        assert!(!qs[1].has_answer());
        let err = read_questions("{\"title\": 1}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    fn bfs_components(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            let mut comp = vec![s];
            let mut queue = VecDeque::from([s]);
            while let Some(x) = queue.pop_front() {
                for &y in &adj[x] {
                    if !seen[y] {
                        seen[y] = true;
                        comp.push(y);
                        queue.push_back(y);
                    }
                }
            }
            if comp.len() >= 2 {
                comp.sort_unstable();
                out.push(comp);
            }
        }
        out
    }

    #[test]
    fn union_find_matches_breadth_first_search() {
        let mut r = rng::seeded(17);
        for _ in 0..100 {
            let n = r.gen_range(1..60);
            let m = r.gen_range(0..n * 2);
            let edges: Vec<(usize, usize)> = (0..m)
                .map(|_| (r.gen_range(0..n), r.gen_range(0..n)))
                .filter(|(a, b)| a != b)
                .collect();
            let mut g = DuplicateGraph::new();
            for i in 0..n {
                g.add_question(&i.to_string());
            }
            for &(a, b) in &edges {
                g.add_edge(&a.to_string(), &b.to_string()).unwrap();
            }
            let mut ours: Vec<Vec<usize>> = g
                .components()
                .into_iter()
                .map(|c| c.iter().map(|s| s.parse().unwrap()).collect())
                .collect();
            ours.sort();
            let mut oracle = bfs_components(n, &edges);
            oracle.sort();
            assert_eq!(ours, oracle);
        }
    }
}
