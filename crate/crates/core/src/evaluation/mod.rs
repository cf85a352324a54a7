//! Clustering metrics: majority-matched precision/recall/F1 and
//! Hungarian-matched accuracy, plus a confusion report.

mod hungarian;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub use hungarian::{hungarian, Assignment};

/// Gold-by-predicted counts over compacted label ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    /// Original gold ids, ascending; row `g` of `counts` is `gold_ids[g]`.
    pub gold_ids: Vec<usize>,
    pub pred_ids: Vec<usize>,
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn new(gold: &[usize], pred: &[usize]) -> Result<Self> {
        check(gold, pred)?;
        let gold_ids = distinct(gold);
        let pred_ids = distinct(pred);
        let gi: BTreeMap<usize, usize> = gold_ids.iter().enumerate().map(|(i, &g)| (g, i)).collect();
        let pi: BTreeMap<usize, usize> = pred_ids.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        let mut counts = vec![vec![0; pred_ids.len()]; gold_ids.len()];
        for (g, p) in gold.iter().zip(pred) {
            counts[gi[g]][pi[p]] += 1;
        }
        Ok(Confusion {
            gold_ids,
            pred_ids,
            counts,
        })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }
}

fn distinct(labels: &[usize]) -> Vec<usize> {
    let mut v = labels.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

fn check(gold: &[usize], pred: &[usize]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::shape(format!(
            "{} gold labels but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::invalid("metrics need at least one labeled instance"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else if p == r {
        p
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Precision assigns each predicted cluster to its most frequent gold
/// cluster; recall assigns each gold cluster to its most frequent predicted
/// cluster.
pub fn cluster_prf(gold: &[usize], pred: &[usize]) -> Result<Prf> {
    let c = Confusion::new(gold, pred)?;
    let n = gold.len() as f64;
    let precision_hits: usize = (0..c.pred_ids.len())
        .map(|p| c.counts.iter().map(|row| row[p]).max().unwrap_or(0))
        .sum();
    let recall_hits: usize = c.counts.iter().map(|row| row.iter().copied().max().unwrap_or(0)).sum();
    let precision = precision_hits as f64 / n;
    let recall = recall_hits as f64 / n;
    Ok(Prf {
        precision,
        recall,
        f1: harmonic(precision, recall),
    })
}

/// Hungarian-matched accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub acc: f64,
    /// Predicted cluster id to gold id, for matched clusters only.
    pub mapping: BTreeMap<usize, usize>,
}

pub fn cluster_acc(gold: &[usize], pred: &[usize]) -> Result<Accuracy> {
    let c = Confusion::new(gold, pred)?;
    Ok(acc_from_confusion(&c))
}

fn acc_from_confusion(c: &Confusion) -> Accuracy {
    let rows: Vec<Vec<f64>> = c
        .counts
        .iter()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect();
    let profit = Matrix::from_rows(&rows).expect("confusion rows are equal length");
    let matched = hungarian(&profit).expect("confusion is non-empty and finite");
    let mapping = matched
        .pairs
        .iter()
        .map(|&(g, p)| (c.pred_ids[p], c.gold_ids[g]))
        .collect();
    Accuracy {
        acc: matched.total / c.total() as f64,
        mapping,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub acc: f64,
    pub confusion: Confusion,
    pub hungarian_mapping: BTreeMap<usize, usize>,
}

/// All metrics over the instances that carry a gold label.
pub fn evaluate(gold: &[Option<usize>], pred: &[usize]) -> Result<ClusterMetrics> {
    if gold.len() != pred.len() {
        return Err(Error::shape(format!(
            "{} gold entries but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    let (g, p): (Vec<usize>, Vec<usize>) = gold
        .iter()
        .zip(pred)
        .filter_map(|(g, &p)| g.map(|g| (g, p)))
        .unzip();
    let prf = cluster_prf(&g, &p)?;
    let confusion = Confusion::new(&g, &p)?;
    let acc = acc_from_confusion(&confusion);
    Ok(ClusterMetrics {
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        acc: acc.acc,
        confusion,
        hungarian_mapping: acc.mapping,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionEntry {
    pub gold: String,
    /// Gold cluster the predicted cluster was matched to, or `cluster <id>`
    /// when the matching left it unpaired.
    pub pred: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub acc: f64,
    pub n_labeled: usize,
    #[serde(rename = "K_gold")]
    pub k_gold: usize,
    #[serde(rename = "K_pred")]
    pub k_pred: usize,
    pub top_confusions: Vec<ConfusionEntry>,
}

impl MetricsReport {
    /// `label_names[g]` names gold id `g`; `top` bounds the number of errors
    /// listed.
    pub fn new(metrics: &ClusterMetrics, label_names: &[String], top: usize) -> Self {
        let c = &metrics.confusion;
        let name = |g: usize| label_names.get(g).cloned().unwrap_or_else(|| g.to_string());
        let mut errors = Vec::new();
        for (gi, row) in c.counts.iter().enumerate() {
            let gold = c.gold_ids[gi];
            for (pi, &count) in row.iter().enumerate() {
                let pred_id = c.pred_ids[pi];
                let matched = metrics.hungarian_mapping.get(&pred_id).copied();
                if count == 0 || matched == Some(gold) {
                    continue;
                }
                let pred = match matched {
                    Some(m) => name(m),
                    None => format!("cluster {pred_id}"),
                };
                errors.push(ConfusionEntry {
                    gold: name(gold),
                    pred,
                    count,
                });
            }
        }
        errors.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.gold.cmp(&b.gold)).then_with(|| a.pred.cmp(&b.pred)));
        errors.truncate(top);
        MetricsReport {
            precision: metrics.precision,
            recall: metrics.recall,
            f1: metrics.f1,
            acc: metrics.acc,
            n_labeled: c.total(),
            k_gold: c.gold_ids.len(),
            k_pred: c.pred_ids.len(),
            top_confusions: errors,
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_clusterings_score_one() {
        let g = [0, 0, 1, 2, 2, 2];
        let m = evaluate(&g.map(Some), &g).unwrap();
        assert_eq!((m.precision, m.recall, m.f1, m.acc), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn five_instance_golden_case() {
        let prf = cluster_prf(&[0, 0, 1, 1, 1], &[0, 0, 0, 1, 1]).unwrap();
        assert_eq!((prf.precision, prf.recall, prf.f1), (0.8, 0.8, 0.8));
    }

    #[test]
    fn single_predicted_cluster_has_half_precision() {
        let gold: Vec<usize> = (0..10).map(|i| i / 5).collect();
        let prf = cluster_prf(&gold, &[0; 10]).unwrap();
        assert_eq!(prf.precision, 0.5);
        assert_eq!(prf.recall, 1.0);
    }

    #[test]
    fn six_instance_accuracy() {
        let a = cluster_acc(&[0, 0, 1, 1, 2, 2], &[0, 1, 1, 2, 2, 2]).unwrap();
        assert_eq!(a.acc, 4.0 / 6.0);
        assert_eq!(a.mapping.len(), 3);
        assert_eq!(cluster_acc(&[3; 4], &[7; 4]).unwrap().acc, 1.0);
    }

    #[test]
    fn errors_on_bad_input() {
        assert!(cluster_prf(&[], &[]).is_err());
        assert!(cluster_acc(&[0], &[0, 1]).is_err());
        assert!(evaluate(&[None, None], &[0, 1]).is_err());
    }

    #[test]
    fn unlabeled_instances_are_skipped() {
        let m = evaluate(&[Some(0), None, Some(1), None], &[1, 1, 0, 1]).unwrap();
        assert_eq!(m.acc, 1.0);
        assert_eq!(m.confusion.total(), 2);
    }

    #[test]
    fn report_lists_most_frequent_errors() {
        let gold = [0, 0, 0, 1, 1, 1, 2, 2];
        let pred = [5, 5, 6, 6, 6, 5, 7, 6];
        let m = evaluate(&gold.map(Some), &pred).unwrap();
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let r = MetricsReport::new(&m, &names, 5);
        assert_eq!(r.n_labeled, 8);
        assert_eq!((r.k_gold, r.k_pred), (3, 3));
        let errors: usize = r.top_confusions.iter().map(|e| e.count).sum();
        assert_eq!(errors as f64, 8.0 - r.acc * 8.0);
        assert!(r.top_confusions.windows(2).all(|w| w[0].count >= w[1].count));
        let json = serde_json::to_value(&r).unwrap();
        for key in ["precision", "recall", "f1", "acc", "n_labeled", "K_gold", "K_pred", "top_confusions"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    fn relabel(labels: &[usize], perm: &[usize]) -> Vec<usize> {
        labels.iter().map(|&l| perm[l]).collect()
    }

    proptest! {
        #[test]
        fn metrics_are_relabel_invariant(
            pairs in prop::collection::vec((0usize..5, 0usize..5), 1..60),
            gperm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
            pperm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
        ) {
            let (gold, pred): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let a = evaluate(&gold.iter().map(|&g| Some(g)).collect::<Vec<_>>(), &pred).unwrap();
            let g2: Vec<Option<usize>> = relabel(&gold, &gperm).into_iter().map(Some).collect();
            let b = evaluate(&g2, &relabel(&pred, &pperm)).unwrap();
            prop_assert_eq!((a.precision, a.recall, a.f1, a.acc), (b.precision, b.recall, b.f1, b.acc));
            prop_assert!(a.acc <= a.precision + 1e-15);
            prop_assert!(a.acc <= a.recall + 1e-15);
            for v in [a.precision, a.recall, a.f1, a.acc] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert_eq!(a.confusion.total(), gold.len());
        }
    }
}
