//! Prototypical-network episodic training.
//!
//! An episode samples a few classes; for each, support points define a
//! prototype (their mean embedding) and query points are classified by a
//! softmax over negative squared distances to the prototypes. The loss is the
//! mean negative log-likelihood of the query labels, differentiated through
//! both the query embeddings and the prototypes.

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::Utterance;
use crate::encoders::Encoder;
use crate::error::{Error, Result};
use crate::linalg::{axpy, squared_distance, Matrix};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub n_episodes: usize,
    pub n_classes: usize,
    pub n_support: usize,
    pub n_query: usize,
    pub learning_rate: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            n_episodes: 100,
            n_classes: 10,
            n_support: 5,
            n_query: 15,
            learning_rate: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeClass {
    pub label: usize,
    pub support: Vec<usize>,
    /// May repeat instances when the class has fewer than `n_query` members
    /// beyond its support set.
    pub query: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub classes: Vec<EpisodeClass>,
}

impl Episode {
    /// Support rows first (class by class), then query rows.
    pub fn instances(&self) -> Vec<usize> {
        let support = self.classes.iter().flat_map(|c| c.support.iter().copied());
        let query = self.classes.iter().flat_map(|c| c.query.iter().copied());
        support.chain(query).collect()
    }

    /// Row layout of the embeddings of [`Episode::instances`].
    pub fn layout(&self) -> EpisodeLayout {
        let mut groups = Vec::with_capacity(self.classes.len());
        let mut row = 0;
        for c in &self.classes {
            groups.push((row..row + c.support.len()).collect());
            row += c.support.len();
        }
        let mut query = Vec::new();
        for (k, c) in self.classes.iter().enumerate() {
            for _ in &c.query {
                query.push((row, k));
                row += 1;
            }
        }
        EpisodeLayout { groups, query }
    }
}

/// Row indices of an episode's embedding matrix.
#[derive(Debug, Clone)]
pub struct EpisodeLayout {
    /// Support rows per class.
    pub groups: Vec<Vec<usize>>,
    /// `(row, class position)` for each query point.
    pub query: Vec<(usize, usize)>,
}

/// Samples an episode from pseudo-labels. Only classes with at least
/// `n_support + 1` members are eligible; up to `n_classes` of them are drawn.
pub fn sample_episode(
    labels: &[usize],
    n_classes: usize,
    n_support: usize,
    n_query: usize,
    rng: &mut Rng,
) -> Result<Episode> {
    if n_support == 0 || n_query == 0 || n_classes < 2 {
        return Err(Error::invalid(
            "episodes need at least 2 classes and 1 support and query point",
        ));
    }
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &z) in labels.iter().enumerate() {
        members[z].push(i);
    }
    let eligible: Vec<usize> = (0..k).filter(|&c| members[c].len() > n_support).collect();
    if eligible.len() < 2 {
        return Err(Error::DegenerateClustering(format!(
            "{} of {k} clusters have more than {n_support} members; at least 2 are needed",
            eligible.len()
        )));
    }

    let take = n_classes.min(eligible.len());
    let picked = index::sample(rng, eligible.len(), take);
    let mut classes = Vec::with_capacity(take);
    for p in picked.iter() {
        let label = eligible[p];
        let mut pool = members[label].clone();
        pool.shuffle(rng);
        let remainder = pool.split_off(n_support);
        let support = pool;
        let query = if remainder.len() >= n_query {
            remainder[..n_query].to_vec()
        } else {
            let mut q = remainder.clone();
            while q.len() < n_query {
                q.push(remainder[rng.gen_range(0..remainder.len())]);
            }
            q
        };
        classes.push(EpisodeClass {
            label,
            support,
            query,
        });
    }
    Ok(Episode { classes })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    prototypes: Matrix,
}

impl PrototypeSet {
    pub fn matrix(&self) -> &Matrix {
        &self.prototypes
    }

    pub fn len(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.rows() == 0
    }

    pub fn get(&self, k: usize) -> &[f64] {
        self.prototypes.row(k)
    }
}

/// Mean embedding of each class's support rows.
pub fn compute_prototypes(embeddings: &Matrix, groups: &[Vec<usize>]) -> Result<PrototypeSet> {
    let d = embeddings.cols();
    let mut prototypes = Matrix::zeros(groups.len(), d);
    for (k, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(Error::invalid(format!("class {k} has no support points")));
        }
        let row = prototypes.row_mut(k);
        for &i in g {
            axpy(1.0, embeddings.row(i), row);
        }
        let inv = 1.0 / g.len() as f64;
        row.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(PrototypeSet { prototypes })
}

fn logits(query: &[f64], prototypes: &PrototypeSet) -> Vec<f64> {
    prototypes
        .prototypes
        .iter_rows()
        .map(|c| -squared_distance(query, c))
        .collect()
}

/// `p(y = k | x)`: softmax over negative squared Euclidean distances.
pub fn class_distribution(query: &[f64], prototypes: &PrototypeSet) -> Vec<f64> {
    crate::linalg::softmax(&logits(query, prototypes))
}

/// Episode loss, gradient with respect to every embedding row, and query
/// accuracy.
#[derive(Debug, Clone)]
pub struct EpisodeLoss {
    pub loss: f64,
    pub accuracy: f64,
    pub grad: Matrix,
}

/// Mean query NLL for an embedded episode. The gradient covers query rows
/// directly and support rows through the prototype means.
pub fn episode_loss(embeddings: &Matrix, layout: &EpisodeLayout) -> Result<EpisodeLoss> {
    let prototypes = compute_prototypes(embeddings, &layout.groups)?;
    let d = embeddings.cols();
    let k = layout.groups.len();
    let nq = layout.query.len();
    if nq == 0 {
        return Err(Error::invalid("episode has no query points"));
    }
    let scale = 1.0 / nq as f64;
    let mut grad = Matrix::zeros(embeddings.rows(), d);
    let mut proto_grad = Matrix::zeros(k, d);
    let mut loss = 0.0;
    let mut correct = 0usize;

    for &(row, target) in &layout.query {
        let x = embeddings.row(row);
        let l = logits(x, &prototypes);
        loss -= crate::linalg::log_softmax_at(&l, target);
        let p = crate::linalg::softmax(&l);
        let predicted = argmax(&p);
        if predicted == target {
            correct += 1;
        }
        // dL/dlogit_c = (p_c - 1[c = target]) / nq; logit_c = -||x - c||^2.
        for c in 0..k {
            let g = (p[c] - if c == target { 1.0 } else { 0.0 }) * scale;
            if g == 0.0 {
                continue;
            }
            let proto = prototypes.get(c);
            let gx = grad.row_mut(row);
            for j in 0..d {
                let diff = x[j] - proto[j];
                gx[j] -= 2.0 * g * diff;
            }
            let gc = proto_grad.row_mut(c);
            for j in 0..d {
                gc[j] += 2.0 * g * (x[j] - proto[j]);
            }
        }
    }
    for (c, group) in layout.groups.iter().enumerate() {
        let inv = 1.0 / group.len() as f64;
        for &i in group {
            axpy(inv, proto_grad.row(c), grad.row_mut(i));
        }
    }
    Ok(EpisodeLoss {
        loss: loss * scale,
        accuracy: correct as f64 / nq as f64,
        grad,
    })
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Runs `config.n_episodes` episodes against `labels`, one Adam step each.
pub fn train_episodes(
    encoder: &mut Encoder,
    views: &[&[Utterance]],
    labels: &[usize],
    config: &EpisodeConfig,
    rng: &mut Rng,
) -> Result<Vec<EpisodeStats>> {
    if views.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} views but {} labels",
            views.len(),
            labels.len()
        )));
    }
    let mut trace = Vec::with_capacity(config.n_episodes);
    for episode in 0..config.n_episodes {
        let ep = sample_episode(labels, config.n_classes, config.n_support, config.n_query, rng)?;
        let rows: Vec<&[Utterance]> = ep.instances().into_iter().map(|i| views[i]).collect();
        let mut batch = encoder.forward(&rows)?;
        let out = episode_loss(batch.output(), &ep.layout())?;
        if !out.loss.is_finite() {
            return Err(Error::Numeric(format!("episode {episode} loss is {}", out.loss)));
        }
        let grads = encoder.backward(&mut batch, &out.grad)?;
        encoder.adam_step(&grads, config.learning_rate)?;
        trace.push(EpisodeStats {
            episode,
            loss: out.loss,
            accuracy: out.accuracy,
        });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn protos(rows: &[&[f64]]) -> PrototypeSet {
        PrototypeSet {
            prototypes: Matrix::from_rows(rows).unwrap(),
        }
    }

    #[test]
    fn full_class_is_partitioned_exactly() {
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let ep = sample_episode(&labels, 10, 5, 15, &mut rng::seeded(1)).unwrap();
        assert_eq!(ep.classes.len(), 2);
        for c in &ep.classes {
            let mut all: Vec<usize> = c.support.iter().chain(&c.query).copied().collect();
            all.sort_unstable();
            let expected: Vec<usize> = (0..40).filter(|i| i % 2 == c.label).collect();
            assert_eq!(all, expected);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let labels: Vec<usize> = (0..200).map(|i| i % 7).collect();
        let a = sample_episode(&labels, 4, 5, 15, &mut rng::seeded(9)).unwrap();
        let b = sample_episode(&labels, 4, 5, 15, &mut rng::seeded(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.classes.len(), 4);
    }

    #[test]
    fn small_class_queries_with_replacement_from_remainder() {
        let mut labels = vec![0; 8];
        labels.extend(vec![1; 30]);
        for seed in 0..20 {
            let ep = sample_episode(&labels, 10, 5, 15, &mut rng::seeded(seed)).unwrap();
            let small = ep.classes.iter().find(|c| c.label == 0).unwrap();
            assert_eq!(small.support.len(), 5);
            assert_eq!(small.query.len(), 15);
            let remainder: Vec<usize> = (0..8).filter(|i| !small.support.contains(i)).collect();
            assert_eq!(remainder.len(), 3);
            assert!(small.query.iter().all(|q| remainder.contains(q)));
            for r in &remainder {
                assert!(small.query.contains(r), "every remaining member is queried");
            }
        }
    }

    #[test]
    fn too_few_eligible_classes_is_degenerate() {
        let labels = vec![0; 50];
        let err = sample_episode(&labels, 10, 5, 15, &mut rng::seeded(0)).unwrap_err();
        assert!(matches!(err, Error::DegenerateClustering(_)));
        let mut labels = vec![0; 50];
        labels.extend([1, 1, 1, 1, 1]);
        assert!(sample_episode(&labels, 10, 5, 15, &mut rng::seeded(0)).is_err());
    }

    #[test]
    fn prototype_means() {
        let e = Matrix::from_rows(&[[1.0, 0.0], [3.0, 0.0], [-2.0, 5.0], [2.0, -5.0]]).unwrap();
        let p = compute_prototypes(&e, &[vec![0, 1], vec![2, 3], vec![0]]).unwrap();
        assert_eq!(p.get(0), [2.0, 0.0]);
        assert_eq!(p.get(1), [0.0, 0.0]);
        assert_eq!(p.get(2), [1.0, 0.0]);
        assert!(compute_prototypes(&e, &[vec![]]).is_err());
    }

    #[test]
    fn distribution_point_values() {
        let p = class_distribution(&[0.0, 0.0], &protos(&[&[1.0, 0.0], &[2.0, 0.0]]));
        let expected = 1.0 / (1.0 + (-3.0f64).exp());
        assert!((p[0] - expected).abs() < 1e-12);
        assert!((p[0] - 0.95257).abs() < 1e-5);

        assert_eq!(class_distribution(&[3.0], &protos(&[&[-1.0]])), vec![1.0]);

        let u = class_distribution(&[0.0, 0.0], &protos(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0]]));
        for v in u {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    /// Finite-difference oracle on the loss as a function of the embeddings.
    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut r = rng::seeded(4);
        let e = Matrix::from_vec(3, 2, (0..6).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        // Two classes: rows 0 and 1 are supports, row 2 queries class 1.
        let layout = EpisodeLayout {
            groups: vec![vec![0], vec![1]],
            query: vec![(2, 1)],
        };
        let analytic = episode_loss(&e, &layout).unwrap().grad;
        let eps = 1e-4;
        for i in 0..e.as_slice().len() {
            let mut up = e.clone();
            up.as_mut_slice()[i] += eps;
            let mut down = e.clone();
            down.as_mut_slice()[i] -= eps;
            let numeric = (episode_loss(&up, &layout).unwrap().loss - episode_loss(&down, &layout).unwrap().loss) / (2.0 * eps);
            let a = analytic.as_slice()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            assert!(rel < 1e-3, "entry {i}: {a} vs {numeric}");
        }
    }

    /// Four classes, each with its own words; every view is one utterance
    /// drawn from its class's words.
    fn separable(n_per_class: usize, seed: u64) -> (Vec<Vec<Utterance>>, Vec<usize>) {
        let mut r = rng::seeded(seed);
        let (mut views, mut labels) = (Vec::new(), Vec::new());
        for c in 0..4usize {
            for _ in 0..n_per_class {
                let tokens: Vec<u32> = (0..4).map(|_| 1 + (c * 5 + r.gen_range(0..5)) as u32).collect();
                views.push(vec![Utterance::new(tokens).unwrap()]);
                labels.push(c);
            }
        }
        (views, labels)
    }

    fn averaging_encoder(seed: u64) -> Encoder {
        use crate::corpus::EmbeddingTable;
        use crate::encoders::{Architecture, EncoderConfig};
        // Word vectors on the scale of pretrained ones rather than the small
        // random fallback.
        let small = EmbeddingTable::random(21, 16, seed).unwrap();
        let vectors = small.vectors().iter().map(|v| v * 20.0).collect();
        let table = EmbeddingTable::from_rows(16, vectors, vec![true; 21]).unwrap().into_shared();
        Encoder::new(EncoderConfig::new(Architecture::Averaging, 16).with_seed(seed), table).unwrap()
    }

    #[test]
    fn training_separable_views_reaches_high_query_accuracy() {
        let (views, labels) = separable(30, 3);
        let refs: Vec<&[Utterance]> = views.iter().map(Vec::as_slice).collect();
        let mut enc = averaging_encoder(5);
        let config = EpisodeConfig { n_classes: 4, ..EpisodeConfig::default() };
        let trace = train_episodes(&mut enc, &refs, &labels, &config, &mut rng::seeded(1)).unwrap();
        assert_eq!(trace.len(), 100);
        assert!(trace.last().unwrap().accuracy >= 0.95, "{:?}", trace.last());
        let first: f64 = trace[..10].iter().map(|s| s.loss).sum();
        let last: f64 = trace[90..].iter().map(|s| s.loss).sum();
        assert!(last < first, "loss {first} -> {last}");
    }

    #[test]
    fn zero_learning_rate_leaves_encoder_unchanged() {
        let (views, labels) = separable(10, 4);
        let refs: Vec<&[Utterance]> = views.iter().map(Vec::as_slice).collect();
        let mut enc = averaging_encoder(6);
        let before = enc.params().tensors().clone();
        let config = EpisodeConfig { n_episodes: 5, learning_rate: 0.0, ..EpisodeConfig::default() };
        let a = train_episodes(&mut enc, &refs, &labels, &config, &mut rng::seeded(2)).unwrap();
        assert_eq!(enc.params().tensors(), &before);
        let b = train_episodes(&mut enc, &refs, &labels, &config, &mut rng::seeded(2)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn distribution_properties(
            x in prop::collection::vec(-3.0f64..3.0, 3),
            cs in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 1..6),
            shift in prop::collection::vec(-5.0f64..5.0, 3),
        ) {
            let rows: Vec<&[f64]> = cs.iter().map(Vec::as_slice).collect();
            let p = class_distribution(&x, &protos(&rows));
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| v > 0.0));

            let nearest = (0..cs.len())
                .min_by(|&a, &b| squared_distance(&x, &cs[a]).total_cmp(&squared_distance(&x, &cs[b])))
                .unwrap();
            prop_assert_eq!(argmax(&p), nearest);

            let moved: Vec<Vec<f64>> = cs.iter().map(|c| c.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
            let mx: Vec<f64> = x.iter().zip(&shift).map(|(a, b)| a + b).collect();
            let mrows: Vec<&[f64]> = moved.iter().map(Vec::as_slice).collect();
            let q = class_distribution(&mx, &protos(&mrows));
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn prototypes_translate_with_support(
            pts in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 1..8),
            shift in prop::collection::vec(-5.0f64..5.0, 2),
        ) {
            let e = Matrix::from_rows(&pts).unwrap();
            let moved: Vec<Vec<f64>> = pts.iter().map(|p| vec![p[0] + shift[0], p[1] + shift[1]]).collect();
            let em = Matrix::from_rows(&moved).unwrap();
            let group = vec![(0..pts.len()).collect::<Vec<_>>()];
            let a = compute_prototypes(&e, &group).unwrap();
            let b = compute_prototypes(&em, &group).unwrap();
            for j in 0..2 {
                prop_assert!((a.get(0)[j] + shift[j] - b.get(0)[j]).abs() < 1e-9);
            }
        }
    }
}
