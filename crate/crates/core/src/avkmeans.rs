//! Alternating-view k-means.
//!
//! Starting from k-means on the query-view encodings, each outer iteration
//! runs two semi-iterations. A semi-iteration takes the assignment of one
//! view as pseudo-labels, trains the other view's encoder on them with
//! prototypical episodes, re-encodes that view and runs at most `M` k-means
//! steps warm-started from the pseudo-labels. The query-view assignment
//! after the last iteration is the output.

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Utterance, ViewKind};
use crate::encoders::Encoder;
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, KMeansOptions};
use crate::protonet::{train_episodes, EpisodeConfig};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvkmConfig {
    /// Outer iterations.
    #[serde(rename = "T")]
    pub t: usize,
    /// k-means steps per semi-iteration.
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub episodes: EpisodeConfig,
    pub seed: u64,
}

impl AvkmConfig {
    pub fn new(k: usize) -> Self {
        AvkmConfig {
            t: 50,
            m: 10,
            k,
            episodes: EpisodeConfig::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::invalid("M must be at least 1"));
        }
        if self.k < 2 {
            return Err(Error::invalid("K must be at least 2"));
        }
        Ok(())
    }

    /// k-means seeding for step `step`; step 0 is the initial query-view run.
    pub fn kmeans_seed(&self, step: u64) -> u64 {
        self.seed ^ 0x6b6d_6561_6e73_0000 ^ step
    }

    fn episode_rng(&self, semi_iteration: usize) -> rng::Rng {
        rng::derive(self.seed, 1 + semi_iteration as u64)
    }
}

/// Both views of every instance, in corpus order.
#[derive(Debug, Clone)]
pub struct TwoViews<'a> {
    pub query: Vec<&'a [Utterance]>,
    pub content: Vec<&'a [Utterance]>,
}

impl<'a> TwoViews<'a> {
    pub fn from_corpus(corpus: &'a Corpus) -> Self {
        TwoViews {
            query: corpus.views(ViewKind::Query),
            content: corpus.views(ViewKind::Content),
        }
    }

    pub fn get(&self, kind: ViewKind) -> &[&'a [Utterance]] {
        match kind {
            ViewKind::Query => &self.query,
            ViewKind::Content => &self.content,
        }
    }

    pub fn len(&self) -> usize {
        self.query.len()
    }

    pub fn is_empty(&self) -> bool {
        self.query.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub semi_iteration: usize,
    pub episode: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// 0 for initialization, then one entry per semi-iteration counted from 1.
    pub semi_iteration: usize,
    /// View whose assignment was recomputed.
    pub view: ViewKind,
    pub objective: f64,
    pub kmeans_steps: usize,
    /// Pairwise agreement between the two current assignments.
    pub agreement: f64,
    pub mean_episode_loss: Option<f64>,
    pub final_query_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AvkmRunState {
    pub z1: Vec<usize>,
    pub z2: Vec<usize>,
    pub query_encoder: Encoder,
    pub content_encoder: Encoder,
    /// Semi-iterations completed.
    pub semi_iterations: usize,
    pub diagnostics: Vec<Diagnostics>,
    pub loss_log: Vec<LossRecord>,
}

impl AvkmRunState {
    pub fn assignment(&self, kind: ViewKind) -> &[usize] {
        match kind {
            ViewKind::Query => &self.z1,
            ViewKind::Content => &self.z2,
        }
    }

    pub fn encoder(&self, kind: ViewKind) -> &Encoder {
        match kind {
            ViewKind::Query => &self.query_encoder,
            ViewKind::Content => &self.content_encoder,
        }
    }

    fn parts_mut(&mut self, kind: ViewKind) -> (&mut Encoder, &mut Vec<usize>) {
        match kind {
            ViewKind::Query => (&mut self.query_encoder, &mut self.z1),
            ViewKind::Content => (&mut self.content_encoder, &mut self.z2),
        }
    }
}

/// Jaccard agreement over instance pairs: pairs co-clustered by both
/// assignments divided by pairs co-clustered by either. Two assignments with
/// no co-clustered pairs at all agree fully.
pub fn pairwise_agreement(a: &[usize], b: &[usize]) -> f64 {
    use std::collections::HashMap;
    let pairs = |c: u64| c * c.saturating_sub(1) / 2;
    let mut joint: HashMap<(usize, usize), u64> = HashMap::new();
    let mut ca: HashMap<usize, u64> = HashMap::new();
    let mut cb: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
    }
    let both: u64 = joint.values().map(|&c| pairs(c)).sum();
    let in_a: u64 = ca.values().map(|&c| pairs(c)).sum();
    let in_b: u64 = cb.values().map(|&c| pairs(c)).sum();
    let either = in_a + in_b - both;
    if either == 0 {
        1.0
    } else {
        both as f64 / either as f64
    }
}

/// Converged k-means on the query-view encodings. The content assignment
/// starts equal to it.
pub fn initialize(
    views: &TwoViews<'_>,
    query_encoder: Encoder,
    content_encoder: Encoder,
    config: &AvkmConfig,
) -> Result<AvkmRunState> {
    config.validate()?;
    let n = views.len();
    if views.content.len() != n {
        return Err(Error::shape(format!(
            "{n} query views but {} content views",
            views.content.len()
        )));
    }
    if n < config.k {
        return Err(Error::invalid(format!(
            "cannot form {} clusters from {n} instances",
            config.k
        )));
    }
    let x1 = query_encoder.encode(&views.query)?;
    let init = kmeans(
        &x1,
        config.k,
        &KMeansOptions {
            max_steps: None,
            init: None,
            seed: config.kmeans_seed(0),
        },
    )?;

    // Agreement baseline: the untrained content encoder's view of the same
    // warm start the first semi-iteration will use.
    let x2 = content_encoder.encode(&views.content)?;
    let baseline = kmeans(
        &x2,
        config.k,
        &KMeansOptions {
            max_steps: Some(config.m),
            init: Some(&init.assignment),
            seed: config.kmeans_seed(0),
        },
    )?;
    let diag = Diagnostics {
        semi_iteration: 0,
        view: ViewKind::Query,
        objective: init.objective,
        kmeans_steps: init.iterations,
        agreement: pairwise_agreement(&init.assignment, &baseline.assignment),
        mean_episode_loss: None,
        final_query_accuracy: None,
    };
    log::info!(
        "initial k-means: objective {:.4} after {} steps",
        init.objective,
        init.iterations
    );
    Ok(AvkmRunState {
        z2: init.assignment.clone(),
        z1: init.assignment,
        query_encoder,
        content_encoder,
        semi_iterations: 0,
        diagnostics: vec![diag],
        loss_log: Vec::new(),
    })
}

/// Trains the encoder of `source.other()` on the assignment of `source`,
/// then recomputes that view's assignment with a warm-started, `M`-bounded
/// k-means. The source encoder is not touched.
pub fn semi_iteration(
    state: &mut AvkmRunState,
    views: &TwoViews<'_>,
    source: ViewKind,
    config: &AvkmConfig,
) -> Result<()> {
    let target = source.other();
    let labels = state.assignment(source).to_vec();
    if labels.windows(2).all(|w| w[0] == w[1]) {
        return Err(Error::DegenerateClustering(format!(
            "every instance is in cluster {} of the {source:?} view",
            labels.first().copied().unwrap_or(0)
        )));
    }
    let index = state.semi_iterations + 1;
    let mut rng = config.episode_rng(index);
    let (encoder, assignment) = state.parts_mut(target);
    let trace = train_episodes(encoder, views.get(target), &labels, &config.episodes, &mut rng)?;
    let encoded = encoder.encode(views.get(target))?;
    if !encoded.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite {target:?} encodings in semi-iteration {index}"
        )));
    }
    let result = kmeans(
        &encoded,
        config.k,
        &KMeansOptions {
            max_steps: Some(config.m),
            init: Some(&labels),
            seed: config.kmeans_seed(index as u64),
        },
    )?;
    *assignment = result.assignment;

    let mean_loss = (!trace.is_empty()).then(|| trace.iter().map(|s| s.loss).sum::<f64>() / trace.len() as f64);
    state.loss_log.extend(trace.iter().map(|s| LossRecord {
        semi_iteration: index,
        episode: s.episode,
        loss: s.loss,
    }));
    let diag = Diagnostics {
        semi_iteration: index,
        view: target,
        objective: result.objective,
        kmeans_steps: result.iterations,
        agreement: pairwise_agreement(&state.z1, &state.z2),
        mean_episode_loss: mean_loss,
        final_query_accuracy: trace.last().map(|s| s.accuracy),
    };
    log::info!(
        "semi-iteration {index} ({target:?}): objective {:.4}, agreement {:.4}, loss {:.4}",
        diag.objective,
        diag.agreement,
        mean_loss.unwrap_or(f64::NAN)
    );
    state.diagnostics.push(diag);
    state.semi_iterations = index;
    Ok(())
}

/// Initialization followed by `T` rounds of (query -> content,
/// content -> query). Returns the final state; its `z1` is the output.
pub fn run(
    views: &TwoViews<'_>,
    query_encoder: Encoder,
    content_encoder: Encoder,
    config: &AvkmConfig,
) -> Result<AvkmRunState> {
    let mut state = initialize(views, query_encoder, content_encoder, config)?;
    for _ in 0..config.t {
        semi_iteration(&mut state, views, ViewKind::Query, config)?;
        semi_iteration(&mut state, views, ViewKind::Content, config)?;
    }
    Ok(state)
}
