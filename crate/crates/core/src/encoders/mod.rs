//! View encoders: a view (one or more utterances) maps to a fixed-width
//! vector. Three architectures are available:
//!
//! - `averaging`: per utterance `act(W · mean(word vectors) + b)`, averaged
//!   over the utterances of the view.
//! - `sequence`: a BiLSTM over the view's tokens; the output concatenates
//!   the final hidden states of both directions.
//! - `hierarchical`: a BiLSTM per utterance, then a second BiLSTM over the
//!   utterance vectors.
//!
//! Gradients are computed by hand-written reverse-mode passes over a tape kept
//! in [`EncodedBatch`].

mod checkpoint;
pub mod lstm;
pub mod params;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddingTable, Utterance};
use crate::error::{Error, Result};
use crate::linalg::{affine, affine_backward, axpy, mean_of, Matrix};
use crate::rng;

pub use checkpoint::EncoderCheckpoint;
use lstm::{bi_backward, bi_forward, init_bilstm, BiTrace};
pub use params::{Gradients, ParameterSet, Tensor};

pub const EMBEDDING: &str = "embedding";
pub const PROJ_WEIGHT: &str = "proj.weight";
pub const PROJ_BIAS: &str = "proj.bias";
const UTT: &str = "utt";
const CTX: &str = "ctx";

/// Instances per gradient accumulation chunk. Chunks are reduced in index
/// order so results do not depend on thread scheduling.
const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Averaging,
    Sequence,
    Hierarchical,
}

impl Architecture {
    /// Architecture whose utterance-level parameters this one can load.
    pub fn utterance_family(self) -> Architecture {
        match self {
            Architecture::Averaging => Architecture::Averaging,
            Architecture::Sequence | Architecture::Hierarchical => Architecture::Sequence,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Averaging => "averaging",
            Architecture::Sequence => "sequence",
            Architecture::Hierarchical => "hierarchical",
        })
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "averaging" => Ok(Architecture::Averaging),
            "sequence" => Ok(Architecture::Sequence),
            "hierarchical" => Ok(Architecture::Hierarchical),
            other => Err(Error::Usage(format!(
                "unknown architecture {other:?} (expected averaging, sequence or hierarchical)"
            ))),
        }
    }
}

/// Output nonlinearity of the averaging encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub architecture: Architecture,
    /// Output width of the averaging encoder, or the per-direction hidden
    /// size of the recurrent encoders (whose output is twice this).
    pub hidden_size: usize,
    pub activation: Activation,
    /// Give the encoder its own trainable copy of the word vectors instead of
    /// reading the shared, frozen table.
    pub tune_embeddings: bool,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn new(architecture: Architecture, hidden_size: usize) -> Self {
        EncoderConfig {
            architecture,
            hidden_size,
            activation: Activation::Tanh,
            tune_embeddings: false,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_tuned_embeddings(mut self, tune: bool) -> Self {
        self.tune_embeddings = tune;
        self
    }

    pub fn output_dim(&self) -> usize {
        match self.architecture {
            Architecture::Averaging => self.hidden_size,
            Architecture::Sequence | Architecture::Hierarchical => 2 * self.hidden_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    embeddings: Arc<EmbeddingTable>,
    params: ParameterSet,
}

/// Forward outputs plus the tape consumed by [`Encoder::backward`].
#[derive(Debug)]
pub struct EncodedBatch {
    output: Matrix,
    tape: Option<Vec<Tape>>,
}

impl EncodedBatch {
    pub fn output(&self) -> &Matrix {
        &self.output
    }

    pub fn into_output(self) -> Matrix {
        self.output
    }

    pub fn is_consumed(&self) -> bool {
        self.tape.is_none()
    }
}

#[derive(Debug, Clone)]
enum Tape {
    Empty,
    Averaging(Vec<AvgUtterance>),
    Sequence { tokens: Vec<u32>, trace: BiTrace },
    Hierarchical {
        utterances: Vec<(Vec<u32>, BiTrace)>,
        context: BiTrace,
    },
}

#[derive(Debug, Clone)]
struct AvgUtterance {
    tokens: Vec<u32>,
    mean: Vec<f64>,
    out: Vec<f64>,
}

/// Per-chunk gradient accumulator. Word-vector gradients stay sparse until
/// the final reduction.
struct Accum {
    grads: Gradients,
    words: BTreeMap<u32, Vec<f64>>,
}

impl Encoder {
    pub fn new(config: EncoderConfig, embeddings: Arc<EmbeddingTable>) -> Result<Self> {
        if config.hidden_size == 0 {
            return Err(Error::invalid("encoder hidden size must be positive"));
        }
        let e = embeddings.dimension();
        let h = config.hidden_size;
        let mut rng = rng::seeded(config.seed);
        let mut params = ParameterSet::new();
        match config.architecture {
            Architecture::Averaging => {
                let bound = (6.0 / (e + h) as f64).sqrt();
                params.insert(PROJ_WEIGHT, Tensor::uniform(&[h, e], bound, &mut rng));
                params.insert(PROJ_BIAS, Tensor::zeros(&[h]));
            }
            Architecture::Sequence => init_bilstm(&mut params, UTT, e, h, &mut rng),
            Architecture::Hierarchical => {
                init_bilstm(&mut params, UTT, e, h, &mut rng);
                init_bilstm(&mut params, CTX, 2 * h, h, &mut rng);
            }
        }
        if config.tune_embeddings {
            params.insert(
                EMBEDDING,
                Tensor::new(vec![embeddings.rows(), e], embeddings.vectors().to_vec())?,
            );
        }
        Ok(Encoder {
            config,
            embeddings,
            params,
        })
    }

    pub(crate) fn from_parts(
        config: EncoderConfig,
        embeddings: Arc<EmbeddingTable>,
        params: ParameterSet,
    ) -> Self {
        Encoder {
            config,
            embeddings,
            params,
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn embeddings(&self) -> &Arc<EmbeddingTable> {
        &self.embeddings
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    /// Word vector for `id`, from the tuned copy when there is one.
    pub fn word_vector(&self, id: u32) -> &[f64] {
        match self.params.get(EMBEDDING) {
            Some(t) => {
                let e = t.shape[1];
                &t.data[id as usize * e..(id as usize + 1) * e]
            }
            None => self.embeddings.row(id),
        }
    }

    pub fn tunes_embeddings(&self) -> bool {
        self.params.contains(EMBEDDING)
    }

    /// Loads utterance-level parameters from a pretrained encoder of the
    /// same utterance family. Returns the number of tensors copied.
    pub fn initialize_from(&mut self, pretrained: &Encoder) -> Result<usize> {
        if self.architecture().utterance_family() != pretrained.architecture().utterance_family() {
            return Err(Error::Checkpoint(format!(
                "cannot initialize a {} encoder from a {} encoder",
                self.architecture(),
                pretrained.architecture()
            )));
        }
        if self.config.hidden_size != pretrained.config.hidden_size
            || self.embeddings.dimension() != pretrained.embeddings.dimension()
        {
            return Err(Error::Checkpoint(format!(
                "pretrained encoder has hidden size {} over {}-d words, expected {} over {}-d",
                pretrained.config.hidden_size,
                pretrained.embeddings.dimension(),
                self.config.hidden_size,
                self.embeddings.dimension()
            )));
        }
        Ok(self.params.copy_matching(&pretrained.params).len())
    }

    fn validate(&self, views: &[&[Utterance]]) -> Result<()> {
        let rows = self
            .params
            .get(EMBEDDING)
            .map_or(self.embeddings.rows(), |t| t.shape[0]);
        for (i, view) in views.iter().enumerate() {
            for u in view.iter() {
                if let Some(&bad) = u.tokens().iter().find(|&&t| t as usize >= rows) {
                    return Err(Error::invalid(format!(
                        "view {i} contains token id {bad} but only {rows} word vectors exist"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Encodes a batch of views and keeps the tape for one backward pass.
    pub fn forward(&self, views: &[&[Utterance]]) -> Result<EncodedBatch> {
        self.validate(views)?;
        let d = self.output_dim();
        let results: Vec<(Vec<f64>, Tape)> = views.par_iter().map(|v| self.forward_one(v)).collect();
        let mut output = Matrix::zeros(views.len(), d);
        let mut tape = Vec::with_capacity(views.len());
        for (i, (row, t)) in results.into_iter().enumerate() {
            output.row_mut(i).copy_from_slice(&row);
            tape.push(t);
        }
        Ok(EncodedBatch {
            output,
            tape: Some(tape),
        })
    }

    /// Inference-only encoding.
    pub fn encode(&self, views: &[&[Utterance]]) -> Result<Matrix> {
        self.validate(views)?;
        let d = self.output_dim();
        let rows: Vec<Vec<f64>> = views.par_iter().map(|v| self.forward_one(v).0).collect();
        let mut output = Matrix::zeros(views.len(), d);
        for (i, row) in rows.into_iter().enumerate() {
            output.row_mut(i).copy_from_slice(&row);
        }
        Ok(output)
    }

    /// Encodes every utterance of a view on its own and averages the
    /// results. Empty views encode as zero.
    pub fn encode_utterance_average(&self, views: &[&[Utterance]]) -> Result<Matrix> {
        let singles: Vec<&[Utterance]> = views
            .iter()
            .flat_map(|v| v.iter().map(std::slice::from_ref))
            .collect();
        let encoded = self.encode(&singles)?;
        let mut output = Matrix::zeros(views.len(), self.output_dim());
        let mut next = 0;
        for (i, v) in views.iter().enumerate() {
            if v.is_empty() {
                continue;
            }
            let rows = (next..next + v.len()).map(|r| encoded.row(r));
            output.row_mut(i).copy_from_slice(&mean_of(rows, self.output_dim()));
            next += v.len();
        }
        Ok(output)
    }

    fn token_inputs(&self, tokens: &[u32]) -> Vec<Vec<f64>> {
        tokens.iter().map(|&t| self.word_vector(t).to_vec()).collect()
    }

    fn forward_one(&self, view: &[Utterance]) -> (Vec<f64>, Tape) {
        let d = self.output_dim();
        if view.is_empty() {
            return (vec![0.0; d], Tape::Empty);
        }
        match self.config.architecture {
            Architecture::Averaging => {
                let e = self.embeddings.dimension();
                let w = self.params.data(PROJ_WEIGHT);
                let b = self.params.data(PROJ_BIAS);
                let mut total = vec![0.0; d];
                let mut parts = Vec::with_capacity(view.len());
                for u in view {
                    let mut mean = vec![0.0; e];
                    for &t in u.tokens() {
                        axpy(1.0, self.word_vector(t), &mut mean);
                    }
                    let inv = 1.0 / u.len() as f64;
                    mean.iter_mut().for_each(|v| *v *= inv);
                    let mut out = vec![0.0; d];
                    affine(w, b, &mean, &mut out);
                    if self.config.activation == Activation::Tanh {
                        out.iter_mut().for_each(|v| *v = v.tanh());
                    }
                    axpy(1.0, &out, &mut total);
                    parts.push(AvgUtterance {
                        tokens: u.tokens().to_vec(),
                        mean,
                        out,
                    });
                }
                let inv = 1.0 / view.len() as f64;
                total.iter_mut().for_each(|v| *v *= inv);
                (total, Tape::Averaging(parts))
            }
            Architecture::Sequence => {
                let tokens: Vec<u32> = view.iter().flat_map(|u| u.tokens().iter().copied()).collect();
                let (out, trace) = bi_forward(&self.params, UTT, self.token_inputs(&tokens));
                (out, Tape::Sequence { tokens, trace })
            }
            Architecture::Hierarchical => {
                let mut utterances = Vec::with_capacity(view.len());
                let mut vectors = Vec::with_capacity(view.len());
                for u in view {
                    let (v, trace) = bi_forward(&self.params, UTT, self.token_inputs(u.tokens()));
                    vectors.push(v);
                    utterances.push((u.tokens().to_vec(), trace));
                }
                let (out, context) = bi_forward(&self.params, CTX, vectors);
                (out, Tape::Hierarchical { utterances, context })
            }
        }
    }

    /// Gradient of `sum_i <upstream_i, output_i>` with respect to every
    /// trainable tensor. Consumes the batch's tape.
    pub fn backward(&self, batch: &mut EncodedBatch, upstream: &Matrix) -> Result<Gradients> {
        if upstream.rows() != batch.output.rows() || upstream.cols() != batch.output.cols() {
            return Err(Error::shape(format!(
                "upstream is {}x{}, batch output is {}x{}",
                upstream.rows(),
                upstream.cols(),
                batch.output.rows(),
                batch.output.cols()
            )));
        }
        let tape = batch
            .tape
            .take()
            .ok_or_else(|| Error::Usage("backward handle already consumed".into()))?;

        let partials: Vec<Accum> = tape
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut acc = Accum {
                    grads: self.params.zero_gradients_without(EMBEDDING),
                    words: BTreeMap::new(),
                };
                for (k, t) in chunk.iter().enumerate() {
                    self.backward_one(t, upstream.row(c * CHUNK + k), &mut acc);
                }
                acc
            })
            .collect();

        let mut grads = self.params.zero_gradients_without(EMBEDDING);
        let mut words: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for part in partials {
            grads.add_assign(&part.grads);
            for (id, g) in part.words {
                match words.get_mut(&id) {
                    Some(acc) => axpy(1.0, &g, acc),
                    None => {
                        words.insert(id, g);
                    }
                }
            }
        }
        if let Some(table) = self.params.get(EMBEDDING) {
            let e = table.shape[1];
            let mut dense = vec![0.0; table.len()];
            for (id, g) in words {
                if self.embeddings.is_trainable(id) {
                    dense[id as usize * e..(id as usize + 1) * e].copy_from_slice(&g);
                }
            }
            grads.insert(EMBEDDING, dense);
        }
        Ok(grads)
    }

    fn add_word_grad(&self, acc: &mut Accum, id: u32, g: &[f64], scale: f64) {
        let e = g.len();
        let slot = acc.words.entry(id).or_insert_with(|| vec![0.0; e]);
        axpy(scale, g, slot);
    }

    fn backward_one(&self, tape: &Tape, dy: &[f64], acc: &mut Accum) {
        let tune = self.tunes_embeddings();
        match tape {
            Tape::Empty => {}
            Tape::Averaging(parts) => {
                let w = self.params.data(PROJ_WEIGHT);
                let inv_utts = 1.0 / parts.len() as f64;
                for part in parts {
                    let da: Vec<f64> = match self.config.activation {
                        Activation::Tanh => dy
                            .iter()
                            .zip(&part.out)
                            .map(|(g, h)| g * inv_utts * (1.0 - h * h))
                            .collect(),
                        Activation::Identity => dy.iter().map(|g| g * inv_utts).collect(),
                    };
                    let mut dmean = vec![0.0; part.mean.len()];
                    {
                        let [dw, db] = acc.grads.get_many_mut([PROJ_WEIGHT, PROJ_BIAS]);
                        affine_backward(w, &part.mean, &da, dw, db, tune.then_some(dmean.as_mut_slice()));
                    }
                    if tune {
                        let inv_len = 1.0 / part.tokens.len() as f64;
                        for &t in &part.tokens {
                            self.add_word_grad(acc, t, &dmean, inv_len);
                        }
                    }
                }
            }
            Tape::Sequence { tokens, trace } => {
                let d_in = bi_backward(&self.params, UTT, trace, dy, &mut acc.grads, tune);
                if tune {
                    for (&t, g) in tokens.iter().zip(&d_in) {
                        self.add_word_grad(acc, t, g, 1.0);
                    }
                }
            }
            Tape::Hierarchical { utterances, context } => {
                let d_vectors = bi_backward(&self.params, CTX, context, dy, &mut acc.grads, true);
                for ((tokens, trace), dv) in utterances.iter().zip(&d_vectors) {
                    let d_in = bi_backward(&self.params, UTT, trace, dv, &mut acc.grads, tune);
                    if tune {
                        for (&t, g) in tokens.iter().zip(&d_in) {
                            self.add_word_grad(acc, t, g, 1.0);
                        }
                    }
                }
            }
        }
    }

    /// Adam update of this encoder's parameters.
    pub fn adam_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        self.params.adam_step(grads, lr)
    }

    pub fn checkpoint(&self) -> EncoderCheckpoint {
        EncoderCheckpoint::from_encoder(self)
    }
}

impl ParameterSet {
    fn zero_gradients_without(&self, skip: &str) -> Gradients {
        let mut g = self.zero_gradients();
        g.remove(skip);
        g
    }
}
