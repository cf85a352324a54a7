//! Recurrent autoencoder: an utterance embedding conditions a left-to-right
//! LSTM decoder that is fed `[previous word vector; embedding]` at every step
//! and predicts the next word, then an end marker.

use rayon::prelude::*;

use crate::corpus::{Corpus, Utterance};
use crate::encoders::lstm::{init_lstm, Lstm};
use crate::encoders::{Encoder, Gradients, ParameterSet, Tensor, EMBEDDING};
use crate::error::Result;
use crate::linalg::{affine, affine_backward, axpy, log_softmax_at, softmax, Matrix};
use crate::rng;

use super::{corpus_utterances, fit, split_instances, Objective, PretrainConfig, PretrainOutcome};

const DEC: &str = "dec";
const BOS: &str = "dec.bos";
const OUT_W: &str = "out.w";
const OUT_B: &str = "out.b";
const CHUNK: usize = 16;

/// Output index of the end marker, relative to the vocabulary size: the
/// decoder predicts `vocab_size + EOS`.
pub const EOS: usize = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct AeModel {
    pub encoder: Encoder,
    decoder: ParameterSet,
    vocab: usize,
}

struct Sample {
    loss: f64,
    steps: usize,
    d_embedding: Vec<f64>,
    words: Vec<(u32, Vec<f64>)>,
}

impl AeModel {
    pub fn new(encoder: Encoder, seed: u64) -> Self {
        let e = encoder.embeddings().dimension();
        let d = encoder.output_dim();
        let h = encoder.config().hidden_size;
        let vocab = encoder.embeddings().rows();
        let mut r = rng::derive(seed, 0xdec);
        let mut decoder = ParameterSet::new();
        init_lstm(&mut decoder, DEC, e + d, h, &mut r);
        decoder.insert(BOS, Tensor::uniform(&[e], 0.08, &mut r));
        decoder.insert(OUT_W, Tensor::uniform(&[vocab + 1, h], 0.08, &mut r));
        decoder.insert(OUT_B, Tensor::zeros(&[vocab + 1]));
        AeModel {
            encoder,
            decoder,
            vocab,
        }
    }

    pub fn decoder(&self) -> &ParameterSet {
        &self.decoder
    }

    pub fn decoder_mut(&mut self) -> &mut ParameterSet {
        &mut self.decoder
    }

    pub fn into_encoder(self) -> Encoder {
        self.encoder
    }

    fn eos(&self) -> usize {
        self.vocab + EOS
    }

    fn decoder_inputs(&self, embedding: &[f64], previous: &[u32]) -> Vec<Vec<f64>> {
        let mut inputs = Vec::with_capacity(previous.len() + 1);
        let mut first = self.decoder.data(BOS).to_vec();
        first.extend_from_slice(embedding);
        inputs.push(first);
        for &t in previous {
            let mut x = self.encoder.word_vector(t).to_vec();
            x.extend_from_slice(embedding);
            inputs.push(x);
        }
        inputs
    }

    fn logits(&self, h: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.vocab + 1];
        affine(self.decoder.data(OUT_W), self.decoder.data(OUT_B), h, &mut out);
        out
    }

    /// Summed cross-entropy of one utterance, with gradients when asked.
    fn sample(&self, embedding: &[f64], tokens: &[u32], grads: Option<&mut Gradients>) -> Sample {
        let lstm = Lstm::from_params(&self.decoder, DEC);
        let trace = lstm.forward(self.decoder_inputs(embedding, tokens));
        let targets: Vec<usize> = tokens.iter().map(|&t| t as usize).chain([self.eos()]).collect();
        let e = self.encoder.embeddings().dimension();
        let mut loss = 0.0;
        let mut dh = Vec::with_capacity(targets.len());
        let mut d_logits = Vec::with_capacity(targets.len());
        for (h, &y) in trace.hidden_states().iter().zip(&targets) {
            let l = self.logits(h);
            loss -= log_softmax_at(&l, y);
            if grads.is_some() {
                let mut p = softmax(&l);
                p[y] -= 1.0;
                d_logits.push(p);
            }
        }
        let Some(grads) = grads else {
            return Sample {
                loss,
                steps: targets.len(),
                d_embedding: Vec::new(),
                words: Vec::new(),
            };
        };
        let w = self.decoder.data(OUT_W);
        for (h, dl) in trace.hidden_states().iter().zip(&d_logits) {
            let mut dh_t = vec![0.0; h.len()];
            let [dw, db] = grads.get_many_mut([OUT_W, OUT_B]);
            affine_backward(w, h, dl, dw, db, Some(&mut dh_t));
            dh.push(dh_t);
        }
        let d_inputs = lstm.backward(&trace, &dh, grads, DEC, true);
        let mut d_embedding = vec![0.0; embedding.len()];
        let mut words = Vec::with_capacity(tokens.len());
        for (t, dx) in d_inputs.iter().enumerate() {
            axpy(1.0, &dx[e..], &mut d_embedding);
            if t == 0 {
                axpy(1.0, &dx[..e], grads.get_mut(BOS));
            } else {
                words.push((tokens[t - 1], dx[..e].to_vec()));
            }
        }
        Sample {
            loss,
            steps: targets.len(),
            d_embedding,
            words,
        }
    }

    /// Mean per-step cross-entropy over `utterances` and its gradients with
    /// respect to the encoder and the decoder.
    pub fn loss_and_gradients(&self, utterances: &[Utterance]) -> Result<(f64, Gradients, Gradients)> {
        let views: Vec<&[Utterance]> = utterances.iter().map(std::slice::from_ref).collect();
        let mut batch = self.encoder.forward(&views)?;
        let out = batch.output().clone();

        struct Part {
            loss: f64,
            steps: usize,
            grads: Gradients,
            d_rows: Vec<Vec<f64>>,
            words: Vec<(u32, Vec<f64>)>,
        }
        let parts: Vec<Part> = utterances
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut part = Part {
                    loss: 0.0,
                    steps: 0,
                    grads: self.decoder.zero_gradients(),
                    d_rows: Vec::with_capacity(chunk.len()),
                    words: Vec::new(),
                };
                for (k, u) in chunk.iter().enumerate() {
                    let s = self.sample(out.row(c * CHUNK + k), u.tokens(), Some(&mut part.grads));
                    part.loss += s.loss;
                    part.steps += s.steps;
                    part.d_rows.push(s.d_embedding);
                    part.words.extend(s.words);
                }
                part
            })
            .collect();

        let mut dec = self.decoder.zero_gradients();
        let mut d_out = Matrix::zeros(out.rows(), out.cols());
        let mut words = Vec::new();
        let (mut loss, mut steps, mut row) = (0.0, 0usize, 0);
        for part in parts {
            loss += part.loss;
            steps += part.steps;
            dec.add_assign(&part.grads);
            for d in part.d_rows {
                d_out.row_mut(row).copy_from_slice(&d);
                row += 1;
            }
            words.extend(part.words);
        }
        let scale = 1.0 / steps as f64;
        dec.scale(scale);
        d_out.scale(scale);
        let mut enc = self.encoder.backward(&mut batch, &d_out)?;
        if self.encoder.tunes_embeddings() {
            let e = self.encoder.embeddings().dimension();
            let table = self.encoder.embeddings();
            let g = enc.get_mut(EMBEDDING);
            for (id, dx) in words {
                if table.is_trainable(id) {
                    let i = id as usize;
                    axpy(scale, &dx, &mut g[i * e..(i + 1) * e]);
                }
            }
        }
        Ok((loss * scale, enc, dec))
    }

    /// Mean per-step cross-entropy without gradients.
    pub fn loss(&self, utterances: &[Utterance]) -> Result<f64> {
        if utterances.is_empty() {
            return Ok(0.0);
        }
        let views: Vec<&[Utterance]> = utterances.iter().map(std::slice::from_ref).collect();
        let out = self.encoder.encode(&views)?;
        let (loss, steps) = utterances
            .par_iter()
            .enumerate()
            .map(|(i, u)| {
                let s = self.sample(out.row(i), u.tokens(), None);
                (s.loss, s.steps)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold((0.0, 0), |(l, n), (a, b)| (l + a, n + b));
        Ok(loss / steps as f64)
    }

    /// Greedy argmax reconstruction, stopping at the end marker or after
    /// `max_len` words.
    pub fn reconstruct(&self, utterance: &Utterance, max_len: usize) -> Result<Vec<u32>> {
        let view = std::slice::from_ref(utterance);
        let embedding = self.encoder.encode(&[view])?;
        let embedding = embedding.row(0);
        let lstm = Lstm::from_params(&self.decoder, DEC);
        let mut out: Vec<u32> = Vec::new();
        while out.len() < max_len {
            let trace = lstm.forward(self.decoder_inputs(embedding, &out));
            let l = self.logits(trace.last_hidden());
            let next = (0..l.len()).fold(0, |b, i| if l[i] > l[b] { i } else { b });
            if next == self.eos() {
                break;
            }
            out.push(next as u32);
        }
        Ok(out)
    }

    fn step(&mut self, enc: &Gradients, dec: &Gradients, lr: f64) -> Result<()> {
        self.encoder.adam_step(enc, lr)?;
        self.decoder.adam_step(dec, lr)
    }
}

impl Objective for AeModel {
    type Item = Utterance;

    fn train_batch(&mut self, batch: &[Utterance], lr: f64) -> Result<f64> {
        let (loss, enc, dec) = self.loss_and_gradients(batch)?;
        self.step(&enc, &dec, lr)?;
        Ok(loss)
    }

    fn eval_loss(&self, items: &[Utterance], _batch_size: usize) -> Result<f64> {
        self.loss(items)
    }
}

/// Trains `encoder` with a fresh decoder on every utterance of `corpus`.
pub fn pretrain_autoencoder(
    corpus: &Corpus,
    encoder: Encoder,
    config: &PretrainConfig,
) -> Result<PretrainOutcome<AeModel>> {
    config.validate()?;
    let (train, dev) = split_instances(corpus.len(), config)?;
    let model = AeModel::new(encoder, config.seed);
    fit(
        model,
        corpus_utterances(corpus, &train),
        corpus_utterances(corpus, &dev),
        config,
    )
}
