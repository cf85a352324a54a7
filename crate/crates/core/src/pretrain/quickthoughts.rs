//! Quick-thoughts: a target encoder `f` and a context encoder `g` score
//! utterance pairs by `f(s) · g(s')`. Each target must pick its true
//! successor out of every context in the batch.

use crate::corpus::{Corpus, Utterance};
use crate::encoders::{Encoder, Gradients};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, log_softmax_at, softmax, Matrix};

use super::{fit, split_instances, Objective, PretrainConfig, PretrainOutcome};

/// Pair score `f · g`.
pub fn qt_score(f: &[f64], g: &[f64]) -> Result<f64> {
    if f.len() != g.len() {
        return Err(Error::Shape(format!(
            "cannot score a {}-d target against a {}-d context",
            f.len(),
            g.len()
        )));
    }
    Ok(dot(f, g))
}

/// Consecutive `(utterance, next utterance)` pairs of the given instances.
pub fn adjacent_pairs(corpus: &Corpus, indices: &[usize]) -> Vec<(Utterance, Utterance)> {
    let mut pairs = Vec::new();
    for &i in indices {
        let dialog: Vec<&Utterance> = corpus.instances[i].dialog().collect();
        for w in dialog.windows(2) {
            pairs.push((w[0].clone(), w[1].clone()));
        }
    }
    pairs
}

#[derive(Debug, Clone, PartialEq)]
pub struct QtModel {
    pub target: Encoder,
    pub context: Encoder,
}

impl QtModel {
    /// Pairs `target` with a context encoder of the same configuration under
    /// a different seed.
    pub fn new(target: Encoder) -> Result<Self> {
        let config = target.config().clone();
        let seed = config.seed ^ 0x5155_4943_4b00;
        let context = Encoder::new(config.with_seed(seed), target.embeddings().clone())?;
        Ok(QtModel { target, context })
    }

    pub fn into_encoder(self) -> Encoder {
        self.target
    }

    fn views(pairs: &[(Utterance, Utterance)]) -> (Vec<&[Utterance]>, Vec<&[Utterance]>) {
        pairs
            .iter()
            .map(|(a, b)| (std::slice::from_ref(a), std::slice::from_ref(b)))
            .unzip()
    }

    fn scores(f: &Matrix, g: &Matrix) -> Vec<Vec<f64>> {
        f.iter_rows().map(|fi| g.iter_rows().map(|gj| dot(fi, gj)).collect()).collect()
    }

    /// Mean negative log-likelihood of the true context for each target.
    pub fn loss(&self, pairs: &[(Utterance, Utterance)]) -> Result<f64> {
        let (t, c) = Self::views(pairs);
        let f = self.target.encode(&t)?;
        let g = self.context.encode(&c)?;
        let s = Self::scores(&f, &g);
        Ok(-s.iter().enumerate().map(|(i, row)| log_softmax_at(row, i)).sum::<f64>() / pairs.len() as f64)
    }

    /// Batch loss with gradients for the target and context encoders.
    pub fn loss_and_gradients(&self, pairs: &[(Utterance, Utterance)]) -> Result<(f64, Gradients, Gradients)> {
        if pairs.is_empty() {
            return Err(Error::invalid("empty quick-thoughts batch"));
        }
        let (t, c) = Self::views(pairs);
        let mut fb = self.target.forward(&t)?;
        let mut gb = self.context.forward(&c)?;
        let (f, g) = (fb.output().clone(), gb.output().clone());
        let s = Self::scores(&f, &g);
        let b = pairs.len();
        let mut loss = 0.0;
        let mut df = Matrix::zeros(b, f.cols());
        let mut dg = Matrix::zeros(b, g.cols());
        for (i, row) in s.iter().enumerate() {
            loss -= log_softmax_at(row, i);
            let mut p = softmax(row);
            p[i] -= 1.0;
            for (j, &d) in p.iter().enumerate() {
                let d = d / b as f64;
                axpy(d, g.row(j), df.row_mut(i));
                axpy(d, f.row(i), dg.row_mut(j));
            }
        }
        let gf = self.target.backward(&mut fb, &df)?;
        let gg = self.context.backward(&mut gb, &dg)?;
        Ok((loss / b as f64, gf, gg))
    }
}

impl Objective for QtModel {
    type Item = (Utterance, Utterance);

    fn train_batch(&mut self, batch: &[Self::Item], lr: f64) -> Result<f64> {
        let (loss, gf, gg) = self.loss_and_gradients(batch)?;
        self.target.adam_step(&gf, lr)?;
        self.context.adam_step(&gg, lr)?;
        Ok(loss)
    }

    /// Pair-weighted mean of per-batch losses over consecutive batches.
    fn eval_loss(&self, items: &[Self::Item], batch_size: usize) -> Result<f64> {
        let mut total = 0.0;
        for batch in items.chunks(batch_size) {
            total += self.loss(batch)? * batch.len() as f64;
        }
        Ok(total / items.len().max(1) as f64)
    }
}

/// Trains `target` and a fresh context encoder on adjacent utterance pairs
/// of `corpus`.
pub fn pretrain_quickthoughts(
    corpus: &Corpus,
    target: Encoder,
    config: &PretrainConfig,
) -> Result<PretrainOutcome<QtModel>> {
    config.validate()?;
    let (train, dev) = split_instances(corpus.len(), config)?;
    let train = adjacent_pairs(corpus, &train);
    let dev = adjacent_pairs(corpus, &dev);
    if train.is_empty() || dev.is_empty() {
        return Err(Error::invalid(
            "quick-thoughts needs dialogs with at least two utterances in both the training and held-out instances",
        ));
    }
    fit(QtModel::new(target)?, train, dev, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EmbeddingTable;
    use crate::dataprep::{generate_synthetic, synthetic_embeddings, SyntheticSpec};
    use crate::encoders::{Architecture, EncoderConfig};

    fn utt(tokens: &[u32]) -> Utterance {
        Utterance::new(tokens.to_vec()).unwrap()
    }

    fn model(arch: Architecture, tune: bool) -> QtModel {
        let t = EmbeddingTable::random(6, 3, 2).unwrap();
        let v = t.vectors().iter().map(|x| x * 10.0).collect();
        let t = EmbeddingTable::from_rows(3, v, vec![true; 6]).unwrap().into_shared();
        let e = Encoder::new(EncoderConfig::new(arch, 2).with_seed(5).with_tuned_embeddings(tune), t).unwrap();
        QtModel::new(e).unwrap()
    }

    #[test]
    fn score_is_a_dot_product() {
        assert_eq!(qt_score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(qt_score(&[0.6, 0.8], &[0.6, 0.8]).unwrap(), 1.0);
        assert_eq!(qt_score(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        assert!(matches!(qt_score(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn single_pair_batch_has_zero_loss() {
        let m = model(Architecture::Averaging, false);
        let (loss, gf, gg) = m.loss_and_gradients(&[(utt(&[1, 2]), utt(&[3]))]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(gf.is_all_zero() && gg.is_all_zero());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (arch, tune) in [(Architecture::Averaging, true), (Architecture::Sequence, false)] {
            let m = model(arch, tune);
            let batch = [(utt(&[1, 2]), utt(&[3, 4, 5])), (utt(&[5]), utt(&[2, 1]))];
            let (_, gf, gg) = m.loss_and_gradients(&batch).unwrap();
            let eps = 1e-5;
            for (which, grads) in [(0, &gf), (1, &gg)] {
                fn pick(m: &mut QtModel, which: usize) -> &mut Encoder {
                    if which == 0 {
                        &mut m.target
                    } else {
                        &mut m.context
                    }
                }
                let mut probe = m.clone();
                let names: Vec<String> = pick(&mut probe, which).params().names().map(str::to_string).collect();
                for name in names {
                    for i in 0..grads.get(&name).unwrap().len() {
                        let mut up = m.clone();
                        pick(&mut up, which).params_mut().data_mut(&name).unwrap()[i] += eps;
                        let mut down = m.clone();
                        pick(&mut down, which).params_mut().data_mut(&name).unwrap()[i] -= eps;
                        let numeric = (up.loss(&batch).unwrap() - down.loss(&batch).unwrap()) / (2.0 * eps);
                        let analytic = grads.get(&name).unwrap()[i];
                        let scale = analytic.abs().max(numeric.abs());
                        if scale > 1e-7 {
                            assert!(
                                (analytic - numeric).abs() / scale <= 1e-3,
                                "{arch} {which} {name}[{i}]: {analytic} vs {numeric}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn pairs_follow_dialog_order() {
        let c = generate_synthetic(&SyntheticSpec { n: 5, content_turns: (2, 2), ..SyntheticSpec::default() }).unwrap();
        let pairs = adjacent_pairs(&c, &[0, 3]);
        assert_eq!(pairs.len(), 4);
        assert_eq!(&pairs[0].0, c.instances[0].query());
        assert_eq!(&pairs[1].0, &c.instances[0].content_view()[0]);
        assert_eq!(&pairs[1].1, &c.instances[0].content_view()[1]);
    }

    #[test]
    fn held_out_loss_improves() {
        let c = generate_synthetic(&SyntheticSpec { n: 200, ..SyntheticSpec::default() }).unwrap();
        let t = synthetic_embeddings(&c.vocabulary, 10, 0).unwrap().into_shared();
        let e = Encoder::new(EncoderConfig::new(Architecture::Averaging, 10), t).unwrap();
        let config = PretrainConfig { epochs: 5, learning_rate: 0.01, ..PretrainConfig::default() };
        let out = pretrain_quickthoughts(&c, e, &config).unwrap();
        assert!(out.best_dev_loss() < out.initial_dev_loss, "{:?} from {}", out.log, out.initial_dev_loss);
        assert!(out.best_dev_loss() <= out.log[0].dev_loss);
        assert!(!out.log.is_empty() && out.log.len() <= 5);
    }

    #[test]
    fn corpora_without_content_are_rejected() {
        let c = generate_synthetic(&SyntheticSpec { n: 20, content_turns: (0, 0), ..SyntheticSpec::default() }).unwrap();
        let t = EmbeddingTable::random(c.vocabulary.len(), 4, 0).unwrap().into_shared();
        let e = Encoder::new(EncoderConfig::new(Architecture::Averaging, 4), t).unwrap();
        assert!(pretrain_quickthoughts(&c, e, &PretrainConfig::default()).is_err());
    }
}
