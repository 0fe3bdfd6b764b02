use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::RegionSet;
use crate::eval::attachment_scores;
use crate::scalar::Scalar;
use crate::tensor::{AdamConfig, Graph};

use super::forward::Batch;
use super::infer::Request;
use super::loss::{total_loss, warmup_total_loss};
use super::{Model, Result, Sentence};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of the contrastive term, in `[0, 1]`.
    pub lambda: f64,
    pub batch_size: usize,
    /// Sentences longer than this are skipped during training.
    pub max_train_len: usize,
    /// Dev sentences longer than this are left out of the dev scores.
    pub max_parse_len: usize,
    /// Epochs trained against the harmonic initializer instead of the likelihood.
    pub harmonic_warmup_epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.5,
            batch_size: 16,
            max_train_len: 20,
            max_parse_len: 60,
            harmonic_warmup_epochs: 1,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean negative log marginal likelihood over the epoch's batches.
    pub mle: f64,
    /// Mean contrastive loss over batches where it was computed.
    pub contrastive: Option<f64>,
    pub dev_dda: Option<f64>,
    pub dev_uda: Option<f64>,
    pub batches: usize,
    pub skipped: usize,
    pub warmup: bool,
}

/// A dev sentence with its reference tree.
#[derive(Clone, Copy, Debug)]
pub struct DevItem<'a> {
    pub sentence: &'a Sentence,
    pub regions: &'a RegionSet,
    pub gold: &'a [usize],
}

/// Mini-batch Adam training with a seeded shuffle.
pub struct Trainer<S> {
    pub model: Model<S>,
    pub config: TrainConfig,
    epoch: usize,
    rng: ChaCha8Rng,
}

/// Splits `order` into batches of `size`, folding a trailing single
/// sentence into the previous batch.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size.max(1)).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        let last = out.len() - 1;
        out[last] = &order[start..];
    }
    out
}

impl<S: Scalar> Trainer<S> {
    pub fn new(model: Model<S>, config: TrainConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Trainer {
            model,
            config,
            epoch: 0,
            rng,
        }
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// One pass over `train`; dev scores are filled in by [`Trainer::evaluate`].
    pub fn run_epoch(&mut self, train: &[(&Sentence, &RegionSet)]) -> Result<EpochLog> {
        let cfg = self.config.clone();
        let warmup = self.epoch < cfg.harmonic_warmup_epochs;
        let mut order: Vec<usize> = (0..train.len())
            .filter(|&i| train[i].0.len() <= cfg.max_train_len && !train[i].0.is_empty())
            .collect();
        let skipped = train.len() - order.len();
        if skipped > 0 {
            debug!("skipping {skipped} sentences longer than {}", cfg.max_train_len);
        }
        order.shuffle(&mut self.rng);
        let (mut mle, mut cl, mut cl_batches, mut n_batches) = (0.0, 0.0, 0usize, 0usize);
        for idx in batches(&order, cfg.batch_size) {
            let batch = Batch::new(idx.iter().map(|&i| train[i]))?;
            let lambda = if batch.images.len() < 2 && cfg.lambda > 0.0 {
                warn!("batch with a single image; contrastive term skipped");
                0.0
            } else {
                cfg.lambda
            };
            let g = Graph::new();
            let b = self.model.params.bind(&g)?;
            let fwd = self.model.forward(&b, &batch, None)?;
            let loss = if warmup {
                warmup_total_loss(&self.model, &b, &fwd, lambda)?
            } else {
                total_loss(&self.model, &b, &fwd, lambda)?
            };
            let grads = g.backward(loss.total)?;
            self.model.params.adam_step(&grads, &cfg.adam);
            mle += loss.mle;
            if let Some(c) = loss.contrastive {
                cl += c;
                cl_batches += 1;
            }
            n_batches += 1;
        }
        self.epoch += 1;
        Ok(EpochLog {
            epoch: self.epoch,
            mle: if n_batches > 0 { mle / n_batches as f64 } else { f64::NAN },
            contrastive: (cl_batches > 0).then(|| cl / cl_batches as f64),
            dev_dda: None,
            dev_uda: None,
            batches: n_batches,
            skipped,
            warmup,
        })
    }

    /// Directed and undirected attachment accuracy of Viterbi trees on `dev`.
    pub fn evaluate(&self, dev: &[DevItem<'_>]) -> Result<(f64, f64)> {
        let keep: Vec<&DevItem> = dev.iter().filter(|d| d.sentence.len() <= self.config.max_parse_len).collect();
        let reqs: Vec<Request> = keep
            .iter()
            .map(|d| Request {
                sentence_id: "",
                sentence: d.sentence,
                regions: d.regions,
                tree: None,
            })
            .collect();
        let mut pairs = Vec::with_capacity(keep.len());
        for (d, r) in keep.iter().zip(self.model.analyze_all(&reqs, self.config.max_parse_len)) {
            pairs.push((r?.heads, d.gold.to_vec()));
        }
        let s = attachment_scores(pairs.iter().map(|(p, g)| (p.as_slice(), g.as_slice())), false);
        Ok((s.dda, s.uda))
    }
}
