//! The vision-language graph autoencoder: visual node assembly, an
//! attention-fusion encoder, a neural DMV decoder, posterior-weighted
//! contrastive matching, and inference.
//!
//! The model is generic over the tensor scalar; training from the command
//! line runs in `f32`, gradient checks in `f64`. All chart computations are
//! promoted to `f64`.

mod contexts;
pub mod dmv;
mod forward;
mod infer;
mod loss;
mod oracle;
mod train;
mod visual;

use std::collections::HashMap;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chart::ChartError;
use crate::data::CorpusRecord;
use crate::scalar::Scalar;
use crate::tensor::{init, Checkpoint, ParameterStore, Tensor, TensorError};

pub use contexts::{plan_contexts, ContextKind};
pub use forward::{Batch, BatchForward};
pub use infer::{Grounding, Request};
pub use loss::{contrastive_loss, harmonic_warmup_loss, mle_loss, total_loss, warmup_total_loss, LossValues};
pub use oracle::oracle_model;
pub use train::{DevItem, EpochLog, TrainConfig, Trainer};
pub use visual::{NodeLayout, VisualNode};

pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;

pub const UNK: &str = "<unk>";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Chart(#[from] ChartError),
    #[error("unknown POS tag `{0}`")]
    UnknownTag(String),
    #[error("image `{0}` has no regions")]
    EmptyRegions(String),
    #[error("image `{image}`: feature dimension {got}, model expects {expected}")]
    FeatureDim { image: String, got: usize, expected: usize },
    #[error("sentence of length {n} exceeds the limit of {max}")]
    TooLong { n: usize, max: usize },
    #[error("empty sentence")]
    EmptySentence,
    #[error("empty batch")]
    EmptyBatch,
    #[error("contrastive loss needs at least two images in a batch, got {0}")]
    BatchTooSmall(usize),
    #[error("lambda must lie in [0, 1], got {0}")]
    Lambda(f64),
    #[error("tree has {got} heads for a sentence of length {n}")]
    TreeLength { got: usize, n: usize },
    #[error(transparent)]
    Tree(#[from] crate::structure::TreeViolation),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Ordered string vocabulary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(items: Vec<String>) -> Self {
        let index = items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Vocab { items, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.items
    }
}

impl Vocab {
    pub fn get(&self, s: &str) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.items[i]
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Architecture and matching options. Stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub tag_dim: usize,
    pub feat_dim: usize,
    pub attn_dim: usize,
    pub hidden: usize,
    /// Width of the projections feeding the relationship-node biaffine.
    pub rel_rank: usize,
    /// Width of the projections feeding the arc-context biaffine.
    pub arc_rank: usize,
    pub match_dim: usize,
    pub dec_tag_dim: usize,
    /// Scale region features to unit length on input and compare contexts
    /// with visual nodes by cosine rather than dot product.
    pub normalize_sim: bool,
    pub finetune_words: bool,
    /// Arc contexts with posterior below this are left out of the loss.
    pub arc_threshold: f64,
    /// Second-order contexts with posterior product below this are left out.
    pub second_threshold: f64,
    pub max_second: usize,
}

impl ModelConfig {
    pub fn with_dims(word_dim: usize, feat_dim: usize) -> Self {
        ModelConfig {
            word_dim,
            tag_dim: 16,
            feat_dim,
            attn_dim: 32,
            hidden: 64,
            rel_rank: 16,
            arc_rank: 16,
            match_dim: 32,
            dec_tag_dim: 16,
            normalize_sim: true,
            finetune_words: false,
            arc_threshold: 0.05,
            second_threshold: 0.05,
            max_second: 32,
        }
    }

    /// Width of a token vector `[word; tag]`.
    pub fn token_dim(&self) -> usize {
        self.word_dim + self.tag_dim
    }

    /// Every parameter name with its shape, in registration order.
    pub fn param_shapes(&self, n_words: usize, n_tags: usize) -> Vec<(String, Vec<usize>)> {
        let (e, d, h) = (self.token_dim(), self.feat_dim, self.hidden);
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        let mut mlp = |name: &str, dims: &[usize]| {
            for (i, w) in dims.windows(2).enumerate() {
                out.push((format!("{name}.{i}.w"), vec![w[0], w[1]]));
                out.push((format!("{name}.{i}.b"), vec![w[1]]));
            }
        };
        mlp("vis.attr", &[d, h, d]);
        mlp("vis.src", &[d, h, self.rel_rank]);
        mlp("vis.dst", &[d, h, self.rel_rank]);
        let dec_in = self.dec_tag_dim + 4 + e;
        mlp("dec.child", &[dec_in, h, n_tags]);
        mlp("dec.stop", &[dec_in, h, 2]);
        mlp("dec.root", &[e, h, n_tags]);
        mlp("ctx.par", &[e, h, self.arc_rank]);
        mlp("ctx.chd", &[e, h, self.arc_rank]);
        mlp("ctx.sec", &[2 * self.match_dim, h, self.match_dim]);
        let (r, ra, m) = (self.rel_rank, self.arc_rank, self.match_dim);
        let mut named = vec![
            ("emb.word".to_string(), vec![n_words, self.word_dim]),
            ("emb.tag".to_string(), vec![n_tags, self.tag_dim]),
            ("dec.tag".to_string(), vec![n_tags, self.dec_tag_dim]),
            ("vis.rel.w1".to_string(), vec![d, r, r]),
            ("vis.rel.w2".to_string(), vec![r, d]),
            ("vis.rel.b".to_string(), vec![d]),
            ("enc.q".to_string(), vec![e, self.attn_dim]),
            ("enc.k".to_string(), vec![d, self.attn_dim]),
            ("enc.v".to_string(), vec![d, e]),
            ("ctx.arc.w1".to_string(), vec![m, ra, ra]),
            ("ctx.arc.w2".to_string(), vec![ra, m]),
            ("ctx.arc.b".to_string(), vec![m]),
            ("match.c".to_string(), vec![e, m]),
            ("match.v".to_string(), vec![d, m]),
        ];
        named.extend(out);
        named
    }
}

/// Model parameters plus the vocabularies they are indexed by.
#[derive(Clone, Debug)]
pub struct Model<S> {
    pub config: ModelConfig,
    pub words: Vocab,
    pub tags: Vocab,
    pub params: ParameterStore<S>,
}

/// A sentence mapped to vocabulary ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub words: Vec<usize>,
    pub tags: Vec<usize>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Serialized form of the non-tensor parts of a model.
#[derive(Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    words: Vocab,
    tags: Vocab,
    frozen: Vec<String>,
}

impl<S: Scalar> Model<S> {
    /// Fresh parameters. `embeddings[i]` is the pretrained vector of
    /// `words[i]`; row 0 of the word table is the unknown-word vector.
    pub fn new(
        config: ModelConfig,
        word_list: &[String],
        embeddings: &[Vec<f64>],
        tags: &[String],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut items = vec![UNK.to_string()];
        items.extend(word_list.iter().cloned());
        let words = Vocab::from(items);
        let tags = Vocab::from(tags.to_vec());
        let mut params = ParameterStore::new();
        for (name, shape) in config.param_shapes(words.len(), tags.len()) {
            let t = match name.as_str() {
                "emb.word" => {
                    let mut t = init::normal(rng, &shape, 0.01);
                    for (i, v) in embeddings.iter().enumerate() {
                        if v.len() != config.word_dim {
                            return Err(ModelError::Checkpoint(format!(
                                "embedding for `{}` has dimension {}, expected {}",
                                word_list[i],
                                v.len(),
                                config.word_dim
                            )));
                        }
                        let row = &mut t.data_mut()[(i + 1) * config.word_dim..(i + 2) * config.word_dim];
                        for (r, &x) in row.iter_mut().zip(v) {
                            *r = S::lit(x);
                        }
                    }
                    t
                }
                "emb.tag" | "dec.tag" => init::normal(rng, &shape, 0.01),
                n if n.ends_with(".b") => Tensor::zeros(&shape),
                _ => {
                    let fan_in: usize = shape[..shape.len() - 1].iter().product();
                    init::fan_in(rng, &shape, fan_in)
                }
            };
            params.insert(&name, t)?;
        }
        if !config.finetune_words {
            params.set_trainable("emb.word", false)?;
        }
        Ok(Model {
            config,
            words,
            tags,
            params,
        })
    }

    pub fn encode(&self, words: &[String], pos: &[String]) -> Result<Sentence> {
        if words.is_empty() {
            return Err(ModelError::EmptySentence);
        }
        let w = words
            .iter()
            .map(|s| self.words.get(&s.to_lowercase()).unwrap_or(0))
            .collect();
        let t = pos
            .iter()
            .map(|p| self.tags.get(p).ok_or_else(|| ModelError::UnknownTag(p.clone())))
            .collect::<Result<_>>()?;
        Ok(Sentence { words: w, tags: t })
    }

    pub fn encode_record(&self, rec: &CorpusRecord) -> Result<Sentence> {
        self.encode(&rec.tokens, &rec.pos)
    }

    pub fn to_checkpoint(&self, config_digest: [u8; 32]) -> Checkpoint {
        let frozen = self
            .params
            .iter()
            .filter(|(_, p)| !p.trainable)
            .map(|(n, _)| n.to_string())
            .collect();
        let meta = Meta {
            model: self.config.clone(),
            words: self.words.clone(),
            tags: self.tags.clone(),
            frozen,
        };
        let params: IndexMap<String, Tensor<f32>> = self
            .params
            .iter()
            .map(|(n, p)| (n.to_string(), p.value.cast()))
            .collect();
        Checkpoint {
            config_digest,
            metadata: serde_json::to_value(meta).expect("metadata serializes"),
            params,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta: Meta =
            serde_json::from_value(ckpt.metadata.clone()).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let expected = meta.model.param_shapes(meta.words.len(), meta.tags.len());
        if expected.len() != ckpt.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "{} parameters, expected {}",
                ckpt.params.len(),
                expected.len()
            )));
        }
        let mut params = ParameterStore::new();
        for (name, shape) in expected {
            let t = ckpt
                .params
                .get(&name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    shape
                )));
            }
            params.insert(&name, t.cast())?;
        }
        for name in &meta.frozen {
            params.set_trainable(name, false)?;
        }
        Ok(Model {
            config: meta.model,
            words: meta.words,
            tags: meta.tags,
            params,
        })
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            words: self.words.clone(),
            tags: self.tags.clone(),
            params: self.params.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> Model64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let words = vec!["dog".to_string(), "red".to_string()];
        let emb = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let tags = vec!["NN".to_string(), "JJ".to_string()];
        Model::new(ModelConfig::with_dims(2, 8), &words, &emb, &tags, &mut rng).unwrap()
    }

    #[test]
    fn encodes_with_unknown_fallback() {
        let m = small();
        let s = m.encode(&["Red".into(), "cat".into()], &["JJ".into(), "NN".into()]).unwrap();
        assert_eq!(s.words, vec![2, 0]);
        assert_eq!(s.tags, vec![1, 0]);
        assert!(matches!(m.encode(&["x".into()], &["VB".into()]), Err(ModelError::UnknownTag(_))));
        let emb = m.params.get("emb.word").unwrap();
        assert_eq!(emb.row(1), &[1.0, 0.0]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = small();
        let back = Model64::from_checkpoint(&m.to_checkpoint([0; 32])).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.words, m.words);
        for ((a, pa), (b, pb)) in m.params.iter().zip(back.params.iter()) {
            assert_eq!(a, b);
            assert_eq!(pa.trainable, pb.trainable);
            for (x, y) in pa.value.data().iter().zip(pb.value.data()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }
}
