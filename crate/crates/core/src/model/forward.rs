use std::collections::HashMap;

use crate::chart::{DmvScores, Dir, Valence};
use crate::data::RegionSet;
use crate::scalar::Scalar;
use crate::tensor::{attention, mlp, Affine, Bound, Tensor, Var};

use super::dmv::{dmv_marginals, ScoreLayout};
use super::visual::{build_visual_nodes, region_tensor, NodeLayout};
use super::{Model, ModelError, Result, Sentence};

/// The affine layers `{prefix}.0`, `{prefix}.1`, … bound to the graph.
pub(crate) fn layers<'g, S: Scalar>(b: &Bound<'g, S>, prefix: &str) -> Result<Vec<Affine<'g, S>>> {
    let mut out = Vec::new();
    while b.contains(&format!("{prefix}.{}.w", out.len())) {
        let i = out.len();
        out.push(Affine {
            w: b.get(&format!("{prefix}.{i}.w"))?,
            b: b.get(&format!("{prefix}.{i}.b"))?,
        });
    }
    if out.is_empty() {
        return Err(crate::tensor::TensorError::UnknownParam(format!("{prefix}.0.w")).into());
    }
    Ok(out)
}

/// Sentences with their images; images shared by several captions appear once.
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    pub sentences: Vec<&'a Sentence>,
    pub images: Vec<&'a RegionSet>,
    /// Index into `images` for each sentence.
    pub image_of: Vec<usize>,
}

impl<'a> Batch<'a> {
    pub fn new(items: impl IntoIterator<Item = (&'a Sentence, &'a RegionSet)>) -> Result<Self> {
        let mut batch = Batch {
            sentences: Vec::new(),
            images: Vec::new(),
            image_of: Vec::new(),
        };
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (s, img) in items {
            if s.is_empty() {
                return Err(ModelError::EmptySentence);
            }
            let idx = *seen.entry(img.image_id.as_str()).or_insert_with(|| {
                batch.images.push(img);
                batch.images.len() - 1
            });
            batch.sentences.push(s);
            batch.image_of.push(idx);
        }
        if batch.sentences.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Everything one forward pass over a batch produces.
pub struct BatchForward<'g, S: Scalar> {
    pub layout: ScoreLayout,
    /// Flat attach, attach_val, stop, cont and root tables.
    pub scores: [Var<'g, S>; 5],
    /// `[K]`
    pub log_partition: Var<'g, S>,
    /// Flat `(n_k+1)²` arc posteriors per sentence.
    pub posteriors: Var<'g, S>,
    /// Fused token vectors `[n_k, E]` per sentence.
    pub contexts: Vec<Var<'g, S>>,
    /// Sentence summaries `[K, E]`.
    pub summary: Var<'g, S>,
    /// Visual node features per image.
    pub nodes: Vec<(Var<'g, S>, NodeLayout)>,
    pub image_of: Vec<usize>,
}

impl<'g, S: Scalar> BatchForward<'g, S> {
    /// Decoder scores of sentence `k` in `f64`.
    pub fn chart_scores(&self, k: usize) -> Result<DmvScores<f64>> {
        let n = self.layout.lens()[k];
        let tables: Vec<Vec<f64>> = (0..5)
            .map(|t| {
                let off = self.layout.offset(t, k);
                let end = if k + 1 < self.layout.len() {
                    self.layout.offset(t, k + 1)
                } else {
                    self.layout.total(t)
                };
                self.scores[t].value().data()[off..end].iter().map(|x| x.as_f64()).collect()
            })
            .collect();
        let [a, av, st, co, ro]: [Vec<f64>; 5] = tables.try_into().expect("five tables");
        Ok(DmvScores::from_tables(n, a, av, st, co, ro)?)
    }

    /// Arc posteriors of sentence `k`, row-major `(n+1)×(n+1)`.
    pub fn posterior(&self, k: usize) -> Vec<f64> {
        let n = self.layout.lens()[k];
        let off = self.layout.posterior_offset(k);
        let p = self.posteriors.value();
        p.data()[off..off + (n + 1) * (n + 1)].iter().map(|x| x.as_f64()).collect()
    }
}

/// Row of the decoder input for sentence `k`, tag `t`, direction and valence.
fn dec_row(k: usize, n_tags: usize, t: usize, dir: Dir, val: Valence) -> usize {
    ((k * n_tags + t) * 2 + dir as usize) * 2 + val as usize
}

impl<S: Scalar> Model<S> {
    /// Runs encoder and decoder over a batch. `attach`, when given, replaces
    /// the all-zero valence-free attachment table (length `layout.total(0)`).
    pub fn forward<'g>(
        &self,
        b: &Bound<'g, S>,
        batch: &Batch<'_>,
        attach: Option<Var<'g, S>>,
    ) -> Result<BatchForward<'g, S>> {
        let g = b.get("emb.word")?.graph();
        let cfg = &self.config;

        let mut nodes = Vec::with_capacity(batch.images.len());
        for img in &batch.images {
            let mut feats = g.constant(region_tensor(img, cfg.feat_dim)?)?;
            if cfg.normalize_sim {
                // unit-length regions make grounding invariant to feature scale
                feats = feats.l2_normalize_rows()?;
            }
            nodes.push(build_visual_nodes(b, feats)?);
        }

        let (eq, ek, ev) = (b.get("enc.q")?, b.get("enc.k")?, b.get("enc.v")?);
        let mut contexts = Vec::with_capacity(batch.len());
        let mut summaries = Vec::with_capacity(batch.len());
        for (s, &img) in batch.sentences.iter().zip(&batch.image_of) {
            let w = g.concat_cols(&[
                b.get("emb.word")?.gather_rows(&s.words)?,
                b.get("emb.tag")?.gather_rows(&s.tags)?,
            ])?;
            let v = nodes[img].0;
            let (att, _) = attention(w.matmul(eq)?, v.matmul(ek)?, v.matmul(ev)?)?;
            let c = w.add(att)?;
            let sum = c.mean_rows()?;
            summaries.push(sum.reshape(&[1, cfg.token_dim()])?);
            contexts.push(c);
        }
        let summary = g.concat_rows(&summaries)?;

        let k = batch.len();
        let n_tags = self.tags.len();
        let rows = k * n_tags * 4;
        let mut tag_idx = Vec::with_capacity(rows);
        let mut sent_idx = Vec::with_capacity(rows);
        let mut onehot = Vec::with_capacity(rows * 4);
        for kk in 0..k {
            for t in 0..n_tags {
                for dir in 0..2 {
                    for val in 0..2 {
                        tag_idx.push(t);
                        sent_idx.push(kk);
                        let mut row = [S::zero(); 4];
                        row[dir] = S::one();
                        row[2 + val] = S::one();
                        onehot.extend(row);
                    }
                }
            }
        }
        let dec_in = g.concat_cols(&[
            b.get("dec.tag")?.gather_rows(&tag_idx)?,
            g.constant(Tensor::matrix(rows, 4, onehot)?)?,
            summary.gather_rows(&sent_idx)?,
        ])?;
        let child = mlp(dec_in, &layers(b, "dec.child")?)?.log_softmax_rows()?;
        let stop = mlp(dec_in, &layers(b, "dec.stop")?)?.log_softmax_rows()?;
        let root = mlp(summary, &layers(b, "dec.root")?)?.log_softmax_rows()?;

        let layout = ScoreLayout::new(batch.sentences.iter().map(|s| s.len()).collect());
        let mut av_idx = Vec::with_capacity(layout.total(1));
        let mut stop_idx = Vec::with_capacity(layout.total(2));
        let mut cont_idx = Vec::with_capacity(layout.total(3));
        let mut root_idx = Vec::with_capacity(layout.total(4));
        for (kk, s) in batch.sentences.iter().enumerate() {
            let n = s.len();
            let tag = |i: usize| s.tags[i - 1];
            for h in 0..=n {
                for d in 0..=n {
                    for val in [Valence::Adjacent, Valence::NonAdjacent] {
                        av_idx.push(if h == 0 || d == 0 || h == d {
                            None
                        } else {
                            let dir = if d < h { Dir::Left } else { Dir::Right };
                            Some(dec_row(kk, n_tags, tag(h), dir, val) * n_tags + tag(d))
                        });
                    }
                }
            }
            for h in 0..=n {
                for dir in [Dir::Left, Dir::Right] {
                    for val in [Valence::Adjacent, Valence::NonAdjacent] {
                        let r = (h > 0).then(|| dec_row(kk, n_tags, tag(h), dir, val) * 2);
                        stop_idx.push(r);
                        cont_idx.push(r.map(|r| r + 1));
                    }
                }
            }
            root_idx.push(None);
            for d in 1..=n {
                root_idx.push(Some(kk * n_tags + tag(d)));
            }
        }
        let attach = match attach {
            Some(a) => a,
            None => g.constant(Tensor::zeros(&[layout.total(0)]))?,
        };
        let scores = [
            attach,
            child.gather(&av_idx, &[av_idx.len()])?,
            stop.gather(&stop_idx, &[stop_idx.len()])?,
            stop.gather(&cont_idx, &[cont_idx.len()])?,
            root.gather(&root_idx, &[root_idx.len()])?,
        ];
        let (log_partition, posteriors) = dmv_marginals(scores, &layout)?;
        Ok(BatchForward {
            layout,
            scores,
            log_partition,
            posteriors,
            contexts,
            summary,
            nodes,
            image_of: batch.image_of.clone(),
        })
    }
}
