use rayon::prelude::*;

use crate::chart::viterbi;
use crate::data::RegionSet;
use crate::scalar::Scalar;
use crate::structure::{tree_to_instances, FirstAlignment, NodeType, SecondAlignment, VLAlignment, ZeroAlignment};
use crate::tensor::Graph;

use super::contexts::{context_vectors, project_nodes, ContextKind};
use super::forward::Batch;
use super::visual::VisualNode;
use super::{Model, ModelError, Result, Sentence};

/// Tree, token types and visual alignment of one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Grounding {
    /// 1-based head array.
    pub heads: Vec<usize>,
    /// Type of each token's aligned node.
    pub types: Vec<NodeType>,
    pub alignment: VLAlignment,
}

/// One inference request.
#[derive(Clone, Copy, Debug)]
pub struct Request<'a> {
    pub sentence_id: &'a str,
    pub sentence: &'a Sentence,
    pub regions: &'a RegionSet,
    /// Tree to ground; the Viterbi tree is used when absent.
    pub tree: Option<&'a [usize]>,
}

fn argmax(scores: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (id, s) in scores {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((id, s));
        }
    }
    best.map(|(id, _)| id)
}

impl<S: Scalar> Model<S> {
    /// Parses (unless a tree is supplied) and grounds one sentence. Each
    /// token goes to its highest posterior-weighted similarity node, each arc
    /// to its best relationship node; ties go to the lowest node id.
    pub fn analyze(&self, req: Request<'_>, max_len: usize) -> Result<Grounding> {
        let s = req.sentence;
        let n = s.len();
        if n == 0 {
            return Err(ModelError::EmptySentence);
        }
        if n > max_len {
            return Err(ModelError::TooLong { n, max: max_len });
        }
        if let Some(t) = req.tree {
            if t.len() != n {
                return Err(ModelError::TreeLength { got: t.len(), n });
            }
        }
        let g = Graph::new();
        let b = self.params.bind(&g)?;
        let batch = Batch::new([(s, req.regions)])?;
        let fwd = self.forward(&b, &batch, None)?;
        let heads = match req.tree {
            Some(t) => t.to_vec(),
            None => viterbi(&fwd.chart_scores(0)?)?.0,
        };
        let inst = tree_to_instances(&heads)?;
        let post = fwd.posterior(0);
        let p = |h: usize, d: usize| post[h * (n + 1) + d];

        let mut kinds: Vec<ContextKind> = (1..=n).map(ContextKind::Token).collect();
        kinds.extend(inst.first.iter().map(|&(h, d)| ContextKind::Arc(h, d)));
        let vectors = context_vectors(&b, &self.config, fwd.contexts[0], &kinds)?.value();
        let (nodes, layout) = fwd.nodes[0];
        let proj = project_nodes(&b, &self.config, nodes)?.value();
        let sim = |row: usize, node: usize| -> f64 {
            vectors
                .row(row)
                .iter()
                .zip(proj.row(node))
                .map(|(x, y)| x.as_f64() * y.as_f64())
                .sum()
        };

        let zero: Vec<usize> = (0..n)
            .map(|i| argmax((0..layout.len()).map(|v| (v, sim(i, v)))).expect("at least one node"))
            .collect();
        let rels: Vec<usize> = layout.pairs().map(|(i, j)| layout.id(VisualNode::Relationship(i, j))).collect();
        let mut align = VLAlignment {
            sentence_id: req.sentence_id.to_string(),
            image_id: req.regions.image_id.clone(),
            ..Default::default()
        };
        for (i, &v) in zero.iter().enumerate() {
            align.zero.push(ZeroAlignment { token: i + 1, node: v });
        }
        for (a, &(h, d)) in inst.first.iter().enumerate() {
            let w = p(h, d);
            let via = argmax(rels.iter().map(|&v| (v, w * sim(n + a, v))));
            align.first.push(FirstAlignment {
                head: h,
                dep: d,
                nodes: [zero[h - 1], zero[d - 1]],
                via,
            });
        }
        for so in &inst.second {
            align.second.push(SecondAlignment {
                tokens: so.tokens,
                pattern: so.pattern,
                nodes: so.tokens.map(|t| zero[t - 1]),
            });
        }
        let referenced: Vec<usize> = zero
            .iter()
            .copied()
            .chain(align.first.iter().filter_map(|f| f.via))
            .collect();
        for id in referenced {
            if let Some(r) = layout.node_ref(id, req.regions) {
                align.register(r);
            }
        }
        let types = zero
            .iter()
            .map(|&v| layout.node_type(v).expect("node in layout"))
            .collect();
        Ok(Grounding {
            heads,
            types,
            alignment: align,
        })
    }

    /// [`Model::analyze`] over many sentences in parallel, results in input order.
    pub fn analyze_all(&self, reqs: &[Request<'_>], max_len: usize) -> Vec<Result<Grounding>> {
        reqs.par_iter().map(|r| self.analyze(*r, max_len)).collect()
    }
}
