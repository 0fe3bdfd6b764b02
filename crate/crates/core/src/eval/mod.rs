//! Parsing and grounding metrics.
//!
//! Attachment accuracy counts every token, including the one headed by
//! ROOT. Grounding accuracy matches predicted nodes to gold nodes by type
//! and box overlap, so predictions made on detector boxes can be scored
//! against a scene graph with different ids.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chart::{arc_posteriors, ChartError, DmvScores};
use crate::structure::{BBox, NodeRef, NodeType, SceneGraph, VLAlignment};

/// Box overlap threshold for a grounding to count.
pub const IOU_THRESHOLD: f64 = 0.5;

/// Penn Treebank punctuation tags.
pub const PUNCT_TAGS: [&str; 9] = [".", ",", ":", "``", "''", "-LRB-", "-RRB-", "#", "$"];

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("sentence {index}: predicted {pred} heads, gold has {gold}")]
    Length { index: usize, pred: usize, gold: usize },
    #[error("{pred} predicted sentences, {gold} gold")]
    Count { pred: usize, gold: usize },
    #[error(transparent)]
    Chart(#[from] ChartError),
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Correct over total, `NaN`-free: an empty set scores 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += usize::from(correct);
    }

    pub fn merge(&mut self, other: Accuracy) {
        self.correct += other.correct;
        self.total += other.total;
    }

    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttachmentOptions {
    /// Count the ROOT arc as an unordered `(ROOT, token)` pair in UDA. When
    /// off, ROOT-headed gold tokens are left out of UDA.
    pub root_in_uda: bool,
    /// Skip tokens whose POS tag is punctuation.
    pub exclude_punct: bool,
}

impl Default for AttachmentOptions {
    fn default() -> Self {
        AttachmentOptions {
            root_in_uda: true,
            exclude_punct: false,
        }
    }
}

/// A predicted and a gold head array (1-based, 0 = ROOT) for one sentence.
#[derive(Clone, Copy, Debug)]
pub struct TreePair<'a> {
    pub pred: &'a [usize],
    pub gold: &'a [usize],
    /// Needed only for punctuation exclusion.
    pub pos: Option<&'a [String]>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttachmentScores {
    pub directed: Accuracy,
    pub undirected: Accuracy,
}

impl AttachmentScores {
    pub fn dda(&self) -> f64 {
        self.directed.value()
    }

    pub fn uda(&self) -> f64 {
        self.undirected.value()
    }
}

fn is_punct(pos: Option<&[String]>, i: usize) -> bool {
    pos.and_then(|p| p.get(i)).is_some_and(|t| PUNCT_TAGS.contains(&t.as_str()))
}

/// Directed and undirected dependency accuracy.
pub fn dda_uda(pairs: &[TreePair<'_>], opts: AttachmentOptions) -> Result<AttachmentScores, EvalError> {
    let mut s = AttachmentScores::default();
    for (index, p) in pairs.iter().enumerate() {
        if p.pred.len() != p.gold.len() {
            return Err(EvalError::Length {
                index,
                pred: p.pred.len(),
                gold: p.gold.len(),
            });
        }
        let gold_pairs: Vec<(usize, usize)> = p
            .gold
            .iter()
            .enumerate()
            .map(|(i, &h)| (h.min(i + 1), h.max(i + 1)))
            .collect();
        for (i, (&ph, &gh)) in p.pred.iter().zip(p.gold).enumerate() {
            if opts.exclude_punct && is_punct(p.pos, i) {
                continue;
            }
            s.directed.add(ph == gh);
            if gh == 0 && !opts.root_in_uda {
                continue;
            }
            let pair = (ph.min(i + 1), ph.max(i + 1));
            if ph == 0 && !opts.root_in_uda {
                s.undirected.add(false);
            } else {
                s.undirected.add(gold_pairs.contains(&pair));
            }
        }
    }
    Ok(s)
}

/// Convenience wrapper with default options over `(pred, gold)` pairs.
///
/// Pairs of different lengths count as all-wrong rather than failing.
pub fn attachment_scores<'a>(pairs: impl Iterator<Item = (&'a [usize], &'a [usize])>, exclude_punct: bool) -> Summary {
    let mut total = AttachmentScores::default();
    for (pred, gold) in pairs {
        let opts = AttachmentOptions {
            exclude_punct,
            ..Default::default()
        };
        match dda_uda(&[TreePair { pred, gold, pos: None }], opts) {
            Ok(s) => {
                total.directed.merge(s.directed);
                total.undirected.merge(s.undirected);
            }
            Err(_) => {
                for _ in gold {
                    total.directed.add(false);
                    total.undirected.add(false);
                }
            }
        }
    }
    Summary {
        dda: total.dda(),
        uda: total.uda(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub dda: f64,
    pub uda: f64,
}

/// Directed recall of gold non-ROOT arcs bucketed by arc length `|h − d|`.
pub fn arc_length_breakdown(pairs: &[TreePair<'_>]) -> Result<BTreeMap<usize, Accuracy>, EvalError> {
    let mut out: BTreeMap<usize, Accuracy> = BTreeMap::new();
    for (index, p) in pairs.iter().enumerate() {
        if p.pred.len() != p.gold.len() {
            return Err(EvalError::Length {
                index,
                pred: p.pred.len(),
                gold: p.gold.len(),
            });
        }
        for (i, (&ph, &gh)) in p.pred.iter().zip(p.gold).enumerate() {
            if gh != 0 {
                out.entry(gh.abs_diff(i + 1)).or_default().add(ph == gh);
            }
        }
    }
    Ok(out)
}

/// Right-branching trees: every token headed by its left neighbour.
pub fn right_branching(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Expected DDA when each token draws its head uniformly from the other
/// `n` positions (ROOT included), ignoring tree constraints.
pub fn random_head_dda(golds: &[&[usize]]) -> f64 {
    let tokens: usize = golds.iter().map(|g| g.len()).sum();
    // each token hits with probability 1/n, so every sentence contributes 1
    let hits = golds.iter().filter(|g| !g.is_empty()).count() as f64;
    if tokens == 0 {
        0.0
    } else {
        hits / tokens as f64
    }
}

/// Expected DDA of a projective tree drawn uniformly at random.
pub fn random_tree_dda(golds: &[&[usize]]) -> Result<f64, EvalError> {
    let mut acc = 0.0;
    let mut tokens = 0usize;
    for g in golds {
        let n = g.len();
        let post = arc_posteriors(&DmvScores::<f64>::zeros(n)?)?;
        for (i, &h) in g.iter().enumerate() {
            acc += post.get(h, i + 1);
        }
        tokens += n;
    }
    Ok(if tokens == 0 { 0.0 } else { acc / tokens as f64 })
}

/// True when `pred` grounds to `gold`: same type and every box overlaps its
/// counterpart (both endpoints, in order, for relationships) at
/// [`IOU_THRESHOLD`] or more.
pub fn node_matches(pred: &NodeRef, gold: &NodeRef) -> bool {
    pred.node_type == gold.node_type
        && pred.boxes.len() == gold.boxes.len()
        && !gold.boxes.is_empty()
        && pred.boxes.iter().zip(&gold.boxes).all(|(a, b)| iou(a, b) >= IOU_THRESHOLD)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ZeroAa {
    pub overall: Accuracy,
    /// Keyed by the gold node type.
    pub by_type: BTreeMap<NodeType, Accuracy>,
    /// Gold-aligned tokens the prediction left out; they count as wrong.
    pub missing: Vec<usize>,
    /// Predicted tokens without a gold alignment; excluded.
    pub excluded: Vec<usize>,
}

/// Zero-order alignment accuracy of one sentence.
pub fn zero_aa(pred: &VLAlignment, gold: &VLAlignment, sg: &SceneGraph) -> ZeroAa {
    let mut out = ZeroAa::default();
    for z in &gold.zero {
        let Some(g) = sg.node_ref(z.node) else { continue };
        let ok = match pred.zero_of(z.token).and_then(|id| pred.node(id)) {
            Some(p) => node_matches(p, &g),
            None => {
                out.missing.push(z.token);
                false
            }
        };
        out.overall.add(ok);
        out.by_type.entry(g.node_type).or_default().add(ok);
    }
    for z in &pred.zero {
        if gold.zero_of(z.token).is_none() {
            out.excluded.push(z.token);
        }
    }
    out
}

/// Gold nodes a predicted node grounds to.
fn candidates(pred: Option<&NodeRef>, sg: &SceneGraph) -> Vec<usize> {
    let Some(p) = pred else { return vec![] };
    let ids = sg
        .objects()
        .iter()
        .map(|o| o.id)
        .chain(sg.attributes().iter().map(|a| a.id))
        .chain(sg.relationships().iter().map(|r| r.id));
    ids.filter_map(|id| sg.node_ref(id))
        .filter(|g| node_matches(p, g))
        .map(|g| g.id)
        .collect()
}

fn adjacent_any(a: &[usize], b: &[usize], sg: &SceneGraph) -> bool {
    a.iter().any(|&x| b.iter().any(|&y| sg.adjacent(x, y)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StructuralAa {
    pub first: Accuracy,
    pub second: Accuracy,
}

/// First- and second-order alignment accuracy over the predicted entries.
///
/// A first-order entry is correct when its two nodes ground to adjacent
/// gold nodes. A second-order entry is correct when its three nodes ground
/// to gold nodes forming a connected triple: at least two of the three
/// pairs adjacent, which covers both chains and forks in either direction.
pub fn first_second_aa(pred: &VLAlignment, sg: &SceneGraph) -> StructuralAa {
    let mut out = StructuralAa::default();
    for f in &pred.first {
        let a = candidates(pred.node(f.nodes[0]), sg);
        let b = candidates(pred.node(f.nodes[1]), sg);
        out.first.add(adjacent_any(&a, &b, sg));
    }
    for s in &pred.second {
        let c: Vec<Vec<usize>> = s.nodes.iter().map(|&id| candidates(pred.node(id), sg)).collect();
        let links = [(0, 1), (1, 2), (0, 2)]
            .iter()
            .filter(|&&(i, j)| adjacent_any(&c[i], &c[j], sg))
            .count();
        out.second.add(links >= 2);
    }
    out
}

/// All metrics of one evaluation run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub attachment: Option<AttachmentScores>,
    pub arc_length: BTreeMap<usize, Accuracy>,
    pub zero: Option<ZeroAa>,
    pub structural: Option<StructuralAa>,
}

impl Report {
    /// `(name, value)` in a fixed order.
    pub fn metrics(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        if let Some(a) = &self.attachment {
            out.push(("dda".to_string(), a.dda()));
            out.push(("uda".to_string(), a.uda()));
        }
        for (len, acc) in &self.arc_length {
            out.push((format!("arc_len_{len}_recall"), acc.value()));
        }
        if let Some(z) = &self.zero {
            out.push(("zero_aa".to_string(), z.overall.value()));
            for (t, acc) in &z.by_type {
                out.push((format!("zero_aa_{}", t.as_str().to_lowercase()), acc.value()));
            }
        }
        if let Some(s) = &self.structural {
            out.push(("first_aa".to_string(), s.first.value()));
            out.push(("second_aa".to_string(), s.second.value()));
        }
        out
    }

    /// One `name<TAB>value` line per metric.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (name, v) in self.metrics() {
            writeln!(s, "{name}\t{v:.6}").expect("write to string");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{AttributeNode, ObjectNode, RelationshipNode};

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert!((iou(&a, &bx(5.0, 0.0, 15.0, 10.0)) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 30.0, 30.0)), 0.0);
    }

    #[test]
    fn two_token_example() {
        let s = dda_uda(
            &[TreePair {
                pred: &[2, 0],
                gold: &[0, 1],
                pos: None,
            }],
            AttachmentOptions::default(),
        )
        .unwrap();
        assert_eq!((s.dda(), s.uda()), (0.0, 0.5));
        let err = dda_uda(
            &[TreePair {
                pred: &[0],
                gold: &[0, 1],
                pos: None,
            }],
            AttachmentOptions::default(),
        );
        assert!(matches!(err, Err(EvalError::Length { .. })));
    }

    #[test]
    fn punctuation_toggle() {
        let pos = vec!["NN".to_string(), ".".to_string()];
        let pair = TreePair {
            pred: &[0, 0],
            gold: &[0, 1],
            pos: Some(&pos),
        };
        let all = dda_uda(&[pair], AttachmentOptions::default()).unwrap();
        assert_eq!(all.directed.total, 2);
        let opts = AttachmentOptions {
            exclude_punct: true,
            ..Default::default()
        };
        let some = dda_uda(&[pair], opts).unwrap();
        assert_eq!(some.directed, Accuracy { correct: 1, total: 1 });
    }

    #[test]
    fn arc_buckets_partition_non_root_tokens() {
        let gold = [2, 0, 2, 3];
        let pred = [2, 0, 4, 3];
        let b = arc_length_breakdown(&[TreePair {
            pred: &pred,
            gold: &gold,
            pos: None,
        }])
        .unwrap();
        assert_eq!(b[&1], Accuracy { correct: 2, total: 3 });
        assert_eq!(b.values().map(|a| a.total).sum::<usize>(), 3);
    }

    #[test]
    fn baselines() {
        assert_eq!(right_branching(3), vec![0, 1, 2]);
        let g: &[usize] = &[0, 1];
        assert_eq!(random_head_dda(&[g]), 0.5);
        // two projective trees over two tokens, each gold arc in one
        assert!((random_tree_dda(&[g]).unwrap() - 0.5).abs() < 1e-12);
    }

    fn scene() -> SceneGraph {
        let objects = vec![
            ObjectNode {
                id: 0,
                bbox: bx(0.0, 0.0, 10.0, 10.0),
                label: Some("man".into()),
            },
            ObjectNode {
                id: 1,
                bbox: bx(20.0, 0.0, 30.0, 10.0),
                label: Some("horse".into()),
            },
            ObjectNode {
                id: 2,
                bbox: bx(50.0, 50.0, 60.0, 60.0),
                label: Some("tree".into()),
            },
        ];
        let attrs = [(3, 0, "tall"), (5, 1, "brown"), (6, 2, "green")]
            .into_iter()
            .map(|(id, owner, l)| AttributeNode {
                id,
                owner,
                label: Some(l.into()),
            })
            .collect();
        let rels = vec![RelationshipNode {
            id: 4,
            src: 0,
            dst: 1,
            label: Some("riding".into()),
        }];
        SceneGraph::new("img", objects, attrs, rels).unwrap()
    }

    fn pred_with(nodes: Vec<NodeRef>, zero: &[(usize, usize)]) -> VLAlignment {
        VLAlignment {
            nodes,
            zero: zero
                .iter()
                .map(|&(token, node)| crate::structure::ZeroAlignment { token, node })
                .collect(),
            ..Default::default()
        }
    }

    #[test]
    fn zero_aa_distinguishes_types_and_endpoints() {
        let sg = scene();
        let gold = pred_with(vec![], &[(1, 3), (2, 0), (3, 4)]);
        let right = NodeRef {
            id: 7,
            node_type: NodeType::Attribute,
            boxes: vec![bx(0.0, 0.0, 10.0, 10.0)],
        };
        let wrong_type = NodeRef {
            id: 8,
            node_type: NodeType::Object,
            boxes: vec![bx(0.0, 0.0, 10.0, 10.0)],
        };
        // second endpoint IoU 0.4 with the horse box
        let half_rel = NodeRef {
            id: 9,
            node_type: NodeType::Relationship,
            boxes: vec![bx(0.0, 0.0, 10.0, 10.0), bx(24.0, 0.0, 34.0, 10.0)],
        };
        assert!((iou(&half_rel.boxes[1], &bx(20.0, 0.0, 30.0, 10.0)) - 6.0 / 14.0).abs() < 1e-12);
        let pred = pred_with(
            vec![right.clone(), wrong_type.clone(), half_rel],
            &[(1, 7), (2, 8), (3, 9)],
        );
        let z = zero_aa(&pred, &gold, &sg);
        assert_eq!(z.by_type[&NodeType::Attribute], Accuracy { correct: 1, total: 1 });
        assert_eq!(z.by_type[&NodeType::Object], Accuracy { correct: 1, total: 1 });
        assert_eq!(z.by_type[&NodeType::Relationship], Accuracy { correct: 0, total: 1 });

        // the OBJECT node on the attribute's box does not ground an ATTRIBUTE token
        let pred = pred_with(vec![wrong_type], &[(1, 8)]);
        let gold = pred_with(vec![], &[(1, 3)]);
        assert_eq!(zero_aa(&pred, &gold, &sg).overall, Accuracy { correct: 0, total: 1 });
    }

    fn obj(id: usize, b: BBox) -> NodeRef {
        NodeRef {
            id,
            node_type: NodeType::Object,
            boxes: vec![b],
        }
    }

    #[test]
    fn structural_accuracy_patterns() {
        let sg = scene();
        let man = obj(0, bx(0.0, 0.0, 10.0, 10.0));
        let horse = obj(1, bx(20.0, 0.0, 30.0, 10.0));
        let tree = obj(2, bx(50.0, 50.0, 60.0, 60.0));
        let rel = NodeRef {
            id: 4,
            node_type: NodeType::Relationship,
            boxes: vec![man.boxes[0], horse.boxes[0]],
        };
        let mut pred = pred_with(vec![man, horse, tree, rel], &[]);
        pred.first = vec![
            crate::structure::FirstAlignment {
                head: 1,
                dep: 2,
                nodes: [0, 1],
                via: Some(4),
            },
            crate::structure::FirstAlignment {
                head: 1,
                dep: 3,
                nodes: [0, 2],
                via: None,
            },
        ];
        use crate::structure::{SecondAlignment, SecondOrderPattern};
        pred.second = vec![
            // obj -> pred -> sub
            SecondAlignment {
                tokens: [1, 2, 3],
                pattern: SecondOrderPattern::Chain,
                nodes: [0, 4, 1],
            },
            // obj <- pred -> sub
            SecondAlignment {
                tokens: [1, 2, 3],
                pattern: SecondOrderPattern::Siblings,
                nodes: [1, 4, 0],
            },
            SecondAlignment {
                tokens: [1, 2, 3],
                pattern: SecondOrderPattern::Chain,
                nodes: [0, 2, 1],
            },
        ];
        let s = first_second_aa(&pred, &sg);
        assert_eq!(s.first, Accuracy { correct: 1, total: 2 });
        assert_eq!(s.second, Accuracy { correct: 2, total: 3 });
    }

    #[test]
    fn report_lines() {
        let r = Report {
            attachment: Some(AttachmentScores {
                directed: Accuracy { correct: 1, total: 2 },
                undirected: Accuracy { correct: 2, total: 2 },
            }),
            ..Default::default()
        };
        assert_eq!(r.to_tsv(), "dda\t0.500000\nuda\t1.000000\n");
    }
}
