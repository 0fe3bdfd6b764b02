//! Rule-based alignment of dependency trees to scene graphs.
//!
//! Rewriting gives every token a node type and a parent (the noun or
//! relation word whose grounding it shares). Alignment then scores parent
//! lemmas against scene-graph labels: objects first, attributes through
//! their object, relation words among edges touching aligned objects, and
//! tree arcs through the relationship node joining their tokens' nodes.

mod rules;

use std::collections::BTreeSet;

use log::warn;
use thiserror::Error;

use crate::data::{CorpusRecord, Embeddings};
use crate::structure::{
    DependencyTree, FirstAlignment, NodeType, SceneGraph, SecondAlignment, StructureError, VLAlignment, ZeroAlignment,
};

pub use rules::{Action, Category, GlobList, ParentAction, RewriteRule, RuleSet, TypeAction, ROOT_POS};

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("{origin}:{line}: {msg}")]
    Rules { origin: String, line: usize, msg: String },
    #[error("{0}")]
    Io(String),
    #[error("tree has no dependency labels")]
    MissingLabels,
    #[error("tree has no types or parents; rewrite it first")]
    NotRewritten,
    #[error("scene graph `{0}` has no labelled objects")]
    UnlabelledGraph(String),
    #[error("parent chain from token {0} is cyclic")]
    Cycle(usize),
    #[error(transparent)]
    Structure(#[from] StructureError),
}

pub type Result<T> = std::result::Result<T, AlignError>;

fn is_noun(pos: &str) -> bool {
    pos.starts_with("NN") || pos.starts_with("PRP")
}

/// Type used when no rule decides one.
fn pos_type(pos: &str) -> NodeType {
    if pos.starts_with("JJ") {
        NodeType::Attribute
    } else if pos.starts_with("VB") || matches!(pos, "IN" | "TO" | "RP") {
        NodeType::Relationship
    } else {
        NodeType::Object
    }
}

/// Per-token outcome of type classification.
#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub types: Vec<NodeType>,
    /// Tokens handled as function words (type taken from the head).
    pub function: Vec<bool>,
    /// Id of the rule that matched each token's arc.
    pub rule: Vec<Option<usize>>,
    /// Parent requested by a rule, before chasing.
    pub parent_hint: Vec<Option<usize>>,
    pub warnings: Vec<String>,
}

/// Assigns a node type to every token from its arc's first matching rule.
/// Arcs no rule matches get OBJECT for nouns and function-word handling
/// otherwise, with a warning.
pub fn classify_types(tree: &DependencyTree, rules: &RuleSet) -> Result<Classification> {
    let labels = tree.labels().ok_or(AlignError::MissingLabels)?;
    let n = tree.len();
    let mut own: Vec<Option<TypeAction>> = vec![None; n];
    let mut head_fill: Vec<Option<NodeType>> = vec![None; n];
    let mut hint: Vec<Option<usize>> = vec![None; n];
    let mut head_hint: Vec<Option<usize>> = vec![None; n];
    let mut rule = vec![None; n];
    let mut warnings = Vec::new();
    for d in 1..=n {
        let h = tree.head(d);
        let label = labels[d - 1].as_str();
        let head_pos = if h == 0 { ROOT_POS } else { tree.token(h).pos.as_str() };
        let dep_pos = tree.token(d).pos.as_str();
        let Some(r) = rules.first_match(label, head_pos, dep_pos) else {
            let msg = format!("token {d}: no rule for {label}({head_pos}, {dep_pos}); default applied");
            warn!("{msg}");
            warnings.push(msg);
            own[d - 1] = Some(if is_noun(dep_pos) {
                TypeAction::Set(NodeType::Object)
            } else {
                TypeAction::Inherit
            });
            continue;
        };
        rule[d - 1] = Some(r.id);
        let a = &r.action;
        own[d - 1] = a
            .dep_type
            .or((r.category == Category::Function).then_some(TypeAction::Inherit));
        if let (Some(t), true) = (a.head_type, h > 0) {
            head_fill[h - 1].get_or_insert(t);
        }
        if a.head_parent_to_dep && h > 0 {
            head_hint[h - 1].get_or_insert(d);
        }
        hint[d - 1] = match &a.parent {
            Some(ParentAction::SelfParent) => Some(d),
            Some(ParentAction::Head) => Some(if h == 0 { d } else { h }),
            Some(ParentAction::Sibling(l)) => tree.children(h).find(|&c| c != d && labels[c - 1] == *l),
            None => None,
        };
    }

    let function: Vec<bool> = own.iter().map(|o| *o == Some(TypeAction::Inherit)).collect();
    let base: Vec<NodeType> = (1..=n)
        .map(|d| match own[d - 1] {
            Some(TypeAction::Set(t)) => t,
            _ => head_fill[d - 1].unwrap_or_else(|| pos_type(&tree.token(d).pos)),
        })
        .collect();
    let types = (1..=n)
        .map(|d| {
            let mut x = d;
            while function[x - 1] {
                let h = tree.head(x);
                if h == 0 {
                    return pos_type(&tree.token(d).pos);
                }
                x = h;
            }
            base[x - 1]
        })
        .collect();
    let parent_hint = hint.into_iter().zip(head_hint).map(|(a, b)| a.or(b)).collect();
    Ok(Classification {
        types,
        function,
        rule,
        parent_hint,
        warnings,
    })
}

/// Resolves every token's parent: rule redirections first, otherwise
/// attributes and function words point at their head and objects and
/// relation words at themselves; chains are then chased to a fixed point.
pub fn identify_parents(tree: &DependencyTree, cls: &Classification) -> Result<Vec<usize>> {
    let n = tree.len();
    let first: Vec<usize> = (1..=n)
        .map(|d| {
            cls.parent_hint[d - 1].unwrap_or_else(|| {
                let h = tree.head(d);
                let to_head = cls.function[d - 1] || cls.types[d - 1] == NodeType::Attribute;
                if to_head && h > 0 {
                    h
                } else {
                    d
                }
            })
        })
        .collect();
    (1..=n)
        .map(|d| {
            let mut x = d;
            for _ in 0..=n {
                let p = first[x - 1];
                if p == x {
                    return Ok(x);
                }
                x = p;
            }
            Err(AlignError::Cycle(d))
        })
        .collect()
}

/// A tree annotated with types and parents.
#[derive(Clone, Debug)]
pub struct Rewrite {
    pub tree: DependencyTree,
    pub classification: Classification,
}

pub fn rewrite(tree: &DependencyTree, rules: &RuleSet) -> Result<Rewrite> {
    let cls = classify_types(tree, rules)?;
    let parents = identify_parents(tree, &cls)?;
    let tree = tree.clone().with_types(cls.types.clone())?.with_parents(parents)?;
    Ok(Rewrite {
        tree,
        classification: cls,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignConfig {
    /// Candidates kept per token; the best one is emitted.
    pub k: usize,
    /// Tokens whose best candidate scores below this stay unaligned.
    pub threshold: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig { k: 1, threshold: 0.4 }
    }
}

/// Word-to-label similarity: 1 for an exact (case-folded) match, otherwise
/// the cosine of the word vector and the mean vector of the label's words.
#[derive(Clone, Copy, Debug, Default)]
pub struct Similarity<'a> {
    pub embeddings: Option<&'a Embeddings>,
}

impl Similarity<'_> {
    pub fn score(&self, word: &str, label: &str) -> f64 {
        let (word, label) = (word.to_lowercase(), label.to_lowercase());
        if word == label {
            return 1.0;
        }
        let Some(emb) = self.embeddings else {
            return 0.0;
        };
        let Some(w) = emb.get(&word) else {
            return 0.0;
        };
        let parts: Vec<&[f64]> = label.split_whitespace().filter_map(|p| emb.get(p)).collect();
        if parts.is_empty() {
            return 0.0;
        }
        let mut mean = vec![0.0; w.len()];
        for p in &parts {
            mean.iter_mut().zip(*p).for_each(|(m, x)| *m += x / parts.len() as f64);
        }
        crate::data::cosine(w, &mean)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub node: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignOutput {
    pub alignment: VLAlignment,
    /// Top-k candidates per token (index `t - 1`), best first.
    pub candidates: Vec<Vec<Candidate>>,
}

/// Aligns a rewritten tree (types and parents set) to a labelled scene graph.
pub fn align_dt_sg(
    sentence_id: &str,
    tree: &DependencyTree,
    sg: &SceneGraph,
    sim: Similarity<'_>,
    cfg: &AlignConfig,
) -> Result<AlignOutput> {
    let types = tree.types().ok_or(AlignError::NotRewritten)?;
    let parents = tree.parent_of().ok_or(AlignError::NotRewritten)?;
    if !sg.objects().iter().any(|o| o.label.is_some()) {
        return Err(AlignError::UnlabelledGraph(sg.image_id.clone()));
    }
    let n = tree.len();
    let k = cfg.k.max(1);
    let lemma = |t: usize| tree.token(t).lemma.as_str();
    let ty = |t: usize| types[t - 1];
    let parent = |t: usize| parents[t - 1];
    let neighbors = |t: usize| {
        let h = tree.head(t);
        (h > 0).then_some(h).into_iter().chain(tree.children(t))
    };
    let anchor = |t: usize| parent(t) == t;
    let mut zero: Vec<Option<usize>> = vec![None; n];
    let mut cands: Vec<Vec<Candidate>> = vec![Vec::new(); n];

    // How well an object's relationships fit the relation words around `t`:
    // relation label plus the best match of the far endpoint.
    let context = |t: usize, o: usize| -> f64 {
        let mut best = 0.0f64;
        for r in sg.relationships().iter().filter(|r| r.src == o || r.dst == o) {
            let Some(rl) = r.label.as_deref() else { continue };
            let other = if r.src == o { r.dst } else { r.src };
            let ol = sg.label(other);
            for u in neighbors(t).filter(|&u| ty(u) == NodeType::Relationship) {
                let far = neighbors(u)
                    .filter(|&v| v != t && ty(v) == NodeType::Object)
                    .filter_map(|v| ol.map(|l| sim.score(lemma(parent(v)), l)))
                    .fold(0.0, f64::max);
                best = best.max(sim.score(lemma(u), rl) + far);
            }
        }
        best
    };

    for t in (1..=n).filter(|&t| anchor(t) && ty(t) == NodeType::Object) {
        let mut scored: Vec<(usize, f64, f64)> = sg
            .objects()
            .iter()
            .filter_map(|o| Some((o.id, sim.score(lemma(t), o.label.as_deref()?))))
            .filter(|&(_, s)| s >= cfg.threshold)
            .map(|(id, s)| (id, s, context(t, id)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.2.total_cmp(&a.2)).then(a.0.cmp(&b.0)));
        cands[t - 1] = scored.iter().take(k).map(|&(node, score, _)| Candidate { node, score }).collect();
        zero[t - 1] = scored.first().map(|c| c.0);
    }

    for t in (1..=n).filter(|&t| ty(t) == NodeType::Attribute) {
        let p = parent(t);
        let Some(o) = (p != t).then(|| zero[p - 1]).flatten().filter(|&o| sg.object(o).is_some()) else {
            continue;
        };
        let Some(attr) = sg.attribute_of(o) else { continue };
        let Some(label) = attr.label.as_deref() else { continue };
        let s = sim.score(lemma(t), label);
        if s >= cfg.threshold {
            zero[t - 1] = Some(attr.id);
            cands[t - 1] = vec![Candidate { node: attr.id, score: s }];
        }
    }

    let aligned: BTreeSet<usize> = zero.iter().flatten().copied().filter(|&v| sg.object(v).is_some()).collect();
    for t in (1..=n).filter(|&t| anchor(t) && ty(t) == NodeType::Relationship) {
        let near: BTreeSet<usize> = neighbors(t)
            .filter_map(|v| zero[parent(v) - 1])
            .filter(|&v| sg.object(v).is_some())
            .collect();
        let mut scored: Vec<(usize, f64, usize)> = sg
            .relationships()
            .iter()
            .filter(|r| aligned.contains(&r.src) || aligned.contains(&r.dst))
            .filter_map(|r| {
                let s = sim.score(lemma(t), r.label.as_deref()?);
                let fit = [r.src, r.dst].iter().filter(|e| near.contains(e)).count();
                (s >= cfg.threshold).then_some((r.id, s, fit))
            })
            .collect();
        scored.sort_by(|a, b| b.2.cmp(&a.2).then(b.1.total_cmp(&a.1)).then(a.0.cmp(&b.0)));
        cands[t - 1] = scored.iter().take(k).map(|&(node, score, _)| Candidate { node, score }).collect();
        zero[t - 1] = scored.first().map(|c| c.0);
    }

    // Everything else shares its parent's node.
    for t in 1..=n {
        let p = parent(t);
        if zero[t - 1].is_none() && p != t && ty(t) != NodeType::Attribute {
            zero[t - 1] = zero[p - 1];
            cands[t - 1] = cands[p - 1].clone();
        }
    }

    let mut align = VLAlignment {
        sentence_id: sentence_id.to_string(),
        image_id: sg.image_id.clone(),
        ..Default::default()
    };
    for (i, z) in zero.iter().enumerate() {
        match z {
            Some(v) => align.zero.push(ZeroAlignment { token: i + 1, node: *v }),
            None => align.unaligned.push(i + 1),
        }
    }
    for d in 1..=n {
        let h = tree.head(d);
        if h == 0 {
            continue;
        }
        let (Some(a), Some(b)) = (zero[h - 1], zero[d - 1]) else { continue };
        if let Some(via) = carrier(sg, a, b) {
            align.first.push(FirstAlignment {
                head: h,
                dep: d,
                nodes: [a, b],
                via: Some(via),
            });
        }
    }
    for so in tree.instances().second {
        let nodes = so.tokens.map(|t| zero[t - 1]);
        if let [Some(a), Some(b), Some(c)] = nodes {
            align.second.push(SecondAlignment {
                tokens: so.tokens,
                pattern: so.pattern,
                nodes: [a, b, c],
            });
        }
    }
    let referenced: Vec<usize> = zero.iter().flatten().copied().chain(align.first.iter().filter_map(|f| f.via)).collect();
    for id in referenced {
        if let Some(r) = sg.node_ref(id) {
            align.register(r);
        }
    }
    Ok(AlignOutput {
        alignment: align,
        candidates: cands,
    })
}

/// Relationship node that carries a dependency between nodes `a` and `b`:
/// one of them when the other is its endpoint, or the one joining two objects.
fn carrier(sg: &SceneGraph, a: usize, b: usize) -> Option<usize> {
    if a == b {
        return None;
    }
    for (r, o) in [(a, b), (b, a)] {
        if let Some(rel) = sg.relationship(r) {
            if rel.src == o || rel.dst == o {
                return Some(r);
            }
        }
    }
    if sg.object(a).is_some() && sg.object(b).is_some() {
        return sg.relationship_between(a, b).map(|r| r.id);
    }
    None
}

/// Checks that every first-order entry sits on a relationship node whose
/// endpoints account for both tokens' zero-order nodes.
pub fn check_soundness(align: &VLAlignment, sg: &SceneGraph) -> std::result::Result<(), String> {
    for f in &align.first {
        let at = format!("arc ({}, {})", f.head, f.dep);
        let via = f.via.ok_or_else(|| format!("{at}: no relationship node"))?;
        let rel = sg
            .relationship(via)
            .ok_or_else(|| format!("{at}: node {via} is not a relationship"))?;
        for (tok, node) in [(f.head, f.nodes[0]), (f.dep, f.nodes[1])] {
            if align.zero_of(tok) != Some(node) {
                return Err(format!("{at}: token {tok} is not aligned to node {node}"));
            }
            if node != via && node != rel.src && node != rel.dst {
                return Err(format!("{at}: node {node} is not on relationship {via}"));
            }
        }
    }
    Ok(())
}

/// Rewrites and aligns one corpus record against its scene graph.
pub fn align_record(
    rec: &CorpusRecord,
    sg: &SceneGraph,
    rules: &RuleSet,
    sim: Similarity<'_>,
    cfg: &AlignConfig,
) -> Result<(Rewrite, AlignOutput)> {
    let tree = rec.tree()?.ok_or(AlignError::MissingLabels)?;
    let rw = rewrite(&tree, rules)?;
    let out = align_dt_sg(&rec.id, &rw.tree, sg, sim, cfg)?;
    Ok((rw, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{AttributeNode, BBox, ObjectNode, RelationshipNode, Token};

    fn tree(words: &[(&str, &str, usize, &str)]) -> DependencyTree {
        let tokens = words
            .iter()
            .enumerate()
            .map(|(i, (w, p, _, _))| Token::new(i + 1, *w, *p))
            .collect();
        let heads = words.iter().map(|w| w.2).collect();
        let labels = words.iter().map(|w| w.3.to_string()).collect();
        DependencyTree::new(tokens, heads).unwrap().with_labels(labels).unwrap()
    }

    fn bx(i: usize) -> BBox {
        BBox::new(i as f64 * 10.0, 0.0, i as f64 * 10.0 + 5.0, 5.0).unwrap()
    }

    /// Objects 0..m with labels, attribute `m + i` per object, then relationships.
    fn graph(objects: &[&str], attrs: &[&str], rels: &[(usize, usize, &str)]) -> SceneGraph {
        let m = objects.len();
        SceneGraph::new(
            "img",
            objects
                .iter()
                .enumerate()
                .map(|(i, l)| ObjectNode {
                    id: i,
                    bbox: bx(i),
                    label: Some(l.to_string()),
                })
                .collect(),
            attrs
                .iter()
                .enumerate()
                .map(|(i, l)| AttributeNode {
                    id: m + i,
                    owner: i,
                    label: (!l.is_empty()).then(|| l.to_string()),
                })
                .collect(),
            rels.iter()
                .enumerate()
                .map(|(i, &(s, d, l))| RelationshipNode {
                    id: 2 * m + i,
                    src: s,
                    dst: d,
                    label: Some(l.to_string()),
                })
                .collect(),
        )
        .unwrap()
    }

    fn run(t: &DependencyTree, sg: &SceneGraph) -> AlignOutput {
        let rw = rewrite(t, &RuleSet::builtin()).unwrap();
        align_dt_sg("s", &rw.tree, sg, Similarity::default(), &AlignConfig::default()).unwrap()
    }

    #[test]
    fn determiner_and_adjective_share_the_noun() {
        let t = tree(&[("a", "DT", 3, "det"), ("brown", "JJ", 3, "amod"), ("dog", "NN", 0, "root")]);
        let rw = rewrite(&t, &RuleSet::builtin()).unwrap();
        assert_eq!(
            rw.classification.types,
            [NodeType::Object, NodeType::Attribute, NodeType::Object]
        );
        assert_eq!(rw.tree.parent_of().unwrap(), [3, 3, 3]);
        assert!(rw.classification.warnings.is_empty());
    }

    #[test]
    fn participle_linking_two_nouns_is_a_relationship() {
        let t = tree(&[
            ("drinks", "NNS", 0, "root"),
            ("sitting", "VBG", 1, "partmod"),
            ("on", "IN", 2, "prep"),
            ("table", "NN", 3, "pobj"),
        ]);
        let rw = rewrite(&t, &RuleSet::builtin()).unwrap();
        assert_eq!(rw.classification.types[1], NodeType::Relationship);
        assert_eq!(rw.classification.types[3], NodeType::Object);
        assert_eq!(rw.tree.parent_of().unwrap(), [1, 2, 3, 4]);
    }

    #[test]
    fn copular_adjective_points_at_subject() {
        let t = tree(&[
            ("the", "DT", 2, "det"),
            ("dog", "NN", 4, "nsubj"),
            ("is", "VBZ", 4, "cop"),
            ("brown", "JJ", 0, "root"),
        ]);
        let rw = rewrite(&t, &RuleSet::builtin()).unwrap();
        assert_eq!(rw.classification.types[3], NodeType::Attribute);
        assert_eq!(rw.classification.types[1], NodeType::Object);
        // "is" inherits from "brown" but its parent chain ends at "dog"
        assert_eq!(rw.tree.parent_of().unwrap(), [2, 2, 2, 2]);
        let sg = graph(&["dog"], &["brown"], &[]);
        let out = run(&t, &sg);
        assert_eq!(out.alignment.zero_of(4), Some(1));
        assert_eq!(out.alignment.zero_of(2), Some(0));
    }

    #[test]
    fn unknown_label_falls_back_with_warning() {
        let t = tree(&[("dog", "NN", 0, "root"), ("cat", "NN", 1, "weird"), ("um", "UH", 1, "weirder")]);
        let rw = rewrite(&t, &RuleSet::builtin()).unwrap();
        assert_eq!(rw.classification.warnings.len(), 2);
        assert_eq!(rw.classification.types[1], NodeType::Object);
        assert!(rw.classification.function[2]);
        assert_eq!(rw.classification.types[2], NodeType::Object);
        assert_eq!(rw.tree.parent_of().unwrap(), [1, 2, 1]);
    }

    #[test]
    fn cyclic_parents_are_rejected() {
        let rules = RuleSet::parse("OBJ-OBJ | nn | * | * | type=OBJECT parent=head head-parent=dep", "t").unwrap();
        let t = tree(&[("coffee", "NN", 2, "nn"), ("table", "NN", 0, "root")]);
        assert!(matches!(rewrite(&t, &rules), Err(AlignError::Cycle(_))));
    }

    #[test]
    fn missing_labels_are_an_error() {
        let t = DependencyTree::new(vec![Token::new(1, "dog", "NN")], vec![0]).unwrap();
        assert!(matches!(rewrite(&t, &RuleSet::builtin()), Err(AlignError::MissingLabels)));
    }

    #[test]
    fn exact_match_attribute_and_relationship() {
        let t = tree(&[
            ("a", "DT", 3, "det"),
            ("brown", "JJ", 3, "amod"),
            ("dog", "NN", 0, "root"),
            ("on", "IN", 3, "prep"),
            ("the", "DT", 6, "det"),
            ("table", "NN", 4, "pobj"),
        ]);
        let sg = graph(&["table", "dog"], &["wooden", "brown"], &[(1, 0, "on")]);
        let out = run(&t, &sg);
        let a = &out.alignment;
        let zero: Vec<Option<usize>> = (1..=6).map(|t| a.zero_of(t)).collect();
        assert_eq!(zero, [Some(1), Some(3), Some(1), Some(4), Some(0), Some(0)]);
        assert!(a.unaligned.is_empty());
        // dog-on and on-table carry the relationship; det and amod arcs do not
        let arcs: Vec<(usize, usize, Option<usize>)> = a.first.iter().map(|f| (f.head, f.dep, f.via)).collect();
        assert_eq!(arcs, [(3, 4, Some(4)), (4, 6, Some(4))]);
        check_soundness(a, &sg).unwrap();
        a.check_references(&t).unwrap();
    }

    #[test]
    fn two_dogs_disambiguated_by_relationship() {
        // dog 0 is near the chair, dog 1 is on the table
        let sg = graph(
            &["dog", "dog", "table", "chair"],
            &["", "", "", ""],
            &[(1, 2, "on"), (0, 3, "near")],
        );
        let on = tree(&[
            ("dog", "NN", 0, "root"),
            ("on", "IN", 1, "prep"),
            ("the", "DT", 4, "det"),
            ("table", "NN", 2, "pobj"),
        ]);
        let out = run(&on, &sg);
        assert_eq!(out.alignment.zero_of(1), Some(1));
        assert_eq!(out.alignment.zero_of(2), Some(8));
        check_soundness(&out.alignment, &sg).unwrap();

        let near = tree(&[("dog", "NN", 0, "root"), ("near", "IN", 1, "prep"), ("chair", "NN", 2, "pobj")]);
        let out = run(&near, &sg);
        assert_eq!(out.alignment.zero_of(1), Some(0));
        assert_eq!(out.alignment.zero_of(2), Some(9));

        // no disambiguating context: lowest id
        let bare = tree(&[("dog", "NN", 0, "root")]);
        assert_eq!(run(&bare, &sg).alignment.zero_of(1), Some(0));
    }

    #[test]
    fn below_threshold_is_reported_unaligned() {
        let t = tree(&[("red", "JJ", 2, "amod"), ("cat", "NN", 0, "root")]);
        let sg = graph(&["dog"], &["red"], &[]);
        let out = run(&t, &sg);
        assert_eq!(out.alignment.unaligned, [1, 2]);
        assert!(out.alignment.zero.is_empty());
    }

    #[test]
    fn embedding_similarity_and_top_k() {
        let emb = Embeddings::new(
            vec!["puppy".into(), "dog".into(), "cat".into()],
            vec![vec![1.0, 0.1], vec![1.0, 0.0], vec![0.0, 1.0]],
        );
        let sim = Similarity { embeddings: Some(&emb) };
        assert!((sim.score("puppy", "dog") - 1.0 / 1.01f64.sqrt()).abs() < 1e-12);
        assert_eq!(sim.score("Dog", "dog"), 1.0);
        assert_eq!(sim.score("zebra", "dog"), 0.0);
        let t = tree(&[("puppy", "NN", 0, "root")]);
        let rw = rewrite(&t, &RuleSet::builtin()).unwrap();
        let sg = graph(&["cat", "dog"], &["", ""], &[]);
        let cfg = AlignConfig { k: 2, threshold: 0.0 };
        let out = align_dt_sg("s", &rw.tree, &sg, sim, &cfg).unwrap();
        let nodes: Vec<usize> = out.candidates[0].iter().map(|c| c.node).collect();
        assert_eq!(nodes, [1, 0]);
        assert_eq!(out.alignment.zero_of(1), Some(1));
    }

    #[test]
    fn unlabelled_graph_is_an_error() {
        let sg = SceneGraph::new(
            "img",
            vec![ObjectNode {
                id: 0,
                bbox: bx(0),
                label: None,
            }],
            vec![AttributeNode {
                id: 1,
                owner: 0,
                label: None,
            }],
            vec![],
        )
        .unwrap();
        let t = tree(&[("dog", "NN", 0, "root")]);
        let rw = rewrite(&t, &RuleSet::builtin()).unwrap();
        let r = align_dt_sg("s", &rw.tree, &sg, Similarity::default(), &AlignConfig::default());
        assert!(matches!(r, Err(AlignError::UnlabelledGraph(_))));
    }
}
