//! Domain types of the joint vision-language structure: dependency trees on
//! the language side, scene graphs on the vision side, and the three-level
//! alignment between them.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Type of a scene-graph node, also attached to dependency-tree tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeType {
    Object,
    Attribute,
    Relationship,
}

impl NodeType {
    pub const ALL: [NodeType; 3] = [NodeType::Object, NodeType::Attribute, NodeType::Relationship];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeType::Object => "OBJECT",
            NodeType::Attribute => "ATTRIBUTE",
            NodeType::Relationship => "RELATIONSHIP",
        }
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for NodeType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "OBJECT" => Ok(NodeType::Object),
            "ATTRIBUTE" => Ok(NodeType::Attribute),
            "RELATIONSHIP" => Ok(NodeType::Relationship),
            other => Err(format!("unknown node type `{other}`")),
        }
    }
}

/// Axis-aligned box in corner format `[x1, y1, x2, y2]`, pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox([f64; 4]);

#[derive(Debug, Error, PartialEq)]
#[error("degenerate bounding box {0:?}: need x1 < x2 and y1 < y2")]
pub struct DegenerateBox(pub [f64; 4]);

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, DegenerateBox> {
        Self::try_from([x1, y1, x2, y2])
    }

    /// Converts `[x, y, width, height]` into corner format.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self, DegenerateBox> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn corners(&self) -> [f64; 4] {
        self.0
    }

    pub fn area(&self) -> f64 {
        let [x1, y1, x2, y2] = self.0;
        (x2 - x1) * (y2 - y1)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let [a1, b1, a2, b2] = self.0;
        let [c1, d1, c2, d2] = other.0;
        let w = (a2.min(c2) - a1.max(c1)).max(0.0);
        let h = (b2.min(d2) - b1.max(d1)).max(0.0);
        w * h
    }

    /// Smallest box enclosing both.
    pub fn union_box(&self, other: &BBox) -> BBox {
        let [a1, b1, a2, b2] = self.0;
        let [c1, d1, c2, d2] = other.0;
        BBox([a1.min(c1), b1.min(d1), a2.max(c2), b2.max(d2)])
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = DegenerateBox;

    fn try_from(c: [f64; 4]) -> Result<Self, Self::Error> {
        let finite = c.iter().all(|x| x.is_finite());
        if finite && c[0] < c[2] && c[1] < c[3] {
            Ok(BBox(c))
        } else {
            Err(DegenerateBox(c))
        }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    /// 1-based position in the sentence.
    pub index: usize,
    pub surface: String,
    pub lemma: String,
    pub pos: String,
}

impl Token {
    pub fn new(index: usize, surface: impl Into<String>, pos: impl Into<String>) -> Self {
        let surface = surface.into();
        let lemma = surface.to_lowercase();
        Token {
            index,
            surface,
            lemma,
            pos: pos.into(),
        }
    }
}

/// First property a head array violates.
#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum TreeViolation {
    #[error("empty sentence")]
    Empty,
    #[error("token {token} has head {head} outside 0..={n}")]
    OutOfRange { token: usize, head: usize, n: usize },
    #[error("token {token} lies on a cycle")]
    Cycle { token: usize },
    #[error("no token is attached to ROOT")]
    NoRoot,
    #[error("tokens {0:?} are all attached to ROOT")]
    MultipleRoots(Vec<usize>),
    #[error("arc {head}->{dep} crosses token {between}, which it does not dominate")]
    NonProjective {
        head: usize,
        dep: usize,
        between: usize,
    },
}

/// Checks a 1-based head array (`heads[i-1]` is the head of token `i`, 0 is
/// ROOT) for a single-rooted, acyclic, projective tree.
pub fn validate_tree(heads: &[usize]) -> Result<(), TreeViolation> {
    let n = heads.len();
    if n == 0 {
        return Err(TreeViolation::Empty);
    }
    for (i, &h) in heads.iter().enumerate() {
        if h > n {
            return Err(TreeViolation::OutOfRange {
                token: i + 1,
                head: h,
                n,
            });
        }
    }
    // every chain of heads must reach ROOT within n steps
    for start in 1..=n {
        let mut cur = start;
        let mut steps = 0;
        while cur != 0 {
            cur = heads[cur - 1];
            steps += 1;
            if steps > n {
                return Err(TreeViolation::Cycle { token: start });
            }
        }
    }
    let roots: Vec<usize> = (1..=n).filter(|&d| heads[d - 1] == 0).collect();
    match roots.len() {
        0 => return Err(TreeViolation::NoRoot),
        1 => {}
        _ => return Err(TreeViolation::MultipleRoots(roots)),
    }
    for d in 1..=n {
        let h = heads[d - 1];
        if h == 0 {
            continue;
        }
        let (lo, hi) = if h < d { (h, d) } else { (d, h) };
        for k in lo + 1..hi {
            if !dominates(heads, h, k) {
                return Err(TreeViolation::NonProjective {
                    head: h,
                    dep: d,
                    between: k,
                });
            }
        }
    }
    Ok(())
}

/// True when `anc` is `node` or one of its ancestors. Assumes an acyclic array.
pub fn dominates(heads: &[usize], anc: usize, node: usize) -> bool {
    let mut cur = node;
    loop {
        if cur == anc {
            return true;
        }
        if cur == 0 {
            return false;
        }
        cur = heads[cur - 1];
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SecondOrderPattern {
    /// `tokens = [grandparent, head, dependent]`
    Chain,
    /// `tokens = [left dependent, head, right dependent]`
    Siblings,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SecondOrder {
    pub tokens: [usize; 3],
    pub pattern: SecondOrderPattern,
}

/// Zero-, first- and second-order language instances of a tree.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Instances {
    pub zero: Vec<usize>,
    /// `(head, dependent)`, ROOT arcs excluded.
    pub first: Vec<(usize, usize)>,
    pub second: Vec<SecondOrder>,
}

pub fn tree_to_instances(heads: &[usize]) -> Result<Instances, TreeViolation> {
    validate_tree(heads)?;
    let n = heads.len();
    let zero: Vec<usize> = (1..=n).collect();
    let mut first: Vec<(usize, usize)> = (1..=n)
        .filter(|&d| heads[d - 1] != 0)
        .map(|d| (heads[d - 1], d))
        .collect();
    first.sort_unstable();

    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    for d in 1..=n {
        children[heads[d - 1]].push(d);
    }
    let mut second = BTreeSet::new();
    for &(h, d) in &first {
        let g = heads[h - 1];
        if g != 0 {
            second.insert(SecondOrder {
                tokens: [g, h, d],
                pattern: SecondOrderPattern::Chain,
            });
        }
    }
    for (h, kids) in children.iter().enumerate().skip(1) {
        for (a, &d1) in kids.iter().enumerate() {
            for &d2 in &kids[a + 1..] {
                second.insert(SecondOrder {
                    tokens: [d1.min(d2), h, d1.max(d2)],
                    pattern: SecondOrderPattern::Siblings,
                });
            }
        }
    }
    Ok(Instances {
        zero,
        first,
        second: second.into_iter().collect(),
    })
}

#[derive(Debug, Error, PartialEq)]
pub enum StructureError {
    #[error(transparent)]
    Tree(#[from] TreeViolation),
    #[error("{what} has {got} entries for {n} tokens")]
    Length { what: &'static str, got: usize, n: usize },
    #[error("token {0} has index {1}; tokens must be numbered 1..=n in order")]
    TokenIndex(usize, usize),
    #[error("scene graph {image}: {msg}")]
    SceneGraph { image: String, msg: String },
}

/// A tokenized caption with a (gold, silver or predicted) projective tree.
#[derive(Clone, Debug, PartialEq)]
pub struct DependencyTree {
    tokens: Vec<Token>,
    heads: Vec<usize>,
    labels: Option<Vec<String>>,
    types: Option<Vec<NodeType>>,
    parent_of: Option<Vec<usize>>,
}

impl DependencyTree {
    pub fn new(tokens: Vec<Token>, heads: Vec<usize>) -> Result<Self, StructureError> {
        if heads.len() != tokens.len() {
            return Err(StructureError::Length {
                what: "heads",
                got: heads.len(),
                n: tokens.len(),
            });
        }
        for (i, t) in tokens.iter().enumerate() {
            if t.index != i + 1 {
                return Err(StructureError::TokenIndex(i, t.index));
            }
        }
        validate_tree(&heads)?;
        Ok(DependencyTree {
            tokens,
            heads,
            labels: None,
            types: None,
            parent_of: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self, StructureError> {
        self.check_len("dep_labels", labels.len())?;
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_types(mut self, types: Vec<NodeType>) -> Result<Self, StructureError> {
        self.check_len("types", types.len())?;
        self.types = Some(types);
        Ok(self)
    }

    pub fn with_parents(mut self, parents: Vec<usize>) -> Result<Self, StructureError> {
        self.check_len("parent_of", parents.len())?;
        if let Some(bad) = parents.iter().find(|&&p| p == 0 || p > self.len()) {
            return Err(StructureError::Length {
                what: "parent_of index",
                got: *bad,
                n: self.len(),
            });
        }
        self.parent_of = Some(parents);
        Ok(self)
    }

    fn check_len(&self, what: &'static str, got: usize) -> Result<(), StructureError> {
        if got != self.len() {
            return Err(StructureError::Length {
                what,
                got,
                n: self.len(),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// 1-based token access.
    pub fn token(&self, i: usize) -> &Token {
        &self.tokens[i - 1]
    }

    pub fn heads(&self) -> &[usize] {
        &self.heads
    }

    pub fn head(&self, i: usize) -> usize {
        self.heads[i - 1]
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn types(&self) -> Option<&[NodeType]> {
        self.types.as_deref()
    }

    pub fn parent_of(&self) -> Option<&[usize]> {
        self.parent_of.as_deref()
    }

    pub fn root(&self) -> usize {
        self.heads.iter().position(|&h| h == 0).map(|i| i + 1).unwrap_or(0)
    }

    pub fn children(&self, h: usize) -> impl Iterator<Item = usize> + '_ {
        (1..=self.len()).filter(move |&d| self.heads[d - 1] == h)
    }

    pub fn instances(&self) -> Instances {
        tree_to_instances(&self.heads).expect("tree validated at construction")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectNode {
    pub id: usize,
    pub bbox: BBox,
    pub label: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeNode {
    pub id: usize,
    pub owner: usize,
    pub label: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationshipNode {
    pub id: usize,
    pub src: usize,
    pub dst: usize,
    pub label: Option<String>,
}

/// Topology, boxes and labels of a scene graph. Region features are kept
/// separately (see [`crate::data::RegionSet`]).
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGraph {
    pub image_id: String,
    objects: Vec<ObjectNode>,
    attributes: Vec<AttributeNode>,
    relationships: Vec<RelationshipNode>,
    index: HashMap<usize, (NodeType, usize)>,
}

impl SceneGraph {
    pub fn new(
        image_id: impl Into<String>,
        objects: Vec<ObjectNode>,
        attributes: Vec<AttributeNode>,
        relationships: Vec<RelationshipNode>,
    ) -> Result<Self, StructureError> {
        let image_id = image_id.into();
        let fail = |msg: String| StructureError::SceneGraph {
            image: image_id.clone(),
            msg,
        };
        let mut index = HashMap::new();
        for (k, o) in objects.iter().enumerate() {
            if index.insert(o.id, (NodeType::Object, k)).is_some() {
                return Err(fail(format!("duplicate node id {}", o.id)));
            }
        }
        let mut owners = BTreeSet::new();
        for (k, a) in attributes.iter().enumerate() {
            if index.insert(a.id, (NodeType::Attribute, k)).is_some() {
                return Err(fail(format!("duplicate node id {}", a.id)));
            }
            if !matches!(index.get(&a.owner), Some((NodeType::Object, _))) {
                return Err(fail(format!("attribute {} owned by non-object {}", a.id, a.owner)));
            }
            if !owners.insert(a.owner) {
                return Err(fail(format!("object {} has more than one attribute node", a.owner)));
            }
        }
        if owners.len() != objects.len() {
            let missing = objects.iter().find(|o| !owners.contains(&o.id)).map(|o| o.id);
            return Err(fail(format!("object {:?} has no attribute node", missing)));
        }
        let mut pairs = BTreeSet::new();
        for (k, r) in relationships.iter().enumerate() {
            if index.insert(r.id, (NodeType::Relationship, k)).is_some() {
                return Err(fail(format!("duplicate node id {}", r.id)));
            }
            for end in [r.src, r.dst] {
                if !matches!(index.get(&end), Some((NodeType::Object, _))) {
                    return Err(fail(format!("relationship {} endpoint {} is not an object", r.id, end)));
                }
            }
            if r.src == r.dst {
                return Err(fail(format!("relationship {} is a self loop", r.id)));
            }
            if !pairs.insert((r.src, r.dst)) {
                return Err(fail(format!("two relationships for pair ({}, {})", r.src, r.dst)));
            }
        }
        Ok(SceneGraph {
            image_id,
            objects,
            attributes,
            relationships,
            index,
        })
    }

    pub fn objects(&self) -> &[ObjectNode] {
        &self.objects
    }

    pub fn attributes(&self) -> &[AttributeNode] {
        &self.attributes
    }

    pub fn relationships(&self) -> &[RelationshipNode] {
        &self.relationships
    }

    pub fn node_count(&self) -> usize {
        self.index.len()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.index.contains_key(&id)
    }

    pub fn node_type(&self, id: usize) -> Option<NodeType> {
        self.index.get(&id).map(|&(t, _)| t)
    }

    pub fn object(&self, id: usize) -> Option<&ObjectNode> {
        match self.index.get(&id) {
            Some(&(NodeType::Object, k)) => Some(&self.objects[k]),
            _ => None,
        }
    }

    pub fn attribute(&self, id: usize) -> Option<&AttributeNode> {
        match self.index.get(&id) {
            Some(&(NodeType::Attribute, k)) => Some(&self.attributes[k]),
            _ => None,
        }
    }

    pub fn relationship(&self, id: usize) -> Option<&RelationshipNode> {
        match self.index.get(&id) {
            Some(&(NodeType::Relationship, k)) => Some(&self.relationships[k]),
            _ => None,
        }
    }

    pub fn attribute_of(&self, object: usize) -> Option<&AttributeNode> {
        self.attributes.iter().find(|a| a.owner == object)
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        match self.index.get(&id)? {
            (NodeType::Object, k) => self.objects[*k].label.as_deref(),
            (NodeType::Attribute, k) => self.attributes[*k].label.as_deref(),
            (NodeType::Relationship, k) => self.relationships[*k].label.as_deref(),
        }
    }

    /// One box for objects and attributes (the owner's), two for relationships
    /// (source then destination).
    pub fn boxes(&self, id: usize) -> Option<Vec<BBox>> {
        let obox = |o: usize| self.object(o).map(|o| o.bbox);
        match self.index.get(&id)? {
            (NodeType::Object, k) => Some(vec![self.objects[*k].bbox]),
            (NodeType::Attribute, k) => Some(vec![obox(self.attributes[*k].owner)?]),
            (NodeType::Relationship, k) => {
                let r = &self.relationships[*k];
                Some(vec![obox(r.src)?, obox(r.dst)?])
            }
        }
    }

    pub fn node_ref(&self, id: usize) -> Option<NodeRef> {
        Some(NodeRef {
            id,
            node_type: self.node_type(id)?,
            boxes: self.boxes(id)?,
        })
    }

    /// Direct edge: attribute ownership or relationship endpoint.
    pub fn linked(&self, a: usize, b: usize) -> bool {
        let one_way = |x: usize, y: usize| {
            if let Some(attr) = self.attribute(x) {
                return attr.owner == y;
            }
            if let Some(rel) = self.relationship(x) {
                return rel.src == y || rel.dst == y;
            }
            false
        };
        one_way(a, b) || one_way(b, a)
    }

    /// Relationship node joining two objects in either direction, lowest id first.
    pub fn relationship_between(&self, a: usize, b: usize) -> Option<&RelationshipNode> {
        self.relationships
            .iter()
            .filter(|r| (r.src == a && r.dst == b) || (r.src == b && r.dst == a))
            .min_by_key(|r| r.id)
    }

    /// Nodes are adjacent when identical, directly linked, or two objects
    /// joined through a single relationship node.
    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        if a == b {
            return self.contains(a);
        }
        if self.linked(a, b) {
            return true;
        }
        self.object(a).is_some() && self.object(b).is_some() && self.relationship_between(a, b).is_some()
    }
}

/// Self-describing reference to a node: enough to score it against a gold
/// scene graph without access to the graph it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRef {
    pub id: usize,
    #[serde(rename = "type")]
    pub node_type: NodeType,
    pub boxes: Vec<BBox>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroAlignment {
    pub token: usize,
    pub node: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirstAlignment {
    pub head: usize,
    pub dep: usize,
    /// Nodes of head and dependent, in that order.
    pub nodes: [usize; 2],
    /// Relationship node that carries the dependency.
    pub via: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecondAlignment {
    pub tokens: [usize; 3],
    pub pattern: SecondOrderPattern,
    pub nodes: [usize; 3],
}

/// Zero/first/second-order mapping from a sentence's tree to scene-graph nodes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VLAlignment {
    pub sentence_id: String,
    pub image_id: String,
    /// Descriptors of every node referenced below.
    pub nodes: Vec<NodeRef>,
    pub zero: Vec<ZeroAlignment>,
    pub first: Vec<FirstAlignment>,
    pub second: Vec<SecondAlignment>,
    /// Tokens left without a zero-order alignment.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unaligned: Vec<usize>,
}

impl VLAlignment {
    pub fn node(&self, id: usize) -> Option<&NodeRef> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn zero_of(&self, token: usize) -> Option<usize> {
        self.zero.iter().find(|z| z.token == token).map(|z| z.node)
    }

    /// Adds a node descriptor unless one with the same id is present.
    pub fn register(&mut self, node: NodeRef) {
        if self.node(node.id).is_none() {
            self.nodes.push(node);
            self.nodes.sort_by_key(|n| n.id);
        }
    }

    /// Checks that every reference resolves, first-order entries sit on tree
    /// arcs, and second-order entries are chains or sibling pairs.
    pub fn check_references(&self, tree: &DependencyTree) -> Result<(), String> {
        let n = tree.len();
        let node_ok = |id: usize| self.node(id).is_some();
        for z in &self.zero {
            if z.token == 0 || z.token > n {
                return Err(format!("zero-order token {} out of range", z.token));
            }
            if !node_ok(z.node) {
                return Err(format!("zero-order node {} has no descriptor", z.node));
            }
        }
        for f in &self.first {
            if f.dep == 0 || f.dep > n || tree.head(f.dep) != f.head || f.head == 0 {
                return Err(format!("first-order ({}, {}) is not a tree arc", f.head, f.dep));
            }
            if !f.nodes.iter().chain(f.via.iter()).all(|&id| node_ok(id)) {
                return Err(format!("first-order ({}, {}) references unknown node", f.head, f.dep));
            }
        }
        let inst = tree.instances();
        for s in &self.second {
            let so = SecondOrder {
                tokens: s.tokens,
                pattern: s.pattern,
            };
            if !inst.second.contains(&so) {
                return Err(format!("second-order {:?} is not a tree pattern", s.tokens));
            }
            if !s.nodes.iter().all(|&id| node_ok(id)) {
                return Err(format!("second-order {:?} references unknown node", s.tokens));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_projective(heads: &[usize]) -> bool {
        // descendants of every head must form a contiguous span
        let n = heads.len();
        for h in 1..=n {
            let span: Vec<usize> = (1..=n).filter(|&k| dominates(heads, h, k)).collect();
            let (lo, hi) = (span[0], *span.last().unwrap());
            if hi - lo + 1 != span.len() {
                return false;
            }
        }
        true
    }

    #[test]
    fn validate_examples() {
        assert_eq!(validate_tree(&[0]), Ok(()));
        assert_eq!(validate_tree(&[2, 0]), Ok(()));
        assert_eq!(validate_tree(&[2, 1]), Err(TreeViolation::Cycle { token: 1 }));
        assert_eq!(validate_tree(&[0, 3, 1]), Ok(()));
        assert!(matches!(
            validate_tree(&[2, 0, 1]),
            Err(TreeViolation::NonProjective { .. })
        ));
        assert_eq!(validate_tree(&[0, 0]), Err(TreeViolation::MultipleRoots(vec![1, 2])));
        assert_eq!(validate_tree(&[1]), Err(TreeViolation::Cycle { token: 1 }));
        assert!(matches!(validate_tree(&[3]), Err(TreeViolation::OutOfRange { .. })));
        assert_eq!(validate_tree(&[]), Err(TreeViolation::Empty));
    }

    #[test]
    fn projectivity_agrees_with_span_oracle() {
        for n in 1..=5usize {
            let total = (n + 1).pow(n as u32);
            for code in 0..total {
                let mut c = code;
                let heads: Vec<usize> = (0..n)
                    .map(|_| {
                        let h = c % (n + 1);
                        c /= n + 1;
                        h
                    })
                    .collect();
                match validate_tree(&heads) {
                    Ok(()) => assert!(brute_projective(&heads), "{heads:?}"),
                    Err(TreeViolation::NonProjective { .. }) => {
                        assert!(!brute_projective(&heads), "{heads:?}")
                    }
                    Err(_) => {}
                }
            }
        }
    }

    #[test]
    fn instances_examples() {
        let one = tree_to_instances(&[0]).unwrap();
        assert_eq!((one.zero.len(), one.first.len(), one.second.len()), (1, 0, 0));

        let chain = tree_to_instances(&[0, 1, 2]).unwrap();
        assert_eq!(chain.first, vec![(1, 2), (2, 3)]);
        assert_eq!(
            chain.second,
            vec![SecondOrder {
                tokens: [1, 2, 3],
                pattern: SecondOrderPattern::Chain
            }]
        );

        let fork = tree_to_instances(&[0, 1, 1]).unwrap();
        assert_eq!(fork.first, vec![(1, 2), (1, 3)]);
        assert_eq!(
            fork.second,
            vec![SecondOrder {
                tokens: [2, 1, 3],
                pattern: SecondOrderPattern::Siblings
            }]
        );
        assert!(tree_to_instances(&[2, 1]).is_err());
    }

    #[test]
    fn second_order_matches_adjacency_enumeration() {
        // oracle: every unordered pair of arcs sharing a token forms one pattern
        let heads = [2, 0, 2, 3, 4, 4];
        let inst = tree_to_instances(&heads).unwrap();
        let arcs = &inst.first;
        let mut expect = BTreeSet::new();
        for (i, &(h1, d1)) in arcs.iter().enumerate() {
            for &(h2, d2) in &arcs[i + 1..] {
                if d1 == h2 {
                    expect.insert((SecondOrderPattern::Chain, [h1, d1, d2]));
                } else if d2 == h1 {
                    expect.insert((SecondOrderPattern::Chain, [h2, d2, d1]));
                } else if h1 == h2 {
                    expect.insert((SecondOrderPattern::Siblings, [d1.min(d2), h1, d1.max(d2)]));
                }
            }
        }
        let got: BTreeSet<_> = inst.second.iter().map(|s| (s.pattern, s.tokens)).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn bbox_rules() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, 1.0, 1.0).is_ok());
        let b = BBox::from_xywh(5.0, 5.0, 10.0, 20.0).unwrap();
        assert_eq!(b.corners(), [5.0, 5.0, 15.0, 25.0]);
        let json = serde_json::to_string(&b).unwrap();
        assert_eq!(json, "[5.0,5.0,15.0,25.0]");
        assert!(serde_json::from_str::<BBox>("[3,0,1,1]").is_err());
    }

    fn sg() -> SceneGraph {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        SceneGraph::new(
            "img",
            vec![
                ObjectNode { id: 0, bbox: b, label: Some("dog".into()) },
                ObjectNode { id: 1, bbox: b, label: Some("table".into()) },
                ObjectNode { id: 2, bbox: b, label: Some("cup".into()) },
            ],
            vec![
                AttributeNode { id: 3, owner: 0, label: Some("brown".into()) },
                AttributeNode { id: 4, owner: 1, label: None },
                AttributeNode { id: 5, owner: 2, label: None },
            ],
            vec![RelationshipNode { id: 6, src: 0, dst: 1, label: Some("on".into()) }],
        )
        .unwrap()
    }

    #[test]
    fn scene_graph_adjacency() {
        let g = sg();
        assert!(g.adjacent(0, 3));
        assert!(g.adjacent(6, 1));
        assert!(g.adjacent(0, 1));
        assert!(g.adjacent(1, 0));
        assert!(!g.adjacent(0, 2));
        assert!(!g.adjacent(3, 6));
        assert_eq!(g.boxes(6).unwrap().len(), 2);
    }

    #[test]
    fn scene_graph_invariants() {
        let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let objs = vec![ObjectNode { id: 0, bbox: b, label: None }, ObjectNode { id: 1, bbox: b, label: None }];
        let missing_attr = SceneGraph::new("x", objs.clone(), vec![AttributeNode { id: 2, owner: 0, label: None }], vec![]);
        assert!(missing_attr.is_err());
        let attrs = vec![
            AttributeNode { id: 2, owner: 0, label: None },
            AttributeNode { id: 3, owner: 1, label: None },
        ];
        let dup_rel = SceneGraph::new(
            "x",
            objs,
            attrs,
            vec![
                RelationshipNode { id: 4, src: 0, dst: 1, label: None },
                RelationshipNode { id: 5, src: 0, dst: 1, label: None },
            ],
        );
        assert!(dup_rel.is_err());
    }
}
