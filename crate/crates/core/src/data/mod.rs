//! Line-delimited JSON record formats, validated loading, word embeddings and
//! the synthetic data generator.
//!
//! Every file holds one JSON object per line, UTF-8, `\n`-terminated. Blank
//! lines are rejected so that a record's line number is its 1-based position.

mod embeddings;
pub mod synth;

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::structure::{
    AttributeNode, BBox, DependencyTree, NodeType, ObjectNode, RelationshipNode, SceneGraph, StructureError, Token,
    VLAlignment,
};

pub use embeddings::{cosine, Embeddings};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Record { path: PathBuf, line: usize, msg: String },
    #[error("{path}:{line}: image `{image_id}` not found")]
    Dangling { path: PathBuf, line: usize, image_id: String },
    #[error("{path}:{line}: feature dimension {got}, expected {expected}")]
    Dimension {
        path: PathBuf,
        line: usize,
        got: usize,
        expected: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn record_err(path: &Path, line: usize, msg: impl ToString) -> DataError {
    DataError::Record {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    }
}

/// Parses one record per line. Line numbers in errors are 1-based.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            return Err(record_err(path, i + 1, "blank line"));
        }
        let rec = serde_json::from_str(&line).map_err(|e| record_err(path, i + 1, e))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Lowercase hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(io_err(path))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// One caption: tokens, POS tags and optional tree annotations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub id: String,
    pub image_id: String,
    pub tokens: Vec<String>,
    pub pos: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heads: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub types: Option<Vec<NodeType>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dep_labels: Option<Vec<String>>,
}

impl CorpusRecord {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token_list(&self) -> Vec<Token> {
        self.tokens
            .iter()
            .zip(&self.pos)
            .enumerate()
            .map(|(i, (w, p))| Token::new(i + 1, w.clone(), p.clone()))
            .collect()
    }

    /// The annotated tree, if the record carries heads.
    pub fn tree(&self) -> std::result::Result<Option<DependencyTree>, StructureError> {
        let Some(heads) = &self.heads else {
            return Ok(None);
        };
        let mut tree = DependencyTree::new(self.token_list(), heads.clone())?;
        if let Some(l) = &self.dep_labels {
            tree = tree.with_labels(l.clone())?;
        }
        if let Some(t) = &self.types {
            tree = tree.with_types(t.clone())?;
        }
        Ok(Some(tree))
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.tokens.is_empty() {
            return Err("empty token list".into());
        }
        if self.pos.len() != self.tokens.len() {
            return Err(format!("{} POS tags for {} tokens", self.pos.len(), self.tokens.len()));
        }
        for (what, len) in [
            ("types", self.types.as_ref().map(Vec::len)),
            ("dep_labels", self.dep_labels.as_ref().map(Vec::len)),
        ] {
            if let Some(len) = len {
                if len != self.tokens.len() {
                    return Err(format!("{len} {what} for {} tokens", self.tokens.len()));
                }
            }
        }
        self.tree().map(|_| ()).map_err(|e| e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub bbox: BBox,
    pub feat: Vec<f64>,
}

/// Detector output for one image: region boxes with feature vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSet {
    pub image_id: String,
    pub regions: Vec<Region>,
}

impl RegionSet {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Feature dimension of the first region, 0 when empty.
    pub fn dim(&self) -> usize {
        self.regions.first().map_or(0, |r| r.feat.len())
    }

    /// Union of all region boxes: the extent of the full-image node.
    pub fn extent(&self) -> Option<BBox> {
        let mut it = self.regions.iter().map(|r| r.bbox);
        let first = it.next()?;
        Some(it.fold(first, |acc, b| acc.union_box(&b)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: usize,
    #[serde(rename = "type")]
    pub node_type: NodeType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeRecord {
    pub src: usize,
    pub dst: usize,
    pub label: String,
}

pub const EDGE_ATTRIBUTE: &str = "attr";
pub const EDGE_SUBJECT: &str = "subj";
pub const EDGE_OBJECT: &str = "obj";

/// File form of a scene graph. Attribute ownership is an `attr` edge from
/// object to attribute; a relationship has a `subj` edge from its source
/// object and an `obj` edge to its destination object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneGraphRecord {
    pub image_id: String,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
}

impl From<&SceneGraph> for SceneGraphRecord {
    fn from(sg: &SceneGraph) -> Self {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for o in sg.objects() {
            nodes.push(NodeRecord {
                id: o.id,
                node_type: NodeType::Object,
                bbox: Some(o.bbox),
                label: o.label.clone(),
            });
        }
        for a in sg.attributes() {
            nodes.push(NodeRecord {
                id: a.id,
                node_type: NodeType::Attribute,
                bbox: None,
                label: a.label.clone(),
            });
            edges.push(EdgeRecord {
                src: a.owner,
                dst: a.id,
                label: EDGE_ATTRIBUTE.into(),
            });
        }
        for r in sg.relationships() {
            nodes.push(NodeRecord {
                id: r.id,
                node_type: NodeType::Relationship,
                bbox: None,
                label: r.label.clone(),
            });
            edges.push(EdgeRecord {
                src: r.src,
                dst: r.id,
                label: EDGE_SUBJECT.into(),
            });
            edges.push(EdgeRecord {
                src: r.id,
                dst: r.dst,
                label: EDGE_OBJECT.into(),
            });
        }
        nodes.sort_by_key(|n| n.id);
        SceneGraphRecord {
            image_id: sg.image_id.clone(),
            nodes,
            edges,
        }
    }
}

impl TryFrom<&SceneGraphRecord> for SceneGraph {
    type Error = String;

    fn try_from(rec: &SceneGraphRecord) -> std::result::Result<Self, String> {
        let types: HashMap<usize, NodeType> = rec.nodes.iter().map(|n| (n.id, n.node_type)).collect();
        let mut owner = HashMap::new();
        let mut subj = HashMap::new();
        let mut obj = HashMap::new();
        for e in &rec.edges {
            let (key, slot, map) = match e.label.as_str() {
                EDGE_ATTRIBUTE => (e.dst, e.src, &mut owner),
                EDGE_SUBJECT => (e.dst, e.src, &mut subj),
                EDGE_OBJECT => (e.src, e.dst, &mut obj),
                other => return Err(format!("unknown edge label `{other}`")),
            };
            if !types.contains_key(&e.src) || !types.contains_key(&e.dst) {
                return Err(format!("edge ({}, {}) references an unknown node", e.src, e.dst));
            }
            if map.insert(key, slot).is_some() {
                return Err(format!("node {key} has two `{}` edges", e.label));
            }
        }
        let mut objects = Vec::new();
        let mut attributes = Vec::new();
        let mut relationships = Vec::new();
        for n in &rec.nodes {
            match n.node_type {
                NodeType::Object => objects.push(ObjectNode {
                    id: n.id,
                    bbox: n.bbox.ok_or_else(|| format!("object {} has no bbox", n.id))?,
                    label: n.label.clone(),
                }),
                NodeType::Attribute => attributes.push(AttributeNode {
                    id: n.id,
                    owner: *owner.get(&n.id).ok_or_else(|| format!("attribute {} has no owner edge", n.id))?,
                    label: n.label.clone(),
                }),
                NodeType::Relationship => relationships.push(RelationshipNode {
                    id: n.id,
                    src: *subj.get(&n.id).ok_or_else(|| format!("relationship {} has no subj edge", n.id))?,
                    dst: *obj.get(&n.id).ok_or_else(|| format!("relationship {} has no obj edge", n.id))?,
                    label: n.label.clone(),
                }),
            }
        }
        SceneGraph::new(rec.image_id.clone(), objects, attributes, relationships).map_err(|e| e.to_string())
    }
}

fn check_unique<'a>(path: &Path, ids: impl Iterator<Item = &'a str>, what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for (i, id) in ids.enumerate() {
        if !seen.insert(id) {
            return Err(record_err(path, i + 1, format!("duplicate {what} `{id}`")));
        }
    }
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    let recs: Vec<CorpusRecord> = read_jsonl(path)?;
    for (i, r) in recs.iter().enumerate() {
        r.validate().map_err(|m| record_err(path, i + 1, m))?;
    }
    check_unique(path, recs.iter().map(|r| r.id.as_str()), "sentence id")?;
    Ok(recs)
}

/// Loads region sets; every region in the file must share one dimension.
pub fn load_features(path: &Path) -> Result<Vec<RegionSet>> {
    let sets: Vec<RegionSet> = read_jsonl(path)?;
    let expected = sets.first().map_or(0, RegionSet::dim);
    for (i, s) in sets.iter().enumerate() {
        if s.is_empty() {
            return Err(record_err(path, i + 1, format!("image `{}` has no regions", s.image_id)));
        }
        for r in &s.regions {
            if r.feat.len() != expected {
                return Err(DataError::Dimension {
                    path: path.to_path_buf(),
                    line: i + 1,
                    got: r.feat.len(),
                    expected,
                });
            }
            if r.feat.iter().any(|x| !x.is_finite()) {
                return Err(record_err(path, i + 1, "non-finite feature value"));
            }
        }
    }
    check_unique(path, sets.iter().map(|s| s.image_id.as_str()), "image id")?;
    Ok(sets)
}

pub fn load_scene_graphs(path: &Path) -> Result<Vec<SceneGraph>> {
    let recs: Vec<SceneGraphRecord> = read_jsonl(path)?;
    check_unique(path, recs.iter().map(|r| r.image_id.as_str()), "image id")?;
    recs.iter()
        .enumerate()
        .map(|(i, r)| SceneGraph::try_from(r).map_err(|m| record_err(path, i + 1, m)))
        .collect()
}

pub fn save_scene_graphs(path: &Path, graphs: &[SceneGraph]) -> Result<()> {
    let recs: Vec<SceneGraphRecord> = graphs.iter().map(SceneGraphRecord::from).collect();
    write_jsonl(path, &recs)
}

pub fn load_alignments(path: &Path) -> Result<Vec<VLAlignment>> {
    let recs: Vec<VLAlignment> = read_jsonl(path)?;
    check_unique(path, recs.iter().map(|r| r.sentence_id.as_str()), "sentence id")?;
    Ok(recs)
}

/// Checks that every sentence's image id is present in `images`.
pub fn check_images<'a>(
    corpus_path: &Path,
    corpus: &[CorpusRecord],
    images: impl IntoIterator<Item = &'a str>,
) -> Result<()> {
    let known: HashSet<&str> = images.into_iter().collect();
    for (i, r) in corpus.iter().enumerate() {
        if !known.contains(r.image_id.as_str()) {
            return Err(DataError::Dangling {
                path: corpus_path.to_path_buf(),
                line: i + 1,
                image_id: r.image_id.clone(),
            });
        }
    }
    Ok(())
}

/// Checks alignments against their sentences' trees.
pub fn check_alignments(align_path: &Path, alignments: &[VLAlignment], corpus: &[CorpusRecord]) -> Result<()> {
    let by_id: HashMap<&str, &CorpusRecord> = corpus.iter().map(|r| (r.id.as_str(), r)).collect();
    for (i, a) in alignments.iter().enumerate() {
        let rec = by_id
            .get(a.sentence_id.as_str())
            .ok_or_else(|| record_err(align_path, i + 1, format!("unknown sentence `{}`", a.sentence_id)))?;
        if let Some(tree) = rec.tree().map_err(|e| record_err(align_path, i + 1, e))? {
            a.check_references(&tree).map_err(|m| record_err(align_path, i + 1, m))?;
        }
    }
    Ok(())
}
