use crate::data::RegionSet;
use crate::scalar::Scalar;
use crate::structure::{BBox, NodeRef, NodeType};
use crate::tensor::{biaffine_features, mlp, Bound, Tensor, Var};

use super::forward::layers;
use super::{ModelError, Result};

/// A node of the assembled visual graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VisualNode {
    Object(usize),
    /// Attribute of the given object.
    Attribute(usize),
    /// Zero-order relationship from the first object to the second.
    Relationship(usize, usize),
    /// Full-image node.
    Dummy,
}

/// Id layout of the `M² + M + 1` visual nodes built from `M` regions:
/// objects `0..M`, attributes `M..2M`, relationships for ordered pairs
/// `(i, j)`, `i ≠ j`, in row-major order, and the dummy node last.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeLayout {
    m: usize,
}

impl NodeLayout {
    pub fn new(regions: usize) -> Self {
        NodeLayout { m: regions }
    }

    pub fn regions(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.m * self.m + self.m + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dummy(&self) -> usize {
        self.len() - 1
    }

    pub fn id(&self, node: VisualNode) -> usize {
        let m = self.m;
        match node {
            VisualNode::Object(i) => i,
            VisualNode::Attribute(i) => m + i,
            VisualNode::Relationship(i, j) => 2 * m + i * (m - 1) + if j < i { j } else { j - 1 },
            VisualNode::Dummy => self.dummy(),
        }
    }

    pub fn node(&self, id: usize) -> Option<VisualNode> {
        let m = self.m;
        if id < m {
            Some(VisualNode::Object(id))
        } else if id < 2 * m {
            Some(VisualNode::Attribute(id - m))
        } else if id < self.dummy() {
            let k = id - 2 * m;
            let i = k / (m - 1);
            let r = k % (m - 1);
            Some(VisualNode::Relationship(i, if r < i { r } else { r + 1 }))
        } else if id == self.dummy() {
            Some(VisualNode::Dummy)
        } else {
            None
        }
    }

    /// The full-image node is typed OBJECT.
    pub fn node_type(&self, id: usize) -> Option<NodeType> {
        Some(match self.node(id)? {
            VisualNode::Object(_) | VisualNode::Dummy => NodeType::Object,
            VisualNode::Attribute(_) => NodeType::Attribute,
            VisualNode::Relationship(..) => NodeType::Relationship,
        })
    }

    pub fn node_ref(&self, id: usize, regions: &RegionSet) -> Option<NodeRef> {
        let bbox = |i: usize| regions.regions[i].bbox;
        let boxes: Vec<BBox> = match self.node(id)? {
            VisualNode::Object(i) | VisualNode::Attribute(i) => vec![bbox(i)],
            VisualNode::Relationship(i, j) => vec![bbox(i), bbox(j)],
            VisualNode::Dummy => vec![regions.extent()?],
        };
        Some(NodeRef {
            id,
            node_type: self.node_type(id)?,
            boxes,
        })
    }

    /// Ordered object pairs in relationship-id order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.m).flat_map(move |i| (0..self.m).filter(move |&j| j != i).map(move |j| (i, j)))
    }
}

/// Region features as a constant `[M, D]` tensor.
pub fn region_tensor<S: Scalar>(regions: &RegionSet, dim: usize) -> Result<Tensor<S>> {
    if regions.is_empty() {
        return Err(ModelError::EmptyRegions(regions.image_id.clone()));
    }
    let mut data = Vec::with_capacity(regions.len() * dim);
    for r in &regions.regions {
        if r.feat.len() != dim {
            return Err(ModelError::FeatureDim {
                image: regions.image_id.clone(),
                got: r.feat.len(),
                expected: dim,
            });
        }
        data.extend(r.feat.iter().map(|&x| S::lit(x)));
    }
    Ok(Tensor::matrix(regions.len(), dim, data)?)
}

/// Assembles the `[M² + M + 1, D]` node feature matrix in [`NodeLayout`]
/// order: region features, attribute MLP outputs, pairwise biaffine
/// relationship features and the mean of the region features.
pub fn build_visual_nodes<'g, S: Scalar>(
    b: &Bound<'g, S>,
    feats: Var<'g, S>,
) -> Result<(Var<'g, S>, NodeLayout)> {
    let m = feats.shape()[0];
    let layout = NodeLayout::new(m);
    let attrs = mlp(feats, &layers(b, "vis.attr")?)?;
    let dummy = feats.mean_rows()?;
    let dummy = dummy.reshape(&[1, dummy.shape()[0]])?;
    let mut parts = vec![feats, attrs];
    if m > 1 {
        let src = mlp(feats, &layers(b, "vis.src")?)?;
        let dst = mlp(feats, &layers(b, "vis.dst")?)?;
        let (is, js): (Vec<usize>, Vec<usize>) = layout.pairs().unzip();
        let rel = biaffine_features(
            src.gather_rows(&is)?,
            dst.gather_rows(&js)?,
            b.get("vis.rel.w1")?,
            b.get("vis.rel.w2")?,
            b.get("vis.rel.b")?,
        )?;
        parts.push(rel);
    }
    parts.push(dummy);
    Ok((feats.graph().concat_rows(&parts)?, layout))
}
