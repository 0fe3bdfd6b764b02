//! Synthetic caption/image worlds with known structure.
//!
//! A world fixes a tag set, a small vocabulary per tag and a DMV grammar
//! whose hard zeros follow a role template: nouns take at most one
//! adjective on the left and at most one prepositional or participial
//! modifier on the right; prepositions and participles take exactly one
//! noun object; a verb root takes exactly one subject and one object noun.
//! Within those slots the CHILD distributions are Dirichlet draws and the
//! optional STOP probabilities are uniform in `[0.3, 0.7]`.
//!
//! Each sampled sentence gets a scene graph: one object per noun, the
//! object's attribute node labelled by its adjective, and one relationship
//! per preposition, participle or verb. Region features of dimension `4K`
//! concatenate one-hot concept blocks `[class; attribute; outgoing; incoming]`
//! where `K` is the concept dimension, plus Gaussian noise.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::{io_err, save_scene_graphs, write_jsonl, CorpusRecord, DataError, Embeddings, Region, RegionSet, Result};
use crate::chart::{Dir, DmvScores, Valence};
use crate::structure::{
    tree_to_instances, AttributeNode, BBox, FirstAlignment, NodeType, ObjectNode, RelationshipNode, SceneGraph,
    SecondAlignment, VLAlignment, ZeroAlignment,
};

/// Tag inventory in the order tags are taken for a given tag count.
pub const TAG_ORDER: [&str; 16] = [
    "NN", "JJ", "IN", "VBZ", "NNS", "JJR", "VBG", "NNP", "TO", "JJS", "VBD", "NNPS", "CD", "VBP", "RB", "VBN",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Noun,
    Adjective,
    Preposition,
    Verb,
    Participle,
}

fn role_of(tag: &str) -> Role {
    match tag {
        "NN" | "NNS" | "NNP" | "NNPS" => Role::Noun,
        "JJ" | "JJR" | "JJS" | "CD" | "RB" => Role::Adjective,
        "IN" | "TO" => Role::Preposition,
        "VBG" | "VBN" => Role::Participle,
        _ => Role::Verb,
    }
}

const WORDS: [(&str, [&str; 8]); 8] = [
    ("NN", ["dog", "man", "table", "horse", "tree", "car", "woman", "bench"]),
    ("JJ", ["red", "big", "small", "old", "wooden", "white", "tall", "young"]),
    ("IN", ["on", "near", "under", "behind", "beside", "above", "inside", "across"]),
    ("VBZ", ["holds", "rides", "watches", "carries", "pulls", "touches", "feeds", "faces"]),
    ("NNS", ["dogs", "people", "plates", "birds", "boats", "chairs", "cows", "kites"]),
    ("JJR", ["bigger", "older", "taller", "smaller", "darker", "longer", "wider", "newer"]),
    ("VBG", ["holding", "riding", "watching", "carrying", "wearing", "eating", "sitting", "standing"]),
    ("NNP", ["london", "paris", "rover", "max", "bella", "tokyo", "rex", "luna"]),
];

fn word_for(tag: &str, i: usize) -> String {
    WORDS
        .iter()
        .find(|(t, _)| *t == tag)
        .and_then(|(_, ws)| ws.get(i))
        .map_or_else(|| format!("{}{i}", tag.to_lowercase()), |w| w.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Total sentences over all splits.
    pub sentences: usize,
    pub max_len: usize,
    pub tags: usize,
    pub words_per_tag: usize,
    /// Dirichlet concentration of the CHILD and ROOT distributions; small
    /// values give peaked grammars.
    pub concentration: f64,
    /// One-hot concept dimension `K`; features have dimension `4K`.
    pub concept_dim: usize,
    /// Standard deviation of the feature noise.
    pub sigma: f64,
    /// Extra objects per image not mentioned in the caption.
    pub distractors: usize,
    pub dev_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sentences: 2000,
            max_len: 10,
            tags: 8,
            words_per_tag: 4,
            concentration: 0.5,
            concept_dim: 32,
            sigma: 0.1,
            distractors: 2,
            dev_fraction: 0.1,
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(DataError::Config(m));
        if !(4..=TAG_ORDER.len()).contains(&self.tags) {
            return fail(format!("tags must lie in 4..={}, got {}", TAG_ORDER.len(), self.tags));
        }
        if self.words_per_tag == 0 {
            return fail("words_per_tag must be positive".into());
        }
        if self.max_len == 0 {
            return fail("max_len must be positive".into());
        }
        if self.sentences == 0 {
            return fail("sentences must be positive".into());
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return fail(format!("concentration must be positive, got {}", self.concentration));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return fail(format!("sigma must be non-negative, got {}", self.sigma));
        }
        let vocab = self.tags * self.words_per_tag;
        if self.concept_dim < vocab {
            return fail(format!("concept_dim {} is smaller than the vocabulary ({vocab})", self.concept_dim));
        }
        let (d, t) = (self.dev_fraction, self.test_fraction);
        if !(0.0..1.0).contains(&d) || !(0.0..1.0).contains(&t) || d + t >= 1.0 {
            return fail(format!("dev and test fractions {d}, {t} must be non-negative and sum below 1"));
        }
        Ok(())
    }
}

/// DMV parameters as probabilities, indexed by tag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grammar {
    /// `root[t]`
    pub root: Vec<f64>,
    /// `child[h][dir][d]`
    pub child: Vec<[Vec<f64>; 2]>,
    /// `stop[h][dir][val]`
    pub stop: Vec<[[f64; 2]; 2]>,
}

impl Grammar {
    /// Log-scores of a tag sequence under the grammar.
    pub fn scores(&self, tags: &[usize]) -> DmvScores<f64> {
        let n = tags.len();
        let mut s = DmvScores::zeros(n).expect("non-empty sentence");
        for d in 1..=n {
            s.set_root(d, self.root[tags[d - 1]].ln());
        }
        for h in 1..=n {
            let th = tags[h - 1];
            for dir in [Dir::Left, Dir::Right] {
                for val in [Valence::Adjacent, Valence::NonAdjacent] {
                    let p = self.stop[th][dir as usize][val as usize];
                    s.set_stop(h, dir, val, p.ln());
                    s.set_cont(h, dir, val, (1.0 - p).ln());
                }
            }
            for d in 1..=n {
                if d == h {
                    continue;
                }
                let dir = if d < h { Dir::Left } else { Dir::Right };
                let lp = self.child[th][dir as usize][tags[d - 1]].ln();
                for val in [Valence::Adjacent, Valence::NonAdjacent] {
                    s.set_attach_val(h, d, val, lp);
                }
            }
        }
        s
    }
}

/// Tags, words, roles and grammar of a synthetic world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub config: SynthConfig,
    pub tags: Vec<String>,
    pub roles: Vec<Role>,
    /// `words[t]`: the words of tag `t`.
    pub words: Vec<Vec<String>>,
    pub grammar: Grammar,
}

fn dirichlet(rng: &mut impl Rng, alpha: f64, support: &[bool]) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive shape");
    let mut v: Vec<f64> = support
        .iter()
        .map(|&s| if s { gamma.sample(rng).max(1e-300) } else { 0.0 })
        .collect();
    let z: f64 = v.iter().sum();
    if z > 0.0 {
        v.iter_mut().for_each(|x| *x /= z);
    }
    v
}

impl World {
    pub fn sample(config: &SynthConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let tags: Vec<String> = TAG_ORDER[..config.tags].iter().map(|s| s.to_string()).collect();
        let roles: Vec<Role> = tags.iter().map(|t| role_of(t)).collect();
        let words = tags
            .iter()
            .map(|t| (0..config.words_per_tag).map(|i| word_for(t, i)).collect())
            .collect();
        let of = |rs: &[Role]| -> Vec<bool> { roles.iter().map(|r| rs.contains(r)).collect() };
        let a = config.concentration;
        let root = dirichlet(rng, a, &of(&[Role::Noun, Role::Verb]));
        let mut child = Vec::new();
        let mut stop = Vec::new();
        for &r in &roles {
            let none = vec![0.0; tags.len()];
            let nouns = dirichlet(rng, a, &of(&[Role::Noun]));
            let (left, right, st) = match r {
                Role::Noun => (
                    dirichlet(rng, a, &of(&[Role::Adjective])),
                    dirichlet(rng, a, &of(&[Role::Preposition, Role::Participle])),
                    [[rng.random_range(0.3..0.7), 1.0], [rng.random_range(0.3..0.7), 1.0]],
                ),
                Role::Adjective => (none.clone(), none, [[1.0, 1.0], [1.0, 1.0]]),
                Role::Preposition | Role::Participle => (none, nouns, [[1.0, 1.0], [0.0, 1.0]]),
                Role::Verb => (dirichlet(rng, a, &of(&[Role::Noun])), nouns, [[0.0, 1.0], [0.0, 1.0]]),
            };
            child.push([left, right]);
            stop.push(st);
        }
        Ok(World {
            config: config.clone(),
            tags,
            roles,
            words,
            grammar: Grammar { root, child, stop },
        })
    }

    /// Every word, tag-major; a word's index is its concept coordinate.
    pub fn vocab(&self) -> Vec<String> {
        self.words.iter().flatten().cloned().collect()
    }

    fn concept(&self, tag: usize, word: usize) -> usize {
        tag * self.config.words_per_tag + word
    }

    /// One-hot concept vectors as word embeddings.
    pub fn embeddings(&self) -> Embeddings {
        let k = self.config.concept_dim;
        let vectors = (0..self.config.tags * self.config.words_per_tag)
            .map(|i| {
                let mut v = vec![0.0; k];
                v[i] = 1.0;
                v
            })
            .collect();
        Embeddings::new(self.vocab(), vectors)
    }

    /// Draws a tag sequence and its tree from the grammar, or `None` when the
    /// sentence exceeds `max_len`.
    pub fn sample_tree(&self, rng: &mut impl Rng) -> Option<(Vec<usize>, Vec<usize>)> {
        struct Sub {
            tag: usize,
            left: Vec<Sub>,
            right: Vec<Sub>,
        }
        fn draw(p: &[f64], rng: &mut impl Rng) -> usize {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, &x) in p.iter().enumerate() {
                acc += x;
                if u < acc {
                    return i;
                }
            }
            p.iter().rposition(|&x| x > 0.0).expect("non-empty distribution")
        }
        fn grow(w: &World, tag: usize, budget: &mut usize, rng: &mut impl Rng) -> Option<Sub> {
            *budget = budget.checked_sub(1)?;
            let mut sub = Sub {
                tag,
                left: vec![],
                right: vec![],
            };
            for dir in 0..2 {
                let mut val = 0;
                loop {
                    let p = w.grammar.stop[tag][dir][val];
                    if p >= 1.0 || rng.random::<f64>() < p {
                        break;
                    }
                    let c = draw(&w.grammar.child[tag][dir], rng);
                    let kid = grow(w, c, budget, rng)?;
                    if dir == 0 {
                        sub.left.push(kid);
                    } else {
                        sub.right.push(kid);
                    }
                    val = 1;
                }
            }
            Some(sub)
        }
        fn flatten(s: &Sub, head: usize, tags: &mut Vec<usize>, heads: &mut Vec<usize>) {
            // left dependents were generated nearest first
            let me_pos = tags.len() + s.left.iter().map(size).sum::<usize>() + 1;
            for l in s.left.iter().rev() {
                flatten(l, me_pos, tags, heads);
            }
            tags.push(s.tag);
            heads.push(head);
            for r in &s.right {
                flatten(r, me_pos, tags, heads);
            }
        }
        fn size(s: &Sub) -> usize {
            1 + s.left.iter().map(size).sum::<usize>() + s.right.iter().map(size).sum::<usize>()
        }
        let mut budget = self.config.max_len;
        let root = draw(&self.grammar.root, rng);
        let tree = grow(self, root, &mut budget, rng)?;
        let (mut tags, mut heads) = (Vec::new(), Vec::new());
        flatten(&tree, 0, &mut tags, &mut heads);
        Some((tags, heads))
    }
}

/// One split of a synthetic dataset, records aligned by index.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub name: String,
    pub corpus: Vec<CorpusRecord>,
    pub features: Vec<RegionSet>,
    pub graphs: Vec<SceneGraph>,
    pub alignments: Vec<VLAlignment>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub world: World,
    pub splits: Vec<Split>,
}

impl SynthData {
    pub fn split(&self, name: &str) -> Option<&Split> {
        self.splits.iter().find(|s| s.name == name)
    }
}

fn dep_label(head: Option<Role>, dep: Role, left: bool) -> &'static str {
    match (head, dep) {
        (None, _) => "root",
        (Some(Role::Noun), Role::Adjective) => "amod",
        (Some(Role::Noun), Role::Preposition) => "prep",
        (Some(Role::Noun), _) => "partmod",
        (Some(Role::Preposition), _) => "pobj",
        (Some(Role::Verb), _) if left => "nsubj",
        _ => "dobj",
    }
}

fn random_box(rng: &mut impl Rng) -> BBox {
    let (w, h): (f64, f64) = (640.0, 480.0);
    let bw: f64 = rng.random_range(40.0..240.0);
    let bh: f64 = rng.random_range(40.0..200.0);
    let x: f64 = rng.random_range(0.0..w - bw);
    let y: f64 = rng.random_range(0.0..h - bh);
    BBox::from_xywh(x.round(), y.round(), bw.round(), bh.round()).expect("positive size")
}

struct Built {
    record: CorpusRecord,
    regions: RegionSet,
    graph: SceneGraph,
    alignment: VLAlignment,
}

/// Builds a caption, image and gold alignment from a sampled tree, or
/// `None` when some tag would need more distinct words than it has.
fn build(world: &World, id: &str, tags: &[usize], heads: &[usize], rng: &mut impl Rng) -> Option<Built> {
    let cfg = &world.config;
    let n = tags.len();
    let wpt = cfg.words_per_tag;
    // distinct words per sentence
    let mut pools: Vec<Vec<usize>> = (0..cfg.tags).map(|_| (0..wpt).collect()).collect();
    pools.iter_mut().for_each(|p| p.shuffle(rng));
    let mut word_idx = Vec::with_capacity(n);
    for &t in tags {
        word_idx.push(pools[t].pop()?);
    }
    let concept: Vec<usize> = tags.iter().zip(&word_idx).map(|(&t, &w)| world.concept(t, w)).collect();
    let role = |i: usize| world.roles[tags[i - 1]];

    // objects: nouns, then distractors with unused noun classes
    let mut obj_tokens: Vec<Option<usize>> = (1..=n).filter(|&i| role(i) == Role::Noun).map(Some).collect();
    let mut obj_class: Vec<usize> = obj_tokens.iter().map(|t| concept[t.unwrap() - 1]).collect();
    let used: HashSet<usize> = concept.iter().copied().collect();
    let mut spare_nouns: Vec<usize> = (0..cfg.tags)
        .filter(|&t| world.roles[t] == Role::Noun)
        .flat_map(|t| (0..wpt).map(move |w| (t, w)))
        .map(|(t, w)| world.concept(t, w))
        .filter(|c| !used.contains(c))
        .collect();
    spare_nouns.shuffle(rng);
    for _ in 0..cfg.distractors {
        let Some(c) = spare_nouns.pop() else { break };
        obj_tokens.push(None);
        obj_class.push(c);
    }
    let m = obj_tokens.len();
    if m == 0 {
        return None;
    }
    // region order is shuffled so ids carry no token order
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(rng);
    let mut obj_of_token = vec![None; n + 1];
    let mut class = vec![0; m];
    for (k, &slot) in perm.iter().enumerate() {
        class[slot] = obj_class[k];
        if let Some(t) = obj_tokens[k] {
            obj_of_token[t] = Some(slot);
        }
    }

    // attributes: the sentence's adjective, else an unused one
    let mut attr: Vec<Option<usize>> = vec![None; m];
    for d in 1..=n {
        if role(d) == Role::Adjective {
            let owner = obj_of_token[heads[d - 1]]?;
            attr[owner] = Some(concept[d - 1]);
        }
    }
    let mut spare_adj: Vec<usize> = (0..cfg.tags)
        .filter(|&t| world.roles[t] == Role::Adjective)
        .flat_map(|t| (0..wpt).map(move |w| (t, w)))
        .map(|(t, w)| world.concept(t, w))
        .filter(|c| !used.contains(c))
        .collect();
    spare_adj.shuffle(rng);
    for a in attr.iter_mut() {
        if a.is_none() {
            *a = spare_adj.pop();
        }
    }

    // relationships: (token, src object, dst object)
    let mut rels: Vec<(usize, usize, usize)> = Vec::new();
    for i in 1..=n {
        if matches!(role(i), Role::Preposition | Role::Participle | Role::Verb) {
            let kids: Vec<usize> = (1..=n).filter(|&d| heads[d - 1] == i).collect();
            let (src, dst) = match role(i) {
                Role::Verb => (obj_of_token[kids[0]]?, obj_of_token[kids[1]]?),
                _ => (obj_of_token[heads[i - 1]]?, obj_of_token[kids[0]]?),
            };
            rels.push((i, src, dst));
        }
    }

    let vocab = world.vocab();
    let k = cfg.concept_dim;
    let noise = Normal::new(0.0, cfg.sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let boxes: Vec<BBox> = (0..m).map(|_| random_box(rng)).collect();
    let mut regions = Vec::with_capacity(m);
    for o in 0..m {
        let mut f = vec![0.0; 4 * k];
        f[class[o]] = 1.0;
        if let Some(a) = attr[o] {
            f[k + a] = 1.0;
        }
        for &(tok, s, d) in &rels {
            if s == o {
                f[2 * k + concept[tok - 1]] += 1.0;
            }
            if d == o {
                f[3 * k + concept[tok - 1]] += 1.0;
            }
        }
        if cfg.sigma > 0.0 {
            f.iter_mut().for_each(|x| *x += noise.sample(rng));
        }
        regions.push(Region { bbox: boxes[o], feat: f });
    }

    let image_id = format!("img-{id}");
    let objects = (0..m)
        .map(|o| ObjectNode {
            id: o,
            bbox: boxes[o],
            label: Some(vocab[class[o]].clone()),
        })
        .collect();
    let attributes = (0..m)
        .map(|o| AttributeNode {
            id: m + o,
            owner: o,
            label: attr[o].map(|a| vocab[a].clone()),
        })
        .collect();
    let relationships = rels
        .iter()
        .enumerate()
        .map(|(r, &(tok, s, d))| RelationshipNode {
            id: 2 * m + r,
            src: s,
            dst: d,
            label: Some(vocab[concept[tok - 1]].clone()),
        })
        .collect();
    let graph = SceneGraph::new(image_id.clone(), objects, attributes, relationships).ok()?;

    let mut node_of = vec![0; n + 1];
    let mut types = Vec::with_capacity(n);
    for i in 1..=n {
        let (node, ty) = match role(i) {
            Role::Noun => (obj_of_token[i]?, NodeType::Object),
            Role::Adjective => (m + obj_of_token[heads[i - 1]]?, NodeType::Attribute),
            _ => (2 * m + rels.iter().position(|r| r.0 == i)?, NodeType::Relationship),
        };
        node_of[i] = node;
        types.push(ty);
    }
    let inst = tree_to_instances(heads).ok()?;
    let mut alignment = VLAlignment {
        sentence_id: id.to_string(),
        image_id: image_id.clone(),
        ..Default::default()
    };
    for (i, &node) in node_of.iter().enumerate().skip(1) {
        alignment.zero.push(ZeroAlignment { token: i, node });
    }
    for &(h, d) in &inst.first {
        let via = [h, d]
            .into_iter()
            .find(|&t| types[t - 1] == NodeType::Relationship)
            .map(|t| node_of[t]);
        if via.is_some() {
            alignment.first.push(FirstAlignment {
                head: h,
                dep: d,
                nodes: [node_of[h], node_of[d]],
                via,
            });
        }
    }
    for s in &inst.second {
        alignment.second.push(SecondAlignment {
            tokens: s.tokens,
            pattern: s.pattern,
            nodes: s.tokens.map(|t| node_of[t]),
        });
    }
    let mut ids: Vec<usize> = node_of[1..].to_vec();
    ids.sort_unstable();
    ids.dedup();
    for id in ids {
        alignment.register(graph.node_ref(id)?);
    }

    let record = CorpusRecord {
        id: id.to_string(),
        image_id: image_id.clone(),
        tokens: (0..n).map(|i| vocab[concept[i]].clone()).collect(),
        pos: tags.iter().map(|&t| world.tags[t].clone()).collect(),
        heads: Some(heads.to_vec()),
        types: Some(types),
        dep_labels: Some(
            (1..=n)
                .map(|i| {
                    let h = heads[i - 1];
                    dep_label((h > 0).then(|| role(h)), role(i), i < h).to_string()
                })
                .collect(),
        ),
    };
    Some(Built {
        record,
        regions: RegionSet { image_id, regions },
        graph,
        alignment,
    })
}

/// Samples a world and its train/dev/test splits from `config.seed`.
pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let world = World::sample(config, &mut rng)?;
    let n_dev = (config.sentences as f64 * config.dev_fraction).round() as usize;
    let n_test = (config.sentences as f64 * config.test_fraction).round() as usize;
    let n_train = config.sentences.saturating_sub(n_dev + n_test);
    let mut splits = Vec::new();
    for (name, count) in [("train", n_train), ("dev", n_dev), ("test", n_test)] {
        let mut split = Split {
            name: name.to_string(),
            corpus: Vec::with_capacity(count),
            features: Vec::with_capacity(count),
            graphs: Vec::with_capacity(count),
            alignments: Vec::with_capacity(count),
        };
        let mut attempts = 0usize;
        while split.corpus.len() < count {
            attempts += 1;
            if attempts > 1000 * (count + 1) {
                return Err(DataError::Config(
                    "the grammar rarely produces sentences within max_len; raise max_len or words_per_tag".into(),
                ));
            }
            let Some((tags, heads)) = world.sample_tree(&mut rng) else { continue };
            let id = format!("{name}-{:05}", split.corpus.len());
            let Some(b) = build(&world, &id, &tags, &heads, &mut rng) else { continue };
            split.corpus.push(b.record);
            split.features.push(b.regions);
            split.graphs.push(b.graph);
            split.alignments.push(b.alignment);
        }
        splits.push(split);
    }
    Ok(SynthData { world, splits })
}

/// Writes `{split}.corpus.jsonl`, `{split}.features.jsonl`,
/// `{split}.sg.jsonl` and `{split}.align.jsonl` for every split, plus
/// `embeddings.txt` and `world.json`.
pub fn write(data: &SynthData, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for s in &data.splits {
        write_jsonl(&dir.join(format!("{}.corpus.jsonl", s.name)), &s.corpus)?;
        write_jsonl(&dir.join(format!("{}.features.jsonl", s.name)), &s.features)?;
        save_scene_graphs(&dir.join(format!("{}.sg.jsonl", s.name)), &s.graphs)?;
        write_jsonl(&dir.join(format!("{}.align.jsonl", s.name)), &s.alignments)?;
    }
    data.world.embeddings().save(&dir.join("embeddings.txt"))?;
    let path = dir.join("world.json");
    let json = serde_json::to_string_pretty(&data.world).expect("world serializes");
    std::fs::write(&path, json + "\n").map_err(io_err(&path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::validate_tree;

    fn small() -> SynthConfig {
        SynthConfig {
            sentences: 60,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.splits[0].corpus, c.splits[0].corpus);
    }

    #[test]
    fn records_are_consistent() {
        let d = generate(&small()).unwrap();
        let total: usize = d.splits.iter().map(|s| s.corpus.len()).sum();
        assert_eq!(total, 60);
        for s in &d.splits {
            for ((r, f), (g, a)) in s.corpus.iter().zip(&s.features).zip(s.graphs.iter().zip(&s.alignments)) {
                let heads = r.heads.as_ref().unwrap();
                validate_tree(heads).unwrap();
                assert!(r.len() <= 10);
                assert_eq!(f.len(), g.objects().len());
                assert!(f.regions.iter().all(|x| x.feat.len() == 128));
                let tree = r.tree().unwrap().unwrap();
                a.check_references(&tree).unwrap();
                assert_eq!(a.zero.len(), r.len());
            }
        }
    }

    #[test]
    fn noiseless_features_are_one_hot_blocks() {
        let cfg = SynthConfig {
            sigma: 0.0,
            ..small()
        };
        let d = generate(&cfg).unwrap();
        let s = &d.splits[0];
        let vocab = d.world.vocab();
        for (f, g) in s.features.iter().zip(&s.graphs) {
            for (o, r) in g.objects().iter().zip(&f.regions) {
                let class = vocab.iter().position(|w| Some(w) == o.label.as_ref()).unwrap();
                assert_eq!(r.feat[class], 1.0);
                assert_eq!(r.feat[..32].iter().sum::<f64>(), 1.0);
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        for bad in [
            SynthConfig { tags: 3, ..small() },
            SynthConfig { concept_dim: 8, ..small() },
            SynthConfig { sigma: -1.0, ..small() },
            SynthConfig {
                dev_fraction: 0.6,
                test_fraction: 0.5,
                ..small()
            },
        ] {
            assert!(matches!(generate(&bad), Err(DataError::Config(_))));
        }
    }
}
