//! Probabilistic augmentation trees and forests.
//!
//! A tree is stored sparsely by heap index (children of `i` are `2i` and `2i + 1`).
//! Traversal:
//!
//! * the root is applied with its probability; either way traversal continues below it;
//! * at a full sibling pair exactly one child is chosen (left with its own probability) and
//!   applied, then traversal descends into it;
//! * a lone child is applied with its probability, otherwise traversal stops;
//! * an identity node stops traversal.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::seed::{self, tag};
use crate::transforms::{Domain, Registry, Sample, IDENTITY_ID};

pub const SIBLING_TOL: f64 = 1e-12;
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TransformRef {
    pub transform_id: String,
    pub magnitude_level: Option<usize>,
}

impl TransformRef {
    pub fn new(id: &str, level: Option<usize>) -> Self {
        TransformRef { transform_id: id.to_string(), magnitude_level: level }
    }

    pub fn identity() -> Self {
        TransformRef::new(IDENTITY_ID, None)
    }

    pub fn is_identity(&self) -> bool {
        self.transform_id == IDENTITY_ID
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub index: u32,
    pub transform: TransformRef,
    pub prob: f64,
}

impl TreeNode {
    pub fn new(index: u32, transform: TransformRef, prob: f64) -> Self {
        TreeNode { index, transform, prob }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum Violation {
    #[error("node index must be at least 1")]
    ZeroIndex,
    #[error("node {index} stored under key {key}")]
    IndexMismatch { key: u32, index: u32 },
    #[error("node {index} has probability {prob} outside [0, 1]")]
    ProbRange { index: u32, prob: f64 },
    #[error("root node missing")]
    RootMissing,
    #[error("parent of node {index} missing")]
    ParentMissing { index: u32 },
    #[error("sibling sum ≠ 1: p({left}) + p({right}) = {sum}")]
    SiblingSum { left: u32, right: u32, sum: f64 },
    #[error("depth {depth} exceeds d_max {d_max}")]
    DepthExceeded { depth: u32, d_max: u32 },
    #[error("duplicate node {index}")]
    Duplicate { index: u32 },
}

/// Depth of heap index `i` (root = 1).
pub fn level(index: u32) -> u32 {
    32 - index.leading_zeros()
}

/// First violated invariant of a node list, if any.
pub fn validate_nodes(d_max: u32, nodes: &[TreeNode]) -> std::result::Result<(), Violation> {
    let mut map = BTreeMap::new();
    for n in nodes {
        if map.insert(n.index, n).is_some() {
            return Err(Violation::Duplicate { index: n.index });
        }
    }
    if !map.is_empty() && !map.contains_key(&1) {
        return Err(Violation::RootMissing);
    }
    for (&i, n) in &map {
        if i == 0 {
            return Err(Violation::ZeroIndex);
        }
        if !(0.0..=1.0).contains(&n.prob) {
            return Err(Violation::ProbRange { index: i, prob: n.prob });
        }
        if i > 1 && !map.contains_key(&(i / 2)) {
            return Err(Violation::ParentMissing { index: i });
        }
        if level(i) > d_max {
            return Err(Violation::DepthExceeded { depth: level(i), d_max });
        }
        if i % 2 == 0 {
            if let Some(r) = map.get(&(i + 1)) {
                let sum = n.prob + r.prob;
                if (sum - 1.0).abs() > SIBLING_TOL {
                    return Err(Violation::SiblingSum { left: i, right: i + 1, sum });
                }
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugTree {
    d_max: u32,
    nodes: BTreeMap<u32, TreeNode>,
}

impl AugTree {
    pub fn new(d_max: u32) -> Self {
        AugTree { d_max, nodes: BTreeMap::new() }
    }

    pub fn from_nodes(d_max: u32, nodes: Vec<TreeNode>) -> std::result::Result<Self, Violation> {
        validate_nodes(d_max, &nodes)?;
        Ok(AugTree { d_max, nodes: nodes.into_iter().map(|n| (n.index, n)).collect() })
    }

    /// Inserts (or replaces) a node, rejecting the change if it breaks an invariant.
    pub fn insert(&mut self, node: TreeNode) -> std::result::Result<(), Violation> {
        let mut nodes: Vec<TreeNode> = self.nodes.values().filter(|n| n.index != node.index).cloned().collect();
        nodes.push(node.clone());
        validate_nodes(self.d_max, &nodes)?;
        self.nodes.insert(node.index, node);
        Ok(())
    }

    pub fn with_node(mut self, node: TreeNode) -> std::result::Result<Self, Violation> {
        self.insert(node)?;
        Ok(self)
    }

    pub fn validate(&self) -> std::result::Result<(), Violation> {
        for (&k, n) in &self.nodes {
            if k != n.index {
                return Err(Violation::IndexMismatch { key: k, index: n.index });
            }
        }
        validate_nodes(self.d_max, &self.nodes.values().cloned().collect::<Vec<_>>())
    }

    pub fn d_max(&self) -> u32 {
        self.d_max
    }

    pub fn get(&self, index: u32) -> Option<&TreeNode> {
        self.nodes.get(&index)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.values()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn depth(&self) -> u32 {
        self.nodes.keys().map(|&k| level(k)).max().unwrap_or(0)
    }

    pub fn sibling(&self, index: u32) -> Option<&TreeNode> {
        if index <= 1 {
            None
        } else {
            self.nodes.get(&(index ^ 1))
        }
    }

    /// Copy with every sibling pair whose members are both identity removed.
    pub fn pruned(&self) -> AugTree {
        let mut out = self.clone();
        let pairs: Vec<u32> = self
            .nodes
            .keys()
            .copied()
            .filter(|&i| i % 2 == 0)
            .filter(|&i| {
                let both = |j: u32| self.nodes.get(&j).is_some_and(|n| n.transform.is_identity());
                both(i) && both(i + 1)
            })
            .collect();
        for left in pairs {
            let doomed: Vec<u32> =
                out.nodes.keys().copied().filter(|&k| is_descendant(k, left) || is_descendant(k, left + 1)).collect();
            for k in doomed {
                out.nodes.remove(&k);
            }
        }
        out
    }

    pub fn transforms(&self) -> impl Iterator<Item = &TransformRef> {
        self.nodes.values().map(|n| &n.transform)
    }

    /// Checks that every transform exists in `registry` and acts on `domain`.
    pub fn check_against(&self, registry: &Registry, domain: Domain) -> Result<()> {
        for n in self.nodes.values() {
            registry.check_ref(&n.transform)?;
            let t = registry.get(&n.transform.transform_id)?;
            if t.domain != Domain::Any && t.domain != domain {
                return Err(Error::DomainMismatch {
                    transform: t.transform_id.clone(),
                    expected: domain_name(t.domain),
                    got: domain_name(domain),
                });
            }
        }
        Ok(())
    }

    pub fn is_deterministic(&self, registry: &Registry) -> Result<bool> {
        for n in self.nodes.values() {
            if registry.is_stochastic(&n.transform)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

fn domain_name(d: Domain) -> &'static str {
    match d {
        Domain::Vector => "vector",
        Domain::Graph => "graph",
        Domain::Any => "any",
    }
}

fn is_descendant(node: u32, ancestor: u32) -> bool {
    let mut k = node;
    while k >= ancestor {
        if k == ancestor {
            return true;
        }
        k /= 2;
    }
    false
}

/// One realised transform sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct PathRealization {
    pub applied: Vec<TransformRef>,
    /// Heap index of each applied transform (used to derive per-transform seeds).
    pub nodes: Vec<u32>,
    pub probability: f64,
}

impl PathRealization {
    fn empty() -> Self {
        PathRealization { applied: Vec::new(), nodes: Vec::new(), probability: 1.0 }
    }

    fn push(&self, node: &TreeNode, prob: f64) -> Self {
        let mut next = self.clone();
        if !node.transform.is_identity() {
            next.applied.push(node.transform.clone());
            next.nodes.push(node.index);
        }
        next.probability *= prob;
        next
    }
}

/// All realisations with nonzero probability, root-applied branch first, left before right.
pub fn enumerate_paths(tree: &AugTree) -> Result<Vec<PathRealization>> {
    tree.validate()?;
    let mut out = Vec::new();
    match tree.get(1) {
        None => out.push(PathRealization::empty()),
        Some(root) if root.transform.is_identity() => out.push(PathRealization::empty()),
        Some(root) => {
            let start = PathRealization::empty();
            if root.prob > 0.0 {
                descend(tree, 1, start.push(root, root.prob), &mut out);
            }
            if root.prob < 1.0 {
                let mut skip = start;
                skip.probability = 1.0 - root.prob;
                descend(tree, 1, skip, &mut out);
            }
        }
    }
    Ok(out)
}

fn descend(tree: &AugTree, i: u32, prefix: PathRealization, out: &mut Vec<PathRealization>) {
    let left = tree.get(2 * i);
    let right = tree.get(2 * i + 1);
    match (left, right) {
        (Some(l), Some(r)) => {
            for (child, p) in [(l, l.prob), (r, 1.0 - l.prob)] {
                if p > 0.0 {
                    enter(tree, child, prefix.push(child, p), out);
                }
            }
        }
        (Some(c), None) | (None, Some(c)) => {
            if c.prob > 0.0 {
                enter(tree, c, prefix.push(c, c.prob), out);
            }
            if c.prob < 1.0 {
                let mut stop = prefix;
                stop.probability *= 1.0 - c.prob;
                out.push(stop);
            }
        }
        (None, None) => out.push(prefix),
    }
}

fn enter(tree: &AugTree, node: &TreeNode, path: PathRealization, out: &mut Vec<PathRealization>) {
    if node.transform.is_identity() {
        out.push(path);
    } else {
        descend(tree, node.index, path, out);
    }
}

/// Draws one realisation; deterministic in `seed`.
pub fn sample_path(tree: &AugTree, seed: u64) -> Result<PathRealization> {
    tree.validate()?;
    let mut rng = seed::rng(seed);
    let mut path = PathRealization::empty();
    let Some(root) = tree.get(1) else {
        return Ok(path);
    };
    if root.transform.is_identity() {
        return Ok(path);
    }
    if rng.random::<f64>() < root.prob {
        path = path.push(root, root.prob);
    } else {
        path.probability = 1.0 - root.prob;
    }
    let mut i = 1;
    loop {
        let chosen = match (tree.get(2 * i), tree.get(2 * i + 1)) {
            (Some(l), Some(r)) => {
                if rng.random::<f64>() < l.prob {
                    path = path.push(l, l.prob);
                    l
                } else {
                    path = path.push(r, 1.0 - l.prob);
                    r
                }
            }
            (Some(c), None) | (None, Some(c)) => {
                if rng.random::<f64>() < c.prob {
                    path = path.push(c, c.prob);
                    c
                } else {
                    path.probability *= 1.0 - c.prob;
                    break;
                }
            }
            (None, None) => break,
        };
        if chosen.transform.is_identity() {
            break;
        }
        i = chosen.index;
    }
    Ok(path)
}

/// Applies a realisation left to right; transform `k` uses a seed derived from `seed` and its node.
pub fn apply_path(registry: &Registry, path: &PathRealization, sample: &Sample, seed: u64) -> Result<Sample> {
    let mut current = sample.clone();
    for (t, &node) in path.applied.iter().zip(&path.nodes) {
        current = registry.apply(t, &current, seed::derive(seed, &[tag::AUGMENT, u64::from(node)]))?;
    }
    Ok(current)
}

/// Samples a path with `seed` and applies it to `sample`.
pub fn apply_policy(tree: &AugTree, sample: &Sample, registry: &Registry, seed: u64) -> Result<Sample> {
    tree.check_against(registry, sample.domain())?;
    let path = sample_path(tree, seed)?;
    apply_path(registry, &path, sample, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ForestMode {
    #[default]
    Strict,
    Mixture,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    trees: Vec<(u32, AugTree)>,
    weights: Vec<f64>,
}

impl Forest {
    pub fn new(trees: Vec<(u32, AugTree)>, weights: Vec<f64>) -> Result<Self> {
        if trees.len() != weights.len() || trees.is_empty() {
            return Err(Error::Config(format!("{} trees but {} weights", trees.len(), weights.len())));
        }
        let mut ids: Vec<u32> = trees.iter().map(|(g, _)| *g).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate group in forest".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("forest weights must be nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIBLING_TOL {
            return Err(Error::Config(format!("forest weights sum to {sum}")));
        }
        for (_, t) in &trees {
            t.validate()?;
        }
        Ok(Forest { trees, weights })
    }

    pub fn trees(&self) -> &[(u32, AugTree)] {
        &self.trees
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn tree(&self, group: u32) -> Option<&AugTree> {
        self.trees.iter().find(|(g, _)| *g == group).map(|(_, t)| t)
    }

    /// Index of a tree drawn with probability proportional to its weight.
    pub fn choose_tree(&self, seed: u64) -> usize {
        let u: f64 = seed::rng(seed::derive(seed, &[tag::GROUP])).random();
        let mut acc = 0.0;
        let last = self.weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
        for (k, &w) in self.weights.iter().enumerate() {
            acc += w;
            if w > 0.0 && u < acc {
                return k;
            }
        }
        last
    }
}

pub fn sample_from_forest(
    forest: &Forest,
    group: u32,
    sample: &Sample,
    registry: &Registry,
    seed: u64,
    mode: ForestMode,
) -> Result<Sample> {
    match (forest.tree(group), mode) {
        (Some(t), _) => apply_policy(t, sample, registry, seed),
        (None, ForestMode::Strict) => Err(Error::UnknownGroup(group)),
        (None, ForestMode::Mixture) => {
            let k = forest.choose_tree(seed);
            apply_policy(&forest.trees[k].1, sample, registry, seed)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeEntry {
    pub index: u32,
    pub transform_id: String,
    pub magnitude_level: Option<usize>,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeFile {
    pub version: u32,
    pub d_max: u32,
    pub nodes: Vec<NodeEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestTreeEntry {
    pub group_id: u32,
    pub tree: TreeFile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestFile {
    pub version: u32,
    pub weights: Vec<f64>,
    pub trees: Vec<ForestTreeEntry>,
}

impl From<&AugTree> for TreeFile {
    fn from(t: &AugTree) -> Self {
        TreeFile {
            version: FORMAT_VERSION,
            d_max: t.d_max,
            nodes: t
                .nodes()
                .map(|n| NodeEntry {
                    index: n.index,
                    transform_id: n.transform.transform_id.clone(),
                    magnitude_level: n.transform.magnitude_level,
                    prob: n.prob,
                })
                .collect(),
        }
    }
}

impl TryFrom<TreeFile> for AugTree {
    type Error = Error;

    fn try_from(f: TreeFile) -> Result<Self> {
        if f.version != FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported tree format version {}", f.version)));
        }
        let nodes = f
            .nodes
            .into_iter()
            .map(|e| TreeNode::new(e.index, TransformRef::new(&e.transform_id, e.magnitude_level), e.prob))
            .collect();
        Ok(AugTree::from_nodes(f.d_max, nodes)?)
    }
}

impl AugTree {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&TreeFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        AugTree::try_from(serde_json::from_str::<TreeFile>(text)?)
    }
}

impl Forest {
    pub fn to_file(&self) -> ForestFile {
        ForestFile {
            version: FORMAT_VERSION,
            weights: self.weights.clone(),
            trees: self
                .trees
                .iter()
                .map(|(g, t)| ForestTreeEntry { group_id: *g, tree: TreeFile::from(t) })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ForestFile = serde_json::from_str(text)?;
        if f.version != FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported forest format version {}", f.version)));
        }
        let trees = f
            .trees
            .into_iter()
            .map(|e| Ok((e.group_id, AugTree::try_from(e.tree)?)))
            .collect::<Result<Vec<_>>>()?;
        Forest::new(trees, f.weights)
    }
}

/// Graphviz rendering; identity nodes are double-circled.
pub fn to_dot(tree: &AugTree, registry: &Registry) -> String {
    let mut s = String::from("digraph tree {\n");
    for n in tree.nodes() {
        let label = match registry.magnitude(&n.transform) {
            Ok(Some(m)) => {
                let name = registry.get(&n.transform.transform_id).map_or(n.transform.transform_id.as_str(), |t| t.name.as_str());
                format!("{name}({m}) p={}", n.prob)
            }
            _ => {
                let name = registry.get(&n.transform.transform_id).map_or(n.transform.transform_id.as_str(), |t| t.name.as_str());
                format!("{name} p={}", n.prob)
            }
        };
        let shape = if n.transform.is_identity() { "doublecircle" } else { "ellipse" };
        let _ = writeln!(s, "  n{} [label=\"{}\", shape={}];", n.index, label, shape);
    }
    for n in tree.nodes().filter(|n| n.index > 1) {
        let _ = writeln!(s, "  n{} -> n{} [style=solid];", n.index / 2, n.index);
    }
    s.push_str("}\n");
    s
}
