//! Registry of seeded, pure augmentation transforms.
//!
//! Graph transforms follow the usual graph-augmentation family (drop nodes, permute edges,
//! random-walk subgraph, feature masking). Vector transforms are small geometric / noise maps
//! on real vectors used as stand-ins for image transforms. Every transform is a pure function
//! of `(input, magnitude, seed)` and never mutates its input.

use std::collections::HashSet;
use std::fmt;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::TransformRef;
use crate::seed;

pub const IDENTITY_ID: &str = "identity";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Vector,
    Graph,
    /// Applies to any sample (identity only).
    Any,
}

impl Domain {
    fn name(self) -> &'static str {
        match self {
            Domain::Vector => "vector",
            Domain::Graph => "graph",
            Domain::Any => "any",
        }
    }
}

/// Undirected simple graph with per-node real features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub nodes: usize,
    pub features: Vec<Vec<f64>>,
    pub edges: Vec<[usize; 2]>,
}

impl Graph {
    pub fn new(nodes: usize, features: Vec<Vec<f64>>, edges: Vec<[usize; 2]>) -> Result<Self> {
        let g = Graph { nodes, features, edges };
        g.check()?;
        Ok(g)
    }

    pub fn check(&self) -> Result<()> {
        if self.features.len() != self.nodes {
            return Err(Error::InvalidGraph(format!(
                "{} feature rows for {} nodes",
                self.features.len(),
                self.nodes
            )));
        }
        let mut seen = HashSet::with_capacity(self.edges.len());
        for &[u, v] in &self.edges {
            if u >= self.nodes || v >= self.nodes {
                return Err(Error::InvalidGraph(format!("edge ({u},{v}) out of range")));
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop at {u}")));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({u},{v})")));
            }
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn average_degree(&self) -> f64 {
        if self.nodes == 0 {
            0.0
        } else {
            2.0 * self.edges.len() as f64 / self.nodes as f64
        }
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes];
        for &[u, v] in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj
    }

    /// Subgraph induced by `keep`, with nodes renumbered in increasing original order.
    pub fn induced(&self, keep: &[usize]) -> Graph {
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        keep.dedup();
        let mut map = vec![usize::MAX; self.nodes];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let edges = self
            .edges
            .iter()
            .filter_map(|&[u, v]| {
                (map[u] != usize::MAX && map[v] != usize::MAX).then(|| [map[u], map[v]])
            })
            .collect();
        Graph {
            nodes: keep.len(),
            features: keep.iter().map(|&i| self.features[i].clone()).collect(),
            edges,
        }
    }
}

/// A single input to the augmentation pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Sample {
    Vector(Vec<f64>),
    Graph(Graph),
}

impl Sample {
    pub fn domain(&self) -> Domain {
        match self {
            Sample::Vector(_) => Domain::Vector,
            Sample::Graph(_) => Domain::Graph,
        }
    }
}

/// Conditions reported by graph transforms that could not act as advertised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flag {
    TooSmall,
    ComplementExhausted,
    TargetUnreachable,
}

/// Graph transform output plus an optional flag.
#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    pub graph: Graph,
    pub flag: Option<Flag>,
}

impl Augmented {
    fn clean(graph: Graph) -> Self {
        Augmented { graph, flag: None }
    }
}

fn open_unit(m: f64) -> Result<()> {
    if m > 0.0 && m < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidMagnitude(m))
    }
}

/// Removes `floor(m * n)` uniformly chosen nodes and their incident edges.
pub fn drop_nodes(g: &Graph, magnitude: f64, seed: u64) -> Result<Augmented> {
    open_unit(magnitude)?;
    if g.nodes < 2 {
        return Ok(Augmented { graph: g.clone(), flag: Some(Flag::TooSmall) });
    }
    let count = (magnitude * g.nodes as f64).floor() as usize;
    if count == 0 {
        return Ok(Augmented::clean(g.clone()));
    }
    let mut rng = seed::rng(seed);
    let mut dropped = vec![false; g.nodes];
    for i in index::sample(&mut rng, g.nodes, count) {
        dropped[i] = true;
    }
    let keep: Vec<usize> = (0..g.nodes).filter(|&i| !dropped[i]).collect();
    Ok(Augmented::clean(g.induced(&keep)))
}

/// Deletes `floor(m * |E|)` sampled edges and adds as many sampled non-edges of the input.
pub fn permute_edges(g: &Graph, magnitude: f64, seed: u64) -> Result<Augmented> {
    open_unit(magnitude)?;
    let count = (magnitude * g.edges.len() as f64).floor() as usize;
    if count == 0 {
        return Ok(Augmented::clean(g.clone()));
    }
    let mut rng = seed::rng(seed);
    let mut deleted = vec![false; g.edges.len()];
    for i in index::sample(&mut rng, g.edges.len(), count) {
        deleted[i] = true;
    }
    let existing: HashSet<(usize, usize)> =
        g.edges.iter().map(|&[u, v]| (u.min(v), u.max(v))).collect();
    let pairs = g.nodes * g.nodes.saturating_sub(1) / 2;
    let complement = pairs - existing.len();

    let added: Vec<[usize; 2]> = if complement <= count.saturating_mul(4) {
        // Small complement: enumerate it and sample without replacement.
        let mut non_edges = Vec::with_capacity(complement);
        for u in 0..g.nodes {
            for v in u + 1..g.nodes {
                if !existing.contains(&(u, v)) {
                    non_edges.push([u, v]);
                }
            }
        }
        let take = count.min(non_edges.len());
        index::sample(&mut rng, non_edges.len(), take)
            .into_iter()
            .map(|i| non_edges[i])
            .collect()
    } else {
        let mut chosen = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let u = rng.random_range(0..g.nodes);
            let v = rng.random_range(0..g.nodes);
            if u == v {
                continue;
            }
            let key = (u.min(v), u.max(v));
            if existing.contains(&key) || !chosen.insert(key) {
                continue;
            }
            out.push([key.0, key.1]);
        }
        out
    };

    let flag = (added.len() < count).then_some(Flag::ComplementExhausted);
    let mut edges: Vec<[usize; 2]> = g
        .edges
        .iter()
        .zip(&deleted)
        .filter_map(|(e, &d)| (!d).then_some(*e))
        .collect();
    edges.extend(added);
    Ok(Augmented {
        graph: Graph { nodes: g.nodes, features: g.features.clone(), edges },
        flag,
    })
}

/// Random walk from a uniform start until `ceil(m * n)` distinct nodes are visited;
/// returns the induced subgraph.
pub fn subgraph_random_walk(g: &Graph, magnitude: f64, seed: u64) -> Result<Augmented> {
    if !(magnitude > 0.0 && magnitude <= 1.0) {
        return Err(Error::InvalidMagnitude(magnitude));
    }
    if g.nodes == 0 {
        return Ok(Augmented { graph: g.clone(), flag: Some(Flag::TooSmall) });
    }
    let target = ((magnitude * g.nodes as f64).ceil() as usize).clamp(1, g.nodes);
    let adj = g.adjacency();
    let mut rng = seed::rng(seed);
    let start = rng.random_range(0..g.nodes);

    // Size of the start's component bounds what the walk can reach.
    let mut reach = vec![false; g.nodes];
    let mut stack = vec![start];
    reach[start] = true;
    let mut component = 1;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !reach[v] {
                reach[v] = true;
                component += 1;
                stack.push(v);
            }
        }
    }
    let goal = target.min(component);

    let mut visited = vec![false; g.nodes];
    visited[start] = true;
    let mut order = vec![start];
    let mut current = start;
    while order.len() < goal {
        let nbrs = &adj[current];
        if nbrs.is_empty() {
            current = start;
            continue;
        }
        current = nbrs[rng.random_range(0..nbrs.len())];
        if !visited[current] {
            visited[current] = true;
            order.push(current);
        }
    }
    let flag = (goal < target).then_some(Flag::TargetUnreachable);
    Ok(Augmented { graph: g.induced(&order), flag })
}

/// Zeroes the feature vectors of `floor(m * n)` sampled nodes.
pub fn mask_node_features(g: &Graph, magnitude: f64, seed: u64) -> Result<Augmented> {
    open_unit(magnitude)?;
    let count = (magnitude * g.nodes as f64).floor() as usize;
    let mut out = g.clone();
    if count == 0 {
        return Ok(Augmented::clean(out));
    }
    let mut rng = seed::rng(seed);
    for i in index::sample(&mut rng, g.nodes, count) {
        out.features[i].iter_mut().for_each(|f| *f = 0.0);
    }
    Ok(Augmented::clean(out))
}

/// Rotates the first two coordinates by `magnitude * pi` radians.
pub fn rotate2d(x: &[f64], magnitude: f64) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::Dimension { expected: 2, got: x.len() });
    }
    let (s, c) = (magnitude * std::f64::consts::PI).sin_cos();
    let mut out = x.to_vec();
    out[0] = c * x[0] - s * x[1];
    out[1] = s * x[0] + c * x[1];
    Ok(out)
}

/// Adds i.i.d. Gaussian noise with standard deviation `magnitude`.
pub fn jitter_gaussian(x: &[f64], magnitude: f64, seed: u64) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Dimension { expected: 1, got: 0 });
    }
    let normal = Normal::new(0.0, magnitude).map_err(|_| Error::InvalidMagnitude(magnitude))?;
    let mut rng = seed::rng(seed);
    Ok(x.iter().map(|v| v + normal.sample(&mut rng)).collect())
}

/// Multiplies every coordinate by `1 + magnitude`.
pub fn scale_coords(x: &[f64], magnitude: f64) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Dimension { expected: 1, got: 0 });
    }
    Ok(x.iter().map(|v| v * (1.0 + magnitude)).collect())
}

/// Adds `magnitude` to every coordinate.
pub fn translate(x: &[f64], magnitude: f64) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Dimension { expected: 1, got: 0 });
    }
    Ok(x.iter().map(|v| v + magnitude).collect())
}

/// Mirrors across the second axis (negates the first coordinate).
pub fn axis_flip(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Dimension { expected: 1, got: 0 });
    }
    let mut out = x.to_vec();
    out[0] = -out[0];
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Identity,
    DropNodes,
    PermuteEdges,
    Subgraph,
    MaskNodes,
    Rotate2d,
    Translate,
    Scale,
    AxisFlip,
    Jitter,
}

impl TransformKind {
    pub fn id(self) -> &'static str {
        match self {
            TransformKind::Identity => IDENTITY_ID,
            TransformKind::DropNodes => "drop_nodes",
            TransformKind::PermuteEdges => "permute_edges",
            TransformKind::Subgraph => "subgraph",
            TransformKind::MaskNodes => "mask_nodes",
            TransformKind::Rotate2d => "rotate2d",
            TransformKind::Translate => "translate",
            TransformKind::Scale => "scale",
            TransformKind::AxisFlip => "axis_flip",
            TransformKind::Jitter => "jitter",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Identity => "Identity",
            TransformKind::DropNodes => "DropNodes",
            TransformKind::PermuteEdges => "PermuteEdges",
            TransformKind::Subgraph => "Subgraph",
            TransformKind::MaskNodes => "MaskNodes",
            TransformKind::Rotate2d => "Rotate2d",
            TransformKind::Translate => "Translate",
            TransformKind::Scale => "Scale",
            TransformKind::AxisFlip => "AxisFlip",
            TransformKind::Jitter => "Jitter",
        }
    }

    pub fn domain(self) -> Domain {
        match self {
            TransformKind::Identity => Domain::Any,
            TransformKind::DropNodes
            | TransformKind::PermuteEdges
            | TransformKind::Subgraph
            | TransformKind::MaskNodes => Domain::Graph,
            _ => Domain::Vector,
        }
    }

    pub fn stochastic(self) -> bool {
        matches!(
            self,
            TransformKind::DropNodes
                | TransformKind::PermuteEdges
                | TransformKind::Subgraph
                | TransformKind::MaskNodes
                | TransformKind::Jitter
        )
    }

    pub fn all() -> [TransformKind; 10] {
        use TransformKind::*;
        [Identity, DropNodes, PermuteEdges, Subgraph, MaskNodes, Rotate2d, Translate, Scale, AxisFlip, Jitter]
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::all().into_iter().find(|k| k.id() == id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transformation {
    pub transform_id: String,
    pub name: String,
    pub kind: TransformKind,
    pub domain: Domain,
    pub magnitudes: Vec<f64>,
    pub stochastic: bool,
}

impl Transformation {
    pub fn new(kind: TransformKind, magnitudes: Vec<f64>) -> Result<Self> {
        if kind == TransformKind::Identity && !magnitudes.is_empty() {
            return Err(Error::Config("identity takes no magnitudes".into()));
        }
        if kind != TransformKind::Identity && magnitudes.is_empty() {
            return Err(Error::Config(format!("`{}` needs at least one magnitude", kind.id())));
        }
        for &m in &magnitudes {
            if !(m > 0.0 && m <= 1.0) {
                return Err(Error::InvalidMagnitude(m));
            }
        }
        if magnitudes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("magnitudes of `{}` must be strictly increasing", kind.id())));
        }
        Ok(Transformation {
            transform_id: kind.id().to_string(),
            name: kind.name().to_string(),
            kind,
            domain: kind.domain(),
            magnitudes,
            stochastic: kind.stochastic(),
        })
    }
}

/// Ordered set of transforms. Order defines candidate order (and search tie-breaking).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub transforms: Vec<Transformation>,
}

impl Registry {
    pub fn new(transforms: Vec<Transformation>) -> Result<Self> {
        let mut names = HashSet::new();
        let mut ids = HashSet::new();
        for t in &transforms {
            if !names.insert(t.name.clone()) || !ids.insert(t.transform_id.clone()) {
                return Err(Error::Config(format!("duplicate transform `{}`", t.transform_id)));
            }
        }
        Ok(Registry { transforms })
    }

    pub fn get(&self, id: &str) -> Result<&Transformation> {
        self.transforms
            .iter()
            .find(|t| t.transform_id == id)
            .ok_or_else(|| Error::UnknownTransform(id.to_string()))
    }

    pub fn magnitude(&self, r: &TransformRef) -> Result<Option<f64>> {
        let t = self.get(&r.transform_id)?;
        match r.magnitude_level {
            None if t.magnitudes.is_empty() => Ok(None),
            Some(l) if l < t.magnitudes.len() => Ok(Some(t.magnitudes[l])),
            other => Err(Error::MagnitudeLevel {
                transform: r.transform_id.clone(),
                level: other.unwrap_or(usize::MAX),
            }),
        }
    }

    pub fn check_ref(&self, r: &TransformRef) -> Result<()> {
        self.magnitude(r).map(|_| ())
    }

    pub fn is_stochastic(&self, r: &TransformRef) -> Result<bool> {
        Ok(self.get(&r.transform_id)?.stochastic)
    }

    /// Every (transform, magnitude) pair in registry order; identity entries come last.
    pub fn candidates(&self) -> Vec<TransformRef> {
        let mut out: Vec<TransformRef> = self
            .transforms
            .iter()
            .filter(|t| t.kind != TransformKind::Identity)
            .flat_map(|t| {
                (0..t.magnitudes.len()).map(move |l| TransformRef::new(&t.transform_id, Some(l)))
            })
            .collect();
        if self.transforms.iter().any(|t| t.kind == TransformKind::Identity) {
            out.push(TransformRef::identity());
        }
        out
    }

    /// Human-readable label such as `rotate2d(0.5)`.
    pub fn label(&self, r: &TransformRef) -> String {
        match self.magnitude(r) {
            Ok(Some(m)) => format!("{}({})", r.transform_id, m),
            _ => r.transform_id.clone(),
        }
    }

    pub fn apply(&self, r: &TransformRef, sample: &Sample, seed: u64) -> Result<Sample> {
        let t = self.get(&r.transform_id)?;
        let magnitude = self.magnitude(r)?;
        if t.domain != Domain::Any && t.domain != sample.domain() {
            return Err(Error::DomainMismatch {
                transform: t.transform_id.clone(),
                expected: t.domain.name(),
                got: sample.domain().name(),
            });
        }
        let m = magnitude.unwrap_or(0.0);
        let out = match (t.kind, sample) {
            (TransformKind::Identity, s) => s.clone(),
            (TransformKind::DropNodes, Sample::Graph(g)) => Sample::Graph(drop_nodes(g, m, seed)?.graph),
            (TransformKind::PermuteEdges, Sample::Graph(g)) => {
                Sample::Graph(permute_edges(g, m, seed)?.graph)
            }
            (TransformKind::Subgraph, Sample::Graph(g)) => {
                Sample::Graph(subgraph_random_walk(g, m, seed)?.graph)
            }
            (TransformKind::MaskNodes, Sample::Graph(g)) => {
                Sample::Graph(mask_node_features(g, m, seed)?.graph)
            }
            (TransformKind::Rotate2d, Sample::Vector(x)) => Sample::Vector(rotate2d(x, m)?),
            (TransformKind::Translate, Sample::Vector(x)) => Sample::Vector(translate(x, m)?),
            (TransformKind::Scale, Sample::Vector(x)) => Sample::Vector(scale_coords(x, m)?),
            (TransformKind::AxisFlip, Sample::Vector(x)) => Sample::Vector(axis_flip(x)?),
            (TransformKind::Jitter, Sample::Vector(x)) => Sample::Vector(jitter_gaussian(x, m, seed)?),
            _ => unreachable!("domain checked above"),
        };
        Ok(out)
    }

    pub fn to_manifest(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let raw: Registry = serde_json::from_str(text)?;
        let rebuilt = raw
            .transforms
            .into_iter()
            .map(|t| Transformation::new(t.kind, t.magnitudes))
            .collect::<Result<Vec<_>>>()?;
        Registry::new(rebuilt)
    }
}

impl fmt::Display for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.transforms {
            writeln!(f, "{} {:?}", t.transform_id, t.magnitudes)?;
        }
        Ok(())
    }
}

pub const GRAPH_MAGNITUDES: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

/// The four graph transforms at magnitudes 0.1..0.5 plus identity (21 candidates).
pub fn default_graph_registry() -> Registry {
    let kinds = [
        TransformKind::DropNodes,
        TransformKind::PermuteEdges,
        TransformKind::Subgraph,
        TransformKind::MaskNodes,
    ];
    let mut ts: Vec<Transformation> = kinds
        .iter()
        .map(|&k| Transformation::new(k, GRAPH_MAGNITUDES.to_vec()).expect("static magnitudes"))
        .collect();
    ts.push(Transformation::new(TransformKind::Identity, vec![]).expect("identity"));
    Registry::new(ts).expect("unique ids")
}

pub fn default_vector_registry() -> Registry {
    let spec: [(TransformKind, &[f64]); 6] = [
        (TransformKind::Rotate2d, &[0.25, 0.5, 0.75, 1.0]),
        (TransformKind::Translate, &[0.25, 0.5, 1.0]),
        (TransformKind::Scale, &[0.25, 0.5, 1.0]),
        (TransformKind::AxisFlip, &[1.0]),
        (TransformKind::Jitter, &[0.05, 0.1, 0.2]),
        (TransformKind::Identity, &[]),
    ];
    let ts = spec
        .iter()
        .map(|(k, m)| Transformation::new(*k, m.to_vec()).expect("static magnitudes"))
        .collect();
    Registry::new(ts).expect("unique ids")
}

/// Registry restricted to the given transform ids, keeping the given order.
pub fn select(registry: &Registry, ids: &[&str]) -> Result<Registry> {
    let ts = ids
        .iter()
        .map(|id| registry.get(id).cloned())
        .collect::<Result<Vec<_>>>()?;
    Registry::new(ts)
}
