//! Grouped datasets: container, deterministic splits, loaders and synthetic generators.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, tag};
use crate::transforms::{rotate2d, Graph, Sample};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Class(usize),
    Multi(Vec<bool>),
}

impl Label {
    fn encode(&self) -> String {
        match self {
            Label::Class(c) => c.to_string(),
            Label::Multi(bits) => bits.iter().map(|&b| if b { "1" } else { "0" }).collect::<Vec<_>>().join("|"),
        }
    }

    fn decode(s: &str) -> Option<Label> {
        if s.contains('|') {
            s.split('|')
                .map(|b| match b.trim() {
                    "1" => Some(true),
                    "0" => Some(false),
                    _ => None,
                })
                .collect::<Option<Vec<_>>>()
                .map(Label::Multi)
        } else {
            s.trim().parse().ok().map(Label::Class)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Split> {
        match s.trim() {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub sample: Sample,
    pub label: Label,
    pub group: u32,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupStats {
    pub group_id: u32,
    pub count: usize,
    pub proportion: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(examples: Vec<Example>) -> Result<Self> {
        let ds = Dataset { examples };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Checks group ids and that every group has both training and validation data.
    pub fn validate(&self) -> Result<()> {
        if self.examples.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        let vector = matches!(self.examples[0].sample, Sample::Vector(_));
        for (i, e) in self.examples.iter().enumerate() {
            if e.group == 0 {
                return Err(Error::Data(format!("row {i}: group ids start at 1")));
            }
            if matches!(e.sample, Sample::Vector(_)) != vector {
                return Err(Error::Data(format!("row {i}: mixed vector and graph samples")));
            }
        }
        for g in self.group_ids() {
            for split in [Split::Train, Split::Val] {
                if !self.examples.iter().any(|e| e.group == g && e.split == split) {
                    return Err(Error::Data(format!("group {g} has no {} examples", split.as_str())));
                }
            }
        }
        Ok(())
    }

    pub fn group_ids(&self) -> Vec<u32> {
        self.examples.iter().map(|e| e.group).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn split(&self, split: Split) -> Vec<Example> {
        self.examples.iter().filter(|e| e.split == split).cloned().collect()
    }

    pub fn group_split(&self, group: u32, split: Split) -> Vec<Example> {
        self.examples.iter().filter(|e| e.group == group && e.split == split).cloned().collect()
    }

    /// Per-group counts and proportions within one split.
    pub fn group_stats(&self, split: Split) -> Vec<GroupStats> {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for e in self.examples.iter().filter(|e| e.split == split) {
            *counts.entry(e.group).or_default() += 1;
        }
        let total: usize = counts.values().sum();
        counts
            .into_iter()
            .map(|(g, c)| GroupStats { group_id: g, count: c, proportion: c as f64 / total as f64 })
            .collect()
    }

    /// Feature dimension of vector samples, or node-feature dimension of graphs.
    pub fn input_dim(&self) -> usize {
        match self.examples.first().map(|e| &e.sample) {
            Some(Sample::Vector(x)) => x.len(),
            Some(Sample::Graph(g)) => g.feature_dim(),
            None => 0,
        }
    }

    /// Number of classes (multiclass) or labels (multilabel).
    pub fn num_outputs(&self) -> usize {
        self.examples
            .iter()
            .map(|e| match &e.label {
                Label::Class(c) => c + 1,
                Label::Multi(b) => b.len(),
            })
            .max()
            .unwrap_or(0)
            .max(2)
    }

    pub fn is_multilabel(&self) -> bool {
        matches!(self.examples.first().map(|e| &e.label), Some(Label::Multi(_)))
    }
}

/// Uniform random subset of at most `size` examples, order preserved.
pub fn subsample(examples: &[Example], size: usize, seed: u64) -> Vec<Example> {
    if size == 0 || size >= examples.len() {
        return examples.to_vec();
    }
    let mut idx = rand::seq::index::sample(&mut seed::rng(seed), examples.len(), size).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| examples[i].clone()).collect()
}

/// Stratified per-(group, label) split; each group of two or more gets at least one val example.
pub fn assign_splits(groups: &[u32], labels: &[Label], train_fraction: f64, seed: u64) -> Vec<Split> {
    let mut strata: BTreeMap<(u32, &Label), Vec<usize>> = BTreeMap::new();
    for (i, (g, l)) in groups.iter().zip(labels).enumerate() {
        strata.entry((*g, l)).or_default().push(i);
    }
    let mut out = vec![Split::Train; groups.len()];
    let mut rng = seed::rng(seed::derive(seed, &[tag::SPLIT]));
    for idx in strata.values_mut() {
        idx.shuffle(&mut rng);
        let n_train = (train_fraction * idx.len() as f64).round() as usize;
        for &i in &idx[n_train.min(idx.len())..] {
            out[i] = Split::Val;
        }
    }
    let mut by_group: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        by_group.entry(*g).or_default().push(i);
    }
    for idx in by_group.values() {
        if idx.len() >= 2 && !idx.iter().any(|&i| out[i] == Split::Val) {
            out[*idx.last().unwrap()] = Split::Val;
        }
        if idx.len() >= 2 && !idx.iter().any(|&i| out[i] == Split::Train) {
            out[idx[0]] = Split::Train;
        }
    }
    out
}

/// Group assignment from `partition_by_intervals`.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub groups: Vec<u32>,
    /// Set when duplicate quantile edges forced bins to merge.
    pub merged: bool,
}

fn quantile_cuts(values: &[f64], bins: usize) -> (Vec<f64>, bool) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut cuts: Vec<f64> = (1..bins).map(|j| sorted[(j * n / bins).min(n - 1)]).collect();
    let wanted = cuts.len();
    cuts.dedup();
    // A cut equal to the minimum leaves its lower bin empty.
    cuts.retain(|&c| c > sorted[0]);
    let merged = cuts.len() < wanted;
    (cuts, merged)
}

fn bin_of(cuts: &[f64], x: f64) -> usize {
    cuts.iter().filter(|&&c| x >= c).count()
}

/// Bins graphs by size quantile and average-degree quantile; id = size_bin * degree_bins + degree_bin + 1.
pub fn partition_by_intervals(graphs: &[Graph], size_bins: usize, degree_bins: usize) -> Result<Partition> {
    if size_bins == 0 || degree_bins == 0 {
        return Err(Error::Config("bin counts must be positive".into()));
    }
    if graphs.is_empty() {
        return Ok(Partition { groups: vec![], merged: false });
    }
    let sizes: Vec<f64> = graphs.iter().map(|g| g.nodes as f64).collect();
    let degrees: Vec<f64> = graphs.iter().map(Graph::average_degree).collect();
    let (size_cuts, m1) = quantile_cuts(&sizes, size_bins);
    let (deg_cuts, m2) = quantile_cuts(&degrees, degree_bins);
    let groups = sizes
        .iter()
        .zip(&degrees)
        .map(|(&s, &d)| (bin_of(&size_cuts, s) * degree_bins + bin_of(&deg_cuts, d) + 1) as u32)
        .collect();
    Ok(Partition { groups, merged: m1 || m2 })
}

/// One group of the two-class Gaussian generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianGroup {
    pub n: usize,
    pub center: [f64; 2],
    /// Direction of the class axis, in units of pi.
    pub orientation: f64,
    /// Distance of each class mean from the centre.
    pub separation: f64,
    pub noise: f64,
    /// Validation/test points are rotated by `-eval_rotation * pi` (undone by rotate2d at that magnitude).
    pub eval_rotation: f64,
    /// Then shifted by `-eval_translation` on every coordinate (undone by translate).
    pub eval_translation: f64,
}

impl GaussianGroup {
    pub fn new(n: usize) -> Self {
        GaussianGroup {
            n,
            center: [0.0, 0.0],
            orientation: 0.0,
            separation: 1.5,
            noise: 1.0,
            eval_rotation: 0.0,
            eval_translation: 0.0,
        }
    }
}

/// `m` groups of the same size; group `g` (from 0) has its evaluation data rotated by `g * rotation_step`.
pub fn rotated_groups(m: usize, n_per_group: usize, rotation_step: f64) -> Vec<GaussianGroup> {
    (0..m)
        .map(|g| GaussianGroup { eval_rotation: g as f64 * rotation_step, ..GaussianGroup::new(n_per_group) })
        .collect()
}

/// Two-class 2-D Gaussian groups with per-group evaluation shift and a stratified 75/25 split.
pub fn synth_gaussian_groups(groups: &[GaussianGroup], seed: u64) -> Result<Dataset> {
    if groups.is_empty() {
        return Err(Error::Config("at least one group required".into()));
    }
    let mut examples = Vec::new();
    for (j, spec) in groups.iter().enumerate() {
        if spec.n < 4 {
            return Err(Error::Config(format!("group {} needs at least 4 examples", j + 1)));
        }
        let gid = j as u32 + 1;
        let mut rng = seed::rng(seed::derive(seed, &[tag::GROUP, j as u64]));
        let (s, c) = (spec.orientation * std::f64::consts::PI).sin_cos();
        let mut xs = Vec::with_capacity(spec.n);
        let mut labels = Vec::with_capacity(spec.n);
        for k in 0..spec.n {
            let class = k % 2;
            let sign = if class == 0 { 1.0 } else { -1.0 };
            let e0: f64 = StandardNormal.sample(&mut rng);
            let e1: f64 = StandardNormal.sample(&mut rng);
            xs.push(vec![
                spec.center[0] + sign * spec.separation * c + spec.noise * e0,
                spec.center[1] + sign * spec.separation * s + spec.noise * e1,
            ]);
            labels.push(Label::Class(class));
        }
        let splits = assign_splits(&vec![gid; spec.n], &labels, 0.75, seed::derive(seed, &[tag::GROUP, j as u64]));
        for ((x, label), split) in xs.into_iter().zip(labels).zip(splits) {
            let x = if split == Split::Train {
                x
            } else {
                rotate2d(&x, -spec.eval_rotation)?.into_iter().map(|v| v - spec.eval_translation).collect()
            };
            examples.push(Example { sample: Sample::Vector(x), label, group: gid, split });
        }
    }
    Dataset::new(examples)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeDensity {
    /// Edge probability drawn uniformly from the range.
    Probability(f64, f64),
    /// Expected average degree drawn uniformly from the range.
    AverageDegree(f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Class 1 when the average degree exceeds the threshold.
    AvgDegreeAbove(f64),
    /// Class 1 when the node count exceeds the threshold.
    SizeAbove(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphGenConfig {
    pub n: usize,
    pub size_range: (usize, usize),
    pub density: EdgeDensity,
    pub feature_dim: usize,
    pub label: LabelRule,
    pub size_bins: usize,
    pub degree_bins: usize,
}

impl Default for GraphGenConfig {
    fn default() -> Self {
        GraphGenConfig {
            n: 200,
            size_range: (8, 40),
            density: EdgeDensity::AverageDegree(1.0, 6.0),
            feature_dim: 3,
            label: LabelRule::AvgDegreeAbove(3.5),
            size_bins: 1,
            degree_bins: 1,
        }
    }
}

/// G(n, p) by geometric edge skipping.
pub fn erdos_renyi(n: usize, p: f64, rng: &mut seed::Rng) -> Vec<[usize; 2]> {
    let mut edges = Vec::new();
    if n < 2 || p <= 0.0 {
        return edges;
    }
    if p >= 1.0 {
        for v in 1..n {
            for w in 0..v {
                edges.push([w, v]);
            }
        }
        return edges;
    }
    let lp = (1.0 - p).ln();
    let (mut v, mut w) = (1usize, -1i64);
    while v < n {
        let r: f64 = rng.random();
        w += 1 + ((1.0 - r).ln() / lp).floor() as i64;
        while w >= v as i64 && v < n {
            w -= v as i64;
            v += 1;
        }
        if v < n {
            edges.push([w as usize, v]);
        }
    }
    edges
}

pub fn synth_random_graphs(cfg: &GraphGenConfig, seed: u64) -> Result<Dataset> {
    let (lo, hi) = cfg.size_range;
    if lo == 0 || lo > hi {
        return Err(Error::Config(format!("degenerate size range [{lo}, {hi}]")));
    }
    let (dlo, dhi) = match cfg.density {
        EdgeDensity::Probability(a, b) => (a, b),
        EdgeDensity::AverageDegree(a, b) => (a, b),
    };
    if !(dlo >= 0.0 && dlo <= dhi) || matches!(cfg.density, EdgeDensity::Probability(_, b) if b > 1.0) {
        return Err(Error::Config(format!("degenerate density range [{dlo}, {dhi}]")));
    }
    if cfg.n < 2 {
        return Err(Error::Config("need at least two graphs".into()));
    }
    let mut rng = seed::rng(seed::derive(seed, &[tag::INIT]));
    let mut graphs = Vec::with_capacity(cfg.n);
    let mut labels = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let nodes = rng.random_range(lo..=hi);
        let level = if dhi > dlo { rng.random_range(dlo..=dhi) } else { dlo };
        let p = match cfg.density {
            EdgeDensity::Probability(..) => level,
            EdgeDensity::AverageDegree(..) => {
                if nodes > 1 {
                    (level / (nodes - 1) as f64).min(1.0)
                } else {
                    0.0
                }
            }
        };
        let edges = erdos_renyi(nodes, p, &mut rng);
        let features = (0..nodes)
            .map(|_| (0..cfg.feature_dim).map(|_| rng.random::<f64>()).collect())
            .collect();
        let g = Graph::new(nodes, features, edges)?;
        let class = match cfg.label {
            LabelRule::AvgDegreeAbove(t) => usize::from(g.average_degree() > t),
            LabelRule::SizeAbove(t) => usize::from(g.nodes as f64 > t),
        };
        labels.push(Label::Class(class));
        graphs.push(g);
    }
    let part = partition_by_intervals(&graphs, cfg.size_bins, cfg.degree_bins)?;
    if part.merged {
        log::warn!("graph partition merged quantile bins");
    }
    let splits = assign_splits(&part.groups, &labels, 0.75, seed);
    let examples = graphs
        .into_iter()
        .zip(labels)
        .zip(part.groups)
        .zip(splits)
        .map(|(((g, label), group), split)| Example { sample: Sample::Graph(g), label, group, split })
        .collect();
    Dataset::new(examples)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    path: String,
    label: Label,
    group: u32,
    split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    graphs: Vec<ManifestEntry>,
}

/// Writes vectors as CSV (`.csv`) or graphs as a JSON manifest plus one JSON file per graph.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    match ds.examples.first().map(|e| &e.sample) {
        Some(Sample::Graph(_)) => save_graphs(ds, path),
        _ => save_csv(ds, path),
    }
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::Parse { path: path.display().to_string(), message: "no such file".into() });
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => load_graphs(path),
        _ => load_csv(path),
    }
}

fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let dim = ds.input_dim();
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..dim).map(|j| format!("feat_{j}")).collect();
    header.extend(["label", "group", "split"].map(String::from));
    w.write_record(&header)?;
    for e in &ds.examples {
        let Sample::Vector(x) = &e.sample else {
            return Err(Error::Data("cannot write graph samples as CSV".into()));
        };
        let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        row.push(e.label.encode());
        row.push(e.group.to_string());
        row.push(e.split.as_str().to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn load_csv(path: &Path) -> Result<Dataset> {
    let shown = path.display().to_string();
    let parse_err = |message: String| Error::Parse { path: shown.clone(), message };
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let group_col = col("group").ok_or_else(|| parse_err("group column required".into()))?;
    let label_col = col("label").ok_or_else(|| parse_err("label column required".into()))?;
    let split_col = col("split").ok_or_else(|| parse_err("split column required".into()))?;
    let feats: Vec<usize> = (0..).map_while(|j| col(&format!("feat_{j}"))).collect();
    if feats.is_empty() {
        return Err(parse_err("no feat_0.. columns".into()));
    }
    let mut examples = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let field = |c: usize| rec.get(c).ok_or_else(|| parse_err(format!("row {row}: missing field {}", header.get(c).unwrap_or("?"))));
        let mut x = Vec::with_capacity(feats.len());
        for (j, &c) in feats.iter().enumerate() {
            let v: f64 = field(c)?
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("row {row}: feat_{j} is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("row {row}: feat_{j} is {v}")));
            }
            x.push(v);
        }
        let label = Label::decode(field(label_col)?).ok_or_else(|| parse_err(format!("row {row}: bad label")))?;
        let group = field(group_col)?.trim().parse().map_err(|_| parse_err(format!("row {row}: bad group")))?;
        let split = Split::parse(field(split_col)?).ok_or_else(|| parse_err(format!("row {row}: bad split")))?;
        examples.push(Example { sample: Sample::Vector(x), label, group, split });
    }
    Dataset::new(examples)
}

fn graph_dir(manifest: &Path) -> PathBuf {
    let stem = manifest.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    manifest.with_file_name(format!("{stem}_graphs"))
}

fn save_graphs(ds: &Dataset, path: &Path) -> Result<()> {
    let dir = graph_dir(path);
    fs::create_dir_all(&dir)?;
    let dir_name = dir.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
    let mut entries = Vec::with_capacity(ds.len());
    for (k, e) in ds.examples.iter().enumerate() {
        let Sample::Graph(g) = &e.sample else {
            return Err(Error::Data("mixed samples in graph dataset".into()));
        };
        let file = format!("graph_{k:05}.json");
        fs::write(dir.join(&file), serde_json::to_string(g)?)?;
        entries.push(ManifestEntry { path: format!("{dir_name}/{file}"), label: e.label.clone(), group: e.group, split: e.split });
    }
    fs::write(path, serde_json::to_string_pretty(&Manifest { graphs: entries })?)?;
    Ok(())
}

fn load_graphs(path: &Path) -> Result<Dataset> {
    let shown = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Parse { path: shown.clone(), message: e.to_string() })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut examples = Vec::with_capacity(manifest.graphs.len());
    for (k, entry) in manifest.graphs.into_iter().enumerate() {
        let gpath = base.join(&entry.path);
        let gtext = fs::read_to_string(&gpath)
            .map_err(|e| Error::Parse { path: shown.clone(), message: format!("entry {k}: {}: {e}", gpath.display()) })?;
        let g: Graph = serde_json::from_str(&gtext)
            .map_err(|e| Error::Parse { path: gpath.display().to_string(), message: e.to_string() })?;
        g.check()?;
        examples.push(Example { sample: Sample::Graph(g), label: entry.label, group: entry.group, split: entry.split });
    }
    Dataset::new(examples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn graph(nodes: usize, degree: usize) -> Graph {
        // circulant graph with the given even degree
        let mut edges = Vec::new();
        for u in 0..nodes {
            for k in 1..=degree / 2 {
                let v = (u + k) % nodes;
                edges.push([u.min(v), u.max(v)]);
            }
        }
        edges.sort_unstable();
        edges.dedup();
        Graph::new(nodes, vec![vec![0.0]; nodes], edges).unwrap()
    }

    #[test]
    fn partition_examples() {
        let gs = vec![graph(10, 2), graph(10, 2), graph(100, 8), graph(100, 8)];
        let p = partition_by_intervals(&gs, 1, 1).unwrap();
        assert_eq!(p.groups, vec![1, 1, 1, 1]);
        let p = partition_by_intervals(&gs, 2, 2).unwrap();
        let occupied: BTreeSet<_> = p.groups.iter().collect();
        assert_eq!(occupied.len(), 2);
        assert_eq!(p.groups, vec![1, 1, 4, 4]);
        let same = vec![graph(5, 2); 4];
        assert!(partition_by_intervals(&same, 2, 1).unwrap().merged);
    }

    #[test]
    fn partition_is_order_invariant() {
        let cfg = GraphGenConfig { n: 60, ..GraphGenConfig::default() };
        let ds = synth_random_graphs(&cfg, 3).unwrap();
        let gs: Vec<Graph> = ds.examples.iter().map(|e| match &e.sample {
            Sample::Graph(g) => g.clone(),
            _ => unreachable!(),
        }).collect();
        let a = partition_by_intervals(&gs, 3, 2).unwrap().groups;
        let mut rev = gs.clone();
        rev.reverse();
        let mut b = partition_by_intervals(&rev, 3, 2).unwrap().groups;
        b.reverse();
        assert_eq!(a, b);
    }

    #[test]
    fn protein_scale_generator_fills_bins() {
        let cfg = GraphGenConfig {
            n: 2000,
            size_range: (16, 600),
            density: EdgeDensity::AverageDegree(2.0, 12.0),
            feature_dim: 2,
            label: LabelRule::AvgDegreeAbove(7.0),
            size_bins: 4,
            degree_bins: 4,
        };
        let ds = synth_random_graphs(&cfg, 1).unwrap();
        assert!(ds.group_ids().len() >= 8, "{}", ds.group_ids().len());
        assert_eq!(ds.group_ids().len(), 16);
    }

    #[test]
    fn graph_generator_edges() {
        let cfg = GraphGenConfig { n: 10, size_range: (5, 5), density: EdgeDensity::Probability(0.0, 0.0), ..Default::default() };
        let ds = synth_random_graphs(&cfg, 0).unwrap();
        for e in &ds.examples {
            let Sample::Graph(g) = &e.sample else { panic!() };
            assert_eq!(g.nodes, 5);
            assert!(g.edges.is_empty());
        }
        let bad = GraphGenConfig { size_range: (9, 3), ..Default::default() };
        assert!(synth_random_graphs(&bad, 0).is_err());
    }

    #[test]
    fn erdos_renyi_density() {
        let mut rng = seed::rng(5);
        let n = 200;
        let total: usize = (0..20).map(|_| erdos_renyi(n, 0.1, &mut rng).len()).sum();
        let expect = 20.0 * 0.1 * (n * (n - 1) / 2) as f64;
        assert!((total as f64 - expect).abs() / expect < 0.03);
        let e = erdos_renyi(30, 0.3, &mut rng);
        Graph::new(30, vec![vec![]; 30], e).unwrap();
        assert_eq!(erdos_renyi(6, 1.0, &mut rng).len(), 15);
    }

    #[test]
    fn gaussian_generator() {
        let a = synth_gaussian_groups(&rotated_groups(2, 40, 0.0), 9).unwrap();
        let b = synth_gaussian_groups(&rotated_groups(2, 40, 0.0), 9).unwrap();
        assert_eq!(a, b);
        let stats = a.group_stats(Split::Train);
        assert_eq!(stats.len(), 2);
        assert!((stats.iter().map(|s| s.proportion).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(a.group_split(1, Split::Train).len(), 30);
        assert_eq!(a.group_split(1, Split::Val).len(), 10);
        assert!(synth_gaussian_groups(&[], 0).is_err());
    }

    #[test]
    fn eval_shift_is_undone_by_rotation() {
        let spec = GaussianGroup { eval_rotation: 0.5, ..GaussianGroup::new(40) };
        let shifted = synth_gaussian_groups(&[spec], 4).unwrap();
        let plain = synth_gaussian_groups(&[GaussianGroup::new(40)], 4).unwrap();
        for (s, p) in shifted.examples.iter().zip(&plain.examples) {
            let (Sample::Vector(xs), Sample::Vector(xp)) = (&s.sample, &p.sample) else { panic!() };
            let back = if s.split == Split::Train { xs.clone() } else { rotate2d(xs, 0.5).unwrap() };
            for (u, v) in back.iter().zip(xp) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_gaussian_groups(&rotated_groups(3, 20, 0.25), 2).unwrap();
        let p = dir.path().join("d.csv");
        save_dataset(&ds, &p).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), ds);

        let multi = Dataset::new(vec![
            Example { sample: Sample::Vector(vec![0.5]), label: Label::Multi(vec![true, false, true]), group: 1, split: Split::Train },
            Example { sample: Sample::Vector(vec![1.5]), label: Label::Multi(vec![false, false, true]), group: 1, split: Split::Val },
        ])
        .unwrap();
        save_dataset(&multi, &p).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), multi);

        let nog = dir.path().join("nog.csv");
        fs::write(&nog, "feat_0,label,split\n1.0,0,train\n").unwrap();
        assert!(load_dataset(&nog).unwrap_err().to_string().contains("group column required"));
        let nan = dir.path().join("nan.csv");
        fs::write(&nan, "feat_0,label,group,split\n1.0,0,1,train\nNaN,1,1,val\n").unwrap();
        assert!(load_dataset(&nan).unwrap_err().to_string().contains("row 2"));
    }

    #[test]
    fn graph_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GraphGenConfig { n: 12, ..Default::default() };
        let ds = synth_random_graphs(&cfg, 8).unwrap();
        let p = dir.path().join("graphs.json");
        save_dataset(&ds, &p).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), ds);
    }

    proptest! {
        #[test]
        fn splits_disjoint_and_deterministic(n in 4usize..60, groups in 1u32..4, seed in any::<u64>()) {
            let gs: Vec<u32> = (0..n).map(|i| i as u32 % groups + 1).collect();
            let labels: Vec<Label> = (0..n).map(|i| Label::Class(i / 2 % 2)).collect();
            let a = assign_splits(&gs, &labels, 0.75, seed);
            prop_assert_eq!(&a, &assign_splits(&gs, &labels, 0.75, seed));
            for g in 1..=groups {
                let members: Vec<_> = (0..n).filter(|&i| gs[i] == g).collect();
                if members.len() >= 2 {
                    prop_assert!(members.iter().any(|&i| a[i] == Split::Val));
                    prop_assert!(members.iter().any(|&i| a[i] == Split::Train));
                }
            }
        }

        #[test]
        fn proportions_sum_to_one(sizes in proptest::collection::vec(4usize..30, 1..5), seed in any::<u64>()) {
            let specs: Vec<GaussianGroup> = sizes.iter().map(|&n| GaussianGroup::new(n)).collect();
            let ds = synth_gaussian_groups(&specs, seed).unwrap();
            for split in [Split::Train, Split::Val] {
                let s: f64 = ds.group_stats(split).iter().map(|g| g.proportion).sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}
