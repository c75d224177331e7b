//! Small differentiable classifiers: a linear (logistic / softmax) model or one tanh hidden
//! layer, with exact gradients, Hessian-vector products and a policy-aware SGD trainer.
//!
//! Parameter layout (row-major):
//! * linear: `[W (C x D), b (C)]`
//! * hidden: `[W1 (H x D), b1 (H), W2 (C x H), b2 (C)]`

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Example, Label};
use crate::error::{Error, Result};
use crate::policy::{apply_path, apply_policy, enumerate_paths, sample_path, AugTree};
use crate::seed::{self, tag};
use crate::transforms::{Registry, Sample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SoftmaxCrossEntropy,
    MultilabelBce,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    /// 0 gives a linear model.
    pub hidden_dim: usize,
    pub num_outputs: usize,
    pub loss: LossKind,
    pub l2: f64,
}

impl ModelSpec {
    pub fn linear(input_dim: usize, num_outputs: usize, l2: f64) -> Self {
        ModelSpec { input_dim, hidden_dim: 0, num_outputs, loss: LossKind::SoftmaxCrossEntropy, l2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_outputs == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config(format!("l2 penalty {} must be nonnegative", self.l2)));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let (d, h, c) = (self.input_dim, self.hidden_dim, self.num_outputs);
        if h == 0 {
            c * d + c
        } else {
            h * d + h + c * h + c
        }
    }
}

/// Gaussian initialisation with standard deviation `scale / sqrt(fan_in)`.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    let (d, h, c) = (spec.input_dim, spec.hidden_dim, spec.num_outputs);
    let mut theta = Vec::with_capacity(spec.num_params());
    let mut block = |rows: usize, fan_in: usize, bias: usize, theta: &mut Vec<f64>| {
        let normal = Normal::new(0.0, 0.5 / (fan_in as f64).sqrt()).expect("positive std");
        theta.extend((0..rows * fan_in).map(|_| normal.sample(&mut rng)));
        theta.extend(std::iter::repeat_n(0.0, bias));
    };
    if h == 0 {
        block(c, d, c, &mut theta);
    } else {
        block(h, d, h, &mut theta);
        block(c, h, c, &mut theta);
    }
    theta
}

fn check_dims(spec: &ModelSpec, theta: &[f64], x: &[f64]) -> Result<()> {
    if theta.len() != spec.num_params() {
        return Err(Error::Dimension { expected: spec.num_params(), got: theta.len() });
    }
    if x.len() != spec.input_dim {
        return Err(Error::Dimension { expected: spec.input_dim, got: x.len() });
    }
    Ok(())
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(r, &bias)| bias + w[r * x.len()..(r + 1) * x.len()].iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

struct Layers<'a> {
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
}

fn split_params<'a>(spec: &ModelSpec, theta: &'a [f64]) -> Layers<'a> {
    let (d, h, c) = (spec.input_dim, spec.hidden_dim, spec.num_outputs);
    if h == 0 {
        let (w, b) = theta.split_at(c * d);
        Layers { w1: w, b1: b, w2: &[], b2: &[] }
    } else {
        let (w1, rest) = theta.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(c * h);
        Layers { w1, b1, w2, b2 }
    }
}

/// Output logits.
pub fn forward(spec: &ModelSpec, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_dims(spec, theta, x)?;
    let l = split_params(spec, theta);
    if spec.hidden_dim == 0 {
        Ok(affine(l.w1, l.b1, x))
    } else {
        let hidden: Vec<f64> = affine(l.w1, l.b1, x).into_iter().map(f64::tanh).collect();
        Ok(affine(l.w2, l.b2, &hidden))
    }
}

/// Pre-output activations (the input itself for a linear model).
pub fn hidden_features(spec: &ModelSpec, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_dims(spec, theta, x)?;
    if spec.hidden_dim == 0 {
        return Ok(x.to_vec());
    }
    let l = split_params(spec, theta);
    Ok(affine(l.w1, l.b1, x).into_iter().map(f64::tanh).collect())
}

fn check_label(spec: &ModelSpec, y: &Label) -> Result<()> {
    let ok = match (spec.loss, y) {
        (LossKind::SoftmaxCrossEntropy, Label::Class(c)) => *c < spec.num_outputs,
        (LossKind::MultilabelBce, Label::Multi(bits)) => bits.len() == spec.num_outputs,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::LabelOutOfRange { label: format!("{y:?}"), outputs: spec.num_outputs })
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Data loss of one example from its logits.
pub fn logit_loss(spec: &ModelSpec, z: &[f64], y: &Label) -> Result<f64> {
    check_label(spec, y)?;
    Ok(match y {
        Label::Class(c) => {
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - z[*c]
        }
        Label::Multi(bits) => {
            z.iter().zip(bits).map(|(&v, &b)| softplus(v) - if b { v } else { 0.0 }).sum::<f64>() / z.len() as f64
        }
    })
}

fn logit_grad(z: &[f64], y: &Label) -> Vec<f64> {
    match y {
        Label::Class(c) => {
            let mut g = softmax(z);
            g[*c] -= 1.0;
            g
        }
        Label::Multi(bits) => {
            let n = z.len() as f64;
            z.iter().zip(bits).map(|(&v, &b)| (sigmoid(v) - f64::from(u8::from(b))) / n).collect()
        }
    }
}

/// Hessian of the data loss in logit space applied to `u`.
fn logit_hess(z: &[f64], y: &Label, u: &[f64]) -> Vec<f64> {
    match y {
        Label::Class(_) => {
            let s = softmax(z);
            let su: f64 = s.iter().zip(u).map(|(a, b)| a * b).sum();
            s.iter().zip(u).map(|(si, ui)| si * (ui - su)).collect()
        }
        Label::Multi(_) => {
            let n = z.len() as f64;
            z.iter().zip(u).map(|(&v, ui)| sigmoid(v) * (1.0 - sigmoid(v)) * ui / n).collect()
        }
    }
}

pub fn l2_term(spec: &ModelSpec, theta: &[f64]) -> f64 {
    0.5 * spec.l2 * theta.iter().map(|t| t * t).sum::<f64>()
}

/// Data loss of one example (no penalty).
pub fn example_loss(spec: &ModelSpec, theta: &[f64], x: &[f64], y: &Label) -> Result<f64> {
    let z = forward(spec, theta, x)?;
    logit_loss(spec, &z, y)
}

/// Per-example objective: data loss plus `l2 * |theta|^2 / 2`.
pub fn loss(spec: &ModelSpec, theta: &[f64], x: &[f64], y: &Label) -> Result<f64> {
    Ok(example_loss(spec, theta, x, y)? + l2_term(spec, theta))
}

/// Encoded input with a nonnegative weight.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub x: Vec<f64>,
    pub y: Label,
    pub w: f64,
}

impl Point {
    pub fn new(x: Vec<f64>, y: Label) -> Self {
        Point { x, y, w: 1.0 }
    }
}

fn total_weight(batch: &[Point]) -> Result<f64> {
    let w: f64 = batch.iter().map(|p| p.w).sum();
    if batch.is_empty() || w <= 0.0 {
        return Err(Error::EmptyBatch);
    }
    Ok(w)
}

/// Weighted mean data loss (no penalty).
pub fn batch_data_loss(spec: &ModelSpec, theta: &[f64], batch: &[Point]) -> Result<f64> {
    let tw = total_weight(batch)?;
    let mut s = 0.0;
    for p in batch {
        s += p.w * example_loss(spec, theta, &p.x, &p.y)?;
    }
    Ok(s / tw)
}

/// Weighted mean loss plus penalty.
pub fn batch_loss(spec: &ModelSpec, theta: &[f64], batch: &[Point]) -> Result<f64> {
    Ok(batch_data_loss(spec, theta, batch)? + l2_term(spec, theta))
}

fn accumulate_grad(spec: &ModelSpec, theta: &[f64], p: &Point, scale: f64, out: &mut [f64]) -> Result<()> {
    check_dims(spec, theta, &p.x)?;
    check_label(spec, &p.y)?;
    let (d, h, c) = (spec.input_dim, spec.hidden_dim, spec.num_outputs);
    let l = split_params(spec, theta);
    if h == 0 {
        let z = affine(l.w1, l.b1, &p.x);
        let g = logit_grad(&z, &p.y);
        for r in 0..c {
            let gr = scale * g[r];
            for (o, xj) in out[r * d..(r + 1) * d].iter_mut().zip(&p.x) {
                *o += gr * xj;
            }
            out[c * d + r] += gr;
        }
    } else {
        let hid: Vec<f64> = affine(l.w1, l.b1, &p.x).into_iter().map(f64::tanh).collect();
        let z = affine(l.w2, l.b2, &hid);
        let gz = logit_grad(&z, &p.y);
        let off2 = h * d + h;
        let mut ga = vec![0.0; h];
        for r in 0..c {
            let gr = scale * gz[r];
            for k in 0..h {
                out[off2 + r * h + k] += gr * hid[k];
                ga[k] += gr * l.w2[r * h + k];
            }
            out[off2 + c * h + r] += gr;
        }
        for k in 0..h {
            let gk = ga[k] * (1.0 - hid[k] * hid[k]);
            for (o, xj) in out[k * d..(k + 1) * d].iter_mut().zip(&p.x) {
                *o += gk * xj;
            }
            out[h * d + k] += gk;
        }
    }
    Ok(())
}

/// Gradient of the weighted mean loss plus penalty.
pub fn grad(spec: &ModelSpec, theta: &[f64], batch: &[Point]) -> Result<Vec<f64>> {
    let tw = total_weight(batch)?;
    let mut g = vec![0.0; theta.len()];
    for p in batch {
        accumulate_grad(spec, theta, p, p.w / tw, &mut g)?;
    }
    for (gi, t) in g.iter_mut().zip(theta) {
        *gi += spec.l2 * t;
    }
    Ok(g)
}

/// Hessian-vector product of the objective; exact for linear models, central differences of
/// `grad` otherwise.
pub fn hvp(spec: &ModelSpec, theta: &[f64], batch: &[Point], v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != theta.len() {
        return Err(Error::Dimension { expected: theta.len(), got: v.len() });
    }
    if spec.hidden_dim == 0 {
        hvp_linear(spec, theta, batch, v)
    } else {
        hvp_finite_difference(spec, theta, batch, v)
    }
}

fn hvp_linear(spec: &ModelSpec, theta: &[f64], batch: &[Point], v: &[f64]) -> Result<Vec<f64>> {
    let tw = total_weight(batch)?;
    let (d, c) = (spec.input_dim, spec.num_outputs);
    let l = split_params(spec, theta);
    let (vw, vb) = v.split_at(c * d);
    let mut out = vec![0.0; theta.len()];
    for p in batch {
        check_dims(spec, theta, &p.x)?;
        check_label(spec, &p.y)?;
        let z = affine(l.w1, l.b1, &p.x);
        let dz = affine(vw, vb, &p.x);
        let u = logit_hess(&z, &p.y, &dz);
        let s = p.w / tw;
        for r in 0..c {
            for (o, xj) in out[r * d..(r + 1) * d].iter_mut().zip(&p.x) {
                *o += s * u[r] * xj;
            }
            out[c * d + r] += s * u[r];
        }
    }
    for (o, vi) in out.iter_mut().zip(v) {
        *o += spec.l2 * vi;
    }
    Ok(out)
}

/// Central difference of `grad` along `v / |v|` with step `1e-5 * (1 + |theta|)`.
pub fn hvp_finite_difference(spec: &ModelSpec, theta: &[f64], batch: &[Point], v: &[f64]) -> Result<Vec<f64>> {
    let vn = norm(v);
    if vn == 0.0 {
        total_weight(batch)?;
        return Ok(vec![0.0; theta.len()]);
    }
    let h = 1e-5 * (1.0 + norm(theta));
    let plus: Vec<f64> = theta.iter().zip(v).map(|(t, vi)| t + h * vi / vn).collect();
    let minus: Vec<f64> = theta.iter().zip(v).map(|(t, vi)| t - h * vi / vn).collect();
    let gp = grad(spec, &plus, batch)?;
    let gm = grad(spec, &minus, batch)?;
    Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h) * vn).collect())
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maps samples to fixed-length model inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoder {
    Identity,
    /// Untrained mean-neighbour aggregation with the given number of rounds.
    Graph { rounds: usize },
}

impl Encoder {
    /// Model input dimension for raw vectors of length `d` (or node features of length `d`).
    pub fn output_dim(&self, d: usize) -> usize {
        match self {
            Encoder::Identity => d,
            Encoder::Graph { rounds } => (d + 1) * (rounds + 1) + 2,
        }
    }

    pub fn encode(&self, sample: &Sample) -> Result<Vec<f64>> {
        match (self, sample) {
            (Encoder::Identity, Sample::Vector(x)) => Ok(x.clone()),
            (Encoder::Graph { rounds }, Sample::Graph(g)) => {
                let f = g.feature_dim();
                let adj = g.adjacency();
                let mut h: Vec<Vec<f64>> = (0..g.nodes)
                    .map(|u| {
                        let mut row = g.features[u].clone();
                        row.push(adj[u].len() as f64 / 10.0);
                        row
                    })
                    .collect();
                let pool = |h: &[Vec<f64>]| -> Vec<f64> {
                    let mut m = vec![0.0; f + 1];
                    for row in h {
                        for (a, b) in m.iter_mut().zip(row) {
                            *a += b;
                        }
                    }
                    if !h.is_empty() {
                        m.iter_mut().for_each(|a| *a /= h.len() as f64);
                    }
                    m
                };
                let mut out = pool(&h);
                for _ in 0..*rounds {
                    h = (0..g.nodes)
                        .map(|u| {
                            let mut acc = h[u].clone();
                            for &v in &adj[u] {
                                for (a, b) in acc.iter_mut().zip(&h[v]) {
                                    *a += b;
                                }
                            }
                            let k = (adj[u].len() + 1) as f64;
                            acc.into_iter().map(|a| a / k).collect()
                        })
                        .collect();
                    out.extend(pool(&h));
                }
                out.push((1.0 + g.nodes as f64).ln());
                out.push(g.average_degree() / 10.0);
                Ok(out)
            }
            (Encoder::Identity, Sample::Graph(_)) => Err(Error::Config("graph samples need a graph encoder".into())),
            (Encoder::Graph { .. }, Sample::Vector(_)) => {
                Err(Error::Config("vector samples need the identity encoder".into()))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub steps: usize,
    pub lr: f64,
    /// Examples per step (per group when weighted); 0 means the full set.
    pub batch: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { steps: 200, lr: 0.5, batch: 0 }
    }
}

pub enum TrainSet<'a> {
    Pooled(&'a [Example]),
    /// One batch per group per step; the objective is the weighted sum of group means.
    Weighted { groups: &'a [Vec<Example>], weights: &'a [f64] },
}

#[derive(Clone, Copy)]
pub enum Policy<'a> {
    None,
    Tree(&'a AugTree),
    /// Tree `k` augments group `k` of a weighted train set.
    PerGroup(&'a [AugTree]),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EvalMode {
    Exact,
    MonteCarlo(usize),
}

/// Model spec plus the transform registry and encoder it is trained with.
#[derive(Clone, Debug)]
pub struct Learner {
    pub spec: ModelSpec,
    pub registry: Registry,
    pub encoder: Encoder,
}

impl Learner {
    pub fn new(spec: ModelSpec, registry: Registry, encoder: Encoder) -> Result<Self> {
        spec.validate()?;
        Ok(Learner { spec, registry, encoder })
    }

    pub fn point(&self, sample: &Sample, y: &Label, w: f64) -> Result<Point> {
        Ok(Point { x: self.encoder.encode(sample)?, y: y.clone(), w })
    }

    fn augmented_point(&self, e: &Example, tree: Option<&AugTree>, seed: u64, w: f64) -> Result<Point> {
        match tree {
            Some(t) if !t.is_empty() => {
                let s = apply_policy(t, &e.sample, &self.registry, seed)?;
                self.point(&s, &e.label, w)
            }
            _ => self.point(&e.sample, &e.label, w),
        }
    }

    /// Batch for step `step`: indices depend only on (seed, step, group size) and augmentation
    /// seeds only on (seed, step, slot), so identical groups produce identical batches.
    fn step_batch(
        &self,
        examples: &[Example],
        tree: Option<&AugTree>,
        batch: usize,
        weight: f64,
        seed: u64,
        step: usize,
    ) -> Result<Vec<Point>> {
        if examples.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let step = step as u64;
        let idx: Vec<usize> = if batch == 0 {
            (0..examples.len()).collect()
        } else {
            let mut rng = seed::rng(seed::derive(seed, &[tag::BATCH, step]));
            (0..batch).map(|_| rand::Rng::random_range(&mut rng, 0..examples.len())).collect()
        };
        let w = weight / idx.len() as f64;
        idx.iter()
            .enumerate()
            .map(|(slot, &i)| {
                self.augmented_point(&examples[i], tree, seed::derive(seed, &[tag::AUGMENT, step, slot as u64]), w)
            })
            .collect()
    }

    /// Points for one SGD step (public so the bilevel code can reuse the sampling scheme).
    pub fn sgd_points(&self, data: &TrainSet, policy: Policy, batch: usize, seed: u64, step: usize) -> Result<Vec<Point>> {
        match data {
            TrainSet::Pooled(ex) => {
                let tree = match policy {
                    Policy::None => None,
                    Policy::Tree(t) => Some(t),
                    Policy::PerGroup(_) => {
                        return Err(Error::Config("per-group policies need a weighted train set".into()))
                    }
                };
                self.step_batch(ex, tree, batch, 1.0, seed, step)
            }
            TrainSet::Weighted { groups, weights } => {
                if groups.len() != weights.len() {
                    return Err(Error::Dimension { expected: groups.len(), got: weights.len() });
                }
                if let Policy::PerGroup(trees) = policy {
                    if trees.len() != groups.len() {
                        return Err(Error::Dimension { expected: groups.len(), got: trees.len() });
                    }
                }
                let mut pts = Vec::new();
                for (k, (g, &w)) in groups.iter().zip(weights.iter()).enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let tree = match policy {
                        Policy::None => None,
                        Policy::Tree(t) => Some(t),
                        Policy::PerGroup(ts) => Some(&ts[k]),
                    };
                    pts.extend(self.step_batch(g, tree, batch, w, seed, step)?);
                }
                Ok(pts)
            }
        }
    }

    /// Plain SGD; deterministic in `seed`.
    pub fn train_sgd(&self, theta0: &[f64], data: &TrainSet, policy: Policy, cfg: &SgdConfig, seed: u64) -> Result<Vec<f64>> {
        self.train_sgd_from(theta0, data, policy, cfg, seed, 0)
    }

    /// SGD whose step counter starts at `first_step` (continues a previous run's batch stream).
    pub fn train_sgd_from(
        &self,
        theta0: &[f64],
        data: &TrainSet,
        policy: Policy,
        cfg: &SgdConfig,
        seed: u64,
        first_step: usize,
    ) -> Result<Vec<f64>> {
        if theta0.len() != self.spec.num_params() {
            return Err(Error::Dimension { expected: self.spec.num_params(), got: theta0.len() });
        }
        let mut theta = theta0.to_vec();
        for step in first_step..first_step + cfg.steps {
            let pts = self.sgd_points(data, policy, cfg.batch, seed, step)?;
            let g = grad(&self.spec, &theta, &pts)?;
            for (t, gi) in theta.iter_mut().zip(&g) {
                *t -= cfg.lr * gi;
            }
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("parameters after SGD"));
        }
        Ok(theta)
    }

    /// Unaugmented, unit-weight points.
    pub fn points(&self, examples: &[Example]) -> Result<Vec<Point>> {
        examples.iter().map(|e| self.point(&e.sample, &e.label, 1.0)).collect()
    }

    /// Per-example expected data loss under `tree`.
    ///
    /// Example `i` draws its transform randomness from `derive(seed, [i])` in both modes, so the
    /// Monte-Carlo estimate is unbiased for the exact value.
    pub fn per_example_loss(
        &self,
        theta: &[f64],
        examples: &[Example],
        tree: Option<&AugTree>,
        mode: EvalMode,
        seed: Option<u64>,
    ) -> Result<Vec<f64>> {
        let tree = tree.filter(|t| !t.is_empty());
        let Some(tree) = tree else {
            return examples
                .iter()
                .map(|e| example_loss(&self.spec, theta, &self.encoder.encode(&e.sample)?, &e.label))
                .collect();
        };
        if let Some(e) = examples.first() {
            tree.check_against(&self.registry, e.sample.domain())?;
        }
        // a single-path tree has no sampling noise
        let mode = match mode {
            EvalMode::MonteCarlo(r) if r > 0 && enumerate_paths(tree)?.len() == 1 => EvalMode::Exact,
            m => m,
        };
        match mode {
            EvalMode::Exact => {
                if seed.is_none() && !tree.is_deterministic(&self.registry)? {
                    return Err(Error::ExactNeedsSeed);
                }
                let base = seed.unwrap_or(0);
                let paths = enumerate_paths(tree)?;
                examples
                    .iter()
                    .enumerate()
                    .map(|(i, e)| {
                        let es = seed::derive(base, &[i as u64]);
                        let mut acc = 0.0;
                        for p in &paths {
                            let s = apply_path(&self.registry, p, &e.sample, es)?;
                            acc += p.probability * example_loss(&self.spec, theta, &self.encoder.encode(&s)?, &e.label)?;
                        }
                        Ok(acc)
                    })
                    .collect()
            }
            EvalMode::MonteCarlo(r) => {
                if r == 0 {
                    return Err(Error::Config("Monte-Carlo evaluation needs R >= 1".into()));
                }
                let base = seed.unwrap_or(0);
                examples
                    .iter()
                    .enumerate()
                    .map(|(i, e)| {
                        let es = seed::derive(base, &[i as u64]);
                        let mut acc = 0.0;
                        for k in 0..r {
                            let p = sample_path(tree, seed::derive(es, &[tag::PATH, k as u64]))?;
                            let s = apply_path(&self.registry, &p, &e.sample, es)?;
                            acc += example_loss(&self.spec, theta, &self.encoder.encode(&s)?, &e.label)?;
                        }
                        Ok(acc / r as f64)
                    })
                    .collect()
            }
        }
    }

    /// Mean expected data loss of a group under `tree`.
    pub fn group_loss(
        &self,
        theta: &[f64],
        examples: &[Example],
        tree: Option<&AugTree>,
        mode: EvalMode,
        seed: Option<u64>,
    ) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::EmptyValidation);
        }
        let per = self.per_example_loss(theta, examples, tree, mode, seed)?;
        let v = per.iter().sum::<f64>() / per.len() as f64;
        if !v.is_finite() {
            return Err(Error::NonFinite("group loss"));
        }
        Ok(v)
    }

    /// Fraction of examples whose arg-max logit matches the class label.
    pub fn accuracy(&self, theta: &[f64], examples: &[Example]) -> Result<f64> {
        let mut hits = 0usize;
        for e in examples {
            let z = forward(&self.spec, theta, &self.encoder.encode(&e.sample)?)?;
            if let Label::Class(c) = e.label {
                let best = z.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(k, _)| k);
                hits += usize::from(best == Some(c));
            }
        }
        Ok(hits as f64 / examples.len().max(1) as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub theta: Vec<f64>,
    pub step: u64,
    pub seed: u64,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.theta.len() != c.spec.num_params() {
            return Err(Error::Dimension { expected: c.spec.num_params(), got: c.theta.len() });
        }
        if c.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("checkpoint parameters"));
        }
        Ok(c)
    }
}
