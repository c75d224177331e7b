//! Forest learning: one searched tree per group, then alternating weighted SGD on
//! `sum_g w_g L_g(theta)` with exponentiated-gradient updates of `w`.
//!
//! The weight gradient is the implicit derivative of the `q`-weighted validation loss through
//! the inner optimum:
//!
//! `d_i = -(sum_g q_g grad L_g^val)^T (H + damping I)^{-1} grad L_i`, `H = sum_g w_g hess L_g`,
//!
//! with the inverse applied by a truncated Neumann series on the scaled operator (or by CG).

use std::sync::OnceLock;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example, Split};
use crate::error::{Error, Result};
use crate::model::{self, init_params, norm, EvalMode, Learner, Point, Policy, SgdConfig, TrainSet};
use crate::policy::{apply_path, apply_policy, enumerate_paths, AugTree, Forest};
use crate::search::{search_tree, SearchConfig, SearchTrace};
use crate::seed::{self, tag};

/// Which examples an inner-objective query uses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BatchSel {
    /// Every training example, with the group's tree enumerated exactly.
    Full,
    /// `size` examples drawn with replacement, augmented by sampling the tree.
    Sampled { size: usize, seed: u64 },
}

/// Inner objectives `L_g` (including any penalty) and the outer objective.
pub trait BilevelProblem: Sync {
    fn dim(&self) -> usize;
    fn num_groups(&self) -> usize;
    fn inner_loss(&self, g: usize, theta: &[f64], sel: BatchSel) -> Result<f64>;
    fn inner_grad(&self, g: usize, theta: &[f64], sel: BatchSel) -> Result<Vec<f64>>;
    fn inner_hvp(&self, g: usize, theta: &[f64], v: &[f64], sel: BatchSel) -> Result<Vec<f64>>;
    fn outer_loss(&self, theta: &[f64]) -> Result<f64>;
    fn outer_grad(&self, theta: &[f64]) -> Result<Vec<f64>>;

    /// `sum_g w_g hess L_g v`.
    fn weighted_hvp(&self, w: &[f64], theta: &[f64], v: &[f64], sel: BatchSel) -> Result<Vec<f64>> {
        let mut out = vec![0.0; v.len()];
        for (g, &wg) in w.iter().enumerate() {
            if wg == 0.0 {
                continue;
            }
            for (o, h) in out.iter_mut().zip(self.inner_hvp(g, theta, v, sel)?) {
                *o += wg * h;
            }
        }
        Ok(out)
    }

    fn weighted_loss(&self, w: &[f64], theta: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for (g, &wg) in w.iter().enumerate() {
            s += wg * self.inner_loss(g, theta, BatchSel::Full)?;
        }
        Ok(s)
    }

    fn weighted_grad(&self, w: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; theta.len()];
        for (g, &wg) in w.iter().enumerate() {
            for (o, h) in out.iter_mut().zip(self.inner_grad(g, theta, BatchSel::Full)?) {
                *o += wg * h;
            }
        }
        Ok(out)
    }
}

/// A symmetric operator `v -> H v`, optionally stochastic per Neumann term.
pub trait HessianOperator: Sync {
    fn dim(&self) -> usize;
    /// `term` is `Some(j)` inside the Neumann recursion (may draw a fresh batch) and `None`
    /// for deterministic uses (curvature probe, CG).
    fn apply(&self, v: &[f64], term: Option<usize>) -> Result<Vec<f64>>;
}

/// `diag(h)`.
pub struct DiagonalOperator(pub Vec<f64>);

impl HessianOperator for DiagonalOperator {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn apply(&self, v: &[f64], _term: Option<usize>) -> Result<Vec<f64>> {
        Ok(self.0.iter().zip(v).map(|(h, x)| h * x).collect())
    }
}

/// Dense symmetric matrix.
pub struct DenseOperator(pub nalgebra::DMatrix<f64>);

impl HessianOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, v: &[f64], _term: Option<usize>) -> Result<Vec<f64>> {
        Ok((&self.0 * nalgebra::DVector::from_column_slice(v)).iter().copied().collect())
    }
}

/// `sum_g w_g hess L_g` of a bilevel problem at fixed `theta`.
pub struct WeightedHessian<'a, P: BilevelProblem + ?Sized> {
    pub problem: &'a P,
    pub theta: &'a [f64],
    pub w: &'a [f64],
    /// Examples per group per Neumann term; 0 uses the full objective.
    pub batch: usize,
    pub seed: u64,
}

impl<P: BilevelProblem + ?Sized> HessianOperator for WeightedHessian<'_, P> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn apply(&self, v: &[f64], term: Option<usize>) -> Result<Vec<f64>> {
        let sel = match term {
            Some(j) if self.batch > 0 => {
                BatchSel::Sampled { size: self.batch, seed: seed::derive(self.seed, &[tag::HESSIAN, j as u64]) }
            }
            _ => BatchSel::Full,
        };
        self.problem.weighted_hvp(self.w, self.theta, v, sel)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InvHvpMethod {
    #[default]
    Neumann,
    Cg,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvHvpConfig {
    pub method: InvHvpMethod,
    pub terms: usize,
    pub damping: f64,
    /// Fixed scaling; `None` probes the curvature.
    pub gamma: Option<f64>,
    pub seed: u64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for InvHvpConfig {
    fn default() -> Self {
        InvHvpConfig { method: InvHvpMethod::Neumann, terms: 200, damping: 1e-3, gamma: None, seed: 0, cg_tol: 1e-12, cg_max_iter: 1000 }
    }
}

pub const PROBE_ITERS: usize = 10;

/// Largest Rayleigh quotient seen over `PROBE_ITERS` power iterations from a seeded start.
pub fn curvature_probe(op: &dyn HessianOperator, seed: u64) -> Result<f64> {
    let mut rng = seed::rng(seed::derive(seed, &[tag::PROBE]));
    let mut v: Vec<f64> = (0..op.dim()).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut best = 0.0f64;
    for _ in 0..PROBE_ITERS {
        let n = norm(&v);
        if n == 0.0 {
            break;
        }
        v.iter_mut().for_each(|x| *x /= n);
        let hv = op.apply(&v, None)?;
        best = best.max(model::dot(&v, &hv));
        v = hv;
    }
    if !best.is_finite() {
        return Err(Error::NonFinite("curvature probe"));
    }
    Ok(best)
}

/// `1 / (1 + damping + probe)`.
pub fn contraction_gamma(op: &dyn HessianOperator, damping: f64, seed: u64) -> Result<f64> {
    Ok(1.0 / (1.0 + damping + curvature_probe(op, seed)?))
}

/// Truncated Neumann series for `(H + damping I)^{-1} v`:
/// `A_0 = v`, `A_j = v + A_{j-1} - gamma (H_j + damping) A_{j-1}`, result `gamma A_n`.
pub fn neumann_inv_hvp(op: &dyn HessianOperator, v: &[f64], damping: f64, gamma: f64, terms: usize) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("inverse-HVP input"));
    }
    let limit = 1e6 * norm(v).max(f64::MIN_POSITIVE);
    let mut a = v.to_vec();
    for j in 1..=terms {
        let ha = op.apply(&a, Some(j))?;
        for ((ai, hi), vi) in a.iter_mut().zip(&ha).zip(v) {
            *ai = vi + *ai - gamma * (hi + damping * *ai);
        }
        let n = norm(&a);
        if !n.is_finite() || n > limit {
            return Err(Error::Divergence { term: j, norm: n });
        }
    }
    Ok(a.into_iter().map(|x| gamma * x).collect())
}

/// Conjugate gradient on `(H + damping I) x = v` with the deterministic operator.
pub fn cg_inv_hvp(op: &dyn HessianOperator, v: &[f64], damping: f64, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let vn = norm(v);
    let mut x = vec![0.0; v.len()];
    if vn == 0.0 {
        return Ok(x);
    }
    let mut r = v.to_vec();
    let mut p = r.clone();
    let mut rr = model::dot(&r, &r);
    for _ in 0..max_iter {
        if rr.sqrt() <= tol * vn {
            break;
        }
        let mut ap = op.apply(&p, None)?;
        for (a, pi) in ap.iter_mut().zip(&p) {
            *a += damping * pi;
        }
        let pap = model::dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Indefinite);
        }
        let alpha = rr / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = model::dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
    }
    Ok(x)
}

/// Estimate of `(H + damping I)^{-1} v` per `cfg`.
pub fn inv_hvp(op: &dyn HessianOperator, v: &[f64], cfg: &InvHvpConfig) -> Result<Vec<f64>> {
    match cfg.method {
        InvHvpMethod::Neumann => {
            let gamma = match cfg.gamma {
                Some(g) => g,
                None => contraction_gamma(op, cfg.damping, cfg.seed)?,
            };
            neumann_inv_hvp(op, v, cfg.damping, gamma, cfg.terms)
        }
        InvHvpMethod::Cg => cg_inv_hvp(op, v, cfg.damping, cfg.cg_tol, cfg.cg_max_iter),
    }
}

/// Implicit gradient of the outer objective with respect to the group weights.
///
/// `hessian_batch` is the per-term batch of the Neumann recursion (0 = full objective);
/// `grad_sel` selects the examples for each group gradient (shared by all groups).
pub fn implicit_grad<P: BilevelProblem + ?Sized>(
    problem: &P,
    theta: &[f64],
    w: &[f64],
    cfg: &InvHvpConfig,
    hessian_batch: usize,
    grad_sel: BatchSel,
) -> Result<Vec<f64>> {
    if w.len() != problem.num_groups() {
        return Err(Error::Dimension { expected: problem.num_groups(), got: w.len() });
    }
    let outer = problem.outer_grad(theta)?;
    let op = WeightedHessian { problem, theta, w, batch: hessian_batch, seed: cfg.seed };
    let s = inv_hvp(&op, &outer, cfg)?;
    let d: Vec<f64> = (0..problem.num_groups())
        .into_par_iter()
        .map(|i| Ok(-model::dot(&s, &problem.inner_grad(i, theta, grad_sel)?)))
        .collect::<Result<Vec<f64>>>()?;
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("implicit gradient"));
    }
    Ok(d)
}

/// `w_i exp(-eta d_i)`, renormalised, computed with max-subtraction; entries floored at the
/// smallest positive double.
pub fn mirror_descent_step(w: &[f64], d: &[f64], eta: f64) -> Result<Vec<f64>> {
    if w.len() != d.len() {
        return Err(Error::Dimension { expected: w.len(), got: d.len() });
    }
    if d.iter().any(|x| !x.is_finite()) || !eta.is_finite() {
        return Err(Error::NonFinite("mirror-descent gradient"));
    }
    if eta == 0.0 {
        return Ok(w.to_vec());
    }
    let shift = d.iter().map(|di| -eta * di).fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = w.iter().zip(d).map(|(wi, di)| wi * (-eta * di - shift).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|r| (r / total).max(f64::MIN_POSITIVE)).collect())
}

/// `(sum_g w_g^2 / n_g)^{-1}`.
pub fn effective_sample_size(w: &[f64], sizes: &[usize]) -> Result<f64> {
    if w.len() != sizes.len() {
        return Err(Error::Dimension { expected: w.len(), got: sizes.len() });
    }
    if sizes.contains(&0) {
        return Err(Error::Data("group of size zero".into()));
    }
    Ok(1.0 / w.iter().zip(sizes).map(|(wi, &n)| wi * wi / n as f64).sum::<f64>())
}

/// Bilevel problem over per-group classifier losses with per-group trees.
pub struct ClassifierProblem<'a> {
    pub learner: &'a Learner,
    pub train: &'a [Vec<Example>],
    pub val: &'a [Vec<Example>],
    pub trees: &'a [AugTree],
    pub q: &'a [f64],
    pub seed: u64,
    /// Augment validation data with each group's tree in the outer objective.
    pub augment_val: bool,
    full: Vec<OnceLock<Result<Vec<Point>>>>,
    outer: OnceLock<Result<Vec<Point>>>,
    outer_spec: model::ModelSpec,
}

impl<'a> ClassifierProblem<'a> {
    pub fn new(
        learner: &'a Learner,
        train: &'a [Vec<Example>],
        val: &'a [Vec<Example>],
        trees: &'a [AugTree],
        q: &'a [f64],
        seed: u64,
        augment_val: bool,
    ) -> Result<Self> {
        let m = train.len();
        if val.len() != m || trees.len() != m || q.len() != m {
            return Err(Error::Config("train, val, trees and q need one entry per group".into()));
        }
        if train.iter().chain(val).any(Vec::is_empty) {
            return Err(Error::Data("every group needs train and val examples".into()));
        }
        Ok(ClassifierProblem {
            learner,
            train,
            val,
            trees,
            q,
            seed,
            augment_val,
            full: (0..m).map(|_| OnceLock::new()).collect(),
            outer: OnceLock::new(),
            outer_spec: model::ModelSpec { l2: 0.0, ..learner.spec.clone() },
        })
    }

    /// Every (example, path) pair weighted by path probability.
    fn exact_points(&self, examples: &[Example], tree: &AugTree, weight: f64) -> Result<Vec<Point>> {
        let paths = enumerate_paths(tree)?;
        let mut pts = Vec::with_capacity(examples.len() * paths.len());
        for (i, e) in examples.iter().enumerate() {
            let es = seed::derive(self.seed, &[i as u64]);
            for p in &paths {
                let s = apply_path(&self.learner.registry, p, &e.sample, es)?;
                pts.push(self.learner.point(&s, &e.label, weight * p.probability)?);
            }
        }
        Ok(pts)
    }

    fn full_points(&self, g: usize) -> Result<&[Point]> {
        self.full[g]
            .get_or_init(|| self.exact_points(&self.train[g], &self.trees[g], 1.0))
            .as_ref()
            .map(Vec::as_slice)
            .map_err(|e| Error::Config(format!("augmenting group {}: {e}", g + 1)))
    }

    fn sampled_points(&self, g: usize, size: usize, seed_: u64) -> Result<Vec<Point>> {
        let ex = &self.train[g];
        let mut rng = seed::rng(seed::derive(seed_, &[tag::BATCH]));
        (0..size)
            .map(|slot| {
                let e = &ex[rng.random_range(0..ex.len())];
                let s = apply_policy(&self.trees[g], &e.sample, &self.learner.registry, seed::derive(seed_, &[slot as u64]))?;
                self.learner.point(&s, &e.label, 1.0)
            })
            .collect()
    }

    fn with_points<T>(&self, g: usize, sel: BatchSel, f: impl FnOnce(&[Point]) -> Result<T>) -> Result<T> {
        if g >= self.train.len() {
            return Err(Error::UnknownGroup(g as u32 + 1));
        }
        match sel {
            BatchSel::Full => f(self.full_points(g)?),
            BatchSel::Sampled { size, seed } => f(&self.sampled_points(g, size.max(1), seed)?),
        }
    }

    fn outer_points(&self) -> Result<&[Point]> {
        self.outer
            .get_or_init(|| {
                let mut pts = Vec::new();
                for (g, ex) in self.val.iter().enumerate() {
                    let w = self.q[g] / ex.len() as f64;
                    if self.augment_val {
                        pts.extend(self.exact_points(ex, &self.trees[g], w)?);
                    } else {
                        for e in ex {
                            pts.push(self.learner.point(&e.sample, &e.label, w)?);
                        }
                    }
                }
                Ok(pts)
            })
            .as_ref()
            .map(Vec::as_slice)
            .map_err(|e| Error::Config(format!("building validation objective: {e}")))
    }
}

impl BilevelProblem for ClassifierProblem<'_> {
    fn dim(&self) -> usize {
        self.learner.spec.num_params()
    }

    fn num_groups(&self) -> usize {
        self.train.len()
    }

    fn inner_loss(&self, g: usize, theta: &[f64], sel: BatchSel) -> Result<f64> {
        self.with_points(g, sel, |p| model::batch_loss(&self.learner.spec, theta, p))
    }

    fn inner_grad(&self, g: usize, theta: &[f64], sel: BatchSel) -> Result<Vec<f64>> {
        self.with_points(g, sel, |p| model::grad(&self.learner.spec, theta, p))
    }

    fn inner_hvp(&self, g: usize, theta: &[f64], v: &[f64], sel: BatchSel) -> Result<Vec<f64>> {
        self.with_points(g, sel, |p| model::hvp(&self.learner.spec, theta, p, v))
    }

    fn outer_loss(&self, theta: &[f64]) -> Result<f64> {
        model::batch_data_loss(&self.outer_spec, theta, self.outer_points()?)
    }

    fn outer_grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        model::grad(&self.outer_spec, theta, self.outer_points()?)
    }

    /// A sampled Hessian term draws `size * m` examples from the `w`-mixture of groups.
    fn weighted_hvp(&self, w: &[f64], theta: &[f64], v: &[f64], sel: BatchSel) -> Result<Vec<f64>> {
        match sel {
            BatchSel::Full => {
                let mut out = vec![0.0; v.len()];
                for (g, &wg) in w.iter().enumerate() {
                    if wg == 0.0 {
                        continue;
                    }
                    for (o, h) in out.iter_mut().zip(self.inner_hvp(g, theta, v, sel)?) {
                        *o += wg * h;
                    }
                }
                Ok(out)
            }
            BatchSel::Sampled { size, seed: s } => {
                let m = self.train.len();
                let total = size.max(1) * m;
                let mut rng = seed::rng(seed::derive(s, &[tag::GROUP]));
                let mut pts = Vec::with_capacity(total);
                let wsum: f64 = w.iter().sum();
                for slot in 0..total {
                    let u = rng.random::<f64>() * wsum;
                    let mut acc = 0.0;
                    let mut g = m - 1;
                    for (k, &wk) in w.iter().enumerate() {
                        acc += wk;
                        if wk > 0.0 && u < acc {
                            g = k;
                            break;
                        }
                    }
                    let ex = &self.train[g];
                    let e = &ex[rng.random_range(0..ex.len())];
                    let smp = apply_policy(&self.trees[g], &e.sample, &self.learner.registry, seed::derive(s, &[slot as u64]))?;
                    pts.push(self.learner.point(&smp, &e.label, 1.0)?);
                }
                let h = model::hvp(&self.learner.spec, theta, &pts, v)?;
                Ok(h.into_iter().map(|x| x * wsum).collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilevelConfig {
    /// Outer iterations.
    pub iterations: usize,
    /// SGD steps between weight updates.
    pub inner_steps: usize,
    pub lr: f64,
    /// Mirror-descent step size.
    pub eta: f64,
    pub damping: f64,
    pub neumann_terms: usize,
    pub gamma: Option<f64>,
    /// Per-group batch for SGD, gradients and Hessian terms (0 = full).
    pub batch: usize,
    pub method: InvHvpMethod,
    pub seed: u64,
    pub augment_val: bool,
    /// Group proportions; defaults to empirical training proportions.
    pub q: Option<Vec<f64>>,
}

impl Default for BilevelConfig {
    fn default() -> Self {
        BilevelConfig {
            iterations: 10,
            inner_steps: 50,
            lr: 0.5,
            eta: 1.0,
            damping: 1e-3,
            neumann_terms: 100,
            gamma: None,
            batch: 0,
            method: InvHvpMethod::Neumann,
            seed: 0,
            augment_val: false,
            q: None,
        }
    }
}

impl BilevelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.inner_steps == 0 {
            return Err(Error::Config("iterations and inner steps must be positive".into()));
        }
        if !(self.lr > 0.0 && self.eta >= 0.0 && self.damping > 0.0) {
            return Err(Error::Config("lr and damping must be positive and eta nonnegative".into()));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::Config(format!("gamma {g} outside (0, 1]")));
            }
        }
        Ok(())
    }

    fn inv_hvp(&self, iter: usize) -> InvHvpConfig {
        InvHvpConfig {
            method: self.method,
            terms: self.neumann_terms,
            damping: self.damping,
            gamma: self.gamma,
            seed: seed::derive(self.seed, &[tag::HESSIAN, iter as u64]),
            ..InvHvpConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iter: usize,
    pub weighted_train_loss: f64,
    pub val_loss: f64,
    pub weights: Vec<f64>,
    pub n_w: f64,
}

#[derive(Clone, Debug)]
pub struct ForestResult {
    pub forest: Forest,
    pub theta: Vec<f64>,
    pub history: Vec<HistoryRow>,
    pub traces: Vec<SearchTrace>,
    pub q: Vec<f64>,
}

/// Per-group train and validation splits in group-id order.
pub struct GroupData {
    pub ids: Vec<u32>,
    pub train: Vec<Vec<Example>>,
    pub val: Vec<Vec<Example>>,
}

impl GroupData {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        ds.validate()?;
        let ids = ds.group_ids();
        let train = ids.iter().map(|&g| ds.group_split(g, Split::Train)).collect();
        let val = ids.iter().map(|&g| ds.group_split(g, Split::Val)).collect();
        Ok(GroupData { ids, train, val })
    }

    /// Empirical training proportions.
    pub fn proportions(&self) -> Vec<f64> {
        let total: usize = self.train.iter().map(Vec::len).sum();
        self.train.iter().map(|t| t.len() as f64 / total as f64).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.train.iter().map(Vec::len).collect()
    }
}

/// Weighted expected training data loss and `q`-weighted validation data loss.
#[allow(clippy::too_many_arguments)]
pub fn forest_losses(
    learner: &Learner,
    data: &GroupData,
    trees: &[AugTree],
    q: &[f64],
    w: &[f64],
    theta: &[f64],
    seed_: u64,
    augment_val: bool,
) -> Result<(f64, f64)> {
    let eval_seed = seed::derive(seed_, &[tag::EVAL]);
    let mut train = 0.0;
    let mut val = 0.0;
    for g in 0..data.train.len() {
        train += w[g] * learner.group_loss(theta, &data.train[g], Some(&trees[g]), EvalMode::Exact, Some(eval_seed))?;
        let vt = augment_val.then_some(&trees[g]);
        val += q[g] * learner.group_loss(theta, &data.val[g], vt, EvalMode::Exact, Some(eval_seed))?;
    }
    Ok((train, val))
}

fn resolve_q(cfg: &BilevelConfig, data: &GroupData) -> Result<Vec<f64>> {
    let q = cfg.q.clone().unwrap_or_else(|| data.proportions());
    if q.len() != data.train.len() || q.iter().any(|v| !(*v >= 0.0)) || (q.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config("q must be a probability vector with one entry per group".into()));
    }
    Ok(q)
}

/// Alternating weighted SGD and mirror-descent weight updates for fixed per-group trees.
pub fn learn_weights(
    learner: &Learner,
    data: &GroupData,
    trees: &[AugTree],
    cfg: &BilevelConfig,
) -> Result<(Vec<f64>, Vec<f64>, Vec<HistoryRow>)> {
    cfg.validate()?;
    let m = data.train.len();
    let q = resolve_q(cfg, data)?;
    let sizes = data.sizes();
    let mut w = vec![1.0 / m as f64; m];
    let mut theta = init_params(&learner.spec, seed::derive(cfg.seed, &[tag::INIT]));
    let problem_seed = seed::derive(cfg.seed, &[tag::AUGMENT]);
    let record = |iter: usize, w: &[f64], theta: &[f64]| -> Result<HistoryRow> {
        let (wt, vl) = forest_losses(learner, data, trees, &q, w, theta, cfg.seed, cfg.augment_val)?;
        Ok(HistoryRow { iter, weighted_train_loss: wt, val_loss: vl, weights: w.to_vec(), n_w: effective_sample_size(w, &sizes)? })
    };
    let mut history = vec![record(0, &w, &theta)?];
    let sgd = SgdConfig { steps: cfg.inner_steps, lr: cfg.lr, batch: cfg.batch };
    let train_seed = seed::derive(cfg.seed, &[tag::TRAIN]);
    for t in 0..cfg.iterations {
        theta = learner.train_sgd_from(
            &theta,
            &TrainSet::Weighted { groups: &data.train, weights: &w },
            Policy::PerGroup(trees),
            &sgd,
            train_seed,
            t * cfg.inner_steps,
        )?;
        if cfg.eta != 0.0 {
            let problem = ClassifierProblem::new(learner, &data.train, &data.val, trees, &q, problem_seed, cfg.augment_val)?;
            let grad_sel = if cfg.batch == 0 {
                BatchSel::Full
            } else {
                BatchSel::Sampled { size: cfg.batch, seed: seed::derive(cfg.seed, &[tag::GRADIENT, t as u64]) }
            };
            let d = implicit_grad(&problem, &theta, &w, &cfg.inv_hvp(t), cfg.batch, grad_sel)?;
            w = mirror_descent_step(&w, &d, cfg.eta)?;
            log::debug!("iter {t}: d = {d:?}, w = {w:?}");
        }
        history.push(record(t + 1, &w, &theta)?);
    }
    Ok((w, theta, history))
}

/// Searches one tree per group (seeded by group position), then learns the weights.
pub fn learn_forest(learner: &Learner, ds: &Dataset, search: &SearchConfig, cfg: &BilevelConfig) -> Result<ForestResult> {
    let data = GroupData::from_dataset(ds)?;
    let searched: Vec<(AugTree, SearchTrace)> = (0..data.ids.len())
        .into_par_iter()
        .map(|g| {
            let scfg = SearchConfig { seed: seed::derive(search.seed, &[tag::GROUP, g as u64]), ..search.clone() };
            search_tree(learner, &data.train[g], &data.val[g], &scfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let (trees, traces): (Vec<AugTree>, Vec<SearchTrace>) = searched.into_iter().unzip();
    let (w, theta, history) = learn_weights(learner, &data, &trees, cfg)?;
    let q = resolve_q(cfg, &data)?;
    let forest = Forest::new(data.ids.iter().copied().zip(trees).collect(), w)?;
    Ok(ForestResult { forest, theta, history, traces, q })
}

#[derive(Clone, Debug)]
pub struct BaselineResult {
    pub tree: AugTree,
    pub theta: Vec<f64>,
    pub val_loss: f64,
}

/// One tree searched on pooled data, then trained with weights `q` for the same number of
/// SGD steps as the forest.
pub fn single_tree_baseline(learner: &Learner, ds: &Dataset, search: &SearchConfig, cfg: &BilevelConfig) -> Result<BaselineResult> {
    let data = GroupData::from_dataset(ds)?;
    let pooled_train: Vec<Example> = data.train.concat();
    let pooled_val: Vec<Example> = data.val.concat();
    let (tree, _) = search_tree(learner, &pooled_train, &pooled_val, search)?;
    let q = resolve_q(cfg, &data)?;
    let trees = vec![tree.clone(); data.ids.len()];
    let theta0 = init_params(&learner.spec, seed::derive(cfg.seed, &[tag::INIT]));
    let sgd = SgdConfig { steps: cfg.inner_steps * cfg.iterations, lr: cfg.lr, batch: cfg.batch };
    let theta = learner.train_sgd(
        &theta0,
        &TrainSet::Weighted { groups: &data.train, weights: &q },
        Policy::PerGroup(&trees),
        &sgd,
        seed::derive(cfg.seed, &[tag::TRAIN]),
    )?;
    let (_, val_loss) = forest_losses(learner, &data, &trees, &q, &q, &theta, cfg.seed, cfg.augment_val)?;
    Ok(BaselineResult { tree, theta, val_loss })
}

pub fn history_csv(history: &[HistoryRow]) -> String {
    let m = history.first().map_or(0, |r| r.weights.len());
    let mut s = String::from("iter,weighted_train_loss,val_loss");
    for g in 1..=m {
        s.push_str(&format!(",w_{g}"));
    }
    s.push_str(",N_w\n");
    for r in history {
        s.push_str(&format!("{},{},{}", r.iter, r.weighted_train_loss, r.val_loss));
        for w in &r.weights {
            s.push_str(&format!(",{w}"));
        }
        s.push_str(&format!(",{}\n", r.n_w));
    }
    s
}
