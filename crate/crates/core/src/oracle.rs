//! Brute-force and analytic references: exhaustive depth-2 tree search, retraining
//! finite differences of the weight gradient, dense inverse-HVP, closed-form quadratic
//! bilevel problems, feature-subspace similarity and Monte-Carlo vs enumeration checks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{subsample, Example};
use crate::error::{Error, Result};
use crate::forest::{BatchSel, BilevelProblem, HessianOperator};
use crate::model::{self, init_params, EvalMode, Learner, Policy, TrainSet};
use crate::policy::{apply_path, enumerate_paths, AugTree, TreeNode};
use crate::search::{argmin, candidate_set, density_match_eval, SearchConfig};
use crate::seed::{self, tag};
use crate::transforms::Registry;

pub const EXHAUSTIVE_BUDGET: u64 = 100_000;

/// Number of trees the exhaustive search scores for `k` candidates (identity included) and
/// `h` positive grid probabilities.
pub fn exhaustive_count(k: u64, h: u64, d_max: u32) -> u64 {
    let unconstrained = (k - 1) * h + 1;
    match d_max {
        0 => 0,
        1 => unconstrained,
        _ => 1 + (k - 1) * h * (1 + unconstrained * k),
    }
}

#[derive(Clone, Debug)]
pub struct ExhaustiveResult {
    pub tree: AugTree,
    pub l_val: f64,
    pub candidate_evals: u64,
    /// The single model every tree is scored against.
    pub theta: Vec<f64>,
    /// Every scored tree in enumeration order.
    pub evaluations: Vec<(AugTree, f64)>,
}

fn all_trees(cfg: &SearchConfig) -> Result<Vec<AugTree>> {
    let mut out = Vec::new();
    for (rt, rp) in candidate_set(cfg, None) {
        let root = AugTree::new(cfg.d_max).with_node(TreeNode::new(1, rt.clone(), rp))?;
        out.push(root.clone());
        if rt.is_identity() || cfg.d_max < 2 {
            continue;
        }
        for (lt, lp) in candidate_set(cfg, None) {
            let left = root.clone().with_node(TreeNode::new(2, lt, lp))?;
            for (qt, qp) in candidate_set(cfg, Some(lp)) {
                out.push(left.clone().with_node(TreeNode::new(3, qt, qp))?);
            }
        }
    }
    Ok(out)
}

/// The model greedy search trains at the root (unaugmented data, same seeds and subsets),
/// with the validation subset it is scored on.
pub fn root_model(learner: &Learner, train: &[Example], val: &[Example], cfg: &SearchConfig) -> Result<(Vec<f64>, Vec<Example>)> {
    let train = subsample(train, cfg.search_subset, seed::derive(cfg.seed, &[tag::SUBSET, 0]));
    let val = subsample(val, cfg.search_subset, seed::derive(cfg.seed, &[tag::SUBSET, 1]));
    let theta0 = init_params(&learner.spec, seed::derive(cfg.seed, &[tag::INIT]));
    let theta = learner.train_sgd(&theta0, &TrainSet::Pooled(&train), Policy::None, &cfg.train, seed::derive(cfg.seed, &[tag::TRAIN, 1]))?;
    Ok((theta, val))
}

/// Density-matching loss of `tree` under the root model, with the root's evaluation seed.
pub fn root_score(learner: &Learner, theta: &[f64], tree: &AugTree, val: &[Example], cfg: &SearchConfig) -> Result<f64> {
    density_match_eval(learner, theta, tree, val, cfg.eval_mode, seed::derive(cfg.seed, &[tag::EVAL, 1]))
}

/// Scores every valid tree of depth at most 2 against the model greedy trains at its root
/// (same initialisation, training and evaluation seeds) and returns the first minimum.
pub fn exhaustive_search(learner: &Learner, train: &[Example], val: &[Example], cfg: &SearchConfig, budget: u64) -> Result<ExhaustiveResult> {
    cfg.validate(&learner.registry)?;
    if cfg.d_max > 2 {
        return Err(Error::Config("exhaustive search supports depth at most 2".into()));
    }
    let h = cfg.probs.iter().filter(|&&p| p > 0.0).map(|p| p.to_bits()).collect::<std::collections::BTreeSet<_>>().len() as u64;
    let needed = exhaustive_count(cfg.k() as u64, h, cfg.d_max);
    if needed > budget {
        return Err(Error::BudgetExceeded { needed, budget });
    }
    if train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if val.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let (theta, val) = root_model(learner, train, val, cfg)?;
    let trees = all_trees(cfg)?;
    debug_assert_eq!(trees.len() as u64, needed);
    let eval = |t: &AugTree| root_score(learner, &theta, t, &val, cfg);
    let losses: Vec<f64> = if cfg.parallel { trees.par_iter().map(eval).collect::<Result<_>>()? } else { trees.iter().map(eval).collect::<Result<_>>()? };
    let best = argmin(&losses).ok_or_else(|| Error::Config("empty candidate set".into()))?;
    Ok(ExhaustiveResult {
        tree: trees[best].pruned(),
        l_val: losses[best],
        candidate_evals: trees.len() as u64,
        theta,
        evaluations: trees.into_iter().zip(losses).collect(),
    })
}

/// `rank,candidate,L_val` for the `top` best trees (ties keep enumeration order).
pub fn exhaustive_csv(res: &ExhaustiveResult, registry: &Registry, top: usize) -> String {
    let mut order: Vec<usize> = (0..res.evaluations.len()).collect();
    order.sort_by(|&a, &b| res.evaluations[a].1.total_cmp(&res.evaluations[b].1));
    let mut s = String::from("rank,candidate,L_val\n");
    for (rank, &k) in order.iter().take(top).enumerate() {
        let (tree, l) = &res.evaluations[k];
        let desc: Vec<String> = tree.nodes().map(|n| format!("{}:{}@{}", n.index, registry.label(&n.transform), n.prob)).collect();
        s.push_str(&format!("{},{},{}\n", rank + 1, desc.join(" "), l));
    }
    s
}

/// Minimises `sum_g w_g L_g` by damped Newton steps with a backtracking line search.
pub fn solve_inner<P: BilevelProblem + ?Sized>(problem: &P, w: &[f64], theta0: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let p = problem.dim();
    let mut theta = theta0.to_vec();
    let mut f = problem.weighted_loss(w, &theta)?;
    let mut gnorm = f64::INFINITY;
    for _ in 0..max_iter {
        let g = problem.weighted_grad(w, &theta)?;
        gnorm = model::norm(&g);
        if gnorm <= tol {
            return Ok(theta);
        }
        let h = dense_hessian(p, |v| problem.weighted_hvp(w, &theta, v, BatchSel::Full))?;
        let chol = h.cholesky().ok_or(Error::Indefinite)?;
        let step = chol.solve(&DVector::from_column_slice(&g));
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
            let ft = problem.weighted_loss(w, &trial)?;
            if ft <= f - 1e-4 * t * model::dot(&g, step.as_slice()) || t < 1e-10 {
                theta = trial;
                f = ft;
                break;
            }
            t *= 0.5;
        }
    }
    let g = problem.weighted_grad(w, &theta)?;
    gnorm = gnorm.min(model::norm(&g));
    if gnorm <= tol {
        Ok(theta)
    } else {
        Err(Error::InnerSolve { tol, achieved: gnorm })
    }
}

/// Central difference of the outer objective along the renormalised perturbation of `w_i`.
pub fn fd_implicit_grad<P: BilevelProblem + ?Sized>(problem: &P, w: &[f64], i: usize, eps: f64, tol: f64) -> Result<f64> {
    if i >= w.len() {
        return Err(Error::UnknownGroup(i as u32 + 1));
    }
    let shifted = |sign: f64| -> Vec<f64> {
        w.iter().enumerate().map(|(g, &wg)| (wg + if g == i { sign * eps } else { 0.0 }) / (1.0 + sign * eps)).collect()
    };
    let theta0 = vec![0.0; problem.dim()];
    let plus = solve_inner(problem, &shifted(1.0), &theta0, tol, 100)?;
    let minus = solve_inner(problem, &shifted(-1.0), &theta0, tol, 100)?;
    Ok((problem.outer_loss(&plus)? - problem.outer_loss(&minus)?) / (2.0 * eps))
}

fn dense_hessian(p: usize, mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<DMatrix<f64>> {
    let mut h = DMatrix::zeros(p, p);
    let mut e = vec![0.0; p];
    for j in 0..p {
        e[j] = 1.0;
        let col = apply(&e)?;
        e[j] = 0.0;
        h.set_column(j, &DVector::from_vec(col));
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// `(H + damping I)^{-1} v` by Cholesky of the operator's dense matrix.
pub fn exact_inv_hvp(op: &dyn HessianOperator, v: &[f64], damping: f64) -> Result<Vec<f64>> {
    let p = op.dim();
    if v.len() != p {
        return Err(Error::Dimension { expected: p, got: v.len() });
    }
    let mut h = dense_hessian(p, |x| op.apply(x, None))?;
    for j in 0..p {
        h[(j, j)] += damping;
    }
    let chol = h.cholesky().ok_or(Error::Indefinite)?;
    Ok(chol.solve(&DVector::from_column_slice(v)).iter().copied().collect())
}

/// Quadratic groups: inner `L_g = (theta - c_g)^T A_g (theta - c_g) / 2`, outer
/// `sum_g q_g (theta - e_g)^T B_g (theta - e_g) / 2`.
#[derive(Clone, Debug)]
pub struct QuadraticGroups {
    pub a: Vec<DMatrix<f64>>,
    pub c: Vec<DVector<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub e: Vec<DVector<f64>>,
    pub q: Vec<f64>,
}

fn random_spd(p: usize, rng: &mut seed::Rng, lo: f64, hi: f64) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(p, p, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let u = qr.q();
    let d = DVector::from_fn(p, |_, _| lo + (hi - lo) * rand::Rng::random::<f64>(rng));
    &u * DMatrix::from_diagonal(&d) * u.transpose()
}

impl QuadraticGroups {
    /// Random instance with eigenvalues of every `A_g`, `B_g` in [0.5, 3].
    pub fn random(p: usize, m: usize, seed_: u64) -> Self {
        let mut rng = seed::rng(seed_);
        let vec = |rng: &mut seed::Rng| DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
        let a = (0..m).map(|_| random_spd(p, &mut rng, 0.5, 3.0)).collect();
        let c = (0..m).map(|_| vec(&mut rng)).collect();
        let b = (0..m).map(|_| random_spd(p, &mut rng, 0.5, 3.0)).collect();
        let e = (0..m).map(|_| vec(&mut rng)).collect();
        let raw: Vec<f64> = (0..m).map(|_| 0.2 + rand::Rng::random::<f64>(&mut rng)).collect();
        let s: f64 = raw.iter().sum();
        QuadraticGroups { a, c, b, e, q: raw.into_iter().map(|r| r / s).collect() }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        QuadraticGroups { a: self.a.iter().map(|a| a * factor).collect(), ..self.clone() }
    }

    fn weighted_a(&self, w: &[f64]) -> DMatrix<f64> {
        let p = self.c[0].len();
        w.iter().zip(&self.a).fold(DMatrix::zeros(p, p), |acc, (wg, a)| acc + a * *wg)
    }

    /// Inner optimum `(sum w A)^{-1} sum w A c`.
    pub fn optimum(&self, w: &[f64]) -> Result<Vec<f64>> {
        let rhs = w.iter().zip(self.a.iter().zip(&self.c)).fold(DVector::zeros(self.c[0].len()), |acc, (wg, (a, c))| acc + a * c * *wg);
        let chol = self.weighted_a(w).cholesky().ok_or(Error::Indefinite)?;
        Ok(chol.solve(&rhs).iter().copied().collect())
    }

    /// Dense evaluation of the weight gradient at `theta`.
    pub fn closed_form_implicit_grad(&self, theta: &[f64], w: &[f64], damping: f64) -> Result<Vec<f64>> {
        let th = DVector::from_column_slice(theta);
        let u = self.q.iter().zip(self.b.iter().zip(&self.e)).fold(DVector::zeros(th.len()), |acc, (qg, (b, e))| acc + b * (&th - e) * *qg);
        let mut h = self.weighted_a(w);
        for j in 0..th.len() {
            h[(j, j)] += damping;
        }
        let s = h.cholesky().ok_or(Error::Indefinite)?.solve(&u);
        Ok(self.a.iter().zip(&self.c).map(|(a, c)| -s.dot(&(a * (&th - c)))).collect())
    }
}

impl BilevelProblem for QuadraticGroups {
    fn dim(&self) -> usize {
        self.c[0].len()
    }

    fn num_groups(&self) -> usize {
        self.a.len()
    }

    fn inner_loss(&self, g: usize, theta: &[f64], _sel: BatchSel) -> Result<f64> {
        let r = DVector::from_column_slice(theta) - &self.c[g];
        Ok(0.5 * r.dot(&(&self.a[g] * &r)))
    }

    fn inner_grad(&self, g: usize, theta: &[f64], _sel: BatchSel) -> Result<Vec<f64>> {
        let r = DVector::from_column_slice(theta) - &self.c[g];
        Ok((&self.a[g] * r).iter().copied().collect())
    }

    fn inner_hvp(&self, g: usize, _theta: &[f64], v: &[f64], _sel: BatchSel) -> Result<Vec<f64>> {
        Ok((&self.a[g] * DVector::from_column_slice(v)).iter().copied().collect())
    }

    fn outer_loss(&self, theta: &[f64]) -> Result<f64> {
        let th = DVector::from_column_slice(theta);
        Ok(self.q.iter().zip(self.b.iter().zip(&self.e)).map(|(qg, (b, e))| {
            let r = &th - e;
            0.5 * qg * r.dot(&(b * &r))
        }).sum())
    }

    fn outer_grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let th = DVector::from_column_slice(theta);
        let g = self.q.iter().zip(self.b.iter().zip(&self.e)).fold(DVector::zeros(th.len()), |acc, (qg, (b, e))| acc + b * (&th - e) * *qg);
        Ok(g.iter().copied().collect())
    }
}

/// Rank-truncated square-root factor `U_r D_r^{1/2}` of `X^T X`, keeping the smallest rank
/// whose eigenvalue mass reaches 99% of the total.
fn spectral_factor(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() == 0 || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("feature matrix must be nonempty and finite".into()));
    }
    let cov = x.transpose() * x;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let total: f64 = vals.iter().sum();
    if total <= 0.0 {
        return Err(Error::Data("zero feature matrix".into()));
    }
    let mut r = 0;
    let mut acc = 0.0;
    while r < vals.len() && acc < 0.99 * total {
        acc += vals[r];
        r += 1;
    }
    let d = x.ncols();
    Ok(DMatrix::from_fn(d, r, |row, col| eig.eigenvectors[(row, order[col])] * vals[col].sqrt()))
}

/// Subspace similarity of two groups' feature covariances, in [0, 1].
pub fn feature_similarity(fi: &DMatrix<f64>, fj: &DMatrix<f64>) -> Result<f64> {
    if fi.ncols() != fj.ncols() {
        return Err(Error::Dimension { expected: fi.ncols(), got: fj.ncols() });
    }
    let (mi, mj) = (spectral_factor(fi)?, spectral_factor(fj)?);
    // both orders so that swapping the arguments is bit-exact
    let cross = 0.5 * ((mi.transpose() * &mj).norm() + (mj.transpose() * &mi).norm());
    let s = cross / (mi.norm() * mj.norm());
    Ok(s.clamp(0.0, 1.0))
}

pub fn similarity_matrix(features: &[DMatrix<f64>]) -> Result<Vec<Vec<f64>>> {
    let m = features.len();
    let mut out = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i..m {
            let s = feature_similarity(&features[i], &features[j])?;
            out[i][j] = s;
            out[j][i] = s;
        }
    }
    Ok(out)
}

/// Last pre-output activations (inputs for a linear model) of a set of examples.
pub fn feature_matrix(learner: &Learner, theta: &[f64], examples: &[Example]) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = examples
        .iter()
        .map(|e| model::hidden_features(&learner.spec, theta, &learner.encoder.encode(&e.sample)?))
        .collect::<Result<_>>()?;
    let d = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c]))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub mc: f64,
    pub exact: f64,
    pub gap: f64,
    /// Standard deviation of a single-draw estimate of the mean loss.
    pub sigma: f64,
    pub bound: f64,
    pub violated: bool,
}

/// Compares the `R`-draw Monte-Carlo estimate with exact enumeration; both share per-example
/// transform seeds, so the estimate is unbiased and its spread is the path-mixture variance.
pub fn mc_vs_enum_check(learner: &Learner, theta: &[f64], tree: &AugTree, val: &[Example], r: usize, seed_: u64) -> Result<McReport> {
    if val.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let exact = learner.group_loss(theta, val, Some(tree), EvalMode::Exact, Some(seed_))?;
    let mc = learner.group_loss(theta, val, Some(tree), EvalMode::MonteCarlo(r), Some(seed_))?;
    let paths = enumerate_paths(tree)?;
    let mut var_sum = 0.0;
    for (i, e) in val.iter().enumerate() {
        let es = seed::derive(seed_, &[i as u64]);
        let (mut m1, mut m2) = (0.0, 0.0);
        for p in &paths {
            let s = apply_path(&learner.registry, p, &e.sample, es)?;
            let l = model::example_loss(&learner.spec, theta, &learner.encoder.encode(&s)?, &e.label)?;
            m1 += p.probability * l;
            m2 += p.probability * l * l;
        }
        var_sum += (m2 - m1 * m1).max(0.0);
    }
    let sigma = var_sum.sqrt() / val.len() as f64;
    let bound = 3.0 * sigma / (r as f64).sqrt();
    let gap = (mc - exact).abs();
    Ok(McReport { mc, exact, gap, sigma, bound, violated: gap > bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_gaussian_groups, GaussianGroup};
    use crate::forest::{implicit_grad, DenseOperator, DiagonalOperator, InvHvpConfig, WeightedHessian};
    use crate::model::{Encoder, ModelSpec, SgdConfig};
    use crate::policy::TransformRef;
    use crate::search::search_tree_with_model;
    use crate::transforms::{default_vector_registry, select};
    use proptest::prelude::*;

    fn learner() -> Learner {
        let reg = select(&default_vector_registry(), &["rotate2d", "axis_flip", "identity"]).unwrap();
        Learner::new(ModelSpec::linear(2, 2, 1e-2), reg, Encoder::Identity).unwrap()
    }

    fn cfg(l: &Learner, d_max: u32) -> SearchConfig {
        SearchConfig {
            d_max,
            probs: vec![0.5, 1.0],
            train: SgdConfig { steps: 60, lr: 0.5, batch: 0 },
            ..SearchConfig::new(l.registry.candidates(), 9)
        }
    }

    fn rotated(n: usize, rot: f64, seed_: u64) -> Vec<Example> {
        let g = GaussianGroup { eval_rotation: rot, orientation: 0.3, noise: 0.7, ..GaussianGroup::new(n) };
        synth_gaussian_groups(&[g], seed_).unwrap().examples
    }

    fn split(ex: &[Example]) -> (Vec<Example>, Vec<Example>) {
        ex.iter().cloned().partition(|e| e.split == crate::data::Split::Train)
    }

    #[test]
    fn count_formula_matches_enumeration() {
        let l = learner();
        for d in [1, 2] {
            let c = cfg(&l, d);
            let n = all_trees(&c).unwrap().len() as u64;
            assert_eq!(n, exhaustive_count(c.k() as u64, 2, d));
        }
        // (k - 1) |H| + 1 at depth 1
        assert_eq!(exhaustive_count(6, 5, 1), 26);
        assert_eq!(exhaustive_count(6, 5, 2), 1 + 25 * (1 + 26 * 6));
    }

    #[test]
    fn budget_is_enforced() {
        let l = learner();
        let (tr, va) = split(&rotated(40, 0.0, 1));
        let res = exhaustive_search(&l, &tr, &va, &cfg(&l, 2), 10);
        assert!(matches!(res, Err(Error::BudgetExceeded { .. })));
    }

    #[test]
    fn depth_one_agrees_with_greedy() {
        let l = learner();
        let (tr, va) = split(&rotated(120, 0.5, 2));
        let c = cfg(&l, 1);
        let ex = exhaustive_search(&l, &tr, &va, &c, EXHAUSTIVE_BUDGET).unwrap();
        let (greedy, trace, _) = search_tree_with_model(&l, &tr, &va, &c).unwrap();
        assert_eq!(ex.tree, greedy);
        assert_eq!(ex.candidate_evals, trace.candidate_evals as u64);
        assert_eq!(ex.tree.get(1).unwrap().transform, TransformRef::new("rotate2d", Some(1)));
    }

    #[test]
    fn exhaustive_at_least_as_good_as_greedy_tree() {
        let l = learner();
        let (tr, va) = split(&rotated(120, 0.5, 3));
        let c = cfg(&l, 2);
        let ex = exhaustive_search(&l, &tr, &va, &c, EXHAUSTIVE_BUDGET).unwrap();
        let (greedy, _, _) = search_tree_with_model(&l, &tr, &va, &c).unwrap();
        let g = root_score(&l, &ex.theta, &greedy, &va, &c).unwrap();
        assert!(ex.l_val <= g + 1e-12);
        let csv = exhaustive_csv(&ex, &l.registry, 3);
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn exact_inv_hvp_examples() {
        let v = [1.0, -2.0, 3.0];
        let x = exact_inv_hvp(&DiagonalOperator(vec![1.0; 3]), &v, 0.5).unwrap();
        for (a, b) in x.iter().zip(v) {
            assert!((a - b / 1.5).abs() < 1e-14);
        }
        let x = exact_inv_hvp(&DiagonalOperator(vec![0.5, 2.0, 4.0]), &v, 0.1).unwrap();
        assert!((x[2] - 3.0 / 4.1).abs() < 1e-14);
        let mut rng = seed::rng(4);
        let h = random_spd(8, &mut rng, 0.1, 5.0);
        let v: Vec<f64> = (0..8).map(|i| i as f64 - 3.0).collect();
        let x = exact_inv_hvp(&DenseOperator(h.clone()), &v, 1e-3).unwrap();
        let vv = DVector::from_vec(v.clone());
        let res = (&h * DVector::from_vec(x.clone()) + DVector::from_vec(x) * 1e-3 - &vv).norm() / vv.norm();
        assert!(res <= 1e-10);
        assert!(matches!(exact_inv_hvp(&DiagonalOperator(vec![-1.0, 1.0]), &[1.0, 1.0], 0.0), Err(Error::Indefinite)));
    }

    #[test]
    fn quadratic_implicit_grad_matches_closed_form_and_fd() {
        let qg = QuadraticGroups::random(4, 3, 11);
        let w = [0.2, 0.5, 0.3];
        let theta = qg.optimum(&w).unwrap();
        let damping = 1e-3;
        let exact = qg.closed_form_implicit_grad(&theta, &w, damping).unwrap();
        let cfg = InvHvpConfig { terms: 400, damping, ..Default::default() };
        let d = implicit_grad(&qg, &theta, &w, &cfg, 0, BatchSel::Full).unwrap();
        for (a, b) in d.iter().zip(&exact) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
        let undamped = qg.closed_form_implicit_grad(&theta, &w, 0.0).unwrap();
        // scale invariance of the inner objective
        let wd: f64 = w.iter().zip(&undamped).map(|(a, b)| a * b).sum();
        assert!(wd.abs() < 1e-10);
        for i in 0..3 {
            let fd = fd_implicit_grad(&qg, &w, i, 1e-4, 1e-12).unwrap();
            assert!((fd - undamped[i]).abs() <= 1e-6, "{fd} vs {}", undamped[i]);
        }
    }

    #[test]
    fn quadratic_scale_consistency() {
        let qg = QuadraticGroups::random(3, 2, 5);
        let w = [0.4, 0.6];
        let theta = qg.optimum(&w).unwrap();
        let twice = qg.scaled(2.0);
        let v = qg.outer_grad(&theta).unwrap();
        let op1 = WeightedHessian { problem: &qg, theta: &theta, w: &w, batch: 0, seed: 0 };
        let op2 = WeightedHessian { problem: &twice, theta: &theta, w: &w, batch: 0, seed: 0 };
        let s1 = exact_inv_hvp(&op1, &v, 1e-2).unwrap();
        let s2 = exact_inv_hvp(&op2, &v, 2e-2).unwrap();
        for (a, b) in s1.iter().zip(&s2) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
        let d1 = qg.closed_form_implicit_grad(&theta, &w, 1e-2).unwrap();
        let d2 = twice.closed_form_implicit_grad(&theta, &w, 2e-2).unwrap();
        for (a, b) in d1.iter().zip(&d2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_fd_is_zero() {
        let mut qg = QuadraticGroups::random(3, 2, 8);
        qg.a[1] = qg.a[0].clone();
        qg.c[1] = qg.c[0].clone();
        let fd = fd_implicit_grad(&qg, &[0.5, 0.5], 0, 1e-3, 1e-12).unwrap();
        assert!(fd.abs() < 1e-9);
    }

    #[test]
    fn similarity_examples() {
        let a = DMatrix::from_row_slice(3, 4, &[1.0, 2.0, 0.0, 0.0, -1.0, 0.5, 0.0, 0.0, 3.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 2.0, -1.0]);
        assert_eq!(feature_similarity(&a, &b).unwrap(), 0.0);
        let r1 = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 2.0, -2.0, -4.0, -4.0]);
        assert!((feature_similarity(&r1, &r1).unwrap() - 1.0).abs() < 1e-12);
        assert!(feature_similarity(&DMatrix::zeros(2, 3), &r1).is_err());
        let m = similarity_matrix(&[a.clone(), b, a]).unwrap();
        assert!((m[0][2] - m[2][0]).abs() == 0.0 && m[0][1] == 0.0);
    }

    #[test]
    fn mc_report_examples() {
        let l = learner();
        let va = rotated(60, 0.0, 6);
        let theta = init_params(&l.spec, 1);
        let single = AugTree::new(2).with_node(TreeNode::new(1, TransformRef::new("rotate2d", Some(1)), 1.0)).unwrap();
        let rep = mc_vs_enum_check(&l, &theta, &single, &va, 7, 3).unwrap();
        assert_eq!(rep.gap, 0.0);
        assert_eq!(rep.sigma, 0.0);
        let two = AugTree::new(2).with_node(TreeNode::new(1, TransformRef::new("axis_flip", Some(0)), 0.5)).unwrap();
        let few = mc_vs_enum_check(&l, &theta, &two, &va, 10, 3).unwrap();
        let many = mc_vs_enum_check(&l, &theta, &two, &va, 20_000, 3).unwrap();
        assert!(many.gap < few.bound && many.gap <= many.bound);
        assert_eq!(few.exact, many.exact);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn similarity_properties(seed_ in any::<u64>(), n1 in 1usize..8, n2 in 1usize..8, d in 2usize..6) {
            let mut rng = seed::rng(seed_);
            let x = DMatrix::<f64>::from_fn(n1, d, |_, _| StandardNormal.sample(&mut rng));
            let y = DMatrix::<f64>::from_fn(n2, d, |_, _| StandardNormal.sample(&mut rng));
            let s = feature_similarity(&x, &y).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(s, feature_similarity(&y, &x).unwrap());
            let g = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
            let rot = g.qr().q();
            let sr = feature_similarity(&(&x * &rot), &(&y * &rot)).unwrap();
            prop_assert!((s - sr).abs() <= 1e-10, "{} vs {}", s, sr);
        }
    }
}
