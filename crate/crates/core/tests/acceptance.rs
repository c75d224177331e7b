//! Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion and exits nonzero if any
//! criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use augforest::data::{synth_gaussian_groups, Dataset, Example, GaussianGroup, Split};
use augforest::forest::{
    contraction_gamma, implicit_grad, learn_forest, learn_weights, mirror_descent_step, neumann_inv_hvp, single_tree_baseline, BatchSel,
    BilevelConfig, ClassifierProblem, DiagonalOperator, GroupData, InvHvpConfig,
};
use augforest::model::{init_params, Encoder, Learner, ModelSpec, Policy, SgdConfig, TrainSet};
use augforest::oracle::{
    exact_inv_hvp, exhaustive_search, fd_implicit_grad, feature_similarity, mc_vs_enum_check, solve_inner, QuadraticGroups,
    EXHAUSTIVE_BUDGET,
};
use augforest::policy::{enumerate_paths, sample_path, AugTree, TransformRef, TreeNode};
use augforest::search::{search_tree, search_tree_with_model, SearchConfig};
use augforest::seed;
use augforest::transforms::{default_vector_registry, select};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<String, String>;

fn vector_learner(ids: &[&str], l2: f64) -> Learner {
    let reg = select(&default_vector_registry(), ids).unwrap();
    Learner::new(ModelSpec::linear(2, 2, l2), reg, Encoder::Identity).unwrap()
}

fn rotated_instance(seed_: u64) -> (Vec<Example>, Vec<Example>) {
    let g = GaussianGroup { eval_rotation: 0.5, orientation: 0.3, noise: 0.7, ..GaussianGroup::new(160) };
    let ds = synth_gaussian_groups(&[g], seed_).unwrap();
    (ds.split(Split::Train), ds.split(Split::Val))
}

/// k = 6 candidates (identity included), |H| = 5.
fn six_candidates(seed_: u64) -> SearchConfig {
    let cands = vec![
        TransformRef::new("rotate2d", Some(1)),
        TransformRef::new("rotate2d", Some(3)),
        TransformRef::new("axis_flip", Some(0)),
        TransformRef::new("translate", Some(0)),
        TransformRef::new("scale", Some(0)),
        TransformRef::identity(),
    ];
    SearchConfig {
        d_max: 2,
        probs: vec![0.2, 0.4, 0.6, 0.8, 1.0],
        train: SgdConfig { steps: 150, lr: 0.5, batch: 0 },
        ..SearchConfig::new(cands, seed_)
    }
}

fn six_learner() -> Learner {
    vector_learner(&["rotate2d", "axis_flip", "translate", "scale", "identity"], 1e-2)
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    if t <= limit {
        Ok(())
    } else {
        Err(format!("runtime {:.1}s exceeds {:.0}s", t.as_secs_f64(), limit.as_secs_f64()))
    }
}

fn complexity_separation() -> Outcome {
    let start = Instant::now();
    let l = six_learner();
    let cfg = six_candidates(1);
    let (train, val) = rotated_instance(1);
    let (_, trace, _) = search_tree_with_model(&l, &train, &val, &cfg).map_err(|e| e.to_string())?;
    let ex = exhaustive_search(&l, &train, &val, &cfg, EXHAUSTIVE_BUDGET).map_err(|e| e.to_string())?;
    within(start, Duration::from_secs(60))?;
    let bound = 3 * cfg.k() * 5;
    let ratio = ex.candidate_evals as f64 / trace.candidate_evals as f64;
    let msg = format!(
        "greedy models_trained={} candidate_evals={} (bound {bound}); exhaustive {} ({ratio:.1}x)",
        trace.models_trained, trace.candidate_evals, ex.candidate_evals
    );
    if trace.models_trained <= 3 && trace.candidate_evals <= bound && ratio >= 3.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn greedy_vs_exhaustive() -> Outcome {
    let start = Instant::now();
    let l = six_learner();
    let mut gaps = Vec::new();
    for s in 0..5 {
        let cfg = six_candidates(10 + s);
        let (train, val) = rotated_instance(10 + s);
        let (_, trace) = search_tree(&l, &train, &val, &cfg).map_err(|e| e.to_string())?;
        let ex = exhaustive_search(&l, &train, &val, &cfg, EXHAUSTIVE_BUDGET).map_err(|e| e.to_string())?;
        gaps.push(trace.reported_l_val() - ex.l_val);
    }
    within(start, Duration::from_secs(300))?;
    let worst = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let msg = format!("greedy - exhaustive L_val over 5 seeds: {gaps:.4?} (max {worst:.4}, limit 0.02)");
    if worst <= 0.02 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn implicit_gradient() -> Outcome {
    let start = Instant::now();
    let l = vector_learner(&["rotate2d", "axis_flip", "translate", "scale", "identity"], 1e-2);
    let groups = [
        GaussianGroup { eval_rotation: 0.5, ..GaussianGroup::new(80) },
        GaussianGroup { orientation: 0.25, center: [1.0, -1.0], ..GaussianGroup::new(120) },
        GaussianGroup { orientation: -0.2, noise: 0.6, ..GaussianGroup::new(100) },
    ];
    let ds = synth_gaussian_groups(&groups, 31).map_err(|e| e.to_string())?;
    let data = GroupData::from_dataset(&ds).map_err(|e| e.to_string())?;
    let trees = vec![
        AugTree::new(2).with_node(TreeNode::new(1, TransformRef::new("rotate2d", Some(1)), 0.5)).unwrap(),
        AugTree::new(2),
        AugTree::new(2)
            .with_node(TreeNode::new(1, TransformRef::new("translate", Some(0)), 0.5))
            .and_then(|t| t.with_node(TreeNode::new(2, TransformRef::new("scale", Some(0)), 0.6)))
            .and_then(|t| t.with_node(TreeNode::new(3, TransformRef::new("axis_flip", Some(0)), 0.4)))
            .unwrap(),
    ];
    let q = data.proportions();
    let problem = ClassifierProblem::new(&l, &data.train, &data.val, &trees, &q, 5, false).map_err(|e| e.to_string())?;
    let w = [0.2, 0.3, 0.5];
    let theta = solve_inner(&problem, &w, &vec![0.0; l.spec.num_params()], 1e-9, 100).map_err(|e| e.to_string())?;
    let cfg = InvHvpConfig { terms: 20_000, damping: 0.0, ..Default::default() };
    let d = implicit_grad(&problem, &theta, &w, &cfg, 0, BatchSel::Full).map_err(|e| e.to_string())?;
    let mut rel = Vec::new();
    for i in 0..3 {
        let fd = fd_implicit_grad(&problem, &w, i, 1e-3, 1e-9).map_err(|e| e.to_string())?;
        rel.push((d[i] - fd).abs() / fd.abs());
    }
    let worst_rel = rel.iter().copied().fold(0.0, f64::max);

    let mut worst_abs = 0.0f64;
    for s in 0..10 {
        let qg = QuadraticGroups::random(5, 3, 100 + s);
        let w = [0.5, 0.2, 0.3];
        let theta = qg.optimum(&w).map_err(|e| e.to_string())?;
        let damping = 1e-3;
        let exact = qg.closed_form_implicit_grad(&theta, &w, damping).map_err(|e| e.to_string())?;
        let cfg = InvHvpConfig { terms: 1000, damping, ..Default::default() };
        let d = implicit_grad(&qg, &theta, &w, &cfg, 0, BatchSel::Full).map_err(|e| e.to_string())?;
        for (a, b) in d.iter().zip(&exact) {
            worst_abs = worst_abs.max((a - b).abs());
        }
    }
    within(start, Duration::from_secs(120))?;
    let msg = format!(
        "logistic (p={}) max relative error vs retraining FD {worst_rel:.2e} (limit 5e-2); quadratic max abs error {worst_abs:.2e} (limit 1e-6)",
        l.spec.num_params()
    );
    if worst_rel <= 0.05 && worst_abs <= 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn inverse_hvp() -> Outcome {
    let start = Instant::now();
    let mut ops: Vec<(Vec<f64>, Vec<f64>)> = vec![(vec![0.5, 1.5], vec![1.0, 1.0])];
    let mut rng = seed::rng(44);
    for _ in 0..50 {
        let p = rng.random_range(2..20);
        let h = (0..p).map(|_| 0.5 + 2.5 * rng.random::<f64>()).collect();
        let v = (0..p).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        ops.push((h, v));
    }
    let damping = 1e-3;
    let mut worst = 0.0f64;
    for (k, (h, v)) in ops.iter().enumerate() {
        let op = DiagonalOperator(h.clone());
        let exact = exact_inv_hvp(&op, v, damping).map_err(|e| e.to_string())?;
        let gamma = contraction_gamma(&op, damping, k as u64).map_err(|e| e.to_string())?;
        // once converged the error sits at roundoff; allow a few ulps of the solution
        let slack = 4.0 * f64::EPSILON * exact.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut prev = f64::INFINITY;
        for n in 0..=200 {
            let est = neumann_inv_hvp(&op, v, damping, gamma, n).map_err(|e| e.to_string())?;
            let err = est.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if err > prev + slack {
                return Err(format!("operator {k}: error rose from {prev:.3e} to {err:.3e} at n={n}"));
            }
            prev = err;
        }
        worst = worst.max(prev);
    }
    // the stated instance with gamma = 0.5
    let fixed = neumann_inv_hvp(&DiagonalOperator(vec![0.5, 1.5]), &[1.0, 1.0], 0.0, 0.5, 200).map_err(|e| e.to_string())?;
    let fixed_err = (fixed[0] - 2.0).abs().max((fixed[1] - 1.0 / 1.5).abs());
    within(start, Duration::from_secs(30))?;
    let msg = format!("{} diagonal operators: max error at n=200 {worst:.2e}, diag(0.5,1.5) gamma=0.5 error {fixed_err:.2e} (limit 1e-3), monotone in n", ops.len());
    if worst <= 1e-3 && fixed_err <= 1e-3 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn mirror_descent() -> Outcome {
    let mut rng = seed::rng(55);
    let mut worst_sum = 0.0f64;
    let mut w: Vec<f64> = vec![0.25; 4];
    for step in 0..10_000 {
        if step % 500 == 0 {
            let m = rng.random_range(1..10);
            w = vec![1.0 / m as f64; m];
        }
        let scale = 10f64.powf(rng.random_range(-2.0..3.0));
        let d: Vec<f64> = (0..w.len()).map(|_| (rng.random::<f64>() - 0.5) * scale).collect();
        let eta = rng.random_range(0.0..5.0);
        w = mirror_descent_step(&w, &d, eta).map_err(|e| e.to_string())?;
        if w.iter().any(|&x| !(x > 0.0)) {
            return Err(format!("nonpositive weight at step {step}: {w:?}"));
        }
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
    }
    let ex = mirror_descent_step(&[0.5, 0.5], &[1.0, 0.0], 2f64.ln()).map_err(|e| e.to_string())?;
    let ex_err = (ex[0] - 1.0 / 3.0).abs().max((ex[1] - 2.0 / 3.0).abs());
    let msg = format!("10^4 steps: max |sum - 1| {worst_sum:.1e}; (1/3, 2/3) example error {ex_err:.1e}");
    if worst_sum <= 1e-12 && ex_err <= 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn heterogeneity_instance(seed_: u64) -> Dataset {
    // group 1 needs a half turn (its evaluation data is flipped), group 2 needs nothing, and the
    // two groups' class axes are perpendicular so one linear model cannot serve both
    let g1 = GaussianGroup { orientation: 0.0, eval_rotation: 1.0, noise: 0.8, ..GaussianGroup::new(100) };
    let g2 = GaussianGroup { orientation: 0.5, eval_rotation: 0.0, noise: 0.8, ..GaussianGroup::new(400) };
    synth_gaussian_groups(&[g1, g2], 100 + seed_).unwrap()
}

fn forest_beats_single_tree() -> Outcome {
    let start = Instant::now();
    let l = vector_learner(&["rotate2d", "axis_flip", "translate", "identity"], 1e-2);
    let (mut beats_pooled, mut beats_uniform) = (0, 0);
    let mut rows = Vec::new();
    for s in 0..5u64 {
        let ds = heterogeneity_instance(s);
        let scfg = SearchConfig {
            d_max: 2,
            probs: vec![0.25, 0.5, 0.75, 1.0],
            train: SgdConfig { steps: 100, lr: 0.5, batch: 0 },
            ..SearchConfig::new(l.registry.candidates(), s)
        };
        let bcfg = BilevelConfig { iterations: 10, inner_steps: 30, eta: 1.0, seed: s, ..Default::default() };
        let forest = learn_forest(&l, &ds, &scfg, &bcfg).map_err(|e| e.to_string())?;
        let trees: Vec<AugTree> = forest.forest.trees().iter().map(|(_, t)| t.clone()).collect();
        let data = GroupData::from_dataset(&ds).map_err(|e| e.to_string())?;
        let (_, _, uniform) = learn_weights(&l, &data, &trees, &BilevelConfig { eta: 0.0, ..bcfg.clone() }).map_err(|e| e.to_string())?;
        let pooled = single_tree_baseline(&l, &ds, &scfg, &bcfg).map_err(|e| e.to_string())?;
        let fv = forest.history.last().unwrap().val_loss;
        let uv = uniform.last().unwrap().val_loss;
        beats_pooled += usize::from(fv < pooled.val_loss);
        beats_uniform += usize::from(fv < uv);
        rows.push(format!("{fv:.3}/{:.3}/{uv:.3}", pooled.val_loss));
    }
    within(start, Duration::from_secs(600))?;
    let msg = format!(
        "forest/pooled/uniform val loss per seed [{}]; forest beats pooled {beats_pooled}/5, uniform {beats_uniform}/5",
        rows.join(", ")
    );
    if beats_pooled >= 3 && beats_uniform >= 3 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn random_tree(rng: &mut seed::Rng, cands: &[TransformRef], d_max: u32) -> AugTree {
    let mut nodes = Vec::new();
    let pick = |rng: &mut seed::Rng| cands[rng.random_range(0..cands.len())].clone();
    nodes.push(TreeNode::new(1, pick(rng), rng.random::<f64>()));
    let mut open = vec![1u32];
    while let Some(i) = open.pop() {
        let parent = nodes.iter().find(|n| n.index == i).unwrap().clone();
        if parent.transform.is_identity() || 32 - (2 * i).leading_zeros() > d_max {
            continue;
        }
        match rng.random_range(0..3) {
            0 => {}
            1 => {
                let c = 2 * i + rng.random_range(0..2);
                nodes.push(TreeNode::new(c, pick(rng), rng.random::<f64>()));
                open.push(c);
            }
            _ => {
                let p = rng.random::<f64>();
                nodes.push(TreeNode::new(2 * i, pick(rng), p));
                nodes.push(TreeNode::new(2 * i + 1, pick(rng), 1.0 - p));
                open.extend([2 * i, 2 * i + 1]);
            }
        }
    }
    AugTree::from_nodes(d_max, nodes).unwrap()
}

fn path_semantics() -> Outcome {
    let cands = default_vector_registry().candidates();
    let mut rng = seed::rng(77);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let d_max = rng.random_range(1..5);
        let tree = random_tree(&mut rng, &cands, d_max);
        let total: f64 = enumerate_paths(&tree).map_err(|e| e.to_string())?.iter().map(|p| p.probability).sum();
        worst = worst.max((total - 1.0).abs());
    }
    let tree = AugTree::from_nodes(
        2,
        vec![
            TreeNode::new(1, TransformRef::new("rotate2d", Some(0)), 0.8),
            TreeNode::new(2, TransformRef::new("scale", Some(0)), 0.3),
            TreeNode::new(3, TransformRef::new("translate", Some(0)), 0.7),
        ],
    )
    .unwrap();
    let paths = enumerate_paths(&tree).map_err(|e| e.to_string())?;
    let expected: BTreeMap<Vec<u32>, f64> = paths.iter().map(|p| (p.nodes.clone(), p.probability)).collect();
    let draws = 100_000;
    let mut counts: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
    for k in 0..draws {
        let p = sample_path(&tree, seed::derive(2024, &[k])).map_err(|e| e.to_string())?;
        *counts.entry(p.nodes).or_default() += 1;
    }
    if counts.keys().any(|k| !expected.contains_key(k)) || expected.len() != 4 {
        return Err(format!("sampled paths {:?} not among enumerated {:?}", counts.keys(), expected.keys()));
    }
    let chi2: f64 = expected
        .iter()
        .map(|(k, p)| {
            let e = p * draws as f64;
            let o = *counts.get(k).unwrap_or(&0) as f64;
            (o - e).powi(2) / e
        })
        .sum();
    let critical = ChiSquared::new(3.0).unwrap().inverse_cdf(0.99);
    let probs: Vec<f64> = paths.iter().map(|p| p.probability).collect();
    let msg = format!(
        "1000 random trees: max |sum - 1| {worst:.1e}; 4-path tree {probs:.2?}, chi-square {chi2:.2} vs critical {critical:.2} (df 3, alpha 0.01)"
    );
    if worst <= 1e-12 && chi2 < critical {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn density_matching_consistency() -> Outcome {
    let l = vector_learner(&["rotate2d", "jitter", "translate", "axis_flip", "identity"], 1e-2);
    let (train, val) = rotated_instance(8);
    let theta = l
        .train_sgd(&init_params(&l.spec, 1), &TrainSet::Pooled(&train), Policy::None, &SgdConfig::default(), 2)
        .map_err(|e| e.to_string())?;
    let trees = [
        AugTree::from_nodes(
            2,
            vec![
                TreeNode::new(1, TransformRef::new("rotate2d", Some(1)), 0.6),
                TreeNode::new(2, TransformRef::new("jitter", Some(2)), 0.3),
                TreeNode::new(3, TransformRef::new("translate", Some(1)), 0.7),
            ],
        )
        .unwrap(),
        AugTree::from_nodes(
            2,
            vec![TreeNode::new(1, TransformRef::new("axis_flip", Some(0)), 0.5), TreeNode::new(2, TransformRef::new("jitter", Some(1)), 0.8)],
        )
        .unwrap(),
    ];
    let mut violations = 0;
    let mut worst_ratio = 0.0f64;
    for s in 0..20u64 {
        let rep = mc_vs_enum_check(&l, &theta, &trees[(s % 2) as usize], &val, 1000, 300 + s).map_err(|e| e.to_string())?;
        violations += usize::from(rep.violated);
        worst_ratio = worst_ratio.max(rep.gap / rep.bound);
    }
    let msg = format!("20 seeds, R=1000: {violations} violations of 3 sigma/sqrt(R); max gap/bound {worst_ratio:.2}");
    if violations == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn feature_similarity_properties() -> Outcome {
    let mut rng = seed::rng(99);
    let mut worst_sym = 0.0f64;
    let mut worst_rot = 0.0f64;
    let mut worst_orth = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(2..8);
        let n1 = rng.random_range(1..12);
        let n2 = rng.random_range(1..12);
        let x = DMatrix::<f64>::from_fn(n1, d, |_, _| StandardNormal.sample(&mut rng));
        let y = DMatrix::<f64>::from_fn(n2, d, |_, _| StandardNormal.sample(&mut rng));
        let s = feature_similarity(&x, &y).map_err(|e| e.to_string())?;
        let t = feature_similarity(&y, &x).map_err(|e| e.to_string())?;
        if !(0.0..=1.0).contains(&s) {
            return Err(format!("similarity {s} outside [0, 1]"));
        }
        worst_sym = worst_sym.max((s - t).abs());
        let g = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
        let rot = g.qr().q();
        let sr = feature_similarity(&(&x * &rot), &(&y * &rot)).map_err(|e| e.to_string())?;
        worst_rot = worst_rot.max((s - sr).abs());
        let split = rng.random_range(1..d);
        let a = DMatrix::<f64>::from_fn(n1, d, |_, c| if c < split { StandardNormal.sample(&mut rng) } else { 0.0 });
        let b = DMatrix::<f64>::from_fn(n2, d, |_, c| if c >= split { StandardNormal.sample(&mut rng) } else { 0.0 });
        worst_orth = worst_orth.max(feature_similarity(&a, &b).map_err(|e| e.to_string())?);
    }
    let msg = format!("100 cases: max asymmetry {worst_sym:.1e}, max rotation change {worst_rot:.1e} (limit 1e-10), max orthogonal-support score {worst_orth:.1e}");
    if worst_sym == 0.0 && worst_rot <= 1e-10 && worst_orth == 0.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
    }
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = tmp.path().join("runs");
    let config = tmp.path().join("run.toml");
    fs::write(&config, "seed = 17\n[data]\nsynth = \"gaussian\"\ngroups = 2\nn_per_group = 120\n[search]\nsteps = 60\n[forest]\niterations = 3\ninner_steps = 20\n")
        .map_err(|e| e.to_string())?;
    let mut checked = Vec::new();
    for cmd in ["search", "forest"] {
        let mut runs = Vec::new();
        for _ in 0..2 {
            let status = Command::new(env!("CARGO_BIN_EXE_augforest"))
                .args([cmd, "--config"])
                .arg(&config)
                .arg("--out")
                .arg(&out)
                .output()
                .map_err(|e| e.to_string())?;
            if !status.status.success() {
                return Err(format!("{cmd} failed: {}", String::from_utf8_lossy(&status.stderr)));
            }
            let dir = out.join(format!("run_{cmd}"));
            runs.push(read_tree(&dir));
            fs::remove_dir_all(&dir).map_err(|e| e.to_string())?;
        }
        if runs[0] != runs[1] {
            let differing: Vec<&String> = runs[0].keys().filter(|k| runs[0].get(*k) != runs[1].get(*k)).collect();
            return Err(format!("{cmd}: artifacts differ: {differing:?}"));
        }
        checked.push(format!("{cmd}: {} files identical", runs[0].len()));
    }
    Ok(checked.join("; "))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("complexity separation", complexity_separation),
        ("greedy vs exhaustive quality", greedy_vs_exhaustive),
        ("implicit gradient correctness", implicit_gradient),
        ("inverse-HVP estimator", inverse_hvp),
        ("mirror-descent invariants", mirror_descent),
        ("forest beats single tree", forest_beats_single_tree),
        ("path semantics", path_semantics),
        ("density-matching consistency", density_matching_consistency),
        ("feature similarity", feature_similarity_properties),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {:>2} PASS  {name} ({secs:.1}s): {msg}", k + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name} ({secs:.1}s): {msg}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
