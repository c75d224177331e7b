//! Greedy top-down tree search with density matching.
//!
//! Each frontier node trains one model on the current tree, then scores every candidate
//! (transform, probability) at that position by the model's expected loss on augmented
//! validation data. Children are opened only below nodes that strictly improve the best
//! validation loss so far.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{subsample, Example};
use crate::error::{Error, Result};
use crate::model::{init_params, EvalMode, Learner, Policy, SgdConfig, TrainSet};
use crate::policy::{level, AugTree, TransformRef, TreeNode};
use crate::seed::{self, tag};
use crate::transforms::Registry;

/// Absolute slack in the strict-improvement test.
pub const IMPROVEMENT_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frontier {
    #[default]
    Fifo,
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    pub d_max: u32,
    /// Probability grid.
    pub probs: Vec<f64>,
    /// Candidate transforms (transform, magnitude level); must contain the identity.
    pub candidates: Vec<TransformRef>,
    pub eval_mode: EvalMode,
    pub train: SgdConfig,
    pub frontier: Frontier,
    /// Start each node's model from the previous node's parameters.
    pub warm_start: bool,
    pub seed: u64,
    /// Subsample train and validation to this many examples (0 keeps everything).
    pub search_subset: usize,
    /// Evaluate candidates on the rayon pool.
    pub parallel: bool,
}

/// 0, 0.1, ..., 1.0
pub fn default_probs() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

impl SearchConfig {
    pub fn new(candidates: Vec<TransformRef>, seed: u64) -> Self {
        SearchConfig {
            d_max: 2,
            probs: default_probs(),
            candidates,
            eval_mode: EvalMode::Exact,
            train: SgdConfig::default(),
            frontier: Frontier::Fifo,
            warm_start: true,
            seed,
            search_subset: 0,
            parallel: false,
        }
    }

    pub fn validate(&self, registry: &Registry) -> Result<()> {
        if self.d_max == 0 {
            return Err(Error::Config("d_max must be at least 1".into()));
        }
        if self.probs.is_empty() || self.probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("probability grid must be a nonempty subset of [0, 1]".into()));
        }
        if !self.candidates.iter().any(TransformRef::is_identity) {
            return Err(Error::Config("candidate transforms must include the identity".into()));
        }
        for c in &self.candidates {
            registry.check_ref(c)?;
        }
        Ok(())
    }

    /// Number of candidate transforms, identity included.
    pub fn k(&self) -> usize {
        self.candidates.len()
    }

    fn min_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Candidates at one position in canonical order.
///
/// Unconstrained: every non-identity transform at every positive grid probability, then the
/// identity once (a transform at probability 0 is the identity). With a sibling present, every
/// transform (identity last) at `1 - p_sibling`.
pub fn candidate_set(cfg: &SearchConfig, sibling_prob: Option<f64>) -> Vec<(TransformRef, f64)> {
    let non_id = cfg.candidates.iter().filter(|c| !c.is_identity());
    match sibling_prob {
        Some(ps) => {
            let p = 1.0 - ps;
            non_id.map(|c| (c.clone(), p)).chain([(TransformRef::identity(), p)]).collect()
        }
        None => {
            let mut probs: Vec<f64> = cfg.probs.iter().copied().filter(|&p| p > 0.0).collect();
            probs.sort_by(f64::total_cmp);
            probs.dedup();
            let mut out: Vec<(TransformRef, f64)> =
                non_id.flat_map(|c| probs.iter().map(move |&p| (c.clone(), p))).collect();
            out.push((TransformRef::identity(), cfg.min_prob()));
            out
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateEval {
    pub transform: TransformRef,
    pub prob: f64,
    pub l_val: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub index: u32,
    pub candidates: Vec<CandidateEval>,
    pub chosen: TransformRef,
    pub prob: f64,
    /// Identity candidate's loss under this node's model.
    pub baseline_l_val: f64,
    pub l_val: f64,
    /// Best accepted loss before this node.
    pub best_before: f64,
    pub improved: bool,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchTrace {
    pub records: Vec<NodeRecord>,
    pub models_trained: usize,
    pub candidate_evals: usize,
    /// Best accepted validation loss (infinite if nothing improved).
    pub best_l_val: f64,
}

impl SearchTrace {
    /// Strictly decreasing losses of the nodes that improved the tree.
    pub fn accepted_losses(&self) -> Vec<f64> {
        self.records.iter().filter(|r| r.improved).map(|r| r.l_val).collect()
    }

    /// Best accepted loss, or the root's chosen loss when nothing improved.
    pub fn reported_l_val(&self) -> f64 {
        if self.best_l_val.is_finite() {
            self.best_l_val
        } else {
            self.records.first().map_or(f64::INFINITY, |r| r.l_val)
        }
    }
}

/// Expected validation loss of `theta` under `tree` (no training).
pub fn density_match_eval(
    learner: &Learner,
    theta: &[f64],
    tree: &AugTree,
    val: &[Example],
    mode: EvalMode,
    seed: u64,
) -> Result<f64> {
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("model parameters"));
    }
    learner.group_loss(theta, val, Some(tree), mode, Some(seed))
}

/// Scores each candidate placed at `index` of `tree`; results follow candidate order.
pub fn evaluate_candidates(
    learner: &Learner,
    theta: &[f64],
    tree: &AugTree,
    index: u32,
    candidates: &[(TransformRef, f64)],
    val: &[Example],
    mode: EvalMode,
    seed: u64,
    parallel: bool,
) -> Result<Vec<f64>> {
    let eval = |(t, p): &(TransformRef, f64)| -> Result<f64> {
        let trial = tree.clone().with_node(TreeNode::new(index, t.clone(), *p))?;
        density_match_eval(learner, theta, &trial, val, mode, seed)
    };
    if parallel {
        candidates.par_iter().map(eval).collect()
    } else {
        candidates.iter().map(eval).collect()
    }
}

/// First minimum in candidate order.
pub fn argmin(losses: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, &l) in losses.iter().enumerate() {
        if best.is_none_or(|b| l < losses[b]) {
            best = Some(k);
        }
    }
    best
}

fn is_legal(tree: &AugTree, index: u32, d_max: u32) -> bool {
    if index == 0 || level(index) > d_max || tree.get(index).is_some() {
        return false;
    }
    if index == 1 {
        return tree.is_empty();
    }
    tree.get(index / 2).is_some_and(|p| !p.transform.is_identity())
}

/// Trains one model on `tree` and picks the best candidate for position `index`.
/// Returns the record and the trained parameters.
pub fn build_one_node(
    learner: &Learner,
    index: u32,
    tree: &AugTree,
    cfg: &SearchConfig,
    train: &[Example],
    val: &[Example],
    theta_start: &[f64],
) -> Result<(NodeRecord, Vec<f64>)> {
    if !is_legal(tree, index, cfg.d_max) {
        return Err(Error::IllegalIndex(index));
    }
    if val.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let policy = if tree.is_empty() { Policy::None } else { Policy::Tree(tree) };
    let theta = learner.train_sgd(
        theta_start,
        &TrainSet::Pooled(train),
        policy,
        &cfg.train,
        seed::derive(cfg.seed, &[tag::TRAIN, u64::from(index)]),
    )?;
    let cands = candidate_set(cfg, tree.sibling(index).map(|s| s.prob));
    let eval_seed = seed::derive(cfg.seed, &[tag::EVAL, u64::from(index)]);
    let losses = evaluate_candidates(learner, &theta, tree, index, &cands, val, cfg.eval_mode, eval_seed, cfg.parallel)?;
    let best = argmin(&losses).ok_or_else(|| Error::Config("empty candidate set".into()))?;
    let baseline = cands
        .iter()
        .zip(&losses)
        .find(|((t, _), _)| t.is_identity())
        .map(|(_, &l)| l)
        .unwrap_or(f64::NAN);
    let record = NodeRecord {
        index,
        candidates: cands
            .iter()
            .zip(&losses)
            .map(|((t, p), &l)| CandidateEval { transform: t.clone(), prob: *p, l_val: l })
            .collect(),
        chosen: cands[best].0.clone(),
        prob: cands[best].1,
        baseline_l_val: baseline,
        l_val: losses[best],
        best_before: f64::INFINITY,
        improved: false,
    };
    Ok((record, theta))
}

/// Greedy search. Returns the pruned tree, the trace and the last trained parameters.
pub fn search_tree_with_model(
    learner: &Learner,
    train: &[Example],
    val: &[Example],
    cfg: &SearchConfig,
) -> Result<(AugTree, SearchTrace, Vec<f64>)> {
    cfg.validate(&learner.registry)?;
    if train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if val.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let train = subsample(train, cfg.search_subset, seed::derive(cfg.seed, &[tag::SUBSET, 0]));
    let val = subsample(val, cfg.search_subset, seed::derive(cfg.seed, &[tag::SUBSET, 1]));

    let theta_init = init_params(&learner.spec, seed::derive(cfg.seed, &[tag::INIT]));
    let mut theta = theta_init.clone();
    let mut tree = AugTree::new(cfg.d_max);
    let mut frontier: VecDeque<u32> = VecDeque::from([1]);
    let mut frontier_rng = seed::rng(seed::derive(cfg.seed, &[tag::FRONTIER]));
    let mut trace = SearchTrace { best_l_val: f64::INFINITY, ..Default::default() };

    while !frontier.is_empty() {
        let i = match cfg.frontier {
            Frontier::Fifo => frontier.pop_front(),
            Frontier::Random => {
                let k = frontier_rng.random_range(0..frontier.len());
                frontier.remove(k)
            }
        }
        .expect("nonempty frontier");
        let start = if cfg.warm_start { theta.clone() } else { theta_init.clone() };
        let (mut rec, trained) = build_one_node(learner, i, &tree, cfg, &train, &val, &start)?;
        trace.models_trained += 1;
        trace.candidate_evals += rec.candidates.len();
        theta = trained;
        tree.insert(TreeNode::new(i, rec.chosen.clone(), rec.prob))?;
        rec.best_before = trace.best_l_val;
        if !rec.chosen.is_identity() && rec.l_val < trace.best_l_val - IMPROVEMENT_SLACK {
            rec.improved = true;
            trace.best_l_val = rec.l_val;
            for child in [2 * i, 2 * i + 1] {
                if level(child) <= cfg.d_max {
                    frontier.push_back(child);
                }
            }
        }
        log::debug!("node {i}: {} p={} L_val={:.6} improved={}", rec.chosen.transform_id, rec.prob, rec.l_val, rec.improved);
        trace.records.push(rec);
    }
    Ok((tree.pruned(), trace, theta))
}

pub fn search_tree(learner: &Learner, train: &[Example], val: &[Example], cfg: &SearchConfig) -> Result<(AugTree, SearchTrace)> {
    search_tree_with_model(learner, train, val, cfg).map(|(t, s, _)| (t, s))
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ImportanceReport {
    pub scores: BTreeMap<String, f64>,
}

/// Per transform id, the summed loss reduction (versus the identity candidate under the same
/// node model) over every non-identity node inserted into the tree.
pub fn importance_scores(trace: &SearchTrace) -> ImportanceReport {
    let mut scores = BTreeMap::new();
    for rec in &trace.records {
        for c in &rec.candidates {
            if !c.transform.is_identity() {
                scores.entry(c.transform.transform_id.clone()).or_insert(0.0);
            }
        }
    }
    for rec in &trace.records {
        if rec.chosen.is_identity() {
            continue;
        }
        let gain = (rec.baseline_l_val - rec.l_val).max(0.0);
        *scores.entry(rec.chosen.transform_id.clone()).or_insert(0.0) += if gain.is_finite() { gain } else { 0.0 };
    }
    ImportanceReport { scores }
}

pub fn trace_csv(trace: &SearchTrace, registry: &Registry) -> String {
    let mut s = String::from("node_index,transform,prob,L_val\n");
    for rec in &trace.records {
        for c in &rec.candidates {
            let _ = writeln!(s, "{},{},{},{}", rec.index, registry.label(&c.transform), c.prob, c.l_val);
        }
    }
    s
}

pub fn importance_csv(report: &ImportanceReport) -> String {
    let mut s = String::from("transform,score\n");
    for (t, v) in &report.scores {
        let _ = writeln!(s, "{t},{v}");
    }
    s
}

#[derive(Serialize)]
struct SummaryNode<'a> {
    index: u32,
    transform: &'a TransformRef,
    prob: f64,
    l_val: f64,
    improved: bool,
}

#[derive(Serialize)]
struct Summary<'a> {
    models_trained: usize,
    candidate_evals: usize,
    best_l_val: Option<f64>,
    nodes: Vec<SummaryNode<'a>>,
}

pub fn trace_summary_json(trace: &SearchTrace) -> Result<String> {
    let summary = Summary {
        models_trained: trace.models_trained,
        candidate_evals: trace.candidate_evals,
        best_l_val: trace.best_l_val.is_finite().then_some(trace.best_l_val),
        nodes: trace
            .records
            .iter()
            .map(|r| SummaryNode { index: r.index, transform: &r.chosen, prob: r.prob, l_val: r.l_val, improved: r.improved })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&summary)?)
}
