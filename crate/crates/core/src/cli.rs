//! Command-line front end: `search`, `forest`, `benchmark` and `eval`.
//!
//! Settings come from an optional TOML file; flags override file values. Each run writes
//! into `<out>/run_<name>/` together with a snapshot of the merged configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, GaussianGroup, GraphGenConfig, Split};
use crate::error::Error;
use crate::forest::{self, BilevelConfig, GroupData, InvHvpMethod};
use crate::model::{Checkpoint, Encoder, EvalMode, Learner, LossKind, ModelSpec, SgdConfig};
use crate::oracle;
use crate::policy::{to_dot, AugTree, Forest};
use crate::search::{self, default_probs, Frontier, SearchConfig};
use crate::seed::{self, tag};
use crate::transforms::{default_graph_registry, default_vector_registry, select, Domain, Registry, IDENTITY_ID};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => CliError::Config(m),
            e @ (Error::Parse { .. } | Error::BudgetExceeded { .. }) => CliError::Config(e.to_string()),
            e => CliError::Runtime(e),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Parser, Debug)]
#[command(name = "augforest", version, about = "Augmentation tree search and forest learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Greedy tree search on the pooled data.
    Search(CommonArgs),
    /// Per-group trees plus learned group weights.
    Forest(CommonArgs),
    /// Greedy vs exhaustive search on the same instance.
    Benchmark(CommonArgs),
    /// Losses of a saved tree or forest under a checkpoint.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Run directory suffix (defaults to the subcommand).
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, value_enum)]
    pub synth: Option<SynthKind>,
    #[arg(long)]
    pub groups: Option<usize>,
    /// Dataset file (CSV for vectors, JSON manifest for graphs).
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Tree or forest JSON file.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Also write the group feature-similarity matrix.
    #[arg(long)]
    pub similarity: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Gaussian,
    Graphs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub synth: Option<SynthKind>,
    pub path: Option<PathBuf>,
    pub groups: usize,
    pub n_per_group: usize,
    /// Evaluation rotation added per group (units of pi).
    pub rotation_step: f64,
    /// Explicit Gaussian groups; overrides `groups`, `n_per_group` and `rotation_step`.
    pub gaussian: Vec<GaussianGroup>,
    pub graphs: GraphGenConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            synth: None,
            path: None,
            groups: 2,
            n_per_group: 200,
            rotation_step: 0.5,
            gaussian: Vec::new(),
            graphs: GraphGenConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistryConfig {
    /// Transform ids; empty selects the default registry for the data domain.
    pub transforms: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub l2: f64,
    /// Aggregation rounds of the graph encoder.
    pub rounds: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden_dim: 0, l2: 1e-2, rounds: 2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalKind {
    #[default]
    Exact,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub d_max: u32,
    pub probs: Vec<f64>,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub eval: EvalKind,
    pub draws: usize,
    pub frontier: Frontier,
    pub warm_start: bool,
    pub subset: usize,
}

impl Default for SearchSection {
    fn default() -> Self {
        SearchSection {
            d_max: 2,
            probs: default_probs(),
            steps: 200,
            lr: 0.5,
            batch: 0,
            eval: EvalKind::Exact,
            draws: 100,
            frontier: Frontier::Fifo,
            warm_start: true,
            subset: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSection {
    pub iterations: usize,
    pub inner_steps: usize,
    pub lr: f64,
    pub eta: f64,
    pub damping: f64,
    pub neumann_terms: usize,
    pub gamma: Option<f64>,
    pub batch: usize,
    pub method: InvHvpMethod,
    pub augment_val: bool,
    pub q: Option<Vec<f64>>,
}

impl Default for ForestSection {
    fn default() -> Self {
        let b = BilevelConfig::default();
        ForestSection {
            iterations: b.iterations,
            inner_steps: b.inner_steps,
            lr: b.lr,
            eta: b.eta,
            damping: b.damping,
            neumann_terms: b.neumann_terms,
            gamma: b.gamma,
            batch: b.batch,
            method: b.method,
            augment_val: b.augment_val,
            q: b.q,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    /// Any of "greedy", "exhaustive".
    pub methods: Vec<String>,
    pub budget: u64,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        BenchmarkSection { methods: vec!["greedy".into(), "exhaustive".into()], budget: oracle::EXHAUSTIVE_BUDGET }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub policy: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub similarity: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: Option<String>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub threads: usize,
    pub data: DataConfig,
    pub registry: RegistryConfig,
    pub model: ModelConfig,
    pub search: SearchSection,
    pub forest: ForestSection,
    pub benchmark: BenchmarkSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: None,
            seed: None,
            out: PathBuf::from("runs"),
            threads: 1,
            data: DataConfig::default(),
            registry: RegistryConfig::default(),
            model: ModelConfig::default(),
            search: SearchSection::default(),
            forest: ForestSection::default(),
            benchmark: BenchmarkSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| config_err(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    fn apply(&mut self, a: &CommonArgs) {
        if let Some(s) = a.seed {
            self.seed = Some(s);
        }
        if let Some(o) = &a.out {
            self.out = o.clone();
        }
        if let Some(t) = a.threads {
            self.threads = t;
        }
        if let Some(n) = &a.name {
            self.name = Some(n.clone());
        }
        if let Some(s) = a.synth {
            self.data.synth = Some(s);
            self.data.path = None;
        }
        if let Some(g) = a.groups {
            self.data.groups = g;
            self.data.graphs.size_bins = g;
            self.data.graphs.degree_bins = 1;
        }
        if let Some(d) = &a.data {
            self.data.path = Some(d.clone());
            self.data.synth = None;
        }
    }

    fn seed(&self) -> CliResult<u64> {
        self.seed.ok_or_else(|| config_err("a seed is required (--seed or `seed` in the config)"))
    }

    pub fn search_config(&self, registry: &Registry) -> CliResult<SearchConfig> {
        let s = &self.search;
        let cfg = SearchConfig {
            d_max: s.d_max,
            probs: s.probs.clone(),
            candidates: registry.candidates(),
            eval_mode: match s.eval {
                EvalKind::Exact => EvalMode::Exact,
                EvalKind::MonteCarlo => EvalMode::MonteCarlo(s.draws),
            },
            train: SgdConfig { steps: s.steps, lr: s.lr, batch: s.batch },
            frontier: s.frontier,
            warm_start: s.warm_start,
            seed: self.seed()?,
            search_subset: s.subset,
            parallel: self.threads > 1,
        };
        cfg.validate(registry)?;
        Ok(cfg)
    }

    pub fn bilevel_config(&self) -> CliResult<BilevelConfig> {
        let f = &self.forest;
        let cfg = BilevelConfig {
            iterations: f.iterations,
            inner_steps: f.inner_steps,
            lr: f.lr,
            eta: f.eta,
            damping: f.damping,
            neumann_terms: f.neumann_terms,
            gamma: f.gamma,
            batch: f.batch,
            method: f.method,
            seed: self.seed()?,
            augment_val: f.augment_val,
            q: f.q.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dataset(&self) -> CliResult<Dataset> {
        let seed_ = seed::derive(self.seed()?, &[tag::SPLIT]);
        let d = &self.data;
        if let Some(p) = &d.path {
            if !p.exists() {
                return Err(config_err(format!("dataset not found: {}", p.display())));
            }
            return Ok(data::load_dataset(p)?);
        }
        match d.synth.unwrap_or(SynthKind::Gaussian) {
            SynthKind::Gaussian => {
                let groups = if d.gaussian.is_empty() {
                    if d.groups == 0 {
                        return Err(config_err("groups must be positive"));
                    }
                    data::rotated_groups(d.groups, d.n_per_group, d.rotation_step)
                } else {
                    d.gaussian.clone()
                };
                Ok(data::synth_gaussian_groups(&groups, seed_)?)
            }
            SynthKind::Graphs => Ok(data::synth_random_graphs(&d.graphs, seed_)?),
        }
    }

    pub fn learner(&self, ds: &Dataset) -> CliResult<Learner> {
        let domain = ds.examples.first().map(|e| e.sample.domain()).ok_or_else(|| config_err("empty dataset"))?;
        let (base, encoder) = match domain {
            Domain::Graph => (default_graph_registry(), Encoder::Graph { rounds: self.model.rounds }),
            _ => (default_vector_registry(), Encoder::Identity),
        };
        let registry = if self.registry.transforms.is_empty() {
            base
        } else {
            let mut ids: Vec<&str> = self.registry.transforms.iter().map(String::as_str).collect();
            if !ids.contains(&IDENTITY_ID) {
                ids.push(IDENTITY_ID);
            }
            select(&base, &ids)?
        };
        let spec = ModelSpec {
            input_dim: encoder.output_dim(ds.input_dim()),
            hidden_dim: self.model.hidden_dim,
            num_outputs: ds.num_outputs(),
            loss: if ds.is_multilabel() { LossKind::MultilabelBce } else { LossKind::SoftmaxCrossEntropy },
            l2: self.model.l2,
        };
        Ok(Learner::new(spec, registry, encoder)?)
    }
}

/// Run directory plus a deterministic log of summary lines.
struct RunDir {
    path: PathBuf,
    log: Vec<String>,
}

impl RunDir {
    fn create(cfg: &RunConfig, command: &str) -> CliResult<Self> {
        let name = cfg.name.clone().unwrap_or_else(|| command.to_string());
        if name.is_empty() || name.contains(['/', '\\']) {
            return Err(config_err(format!("invalid run name {name:?}")));
        }
        let path = cfg.out.join(format!("run_{name}"));
        fs::create_dir_all(&path).map_err(|e| CliError::Runtime(e.into()))?;
        let snapshot = toml::to_string(cfg).map_err(|e| config_err(format!("cannot serialise config: {e}")))?;
        let dir = RunDir { path, log: Vec::new() };
        dir.write("config.toml", &snapshot)?;
        Ok(dir)
    }

    fn write(&self, name: &str, content: &str) -> CliResult<()> {
        fs::write(self.path.join(name), content).map_err(|e| CliError::Runtime(e.into()))
    }

    fn note(&mut self, line: String) {
        log::info!("{line}");
        println!("{line}");
        self.log.push(line);
    }

    fn finish(self) -> CliResult<()> {
        let mut text = self.log.join("\n");
        text.push('\n');
        self.write("run.log", &text)
    }
}

fn prepare(args: &CommonArgs, eval: Option<&EvalArgs>) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) if !p.exists() => return Err(config_err(format!("config not found: {}", p.display()))),
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(args);
    if let Some(e) = eval {
        if let Some(p) = &e.policy {
            cfg.eval.policy = Some(p.clone());
        }
        if let Some(c) = &e.checkpoint {
            cfg.eval.checkpoint = Some(c.clone());
        }
        cfg.eval.similarity |= e.similarity;
    }
    cfg.seed()?;
    if cfg.threads == 0 {
        return Err(config_err("threads must be positive"));
    }
    Ok(cfg)
}

pub fn cmd_search(cfg: &RunConfig) -> CliResult<()> {
    let ds = cfg.dataset()?;
    let learner = cfg.learner(&ds)?;
    let scfg = cfg.search_config(&learner.registry)?;
    let mut dir = RunDir::create(cfg, "search")?;
    let (tree, trace) = search::search_tree(&learner, &ds.split(Split::Train), &ds.split(Split::Val), &scfg)?;
    dir.write("tree.json", &tree.to_json()?)?;
    dir.write("trace.csv", &search::trace_csv(&trace, &learner.registry))?;
    dir.write("importance.csv", &search::importance_csv(&search::importance_scores(&trace)))?;
    dir.write("tree.dot", &to_dot(&tree, &learner.registry))?;
    dir.write("trace_summary.json", &search::trace_summary_json(&trace)?)?;
    dir.note(format!("nodes={} models_trained={} candidate_evals={} best_L_val={}", tree.len(), trace.models_trained, trace.candidate_evals, trace.best_l_val));
    dir.finish()
}

pub fn cmd_forest(cfg: &RunConfig) -> CliResult<()> {
    let ds = cfg.dataset()?;
    let learner = cfg.learner(&ds)?;
    let scfg = cfg.search_config(&learner.registry)?;
    let bcfg = cfg.bilevel_config()?;
    let mut dir = RunDir::create(cfg, "forest")?;
    let res = forest::learn_forest(&learner, &ds, &scfg, &bcfg)?;
    dir.write("forest.json", &res.forest.to_json()?)?;
    dir.write("history.csv", &forest::history_csv(&res.history))?;
    for ((g, tree), trace) in res.forest.trees().iter().zip(&res.traces) {
        dir.write(&format!("tree_group_{g}.json"), &tree.to_json()?)?;
        dir.write(&format!("trace_group_{g}.csv"), &search::trace_csv(trace, &learner.registry))?;
    }
    let ckpt = Checkpoint {
        spec: learner.spec.clone(),
        theta: res.theta.clone(),
        step: (bcfg.iterations * bcfg.inner_steps) as u64,
        seed: bcfg.seed,
    };
    dir.write("checkpoint.json", &ckpt.to_json()?)?;
    if let Some(last) = res.history.last() {
        dir.note(format!(
            "weights={:?} weighted_train_loss={} val_loss={} N_w={}",
            last.weights, last.weighted_train_loss, last.val_loss, last.n_w
        ));
    }
    dir.finish()
}

pub fn cmd_benchmark(cfg: &RunConfig) -> CliResult<()> {
    let ds = cfg.dataset()?;
    let learner = cfg.learner(&ds)?;
    let scfg = cfg.search_config(&learner.registry)?;
    let mut dir = RunDir::create(cfg, "benchmark")?;
    let (train, val) = (ds.split(Split::Train), ds.split(Split::Val));
    let mut table = String::from("method,candidate_evals,models_trained,best_L_val,wall_time_s\n");
    for method in &cfg.benchmark.methods {
        let start = Instant::now();
        let (tree, l, evals, models) = match method.as_str() {
            "greedy" => {
                let (tree, trace) = search::search_tree(&learner, &train, &val, &scfg)?;
                (tree, trace.reported_l_val(), trace.candidate_evals as u64, trace.models_trained)
            }
            "exhaustive" => {
                let ex = oracle::exhaustive_search(&learner, &train, &val, &scfg, cfg.benchmark.budget)?;
                dir.write("exhaustive_top.csv", &oracle::exhaustive_csv(&ex, &learner.registry, 20))?;
                (ex.tree, ex.l_val, ex.candidate_evals, 1)
            }
            other => return Err(config_err(format!("unknown benchmark method {other:?}"))),
        };
        let secs = start.elapsed().as_secs_f64();
        dir.write(&format!("tree_{method}.json"), &tree.to_json()?)?;
        writeln!(table, "{method},{evals},{models},{l},{secs:.3}").expect("write to string");
        dir.note(format!("{method}: candidate_evals={evals} models_trained={models} L_val={l}"));
    }
    dir.write("benchmark.csv", &table)?;
    dir.finish()
}

enum PolicyFile {
    Tree(AugTree),
    Forest(Forest),
}

fn read_policy(path: &Path) -> CliResult<PolicyFile> {
    let text = fs::read_to_string(path).map_err(|e| config_err(format!("cannot read policy {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| config_err(format!("invalid policy file {}: {e}", path.display())))?;
    let res = if value.get("trees").is_some() { Forest::from_json(&text).map(PolicyFile::Forest) } else { AugTree::from_json(&text).map(PolicyFile::Tree) };
    res.map_err(|e| config_err(format!("invalid policy file {}: {e}", path.display())))
}

pub fn cmd_eval(cfg: &RunConfig) -> CliResult<()> {
    let policy_path = cfg.eval.policy.as_ref().ok_or_else(|| config_err("eval needs --policy"))?;
    let ckpt_path = cfg.eval.checkpoint.as_ref().ok_or_else(|| config_err("eval needs --checkpoint"))?;
    for p in [policy_path, ckpt_path] {
        if !p.exists() {
            return Err(config_err(format!("file not found: {}", p.display())));
        }
    }
    let policy = read_policy(policy_path)?;
    let ckpt_text = fs::read_to_string(ckpt_path).map_err(|e| config_err(format!("cannot read checkpoint {}: {e}", ckpt_path.display())))?;
    let ckpt = Checkpoint::from_json(&ckpt_text).map_err(|e| config_err(format!("invalid checkpoint {}: {e}", ckpt_path.display())))?;
    let ds = cfg.dataset()?;
    let learner = cfg.learner(&ds)?;
    if ckpt.spec != learner.spec {
        return Err(config_err("checkpoint model does not match the configured data and model"));
    }
    let bcfg = cfg.bilevel_config()?;
    let data = GroupData::from_dataset(&ds)?;
    let q = bcfg.q.clone().unwrap_or_else(|| data.proportions());
    let theta = &ckpt.theta;
    let eval_seed = seed::derive(bcfg.seed, &[tag::EVAL]);
    let mut dir = RunDir::create(cfg, "eval")?;
    let mut table = String::new();
    let mut summary = serde_json::Map::new();
    match &policy {
        PolicyFile::Forest(f) => {
            let trees: Vec<AugTree> = data
                .ids
                .iter()
                .map(|g| f.tree(*g).cloned().ok_or_else(|| config_err(format!("forest has no tree for group {g}"))))
                .collect::<CliResult<_>>()?;
            for t in &trees {
                t.check_against(&learner.registry, ds.examples[0].sample.domain())?;
            }
            table.push_str("group,q,w,train_loss,val_loss\n");
            for (k, g) in data.ids.iter().enumerate() {
                let tl = learner.group_loss(theta, &data.train[k], Some(&trees[k]), EvalMode::Exact, Some(eval_seed))?;
                let vt = bcfg.augment_val.then_some(&trees[k]);
                let vl = learner.group_loss(theta, &data.val[k], vt, EvalMode::Exact, Some(eval_seed))?;
                writeln!(table, "{g},{},{},{tl},{vl}", q[k], f.weights()[k]).expect("write to string");
            }
            let (wt, vl) = forest::forest_losses(&learner, &data, &trees, &q, f.weights(), theta, bcfg.seed, bcfg.augment_val)?;
            summary.insert("weighted_train_loss".into(), wt.into());
            summary.insert("val_loss".into(), vl.into());
            dir.note(format!("weighted_train_loss={wt} val_loss={vl}"));
        }
        PolicyFile::Tree(t) => {
            t.check_against(&learner.registry, ds.examples[0].sample.domain())?;
            table.push_str("group,q,val_loss_policy,val_loss_plain\n");
            let (mut wp, mut wu) = (0.0, 0.0);
            for (k, g) in data.ids.iter().enumerate() {
                let lp = learner.group_loss(theta, &data.val[k], Some(t), EvalMode::Exact, Some(eval_seed))?;
                let lu = learner.group_loss(theta, &data.val[k], None, EvalMode::Exact, None)?;
                wp += q[k] * lp;
                wu += q[k] * lu;
                writeln!(table, "{g},{},{lp},{lu}", q[k]).expect("write to string");
            }
            summary.insert("val_loss_policy".into(), wp.into());
            summary.insert("val_loss_plain".into(), wu.into());
            dir.note(format!("val_loss_policy={wp} val_loss_plain={wu}"));
        }
    }
    print!("{table}");
    dir.write("eval.csv", &table)?;
    let summary = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Runtime(e.into()))?;
    dir.write("eval_summary.json", &summary)?;
    if cfg.eval.similarity {
        let feats = data.val.iter().map(|v| oracle::feature_matrix(&learner, theta, v)).collect::<crate::Result<Vec<_>>>()?;
        let sim = oracle::similarity_matrix(&feats)?;
        let mut s = String::from("group");
        for g in &data.ids {
            write!(s, ",{g}").expect("write to string");
        }
        s.push('\n');
        for (g, row) in data.ids.iter().zip(&sim) {
            write!(s, "{g}").expect("write to string");
            for v in row {
                write!(s, ",{v}").expect("write to string");
            }
            s.push('\n');
        }
        dir.write("similarity.csv", &s)?;
    }
    dir.finish()
}

/// Parses `args` and runs the chosen command on a pool of `threads` workers.
pub fn run<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| {
        if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
            print!("{e}");
            CliError::Config(String::new())
        } else {
            CliError::Config(e.to_string().trim_start_matches("error: ").trim_end().to_string())
        }
    });
    let cli = match cli {
        Err(CliError::Config(m)) if m.is_empty() => return Ok(()),
        other => other?,
    };
    let (cfg, cmd): (RunConfig, fn(&RunConfig) -> CliResult<()>) = match &cli.command {
        Command::Search(a) => (prepare(a, None)?, cmd_search),
        Command::Forest(a) => (prepare(a, None)?, cmd_forest),
        Command::Benchmark(a) => (prepare(a, None)?, cmd_benchmark),
        Command::Eval(e) => (prepare(&e.common, Some(e))?, cmd_eval),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| config_err(format!("thread pool: {e}")))?;
    pool.install(|| cmd(&cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let mut cfg = RunConfig::from_toml("seed = 3\nthreads = 2\n[data]\ngroups = 4\n[search]\nd_max = 1\n").unwrap();
        assert_eq!(cfg.search.d_max, 1);
        cfg.apply(&CommonArgs { seed: Some(9), groups: Some(2), ..Default::default() });
        assert_eq!((cfg.seed, cfg.threads, cfg.data.groups), (Some(9), 2, 2));
    }

    #[test]
    fn unknown_keys_and_missing_seed_are_config_errors() {
        assert!(RunConfig::from_toml("sede = 3").is_err());
        let err = prepare(&CommonArgs::default(), None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = prepare(&CommonArgs { config: Some("/nonexistent/run.toml".into()), ..Default::default() }, None).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/run.toml"));
    }

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = RunConfig { seed: Some(1), ..Default::default() };
        cfg.data.gaussian = vec![GaussianGroup::new(10)];
        cfg.forest.gamma = Some(0.5);
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn runtime_and_config_errors_are_distinguished() {
        assert_eq!(CliError::from(Error::Config("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(Error::EmptyBatch).exit_code(), 3);
    }
}
