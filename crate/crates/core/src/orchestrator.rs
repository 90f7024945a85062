//! Simulated federated rounds and the two non-federated baselines.
//!
//! The server side never sees examples: [`Client`] owns its data and hands
//! back [`ClientUpdate`]s, [`Server`] only aggregates updates, and
//! evaluation runs on a held-out split carved off before partitioning.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregationConfig, ClientUpdate};
use crate::dataset::{Dataset, LabeledExample};
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{self, ModelSpec};
use crate::params::ParameterVector;
use crate::partition::{PartitionPlan, PartitionSpec, Strategy};
use crate::seed::{self, stream};
use crate::synthetic::{self, CorpusConfig};
use crate::train::{LocalTrainer, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Federated,
    Centralized,
    SingleClient,
}

/// Where the client partition comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PartitionSource {
    Inline(PartitionSpec),
    Plan(PartitionPlan),
    /// Path to a plan file; must be resolved into `Plan` by the caller.
    File {
        plan_file: String,
    },
}

/// Clients that send a sign-flipped, amplified update:
/// `global - scale * (local - global)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignFlipAdversary {
    /// Clients `0..count` misbehave.
    pub count: usize,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub aggregation: AggregationConfig,
    pub partition: PartitionSource,
    #[serde(default)]
    pub corpus: CorpusConfig,
    pub rounds: usize,
    #[serde(default = "default_eval_fraction")]
    pub eval_split_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    pub mode: Mode,
    /// Fraction of clients sampled each round.
    #[serde(default = "default_participation")]
    pub participation: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversary: Option<SignFlipAdversary>,
}

fn default_eval_fraction() -> f64 {
    0.2
}

fn default_participation() -> f64 {
    1.0
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("rounds must be at least 1".into()));
        }
        if !(self.eval_split_fraction > 0.0 && self.eval_split_fraction < 1.0) {
            return Err(Error::InvalidConfig("eval_split_fraction must be in (0, 1)".into()));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::InvalidConfig("participation must be in (0, 1]".into()));
        }
        if self.corpus.feature_dim != self.model.feature_dim || self.corpus.num_classes != self.model.num_classes {
            return Err(Error::InvalidConfig("corpus shape does not match the model".into()));
        }
        if let Some(adv) = &self.adversary {
            if !(adv.scale.is_finite() && adv.scale >= 0.0) {
                return Err(Error::InvalidConfig("adversary scale must be finite and non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Metrics of the global model after one round (or one epoch for baselines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub global_metrics: BTreeMap<String, f64>,
    pub per_client_loss: BTreeMap<usize, f64>,
    pub participating_clients: Vec<usize>,
}

/// Held-out evaluation of a global model.
pub struct Evaluator<'a> {
    spec: &'a ModelSpec,
    data: &'a [LabeledExample],
}

impl<'a> Evaluator<'a> {
    pub fn new(spec: &'a ModelSpec, data: &'a [LabeledExample]) -> Self {
        Self { spec, data }
    }

    /// `accuracy` and `loss`, plus `f1` for two-class models.
    pub fn metrics(&self, params: &ParameterVector) -> Result<BTreeMap<String, f64>> {
        let eval = model::evaluate(self.spec, params, self.data)?;
        let mut out = BTreeMap::new();
        out.insert("accuracy".to_string(), eval.accuracy);
        out.insert("loss".to_string(), eval.loss);
        if self.spec.num_classes == 2 {
            let preds = self
                .data
                .iter()
                .map(|ex| model::predict(self.spec, params, &ex.features))
                .collect::<Result<Vec<_>>>()?;
            let golds: Vec<usize> = self.data.iter().map(|ex| ex.label).collect();
            out.insert("f1".to_string(), metrics::f1_binary(&preds, &golds)?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Behavior {
    Honest,
    SignFlip { scale: f64 },
}

/// A participant holding its own examples.
pub struct Client {
    id: usize,
    data: Vec<LabeledExample>,
    behavior: Behavior,
}

impl Client {
    pub fn new(id: usize, data: Vec<LabeledExample>) -> Self {
        Self { id, data, behavior: Behavior::Honest }
    }

    pub fn sign_flipping(id: usize, data: Vec<LabeledExample>, scale: f64) -> Self {
        Self { id, data, behavior: Behavior::SignFlip { scale } }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn num_examples(&self) -> usize {
        self.data.len()
    }

    /// Train locally from `global`, which also anchors the proximal term.
    pub fn train(
        &self,
        spec: &ModelSpec,
        global: &ParameterVector,
        cfg: TrainConfig,
        round: usize,
    ) -> Result<ClientUpdate> {
        let mut trainer = LocalTrainer::new(spec, global, &self.data, cfg, global)?;
        let mut loss = 0.0;
        for _ in 0..cfg.epochs {
            loss = trainer.run_epoch();
        }
        let mut params = trainer.into_params()?;
        if let Behavior::SignFlip { scale } = self.behavior {
            let flipped = params.values().iter().zip(global.values()).map(|(l, g)| g - scale * (l - g)).collect();
            params = params.with_values(flipped)?;
        }
        Ok(ClientUpdate { client_id: self.id, round, params, num_examples: self.data.len(), train_loss: loss })
    }
}

/// Holds the global model; sees only client updates.
pub struct Server {
    aggregation: AggregationConfig,
    global: ParameterVector,
}

impl Server {
    pub fn new(aggregation: AggregationConfig, initial: ParameterVector) -> Self {
        Self { aggregation, global: initial }
    }

    pub fn global(&self) -> &ParameterVector {
        &self.global
    }

    pub fn aggregate(&mut self, updates: &[ClientUpdate]) -> Result<()> {
        for u in updates {
            self.global.ensure_compatible(&u.params)?;
        }
        self.global = self.aggregation.aggregate(updates)?;
        Ok(())
    }

    pub fn into_global(self) -> ParameterVector {
        self.global
    }
}

/// Corpus, held-out split, plan and initial model for one experiment.
#[derive(Debug, Clone)]
pub struct PreparedExperiment {
    pub train_set: Dataset,
    pub eval_set: Vec<LabeledExample>,
    /// Corpus indices of the held-out and training examples.
    pub eval_indices: Vec<usize>,
    pub train_indices: Vec<usize>,
    /// Indexes into `train_set`.
    pub plan: PartitionPlan,
    pub initial: ParameterVector,
}

/// Split the corpus into held-out and training parts, then partition the
/// training part. Splitting comes first so no client ever holds an
/// evaluation example.
pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedExperiment> {
    cfg.validate()?;
    let corpus = synthetic::generate(&cfg.corpus)?;
    let n = corpus.len();
    let n_eval = libm::round(cfg.eval_split_fraction * n as f64) as usize;
    if n_eval == 0 || n_eval >= n {
        return Err(Error::TooFewExamples { needed: 2, available: n });
    }
    let mut rng = seed::rng(seed::derive(cfg.seed, stream::EVAL_SPLIT, 0));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut eval_indices = order[..n_eval].to_vec();
    let mut train_indices = order[n_eval..].to_vec();
    eval_indices.sort_unstable();
    train_indices.sort_unstable();
    let eval_lookup: BTreeSet<usize> = eval_indices.iter().copied().collect();
    if train_indices.iter().any(|i| eval_lookup.contains(i)) {
        return Err(Error::InvalidConfig("evaluation split overlaps training data".into()));
    }
    let train_set = corpus.subset(&train_indices)?;
    let eval_set = corpus.gather(&eval_indices)?;

    let plan = match &cfg.partition {
        PartitionSource::Inline(spec) => spec.apply(&train_set, seed::derive(cfg.seed, stream::PARTITION, 0))?,
        PartitionSource::Plan(plan) => plan.clone(),
        PartitionSource::File { plan_file } => {
            return Err(Error::InvalidConfig(alloc::format!("plan file {plan_file} was not loaded")))
        }
    };
    plan.validate(&train_set)?;
    let initial = model::init_params(&cfg.model, seed::derive(cfg.seed, stream::INIT, 0))?;
    Ok(PreparedExperiment { train_set, eval_set, eval_indices, train_indices, plan, initial })
}

fn client_seed(cfg: &ExperimentConfig, round: usize, client: usize) -> u64 {
    seed::derive(cfg.seed, stream::CLIENT_TRAIN, ((round as u64) << 32) | client as u64)
}

fn participants(cfg: &ExperimentConfig, n_clients: usize, round: usize) -> Vec<usize> {
    if cfg.participation >= 1.0 {
        return (0..n_clients).collect();
    }
    let k = (libm::round(cfg.participation * n_clients as f64) as usize).clamp(1, n_clients);
    let mut rng = seed::rng(seed::derive(cfg.seed, stream::PARTICIPATION, round as u64));
    let mut picked = index::sample(&mut rng, n_clients, k).into_vec();
    picked.sort_unstable();
    picked
}

pub type RunOutput = (ParameterVector, Vec<RoundReport>);

fn require_mode(cfg: &ExperimentConfig, mode: Mode) -> Result<()> {
    if cfg.mode == mode {
        Ok(())
    } else {
        Err(Error::InvalidConfig(alloc::format!("expected mode {mode:?}, config says {:?}", cfg.mode)))
    }
}

/// Federated training: every round, each participating client trains from
/// the current global model, the server aggregates, and the new global
/// model is evaluated on the held-out split.
pub fn run_federated(cfg: &ExperimentConfig) -> Result<RunOutput> {
    require_mode(cfg, Mode::Federated)?;
    let prep = prepare(cfg)?;
    if prep.plan.n_clients() < 2 {
        return Err(Error::InvalidConfig("federated runs need at least 2 clients".into()));
    }
    let flipped = cfg.adversary.map_or(0, |a| a.count);
    let clients = prep
        .plan
        .assignments
        .iter()
        .enumerate()
        .map(|(id, indices)| {
            let data = prep.train_set.gather(indices)?;
            Ok(match cfg.adversary {
                Some(adv) if id < flipped => Client::sign_flipping(id, data, adv.scale),
                _ => Client::new(id, data),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let evaluator = Evaluator::new(&cfg.model, &prep.eval_set);
    let mut server = Server::new(cfg.aggregation, prep.initial.clone());
    let mut reports = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let active = participants(cfg, clients.len(), round);
        cfg.aggregation.validate(active.len())?;
        let updates = active
            .iter()
            .map(|&c| {
                let train = TrainConfig { seed: client_seed(cfg, round, c), ..cfg.train };
                clients[c].train(&cfg.model, server.global(), train, round)
            })
            .collect::<Result<Vec<_>>>()?;
        server.aggregate(&updates)?;
        reports.push(RoundReport {
            round,
            global_metrics: evaluator.metrics(server.global())?,
            per_client_loss: updates.iter().map(|u| (u.client_id, u.train_loss)).collect(),
            participating_clients: active,
        });
    }
    Ok((server.into_global(), reports))
}

/// Train one model on `data` for `cfg.rounds` epochs, reporting after each.
/// Baselines train without the proximal term.
fn run_pooled(cfg: &ExperimentConfig, prep: &PreparedExperiment, data: &[LabeledExample]) -> Result<RunOutput> {
    let train = TrainConfig { prox_mu: 0.0, seed: seed::derive(cfg.seed, stream::CENTRAL_TRAIN, 0), ..cfg.train };
    let mut trainer = LocalTrainer::new(&cfg.model, &prep.initial, data, train, &prep.initial)?;
    let evaluator = Evaluator::new(&cfg.model, &prep.eval_set);
    let mut reports = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let loss = trainer.run_epoch();
        reports.push(RoundReport {
            round,
            global_metrics: evaluator.metrics(trainer.params())?,
            per_client_loss: BTreeMap::from([(0, loss)]),
            participating_clients: alloc::vec![0],
        });
    }
    Ok((trainer.into_params()?, reports))
}

/// Centralized baseline on the whole training split; one report per epoch.
pub fn run_centralized(cfg: &ExperimentConfig) -> Result<RunOutput> {
    require_mode(cfg, Mode::Centralized)?;
    let prep = prepare(cfg)?;
    run_pooled(cfg, &prep, prep.train_set.examples())
}

/// Same loop as the centralized baseline, restricted to a single client's
/// random subset.
pub fn run_single_client(cfg: &ExperimentConfig) -> Result<RunOutput> {
    require_mode(cfg, Mode::SingleClient)?;
    let prep = prepare(cfg)?;
    if prep.plan.strategy != Strategy::SingleClient || prep.plan.n_clients() != 1 {
        return Err(Error::InvalidConfig("single-client mode needs a single_client plan".into()));
    }
    let data = prep.train_set.gather(&prep.plan.assignments[0])?;
    run_pooled(cfg, &prep, &data)
}

/// Dispatch on `cfg.mode`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    match cfg.mode {
        Mode::Federated => run_federated(cfg),
        Mode::Centralized => run_centralized(cfg),
        Mode::SingleClient => run_single_client(cfg),
    }
}

/// Reports of one run, labeled for comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRun {
    pub label: String,
    pub mode: Mode,
    pub reports: Vec<RoundReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub metrics: BTreeMap<String, f64>,
    /// `metric - centralized metric`; empty when no centralized run is present.
    pub delta_vs_centralized: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub metric_names: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

/// Final-round metrics per run, in input order, with deltas against the
/// first centralized run.
pub fn compare_runs(runs: &[LabeledRun]) -> Result<ComparisonTable> {
    let first = runs.first().ok_or(Error::EmptyInput)?;
    let finals = runs
        .iter()
        .map(|r| r.reports.last().map(|rep| &rep.global_metrics).ok_or(Error::EmptyInput))
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = finals[0].keys().cloned().collect();
    for (run, m) in runs.iter().zip(&finals) {
        if !m.keys().eq(names.iter()) {
            return Err(Error::MetricSetMismatch(alloc::format!("{} vs {}", first.label, run.label)));
        }
    }
    let baseline = runs.iter().zip(&finals).find(|(r, _)| r.mode == Mode::Centralized).map(|(_, m)| *m);
    let rows = runs
        .iter()
        .zip(&finals)
        .map(|(run, m)| ComparisonRow {
            label: run.label.clone(),
            metrics: (*m).clone(),
            delta_vs_centralized: baseline
                .map(|b| m.iter().map(|(k, v)| (k.clone(), v - b[k])).collect())
                .unwrap_or_default(),
        })
        .collect();
    Ok(ComparisonTable { metric_names: names, rows })
}
