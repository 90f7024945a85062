//! Governed model registry: a linear chain of released versions, pull-request
//! style contributions that must clear a benchmark gate, reviewer decisions,
//! and a contribution-token ledger.
//!
//! This is the in-memory state machine. Every mutation checks its
//! preconditions first and leaves the registry untouched on error, so a
//! persistence layer can append the resulting records only after success.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregationConfig, ClientUpdate};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::orchestrator::Evaluator;
use crate::params::ParameterVector;

pub const DEFAULT_TOKEN_REWARD: u64 = 10;

/// Release criteria every merged version must meet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    /// Where the benchmark lives; interpreted by the storage layer.
    pub benchmark_dataset_ref: String,
    pub primary_metric: String,
    pub min_score: f64,
    #[serde(default)]
    pub no_regression_metrics: Vec<String>,
    #[serde(default)]
    pub regression_tolerance: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            benchmark_dataset_ref: "benchmark.json".to_string(),
            primary_metric: "accuracy".to_string(),
            min_score: 0.7,
            no_regression_metrics: alloc::vec!["accuracy".to_string()],
            regression_tolerance: 0.01,
        }
    }
}

/// Names of the metrics the gate can evaluate for `spec`.
pub fn gate_metric_names(spec: &ModelSpec) -> Vec<&'static str> {
    if spec.num_classes == 2 {
        alloc::vec!["accuracy", "f1"]
    } else {
        alloc::vec!["accuracy"]
    }
}

impl GateConfig {
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let known = gate_metric_names(spec);
        for name in core::iter::once(&self.primary_metric).chain(&self.no_regression_metrics) {
            if !known.contains(&name.as_str()) {
                return Err(Error::InvalidConfig(alloc::format!("gate metric {name} is not evaluated")));
            }
        }
        if !(self.regression_tolerance >= 0.0 && self.regression_tolerance.is_finite()) {
            return Err(Error::InvalidConfig("regression_tolerance must be non-negative".into()));
        }
        if !self.min_score.is_finite() {
            return Err(Error::InvalidConfig("min_score must be finite".into()));
        }
        Ok(())
    }
}

/// Registry-wide settings fixed at creation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrySettings {
    pub spec: ModelSpec,
    pub gate: GateConfig,
    /// Rule used to merge a contribution into the head.
    #[serde(default)]
    pub merge: AggregationConfig,
    /// Example count credited to the genesis model when weighting merges.
    pub genesis_examples: u64,
    #[serde(default = "default_reward")]
    pub token_reward: u64,
}

fn default_reward() -> u64 {
    DEFAULT_TOKEN_REWARD
}

impl RegistrySettings {
    pub fn new(spec: ModelSpec, gate: GateConfig, genesis_examples: u64) -> Self {
        Self { spec, gate, merge: AggregationConfig::fedavg(), genesis_examples, token_reward: DEFAULT_TOKEN_REWARD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVersion {
    pub version_id: u64,
    pub parent: Option<u64>,
    pub checkpoint_ref: String,
    pub spec: ModelSpec,
    pub benchmark_scores: BTreeMap<String, f64>,
    pub contributor: String,
    pub created_at: u64,
    /// What the version adds.
    pub notes: String,
    /// Example count behind this version, used to weight the next merge.
    pub accumulated_examples: u64,
    /// Contribution merged to produce this version (none for genesis).
    pub contribution_id: Option<u64>,
}

pub fn checkpoint_ref_for_version(version_id: u64) -> String {
    alloc::format!("checkpoints/version-{version_id:06}.json")
}

pub fn checkpoint_ref_for_contribution(contribution_id: u64) -> String {
    alloc::format!("checkpoints/contribution-{contribution_id:06}.json")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContributionStatus {
    Pending,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricChange {
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    /// Benchmark metrics by name; metrics on a contributed test set are
    /// prefixed with `new_test.`.
    pub metrics: BTreeMap<String, MetricChange>,
    pub passed: bool,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub contribution_id: u64,
    pub contributor: String,
    pub base_version: u64,
    pub update_ref: String,
    pub claimed_num_examples: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_test_set_ref: Option<String>,
    #[serde(default)]
    pub notes: String,
    pub status: ContributionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate_report: Option<GateReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviewer: Option<String>,
}

/// What a contributor hands in.
#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    pub contributor: String,
    pub base_version: u64,
    pub update: ParameterVector,
    pub claimed_num_examples: u64,
    pub new_test_set: Option<Dataset>,
    pub new_test_set_ref: Option<String>,
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub seq: u64,
    pub contributor: String,
    pub contribution_id: u64,
    pub tokens: u64,
    pub reason: String,
}

/// Append-only token ledger. Balances are always recomputed from events.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    events: Vec<LedgerEvent>,
}

impl Ledger {
    /// Rebuild from stored events; sequence numbers must run 0, 1, 2, ...
    pub fn from_events(events: Vec<LedgerEvent>) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            if e.seq != i as u64 {
                return Err(Error::CorruptChain(alloc::format!("ledger event {i} has seq {}", e.seq)));
            }
            if e.tokens == 0 {
                return Err(Error::CorruptChain(alloc::format!("ledger event {i} awards no tokens")));
            }
        }
        Ok(Self { events })
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    pub fn balances(&self) -> BTreeMap<String, u64> {
        self.events.iter().fold(BTreeMap::new(), |mut acc, e| {
            *acc.entry(e.contributor.clone()).or_default() += e.tokens;
            acc
        })
    }

    pub fn balance(&self, contributor: &str) -> u64 {
        self.events.iter().filter(|e| e.contributor == contributor).map(|e| e.tokens).sum()
    }

    fn append(&mut self, contributor: &str, contribution_id: u64, tokens: u64, reason: &str) -> Result<LedgerEvent> {
        if tokens == 0 {
            return Err(Error::NonPositiveAmount);
        }
        let event = LedgerEvent {
            seq: self.events.len() as u64,
            contributor: contributor.to_string(),
            contribution_id,
            tokens,
            reason: reason.to_string(),
        };
        self.events.push(event.clone());
        Ok(event)
    }
}

/// Outcome of an accepted decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    pub version: ModelVersion,
    pub params: ParameterVector,
    pub reward: LedgerEvent,
}

/// Checks that versions form a chain from genesis: ids 0, 1, 2, ... and each
/// parent is the previous id.
pub fn verify_chain(versions: &[ModelVersion]) -> Result<()> {
    let genesis = versions.first().ok_or_else(|| Error::CorruptChain("no genesis version".into()))?;
    if genesis.version_id != 0 || genesis.parent.is_some() {
        return Err(Error::CorruptChain("first version is not a genesis record".into()));
    }
    for (i, pair) in versions.windows(2).enumerate() {
        let (prev, next) = (&pair[0], &pair[1]);
        if next.version_id != prev.version_id + 1 {
            return Err(Error::CorruptChain(alloc::format!(
                "version {} follows {} at position {}",
                next.version_id,
                prev.version_id,
                i + 1
            )));
        }
        if next.parent != Some(prev.version_id) {
            return Err(Error::CorruptChain(alloc::format!(
                "version {} names parent {:?}, expected {}",
                next.version_id,
                next.parent,
                prev.version_id
            )));
        }
        if next.spec != genesis.spec {
            return Err(Error::CorruptChain(alloc::format!("version {} changes the model spec", next.version_id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Registry {
    settings: RegistrySettings,
    versions: Vec<ModelVersion>,
    version_params: BTreeMap<u64, ParameterVector>,
    contributions: BTreeMap<u64, Contribution>,
    updates: BTreeMap<u64, ParameterVector>,
    test_sets: BTreeMap<u64, Dataset>,
    ledger: Ledger,
}

impl Registry {
    /// New registry whose only version is the genesis model.
    pub fn init(
        settings: RegistrySettings,
        genesis_params: ParameterVector,
        contributor: &str,
        created_at: u64,
    ) -> Result<Self> {
        settings.spec.validate()?;
        settings.gate.validate(&settings.spec)?;
        settings.merge.validate(2)?;
        settings.spec.ensure_params(&genesis_params)?;
        let genesis = ModelVersion {
            version_id: 0,
            parent: None,
            checkpoint_ref: checkpoint_ref_for_version(0),
            spec: settings.spec,
            benchmark_scores: BTreeMap::new(),
            contributor: contributor.to_string(),
            created_at,
            notes: "genesis".to_string(),
            accumulated_examples: settings.genesis_examples,
            contribution_id: None,
        };
        Ok(Self {
            settings,
            versions: alloc::vec![genesis],
            version_params: BTreeMap::from([(0, genesis_params)]),
            contributions: BTreeMap::new(),
            updates: BTreeMap::new(),
            test_sets: BTreeMap::new(),
            ledger: Ledger::default(),
        })
    }

    /// Reassemble a registry from stored records, verifying the chain and
    /// that every referenced checkpoint is present and layout-compatible.
    pub fn from_parts(
        settings: RegistrySettings,
        versions: Vec<ModelVersion>,
        version_params: BTreeMap<u64, ParameterVector>,
        contributions: Vec<Contribution>,
        updates: BTreeMap<u64, ParameterVector>,
        test_sets: BTreeMap<u64, Dataset>,
        ledger: Ledger,
    ) -> Result<Self> {
        verify_chain(&versions)?;
        if versions[0].spec != settings.spec {
            return Err(Error::CorruptChain("genesis spec differs from registry settings".into()));
        }
        for v in &versions {
            let params = version_params.get(&v.version_id).ok_or(Error::UnknownVersion(v.version_id))?;
            settings.spec.ensure_params(params)?;
        }
        let mut by_id = BTreeMap::new();
        for c in contributions {
            if !updates.contains_key(&c.contribution_id) {
                return Err(Error::UnknownContribution(c.contribution_id));
            }
            by_id.insert(c.contribution_id, c);
        }
        for v in versions.iter().skip(1) {
            let merged = v.contribution_id.and_then(|id| by_id.get(&id));
            if merged.map(|c| c.status) != Some(ContributionStatus::Accepted) {
                return Err(Error::CorruptChain(alloc::format!(
                    "version {} does not come from an accepted contribution",
                    v.version_id
                )));
            }
        }
        Ok(Self { settings, versions, version_params, contributions: by_id, updates, test_sets, ledger })
    }

    pub fn settings(&self) -> &RegistrySettings {
        &self.settings
    }

    pub fn versions(&self) -> &[ModelVersion] {
        &self.versions
    }

    pub fn head(&self) -> &ModelVersion {
        self.versions.last().expect("registry always holds genesis")
    }

    pub fn params(&self, version_id: u64) -> Result<&ParameterVector> {
        self.version_params.get(&version_id).ok_or(Error::UnknownVersion(version_id))
    }

    pub fn head_params(&self) -> &ParameterVector {
        &self.version_params[&self.head().version_id]
    }

    pub fn contribution(&self, id: u64) -> Result<&Contribution> {
        self.contributions.get(&id).ok_or(Error::UnknownContribution(id))
    }

    pub fn contributions(&self) -> impl Iterator<Item = &Contribution> {
        self.contributions.values()
    }

    pub fn update_params(&self, id: u64) -> Result<&ParameterVector> {
        self.updates.get(&id).ok_or(Error::UnknownContribution(id))
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    fn next_contribution_id(&self) -> u64 {
        self.contributions.keys().next_back().map_or(1, |id| id + 1)
    }

    fn require_head(&self, base: u64) -> Result<()> {
        let head = self.head().version_id;
        if base == head {
            Ok(())
        } else {
            Err(Error::StaleBase { base, head })
        }
    }

    /// Record a pending contribution. The model does not change.
    pub fn submit(&mut self, submission: Submission) -> Result<u64> {
        self.require_head(submission.base_version)?;
        self.settings.spec.ensure_params(&submission.update)?;
        if submission.claimed_num_examples == 0 {
            return Err(Error::ZeroExamples);
        }
        if submission.contributor.is_empty() {
            return Err(Error::InvalidConfig("contributor must be named".into()));
        }
        if let Some(test) = &submission.new_test_set {
            if test.feature_dim() != self.settings.spec.feature_dim
                || test.num_classes() != self.settings.spec.num_classes
            {
                return Err(Error::InvalidConfig("new test set does not match the model spec".into()));
            }
        }
        let id = self.next_contribution_id();
        let has_test = submission.new_test_set.is_some();
        let contribution = Contribution {
            contribution_id: id,
            contributor: submission.contributor,
            base_version: submission.base_version,
            update_ref: checkpoint_ref_for_contribution(id),
            claimed_num_examples: submission.claimed_num_examples,
            new_test_set_ref: if has_test {
                Some(
                    submission.new_test_set_ref.unwrap_or_else(|| alloc::format!("testsets/contribution-{id:06}.json")),
                )
            } else {
                None
            },
            notes: submission.notes,
            status: ContributionStatus::Pending,
            gate_report: None,
            reviewer: None,
        };
        self.contributions.insert(id, contribution);
        self.updates.insert(id, submission.update);
        if let Some(test) = submission.new_test_set {
            self.test_sets.insert(id, test);
        }
        Ok(id)
    }

    fn pending(&self, id: u64) -> Result<&Contribution> {
        let c = self.contribution(id)?;
        if c.status != ContributionStatus::Pending {
            return Err(Error::NotPending(id));
        }
        Ok(c)
    }

    /// Head and contribution merged with the registry's merge rule, weighted
    /// by the head's accumulated examples and the claimed examples.
    pub fn merge_candidate(&self, id: u64) -> Result<ParameterVector> {
        let c = self.contribution(id)?;
        let head = self.head();
        let updates = [
            ClientUpdate {
                client_id: 0,
                round: head.version_id as usize,
                params: self.head_params().clone(),
                num_examples: head.accumulated_examples.max(1) as usize,
                train_loss: 0.0,
            },
            ClientUpdate {
                client_id: 1,
                round: head.version_id as usize,
                params: self.update_params(id)?.clone(),
                num_examples: c.claimed_num_examples as usize,
                train_loss: 0.0,
            },
        ];
        self.settings.merge.aggregate(&updates)
    }

    fn gate_metrics(&self, params: &ParameterVector, data: &Dataset) -> Result<BTreeMap<String, f64>> {
        let mut m = Evaluator::new(&self.settings.spec, data.examples()).metrics(params)?;
        m.retain(|k, _| gate_metric_names(&self.settings.spec).contains(&k.as_str()));
        Ok(m)
    }

    /// Score head and candidate on the benchmark (and the contributed test
    /// set, if any) and decide PASS/FAIL. The report is stored on the
    /// contribution.
    pub fn evaluate_gate(&mut self, id: u64, benchmark: &Dataset) -> Result<GateReport> {
        let c = self.pending(id)?;
        self.require_head(c.base_version)?;
        if benchmark.feature_dim() != self.settings.spec.feature_dim
            || benchmark.num_classes() != self.settings.spec.num_classes
        {
            return Err(Error::MissingBenchmark("benchmark does not match the model spec".into()));
        }
        let candidate = self.merge_candidate(id)?;
        let before = self.gate_metrics(self.head_params(), benchmark)?;
        let after = self.gate_metrics(&candidate, benchmark)?;
        let mut metrics: BTreeMap<String, MetricChange> =
            before.iter().map(|(k, &b)| (k.clone(), MetricChange { before: b, after: after[k] })).collect();
        if let Some(test) = self.test_sets.get(&id) {
            let tb = self.gate_metrics(self.head_params(), test)?;
            let ta = self.gate_metrics(&candidate, test)?;
            for (k, &b) in &tb {
                metrics.insert(alloc::format!("new_test.{k}"), MetricChange { before: b, after: ta[k] });
            }
        }
        let gate = &self.settings.gate;
        let mut failures = Vec::new();
        let primary = metrics
            .get(&gate.primary_metric)
            .ok_or_else(|| Error::MissingBenchmark(alloc::format!("metric {} not evaluated", gate.primary_metric)))?;
        if primary.after < gate.min_score {
            failures.push(alloc::format!(
                "{} {:.6} below minimum {:.6}",
                gate.primary_metric,
                primary.after,
                gate.min_score
            ));
        }
        for name in &gate.no_regression_metrics {
            let change = metrics
                .get(name)
                .ok_or_else(|| Error::MissingBenchmark(alloc::format!("metric {name} not evaluated")))?;
            if change.before - change.after > gate.regression_tolerance {
                failures.push(alloc::format!("{name} regressed from {:.6} to {:.6}", change.before, change.after));
            }
        }
        let report = GateReport { metrics, passed: failures.is_empty(), failures };
        if let Some(c) = self.contributions.get_mut(&id) {
            c.gate_report = Some(report.clone());
        }
        Ok(report)
    }

    /// Accept or reject a gated contribution. Accepting creates the next
    /// version from the merge candidate and awards the contributor tokens.
    pub fn decide(&mut self, id: u64, verdict: Verdict, reviewer: &str, created_at: u64) -> Result<Option<Merge>> {
        let c = self.pending(id)?;
        let report = c.gate_report.as_ref().ok_or(Error::NoGateReport(id))?;
        if verdict == Verdict::Reject {
            let c = self.contributions.get_mut(&id).expect("checked above");
            c.status = ContributionStatus::Rejected;
            c.reviewer = Some(reviewer.to_string());
            return Ok(None);
        }
        if !report.passed {
            return Err(Error::GateFailed(id));
        }
        self.require_head(c.base_version)?;
        let params = self.merge_candidate(id)?;
        let head = self.head();
        let version = ModelVersion {
            version_id: head.version_id + 1,
            parent: Some(head.version_id),
            checkpoint_ref: checkpoint_ref_for_version(head.version_id + 1),
            spec: self.settings.spec,
            benchmark_scores: report
                .metrics
                .iter()
                .filter(|(k, _)| !k.starts_with("new_test."))
                .map(|(k, m)| (k.clone(), m.after))
                .collect(),
            contributor: c.contributor.clone(),
            created_at,
            notes: c.notes.clone(),
            accumulated_examples: head.accumulated_examples + c.claimed_num_examples,
            contribution_id: Some(id),
        };
        let contributor = c.contributor.clone();
        {
            let c = self.contributions.get_mut(&id).expect("checked above");
            c.status = ContributionStatus::Accepted;
            c.reviewer = Some(reviewer.to_string());
        }
        self.versions.push(version.clone());
        self.version_params.insert(version.version_id, params.clone());
        let reward = self.award_tokens(&contributor, id, self.settings.token_reward)?;
        Ok(Some(Merge { version, params, reward }))
    }

    /// Credit `amount` tokens for an accepted contribution.
    pub fn award_tokens(&mut self, contributor: &str, contribution_id: u64, amount: u64) -> Result<LedgerEvent> {
        if amount == 0 {
            return Err(Error::NonPositiveAmount);
        }
        let c = self.contribution(contribution_id)?;
        if c.status != ContributionStatus::Accepted {
            return Err(Error::NotAccepted(contribution_id));
        }
        self.ledger.append(contributor, contribution_id, amount, "accepted contribution")
    }

    /// Versions from genesis to head, each with the contribution it merged.
    pub fn history(&self) -> Result<Vec<(ModelVersion, Option<Contribution>)>> {
        verify_chain(&self.versions)?;
        self.versions
            .iter()
            .map(|v| {
                let c = match v.contribution_id {
                    Some(id) => Some(self.contribution(id)?.clone()),
                    None => None,
                };
                Ok((v.clone(), c))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::aggregate_fedavg;
    use crate::model::{self, init_params};
    use crate::synthetic::{self, CorpusConfig};
    use crate::train::{local_train, TrainConfig};
    use proptest::prelude::*;

    fn spec() -> ModelSpec {
        ModelSpec::logistic(8, 3)
    }

    fn pool() -> Dataset {
        synthetic::generate(&CorpusConfig {
            n_examples: 3000,
            feature_dim: 8,
            num_classes: 3,
            n_owners: 4,
            class_separation: 1.0,
            seed: 0,
            ..Default::default()
        })
        .unwrap()
    }

    /// Disjoint 200-example slices of one corpus; slice 0 is the benchmark.
    fn corpus(slice: u64) -> Dataset {
        let start = 200 * slice as usize;
        pool().subset(&(start..start + 200).collect::<Vec<_>>()).unwrap()
    }

    fn benchmark() -> Dataset {
        corpus(0)
    }

    fn trained(slice: u64) -> ParameterVector {
        let s = spec();
        let init = init_params(&s, slice).unwrap();
        let data = corpus(slice);
        let cfg = TrainConfig { epochs: 10, batch_size: 16, learning_rate: 0.2, prox_mu: 0.0, seed: slice };
        local_train(&s, &init, data.examples(), &cfg, &init).unwrap().0
    }

    fn registry() -> Registry {
        let settings = RegistrySettings::new(spec(), GateConfig::default(), 500);
        Registry::init(settings, trained(1), "founders", 0).unwrap()
    }

    fn submission(base: u64, update: ParameterVector, n: u64) -> Submission {
        Submission {
            contributor: "team-b".into(),
            base_version: base,
            update,
            claimed_num_examples: n,
            new_test_set: None,
            new_test_set_ref: None,
            notes: "more data".into(),
        }
    }

    #[test]
    fn init_has_only_genesis() {
        let r = registry();
        let h = r.history().unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].0.version_id, 0);
        assert_eq!(h[0].0.parent, None);
        assert!(h[0].1.is_none());
    }

    #[test]
    fn gate_config_must_name_evaluated_metrics() {
        let gate = GateConfig { primary_metric: "bleu4".into(), ..GateConfig::default() };
        assert!(gate.validate(&spec()).is_err());
        let f1 = GateConfig { primary_metric: "f1".into(), ..GateConfig::default() };
        assert!(f1.validate(&spec()).is_err());
        assert!(f1.validate(&ModelSpec::logistic(3, 2)).is_ok());
    }

    #[test]
    fn stale_base_and_layout_checked_on_submit() {
        let mut r = registry();
        let bad = init_params(&ModelSpec::logistic(8, 2), 0).unwrap();
        assert_eq!(r.submit(submission(0, bad, 10)), Err(Error::LayoutMismatch));
        assert_eq!(r.submit(submission(3, trained(2), 10)), Err(Error::StaleBase { base: 3, head: 0 }));
        assert_eq!(r.submit(submission(0, trained(2), 0)), Err(Error::ZeroExamples));
        let id = r.submit(submission(0, trained(2), 10)).unwrap();
        assert_eq!(r.contribution(id).unwrap().status, ContributionStatus::Pending);
        assert_eq!(r.head().version_id, 0);
    }

    #[test]
    fn identical_update_changes_nothing() {
        let mut r = registry();
        let head = r.head_params().clone();
        let id = r.submit(submission(0, head, 1_000)).unwrap();
        let report = r.evaluate_gate(id, &benchmark()).unwrap();
        for m in report.metrics.values() {
            assert_eq!(m.before, m.after);
        }
        assert_eq!(report.passed, report.metrics["accuracy"].before >= 0.7);
    }

    #[test]
    fn zero_update_keeps_logistic_decisions() {
        // the merge is a positive multiple of the head, so argmax is unchanged
        let mut r = registry();
        let zeros = ParameterVector::zeros(spec().layout());
        let id = r.submit(submission(0, zeros, 1_000_000)).unwrap();
        let report = r.evaluate_gate(id, &benchmark()).unwrap();
        assert_eq!(report.metrics["accuracy"].before, report.metrics["accuracy"].after);
    }

    #[test]
    fn zero_update_with_huge_claim_fails_gate() {
        let s = ModelSpec::mlp(8, 6, 3);
        let init = init_params(&s, 4).unwrap();
        let cfg = TrainConfig { epochs: 20, batch_size: 16, learning_rate: 0.2, prox_mu: 0.0, seed: 4 };
        let head = local_train(&s, &init, corpus(1).examples(), &cfg, &init).unwrap().0;
        let mut r = Registry::init(RegistrySettings::new(s, GateConfig::default(), 500), head, "founders", 0).unwrap();
        let zeros = ParameterVector::zeros(s.layout());
        let id = r.submit(submission(0, zeros, 100_000_000)).unwrap();
        let report = r.evaluate_gate(id, &benchmark()).unwrap();
        assert!(report.metrics["accuracy"].before >= 0.7);
        assert!(!report.passed);
        assert!(report.failures.iter().any(|f| f.contains("below minimum")));
        assert_eq!(r.decide(id, Verdict::Accept, "committee", 1), Err(Error::GateFailed(id)));
        assert_eq!(r.decide(id, Verdict::Reject, "committee", 1).unwrap(), None);
        assert_eq!(r.versions().len(), 1);
        assert!(r.ledger().events().is_empty());
        assert_eq!(r.decide(id, Verdict::Reject, "committee", 1), Err(Error::NotPending(id)));
    }

    #[test]
    fn accept_creates_version_and_awards_tokens() {
        let mut r = registry();
        let id = r.submit(submission(0, trained(2), 500)).unwrap();
        assert_eq!(r.decide(id, Verdict::Accept, "committee", 1), Err(Error::NoGateReport(id)));
        assert!(r.evaluate_gate(id, &benchmark()).unwrap().passed);
        let merge = r.decide(id, Verdict::Accept, "committee", 5).unwrap().unwrap();
        assert_eq!(merge.version.version_id, 1);
        assert_eq!(merge.version.parent, Some(0));
        assert_eq!(merge.version.accumulated_examples, 1_000);
        assert!(merge.version.benchmark_scores["accuracy"] >= 0.7);
        assert_eq!(r.ledger().balance("team-b"), 10);
        assert_eq!(r.contribution(id).unwrap().status, ContributionStatus::Accepted);
        assert_eq!(r.award_tokens("team-b", id, 5).unwrap().tokens, 5);
        assert_eq!(r.ledger().balance("team-b"), 15);
        assert_eq!(r.award_tokens("team-b", id, 0), Err(Error::NonPositiveAmount));
    }

    #[test]
    fn tokens_only_for_accepted() {
        let mut r = registry();
        let id = r.submit(submission(0, trained(2), 10)).unwrap();
        assert_eq!(r.award_tokens("team-b", id, 10), Err(Error::NotAccepted(id)));
        assert_eq!(r.award_tokens("team-b", 99, 10), Err(Error::UnknownContribution(99)));
    }

    #[test]
    fn concurrent_submissions_one_merges_other_goes_stale() {
        let mut r = registry();
        let a = r.submit(submission(0, trained(2), 100)).unwrap();
        let b = r.submit(submission(0, trained(3), 100)).unwrap();
        assert!(r.evaluate_gate(a, &benchmark()).unwrap().passed);
        assert!(r.evaluate_gate(b, &benchmark()).unwrap().passed);
        r.decide(a, Verdict::Accept, "committee", 1).unwrap();
        assert_eq!(r.decide(b, Verdict::Accept, "committee", 2), Err(Error::StaleBase { base: 0, head: 1 }));
        assert_eq!(r.contribution(b).unwrap().status, ContributionStatus::Pending);
        assert_eq!(r.versions().len(), 2);
    }

    #[test]
    fn new_test_set_reported_separately() {
        let mut r = registry();
        let mut sub = submission(0, trained(2), 100);
        sub.new_test_set = Some(corpus(11));
        let id = r.submit(sub).unwrap();
        let report = r.evaluate_gate(id, &benchmark()).unwrap();
        assert!(report.metrics.contains_key("new_test.accuracy"));
        r.decide(id, Verdict::Accept, "c", 1).unwrap();
        assert!(!r.head().benchmark_scores.contains_key("new_test.accuracy"));
    }

    #[test]
    fn history_after_three_merges() {
        let mut r = registry();
        for k in 0..3u64 {
            let head = r.head().version_id;
            let id = r.submit(submission(head, trained(10 + k), 200)).unwrap();
            assert!(r.evaluate_gate(id, &benchmark()).unwrap().passed);
            r.decide(id, Verdict::Accept, "c", k).unwrap();
        }
        let h = r.history().unwrap();
        assert_eq!(h.len(), 4);
        assert!(h.windows(2).all(|w| w[1].0.version_id > w[0].0.version_id));
        let total: u64 = r.ledger().balances().values().sum();
        assert_eq!(total, r.ledger().events().iter().map(|e| e.tokens).sum());
        // gate soundness: re-evaluating every merged version clears the minimum
        for (v, _) in h.iter().skip(1) {
            let acc =
                model::evaluate(&spec(), r.params(v.version_id).unwrap(), benchmark().examples()).unwrap().accuracy;
            assert!(acc >= r.settings().gate.min_score);
            assert_eq!(acc, v.benchmark_scores["accuracy"]);
        }
    }

    #[test]
    fn broken_parent_link_is_detected() {
        let mut r = registry();
        let id = r.submit(submission(0, trained(2), 100)).unwrap();
        r.evaluate_gate(id, &benchmark()).unwrap();
        r.decide(id, Verdict::Accept, "c", 1).unwrap();
        let mut versions = r.versions().to_vec();
        versions[1].parent = Some(7);
        assert!(matches!(verify_chain(&versions), Err(Error::CorruptChain(_))));
        versions[1].parent = None;
        assert!(matches!(verify_chain(&versions), Err(Error::CorruptChain(_))));
    }

    #[test]
    fn ledger_replay_reproduces_balances() {
        let mut l = Ledger::default();
        l.append("a", 1, 10, "x").unwrap();
        l.append("b", 2, 3, "x").unwrap();
        l.append("a", 3, 5, "x").unwrap();
        let replayed = Ledger::from_events(l.events().to_vec()).unwrap();
        assert_eq!(replayed.balances(), l.balances());
        assert_eq!(l.balance("a"), 15);
        let mut bad = l.events().to_vec();
        bad.swap(0, 1);
        assert!(Ledger::from_events(bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn merge_candidate_is_fedavg_of_head_and_update(
            head_vals in prop::collection::vec(-3.0f64..3.0, 27),
            upd_vals in prop::collection::vec(-3.0f64..3.0, 27),
            genesis_n in 1u64..10_000,
            claimed in 1u64..10_000,
        ) {
            let s = spec();
            let head = ParameterVector::new(s.layout(), head_vals).unwrap();
            let upd = ParameterVector::new(s.layout(), upd_vals).unwrap();
            let mut r = Registry::init(RegistrySettings::new(s, GateConfig::default(), genesis_n), head.clone(), "g", 0).unwrap();
            let id = r.submit(submission(0, upd.clone(), claimed)).unwrap();
            let expected = aggregate_fedavg(&[
                ClientUpdate { client_id: 0, round: 0, params: head, num_examples: genesis_n as usize, train_loss: 0.0 },
                ClientUpdate { client_id: 1, round: 0, params: upd, num_examples: claimed as usize, train_loss: 0.0 },
            ]).unwrap();
            prop_assert_eq!(r.merge_candidate(id).unwrap(), expected);
        }
    }
}
