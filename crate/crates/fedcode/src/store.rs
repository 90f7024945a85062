//! On-disk model registry.
//!
//! Layout of a registry directory:
//!
//! ```text
//! registry.json        settings: model spec, gate, merge rule, rewards
//! benchmark.json       gate benchmark dataset
//! versions.jsonl       one released version per line
//! contributions.jsonl  submitted / gated / decided events
//! ledger.jsonl         token awards
//! checkpoints/         version and contribution parameters
//! testsets/            test sets handed in with contributions
//! ```
//!
//! Every `.jsonl` line is `{"checksum": <sha256 hex>, "record": {...}}`,
//! with the checksum taken over the record's exact bytes. Opening a
//! registry replays all three logs, checks every checksum and the version
//! parent links, and fails on the first inconsistency.
//!
//! Writers take `.lock` (created exclusively), reload the state, apply one
//! operation, and append. The logs are never rewritten.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use fedcode_core::governance::{
    Contribution, ContributionStatus, GateReport, Ledger, LedgerEvent, Merge, ModelVersion, Submission,
};
use fedcode_core::{Dataset, ParameterVector, Registry, RegistrySettings, Verdict};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use crate::error::{io, json, Error, Result};
use crate::files::{read_checkpoint, read_json, write_checkpoint, write_json};

pub const SETTINGS_FILE: &str = "registry.json";
pub const BENCHMARK_FILE: &str = "benchmark.json";
pub const VERSIONS_FILE: &str = "versions.jsonl";
pub const CONTRIBUTIONS_FILE: &str = "contributions.jsonl";
pub const LEDGER_FILE: &str = "ledger.jsonl";
const LOCK_FILE: &str = ".lock";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SettingsFile {
    format_version: u32,
    settings: RegistrySettings,
}

/// Entries of the contributions log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ContributionEvent {
    Submitted { contribution: Contribution },
    Gated { contribution_id: u64, report: GateReport },
    Decided { contribution_id: u64, verdict: Verdict, reviewer: String },
}

#[derive(Deserialize)]
struct Line<'a> {
    checksum: String,
    #[serde(borrow)]
    record: &'a RawValue,
}

fn checksum(bytes: &str) -> String {
    hex::encode(Sha256::digest(bytes.as_bytes()))
}

fn encode_record<T: Serialize>(path: &Path, record: &T) -> Result<String> {
    let body = serde_json::to_string(record).map_err(json(path))?;
    Ok(format!("{{\"checksum\":\"{}\",\"record\":{}}}\n", checksum(&body), body))
}

fn append_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&encode_record(path, r)?);
    }
    let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io(path))?;
    file.write_all(text.as_bytes()).map_err(io(path))?;
    file.sync_data().map_err(io(path))
}

fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    let corrupt = |line: usize, reason: String| Error::Corrupt { path: path.into(), line, reason };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let line: Line = serde_json::from_str(l).map_err(|e| corrupt(i + 1, e.to_string()))?;
            if checksum(line.record.get()) != line.checksum {
                return Err(corrupt(i + 1, "checksum mismatch".into()));
            }
            serde_json::from_str(line.record.get()).map_err(|e| corrupt(i + 1, e.to_string()))
        })
        .collect()
}

/// Exclusive writer lock, released on drop.
struct WriteLock(PathBuf);

impl WriteLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(dir.into())),
            Err(e) => Err(io(&path)(e)),
        }
    }
}

impl Drop for WriteLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// A registry directory plus the state replayed from it.
#[derive(Debug)]
pub struct RegistryStore {
    dir: PathBuf,
    registry: Registry,
    benchmark: Dataset,
}

impl RegistryStore {
    /// Create a registry at `dir` with `genesis` as version 0. The benchmark
    /// is copied into the registry and the gate pointed at the copy.
    pub fn init(
        dir: &Path,
        mut settings: RegistrySettings,
        genesis: ParameterVector,
        benchmark: &Dataset,
        contributor: &str,
        created_at: u64,
    ) -> Result<Self> {
        if dir.join(SETTINGS_FILE).exists() || dir.join(VERSIONS_FILE).exists() {
            return Err(Error::RegistryExists(dir.into()));
        }
        settings.gate.benchmark_dataset_ref = BENCHMARK_FILE.to_string();
        let registry = Registry::init(settings.clone(), genesis, contributor, created_at)?;
        if benchmark.feature_dim() != settings.spec.feature_dim || benchmark.num_classes() != settings.spec.num_classes
        {
            return Err(fedcode_core::Error::MissingBenchmark("benchmark does not match the model spec".into()).into());
        }
        fs::create_dir_all(dir).map_err(io(dir))?;
        let _lock = WriteLock::acquire(dir)?;
        if dir.join(SETTINGS_FILE).exists() {
            return Err(Error::RegistryExists(dir.into()));
        }
        let genesis = registry.head();
        write_json(&dir.join(BENCHMARK_FILE), benchmark)?;
        write_checkpoint(&dir.join(&genesis.checkpoint_ref), &settings.spec, registry.head_params())?;
        append_records(&dir.join(VERSIONS_FILE), std::slice::from_ref(genesis))?;
        append_records::<ContributionEvent>(&dir.join(CONTRIBUTIONS_FILE), &[])?;
        append_records::<LedgerEvent>(&dir.join(LEDGER_FILE), &[])?;
        write_json(&dir.join(SETTINGS_FILE), &SettingsFile { format_version: FORMAT_VERSION, settings })?;
        Ok(Self { dir: dir.into(), registry, benchmark: benchmark.clone() })
    }

    /// Replay and verify the registry at `dir`.
    pub fn open(dir: &Path) -> Result<Self> {
        let settings_path = dir.join(SETTINGS_FILE);
        if !settings_path.exists() {
            return Err(Error::NoRegistry(dir.into()));
        }
        let file: SettingsFile = read_json(&settings_path)?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::FormatVersion { path: settings_path, found: file.format_version });
        }
        let settings = file.settings;
        let versions: Vec<ModelVersion> = read_records(&dir.join(VERSIONS_FILE))?;
        fedcode_core::governance::verify_chain(&versions)?;
        let mut version_params = BTreeMap::new();
        for v in &versions {
            version_params.insert(v.version_id, load_params(dir, &v.checkpoint_ref, &settings)?);
        }
        let contributions = replay_contributions(&dir.join(CONTRIBUTIONS_FILE))?;
        let mut updates = BTreeMap::new();
        let mut test_sets = BTreeMap::new();
        for c in &contributions {
            updates.insert(c.contribution_id, load_params(dir, &c.update_ref, &settings)?);
            if let Some(r) = &c.new_test_set_ref {
                test_sets.insert(c.contribution_id, read_json::<Dataset>(&dir.join(r))?);
            }
        }
        let ledger = Ledger::from_events(read_records(&dir.join(LEDGER_FILE))?)?;
        let benchmark: Dataset = read_json(&dir.join(&settings.gate.benchmark_dataset_ref))?;
        let registry =
            Registry::from_parts(settings, versions, version_params, contributions, updates, test_sets, ledger)?;
        Ok(Self { dir: dir.into(), registry, benchmark })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn benchmark(&self) -> &Dataset {
        &self.benchmark
    }

    pub fn head_checkpoint_path(&self) -> PathBuf {
        self.dir.join(&self.registry.head().checkpoint_ref)
    }

    /// Take the writer lock, reload from disk, then run `op`.
    fn write<R>(&mut self, op: impl FnOnce(&mut Self) -> Result<R>) -> Result<R> {
        let _lock = WriteLock::acquire(&self.dir)?;
        *self = Self::open(&self.dir)?;
        op(self)
    }

    pub fn submit(&mut self, submission: Submission) -> Result<u64> {
        self.write(|s| {
            let test_set = submission.new_test_set.clone();
            let id = s.registry.submit(submission)?;
            let c = s.registry.contribution(id)?.clone();
            write_checkpoint(&s.dir.join(&c.update_ref), &s.registry.settings().spec, s.registry.update_params(id)?)?;
            if let (Some(r), Some(t)) = (&c.new_test_set_ref, &test_set) {
                write_json(&s.dir.join(r), t)?;
            }
            append_records(&s.dir.join(CONTRIBUTIONS_FILE), &[ContributionEvent::Submitted { contribution: c }])?;
            Ok(id)
        })
    }

    pub fn evaluate_gate(&mut self, id: u64) -> Result<GateReport> {
        self.write(|s| {
            let report = s.registry.evaluate_gate(id, &s.benchmark)?;
            append_records(
                &s.dir.join(CONTRIBUTIONS_FILE),
                &[ContributionEvent::Gated { contribution_id: id, report: report.clone() }],
            )?;
            Ok(report)
        })
    }

    pub fn decide(&mut self, id: u64, verdict: Verdict, reviewer: &str, created_at: u64) -> Result<Option<Merge>> {
        self.write(|s| {
            let merge = s.registry.decide(id, verdict, reviewer, created_at)?;
            if let Some(m) = &merge {
                write_checkpoint(&s.dir.join(&m.version.checkpoint_ref), &s.registry.settings().spec, &m.params)?;
            }
            append_records(
                &s.dir.join(CONTRIBUTIONS_FILE),
                &[ContributionEvent::Decided { contribution_id: id, verdict, reviewer: reviewer.to_string() }],
            )?;
            if let Some(m) = &merge {
                append_records(&s.dir.join(VERSIONS_FILE), std::slice::from_ref(&m.version))?;
                append_records(&s.dir.join(LEDGER_FILE), std::slice::from_ref(&m.reward))?;
            }
            Ok(merge)
        })
    }

    /// Extra tokens for an accepted contribution.
    pub fn award_tokens(&mut self, contributor: &str, id: u64, amount: u64) -> Result<LedgerEvent> {
        self.write(|s| {
            let event = s.registry.award_tokens(contributor, id, amount)?;
            append_records(&s.dir.join(LEDGER_FILE), std::slice::from_ref(&event))?;
            Ok(event)
        })
    }
}

fn load_params(dir: &Path, reference: &str, settings: &RegistrySettings) -> Result<ParameterVector> {
    let path = dir.join(reference);
    let (spec, params) = read_checkpoint(&path)?;
    if spec != settings.spec {
        return Err(Error::CheckpointSpec { path });
    }
    Ok(params)
}

/// Rebuild contributions from the event log, enforcing the
/// pending -> gated -> decided order.
fn replay_contributions(path: &Path) -> Result<Vec<Contribution>> {
    let events: Vec<ContributionEvent> = read_records(path)?;
    let mut by_id: BTreeMap<u64, Contribution> = BTreeMap::new();
    for (i, event) in events.into_iter().enumerate() {
        let corrupt = |reason: String| Error::Corrupt { path: path.into(), line: i + 1, reason };
        match event {
            ContributionEvent::Submitted { contribution } => {
                let id = contribution.contribution_id;
                if contribution.status != ContributionStatus::Pending || contribution.gate_report.is_some() {
                    return Err(corrupt(format!("contribution {id} submitted in a decided state")));
                }
                if by_id.keys().next_back().is_some_and(|&last| id <= last) {
                    return Err(corrupt(format!("contribution id {id} is out of order")));
                }
                by_id.insert(id, contribution);
            }
            ContributionEvent::Gated { contribution_id, report } => {
                let c = by_id
                    .get_mut(&contribution_id)
                    .ok_or_else(|| corrupt(format!("unknown contribution {contribution_id}")))?;
                if c.status != ContributionStatus::Pending {
                    return Err(corrupt(format!("contribution {contribution_id} gated after decision")));
                }
                c.gate_report = Some(report);
            }
            ContributionEvent::Decided { contribution_id, verdict, reviewer } => {
                let c = by_id
                    .get_mut(&contribution_id)
                    .ok_or_else(|| corrupt(format!("unknown contribution {contribution_id}")))?;
                if c.status != ContributionStatus::Pending || c.gate_report.is_none() {
                    return Err(corrupt(format!("contribution {contribution_id} decided out of order")));
                }
                if verdict == Verdict::Accept && !c.gate_report.as_ref().is_some_and(|r| r.passed) {
                    return Err(corrupt(format!("contribution {contribution_id} accepted without passing the gate")));
                }
                c.status = match verdict {
                    Verdict::Accept => ContributionStatus::Accepted,
                    Verdict::Reject => ContributionStatus::Rejected,
                };
                c.reviewer = Some(reviewer);
            }
        }
    }
    Ok(by_id.into_values().collect())
}
