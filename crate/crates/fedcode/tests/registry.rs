use std::fs;
use std::path::Path;

use fedcode::files::read_checkpoint;
use fedcode::store::{CONTRIBUTIONS_FILE, LEDGER_FILE, VERSIONS_FILE};
use fedcode::{Error as StoreError, RegistryStore};
use fedcode_core::governance::{ContributionStatus, GateConfig, Submission};
use fedcode_core::model::init_params;
use fedcode_core::{
    local_train, synthetic, CorpusConfig, Dataset, Error, ModelSpec, ParameterVector, RegistrySettings, TrainConfig,
    Verdict,
};
use sha2::{Digest, Sha256};

struct Fixture {
    spec: ModelSpec,
    genesis: ParameterVector,
    slices: Vec<Dataset>,
}

fn fixture() -> Fixture {
    let corpus = synthetic::generate(&CorpusConfig {
        n_examples: 2500,
        feature_dim: 16,
        num_classes: 3,
        n_owners: 5,
        class_separation: 0.8,
        seed: 5,
        ..CorpusConfig::default()
    })
    .unwrap();
    let slices: Vec<Dataset> =
        (0..5).map(|k| corpus.subset(&(500 * k..500 * (k + 1)).collect::<Vec<_>>()).unwrap()).collect();
    let spec = ModelSpec::logistic(16, 3);
    let init = init_params(&spec, 0).unwrap();
    let genesis = local_train(&spec, &init, slices[0].examples(), &TrainConfig::default(), &init).unwrap().0;
    Fixture { spec, genesis, slices }
}

fn init(dir: &Path, fx: &Fixture) -> RegistryStore {
    let settings = RegistrySettings::new(fx.spec, GateConfig::default(), 500);
    RegistryStore::init(dir, settings, fx.genesis.clone(), &fx.slices[4], "founders", 0).unwrap()
}

fn tuned(fx: &Fixture, store: &RegistryStore, slice: usize) -> ParameterVector {
    let head = store.registry().head_params().clone();
    let cfg = TrainConfig { seed: slice as u64, ..TrainConfig::default() };
    local_train(&fx.spec, &head, fx.slices[slice].examples(), &cfg, &head).unwrap().0
}

fn submission(by: &str, base: u64, update: ParameterVector) -> Submission {
    Submission {
        contributor: by.into(),
        base_version: base,
        update,
        claimed_num_examples: 500,
        new_test_set: None,
        new_test_set_ref: None,
        notes: format!("update from {by}"),
    }
}

fn merge(store: &mut RegistryStore, by: &str, update: ParameterVector) -> u64 {
    let head = store.registry().head().version_id;
    let id = store.submit(submission(by, head, update)).unwrap();
    assert!(store.evaluate_gate(id).unwrap().passed);
    store.decide(id, Verdict::Accept, "committee", 10 + id).unwrap().unwrap();
    id
}

#[test]
fn init_creates_genesis_and_refuses_second_init() {
    let fx = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("reg");
    let store = init(&dir, &fx);
    let history = RegistryStore::open(&dir).unwrap().registry().history().unwrap();
    assert_eq!(history.len(), 1);
    assert_eq!(history[0].0.version_id, 0);
    assert_eq!(history[0].0.parent, None);
    let (_, genesis) = read_checkpoint(&store.head_checkpoint_path()).unwrap();
    assert_eq!(genesis, fx.genesis);
    let again = RegistryStore::init(
        &dir,
        RegistrySettings::new(fx.spec, GateConfig::default(), 1),
        fx.genesis.clone(),
        &fx.slices[4],
        "x",
        0,
    );
    assert!(matches!(again, Err(StoreError::RegistryExists(_))));
}

#[test]
fn open_missing_registry_fails() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(matches!(RegistryStore::open(tmp.path()), Err(StoreError::NoRegistry(_))));
}

#[test]
fn three_merges_survive_reopen() {
    let fx = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let mut store = init(tmp.path(), &fx);
    for (k, who) in ["ana", "ben", "ana"].iter().enumerate() {
        let update = tuned(&fx, &store, k + 1);
        merge(&mut store, who, update);
    }
    let reopened = RegistryStore::open(tmp.path()).unwrap();
    let history = reopened.registry().history().unwrap();
    assert_eq!(history.len(), 4);
    assert!(history.windows(2).all(|w| w[1].0.version_id == w[0].0.version_id + 1));
    assert!(history.iter().skip(1).all(|(_, c)| c.as_ref().unwrap().status == ContributionStatus::Accepted));
    assert_eq!(reopened.registry().ledger().balance("ana"), 20);
    assert_eq!(reopened.registry().ledger().balance("ben"), 10);
    assert_eq!(reopened.registry().head_params(), store.registry().head_params());
    assert_eq!(reopened.registry().head().accumulated_examples, 2000);
    // gate soundness against the stored benchmark
    for (v, _) in history.iter().skip(1) {
        let params = reopened.registry().params(v.version_id).unwrap();
        let acc = fedcode_core::model::evaluate(&fx.spec, params, reopened.benchmark().examples()).unwrap().accuracy;
        assert!(acc >= reopened.registry().settings().gate.min_score);
    }
}

#[test]
fn pending_and_rejected_state_persist() {
    let fx = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let mut store = init(tmp.path(), &fx);
    let a = store.submit(submission("ana", 0, tuned(&fx, &store, 1))).unwrap();
    let b = store.submit(submission("ben", 0, tuned(&fx, &store, 2))).unwrap();
    store.evaluate_gate(a).unwrap();
    store.decide(a, Verdict::Reject, "committee", 3).unwrap();
    let mut reopened = RegistryStore::open(tmp.path()).unwrap();
    assert_eq!(reopened.registry().contribution(a).unwrap().status, ContributionStatus::Rejected);
    assert_eq!(reopened.registry().contribution(b).unwrap().status, ContributionStatus::Pending);
    assert!(matches!(reopened.decide(a, Verdict::Accept, "committee", 4), Err(StoreError::Core(Error::NotPending(_)))));
    assert!(matches!(
        reopened.decide(b, Verdict::Accept, "committee", 4),
        Err(StoreError::Core(Error::NoGateReport(_)))
    ));
    assert!(reopened.evaluate_gate(b).unwrap().passed);
    assert!(reopened.decide(b, Verdict::Accept, "committee", 5).unwrap().is_some());
}

#[test]
fn concurrent_submissions_only_one_merges() {
    let fx = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let mut first = init(tmp.path(), &fx);
    let mut second = RegistryStore::open(tmp.path()).unwrap();
    let a = first.submit(submission("ana", 0, tuned(&fx, &first, 1))).unwrap();
    let b = second.submit(submission("ben", 0, tuned(&fx, &second, 2))).unwrap();
    assert_ne!(a, b);
    first.evaluate_gate(a).unwrap();
    second.evaluate_gate(b).unwrap();
    first.decide(a, Verdict::Accept, "committee", 1).unwrap();
    assert!(matches!(
        second.decide(b, Verdict::Accept, "committee", 2),
        Err(StoreError::Core(Error::StaleBase { base: 0, head: 1 }))
    ));
}

#[test]
fn extra_awards_need_accepted_contribution() {
    let fx = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let mut store = init(tmp.path(), &fx);
    let pending = store.submit(submission("ana", 0, tuned(&fx, &store, 1))).unwrap();
    assert!(matches!(store.award_tokens("ana", pending, 5), Err(StoreError::Core(Error::NotAccepted(_)))));
    store.evaluate_gate(pending).unwrap();
    store.decide(pending, Verdict::Accept, "committee", 1).unwrap();
    store.award_tokens("ana", pending, 5).unwrap();
    assert_eq!(RegistryStore::open(tmp.path()).unwrap().registry().ledger().balance("ana"), 15);
}

#[test]
fn new_test_set_is_stored_and_scored() {
    let fx = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let mut store = init(tmp.path(), &fx);
    let mut sub = submission("ana", 0, tuned(&fx, &store, 1));
    sub.new_test_set = Some(fx.slices[3].clone());
    let id = store.submit(sub).unwrap();
    let mut reopened = RegistryStore::open(tmp.path()).unwrap();
    let report = reopened.evaluate_gate(id).unwrap();
    assert!(report.metrics.contains_key("accuracy"));
    assert!(report.metrics.contains_key("new_test.accuracy"));
}

fn rewrite_line(path: &Path, index: usize, edit: impl Fn(&str) -> String) {
    let text = fs::read_to_string(path).unwrap();
    let lines: Vec<String> =
        text.lines().enumerate().map(|(i, l)| if i == index { edit(l) } else { l.to_string() }).collect();
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

/// Replace the record and recompute its checksum, as a careful forger would.
fn reseal(line: &str, edit: impl Fn(&str) -> String) -> String {
    let record_start = line.find("\"record\":").unwrap() + "\"record\":".len();
    let record = edit(&line[record_start..line.len() - 1]);
    let sum = hex::encode(Sha256::digest(record.as_bytes()));
    format!("{{\"checksum\":\"{sum}\",\"record\":{record}}}")
}

fn merged_registry(dir: &Path) -> Fixture {
    let fx = fixture();
    let mut store = init(dir, &fx);
    let update = tuned(&fx, &store, 1);
    merge(&mut store, "ana", update);
    fx
}

#[test]
fn tampered_parent_fails_checksum() {
    let tmp = tempfile::tempdir().unwrap();
    merged_registry(tmp.path());
    rewrite_line(&tmp.path().join(VERSIONS_FILE), 1, |l| l.replace("\"parent\":0", "\"parent\":5"));
    let err = RegistryStore::open(tmp.path()).unwrap_err();
    assert!(matches!(err, StoreError::Corrupt { line: 2, .. }), "{err}");
}

#[test]
fn resealed_parent_fails_chain_check() {
    let tmp = tempfile::tempdir().unwrap();
    merged_registry(tmp.path());
    rewrite_line(&tmp.path().join(VERSIONS_FILE), 1, |l| reseal(l, |r| r.replace("\"parent\":0", "\"parent\":5")));
    let err = RegistryStore::open(tmp.path()).unwrap_err();
    assert!(matches!(err, StoreError::Core(Error::CorruptChain(_))), "{err}");
}

#[test]
fn tampered_ledger_amount_is_detected() {
    let tmp = tempfile::tempdir().unwrap();
    merged_registry(tmp.path());
    rewrite_line(&tmp.path().join(LEDGER_FILE), 0, |l| l.replace("\"tokens\":10", "\"tokens\":1000"));
    assert!(matches!(RegistryStore::open(tmp.path()), Err(StoreError::Corrupt { .. })));
}

#[test]
fn forged_acceptance_of_failed_gate_is_detected() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixture();
    let mut store = init(tmp.path(), &fx);
    let junk = init_params(&fx.spec, 42).unwrap();
    let mut sub = submission("eve", 0, junk);
    sub.claimed_num_examples = 1_000_000;
    let id = store.submit(sub).unwrap();
    assert!(!store.evaluate_gate(id).unwrap().passed);
    store.decide(id, Verdict::Reject, "committee", 1).unwrap();
    rewrite_line(&tmp.path().join(CONTRIBUTIONS_FILE), 2, |l| {
        reseal(l, |r| r.replace("\"verdict\":\"reject\"", "\"verdict\":\"accept\""))
    });
    assert!(matches!(RegistryStore::open(tmp.path()), Err(StoreError::Corrupt { line: 3, .. })));
}

#[test]
fn writer_lock_blocks_second_writer() {
    let fx = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let mut store = init(tmp.path(), &fx);
    fs::write(tmp.path().join(".lock"), "").unwrap();
    let update = tuned(&fx, &store, 1);
    assert!(matches!(store.submit(submission("ana", 0, update.clone())), Err(StoreError::Locked(_))));
    fs::remove_file(tmp.path().join(".lock")).unwrap();
    store.submit(submission("ana", 0, update)).unwrap();
}
