//! Client data distribution strategies.
//!
//! Plans hold indices into a source [`Dataset`], never copies, so one
//! corpus can back many experiments.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::seed::{self, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Uniform,
    LabelImbalanced,
    QuantityImbalanced,
    ByRepository,
    SingleClient,
}

/// Strategy together with its parameters. This is what experiment configs
/// carry inline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum PartitionSpec {
    Uniform { n_clients: usize },
    LabelImbalanced { n_clients: usize, alpha: f64 },
    QuantityImbalanced { n_clients: usize, size_ratio: f64 },
    ByRepository { n_clients: usize },
    SingleClient { fraction: f64 },
}

impl PartitionSpec {
    pub fn strategy(&self) -> Strategy {
        match self {
            Self::Uniform { .. } => Strategy::Uniform,
            Self::LabelImbalanced { .. } => Strategy::LabelImbalanced,
            Self::QuantityImbalanced { .. } => Strategy::QuantityImbalanced,
            Self::ByRepository { .. } => Strategy::ByRepository,
            Self::SingleClient { .. } => Strategy::SingleClient,
        }
    }

    pub fn apply(&self, data: &Dataset, seed: u64) -> Result<PartitionPlan> {
        match *self {
            Self::Uniform { n_clients } => partition_uniform(data, n_clients, seed),
            Self::LabelImbalanced { n_clients, alpha } => partition_label_imbalanced(data, n_clients, alpha, seed),
            Self::QuantityImbalanced { n_clients, size_ratio } => {
                partition_quantity_imbalanced(data, n_clients, size_ratio, seed)
            }
            Self::ByRepository { n_clients } => partition_by_repository(data, n_clients, seed),
            Self::SingleClient { fraction } => select_single_client(data, fraction, seed),
        }
    }
}

/// Strategy-tagged assignment of example indices to clients. Client ids are
/// positions in `assignments`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub strategy: Strategy,
    pub seed: u64,
    pub params: PartitionSpec,
    pub assignments: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn n_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    /// Check the plan against the dataset it claims to index: nonempty
    /// clients, valid and pairwise-disjoint indices, and for the
    /// by-repository strategy, no owner spanning two clients.
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if self.assignments.is_empty() {
            return Err(Error::InvalidConfig("plan has no clients".into()));
        }
        if self.strategy != self.params.strategy() {
            return Err(Error::InvalidConfig("plan strategy disagrees with its parameters".into()));
        }
        let mut seen = vec![false; data.len()];
        for (client, list) in self.assignments.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::InvalidConfig(alloc::format!("client {client} has no examples")));
            }
            for &i in list {
                if i >= data.len() {
                    return Err(Error::TooFewExamples { needed: i + 1, available: data.len() });
                }
                if core::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidConfig(alloc::format!("index {i} assigned twice")));
                }
            }
        }
        if self.strategy == Strategy::ByRepository {
            let mut owner_client: BTreeMap<&str, usize> = BTreeMap::new();
            for (client, list) in self.assignments.iter().enumerate() {
                for &i in list {
                    let owner = data.examples()[i].repo_owner.as_str();
                    if *owner_client.entry(owner).or_insert(client) != client {
                        return Err(Error::InvalidConfig(alloc::format!("owner {owner} spans clients")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Per-client label proportions.
    pub fn label_proportions(&self, data: &Dataset) -> Vec<Vec<f64>> {
        self.assignments
            .iter()
            .map(|list| {
                let mut counts = vec![0usize; data.num_classes()];
                for &i in list {
                    counts[data.examples()[i].label] += 1;
                }
                counts.iter().map(|&c| c as f64 / list.len() as f64).collect()
            })
            .collect()
    }
}

fn global_proportions(data: &Dataset) -> Vec<f64> {
    data.class_counts().iter().map(|&c| c as f64 / data.len() as f64).collect()
}

/// Mean total-variation distance between each client's label mix and the
/// corpus-wide mix.
pub fn mean_label_tv_distance(plan: &PartitionPlan, data: &Dataset) -> f64 {
    let global = global_proportions(data);
    let props = plan.label_proportions(data);
    let total: f64 =
        props.iter().map(|p| 0.5 * p.iter().zip(&global).map(|(a, b)| libm::fabs(a - b)).sum::<f64>()).sum();
    total / props.len() as f64
}

fn check_clients(data: &Dataset, n_clients: usize) -> Result<()> {
    if n_clients < 2 {
        return Err(Error::InvalidConfig("at least 2 clients required".into()));
    }
    if data.len() < n_clients {
        return Err(Error::TooFewExamples { needed: n_clients, available: data.len() });
    }
    Ok(())
}

/// Example indices ordered so that every contiguous window has nearly the
/// corpus-wide label mix: each class is shuffled, then all examples are
/// sorted by their fractional position within their class.
fn interleaved_by_class(data: &Dataset, rng: &mut SimRng) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(data.len());
    for (class, mut members) in data.indices_by_class().into_iter().enumerate() {
        members.shuffle(rng);
        let n = members.len() as f64;
        for (pos, idx) in members.into_iter().enumerate() {
            keyed.push(((pos as f64 + 0.5) / n, class, idx));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, _, idx)| idx).collect()
}

fn sorted(mut assignments: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    for list in &mut assignments {
        list.sort_unstable();
    }
    assignments
}

/// Even split with stratified dealing: client sizes differ by at most one and
/// per-class counts per client differ by at most one.
pub fn partition_uniform(data: &Dataset, n_clients: usize, seed: u64) -> Result<PartitionPlan> {
    check_clients(data, n_clients)?;
    let mut rng = seed::rng(seed);
    let mut by_class = data.indices_by_class();
    let mut clients: Vec<usize> = (0..n_clients).collect();
    clients.shuffle(&mut rng);
    let mut assignments = vec![Vec::new(); n_clients];
    let mut slot = 0;
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for &idx in members.iter() {
            assignments[clients[slot % n_clients]].push(idx);
            slot += 1;
        }
    }
    Ok(PartitionPlan {
        strategy: Strategy::Uniform,
        seed,
        params: PartitionSpec::Uniform { n_clients },
        assignments: sorted(assignments),
    })
}

fn sample_dirichlet(concentration: &[f64], rng: &mut SimRng) -> Result<Vec<f64>> {
    let mut draws = Vec::with_capacity(concentration.len());
    for &a in concentration {
        let gamma = Gamma::new(a, 1.0).map_err(|_| Error::InvalidConfig("invalid Dirichlet concentration".into()))?;
        draws.push(gamma.sample(rng));
    }
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        Ok(draws.into_iter().map(|g| g / total).collect())
    } else {
        // every gamma draw underflowed; the limit is a one-hot mix
        let mut onehot = vec![0.0; concentration.len()];
        onehot[rng.random_range(0..concentration.len())] = 1.0;
        Ok(onehot)
    }
}

/// Similar client sizes, skewed label mixes.
///
/// Each client draws a label mix from `Dirichlet(alpha * C * q)`, where `q`
/// is the corpus label distribution (symmetric `Dirichlet(alpha)` on a
/// balanced corpus). Clients then take turns claiming one example at a time,
/// each choosing the available class furthest below its target mix. Sizes
/// end up equal to within one example and the whole corpus is used; once a
/// class is exhausted, clients fall back to the remaining classes.
pub fn partition_label_imbalanced(data: &Dataset, n_clients: usize, alpha: f64, seed: u64) -> Result<PartitionPlan> {
    check_clients(data, n_clients)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidConfig("alpha must be positive".into()));
    }
    let num_classes = data.num_classes();
    let mut by_class = data.indices_by_class();
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < n_clients {
            return Err(Error::ClassTooSmall { class, count: members.len(), needed: n_clients });
        }
    }
    let mut rng = seed::rng(seed);
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }
    let scale = alpha * num_classes as f64;
    let concentration: Vec<f64> = global_proportions(data).iter().map(|q| scale * q).collect();
    let mixes: Vec<Vec<f64>> =
        (0..n_clients).map(|_| sample_dirichlet(&concentration, &mut rng)).collect::<Result<_>>()?;

    let mut counts = vec![vec![0usize; num_classes]; n_clients];
    let mut assignments = vec![Vec::new(); n_clients];
    let mut remaining = data.len();
    let mut order: Vec<usize> = (0..n_clients).collect();
    while remaining > 0 {
        order.shuffle(&mut rng);
        for &client in &order {
            if remaining == 0 {
                break;
            }
            let taken = assignments[client].len() as f64 + 1.0;
            let mut best: Option<(usize, f64)> = None;
            for class in 0..num_classes {
                if by_class[class].is_empty() {
                    continue;
                }
                let deficit = mixes[client][class] * taken - counts[client][class] as f64;
                if best.is_none_or(|(_, d)| deficit > d) {
                    best = Some((class, deficit));
                }
            }
            let (class, _) = best.expect("remaining > 0 implies a nonempty class");
            let idx = by_class[class].pop().expect("class checked nonempty");
            counts[client][class] += 1;
            assignments[client].push(idx);
            remaining -= 1;
        }
    }
    Ok(PartitionPlan {
        strategy: Strategy::LabelImbalanced,
        seed,
        params: PartitionSpec::LabelImbalanced { n_clients, alpha },
        assignments: sorted(assignments),
    })
}

/// Apportion `total` into integer parts proportional to `weights`
/// (largest remainder; ties to the lower position).
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut parts: Vec<usize> = exact.iter().map(|e| libm::floor(*e) as usize).collect();
    let short = total - parts.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..weights.len()).collect();
    by_remainder.sort_by(|&a, &b| {
        let ra = exact[a] - parts[a] as f64;
        let rb = exact[b] - parts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in by_remainder.iter().take(short) {
        parts[i] += 1;
    }
    parts
}

/// Client sizes in geometric progression with `largest / smallest ==
/// size_ratio`, each client keeping the corpus label mix. Client `k` gets
/// weight `size_ratio^(k / (n - 1))`.
pub fn partition_quantity_imbalanced(
    data: &Dataset,
    n_clients: usize,
    size_ratio: f64,
    seed: u64,
) -> Result<PartitionPlan> {
    check_clients(data, n_clients)?;
    if !(size_ratio > 1.0 && size_ratio.is_finite()) {
        return Err(Error::InfeasibleRatio { ratio: size_ratio, reason: "ratio must exceed 1".into() });
    }
    let weights: Vec<f64> = (0..n_clients).map(|k| libm::pow(size_ratio, k as f64 / (n_clients - 1) as f64)).collect();
    let sizes = apportion(data.len(), &weights);
    let smallest = sizes.iter().copied().min().unwrap_or(0);
    if smallest < data.num_classes() {
        return Err(Error::InfeasibleRatio {
            ratio: size_ratio,
            reason: alloc::format!("smallest client would get {smallest} examples for {} classes", data.num_classes()),
        });
    }
    let mut rng = seed::rng(seed);
    let sequence = interleaved_by_class(data, &mut rng);
    let mut assignments = Vec::with_capacity(n_clients);
    let mut offset = 0;
    for size in sizes {
        assignments.push(sequence[offset..offset + size].to_vec());
        offset += size;
    }
    Ok(PartitionPlan {
        strategy: Strategy::QuantityImbalanced,
        seed,
        params: PartitionSpec::QuantityImbalanced { n_clients, size_ratio },
        assignments: sorted(assignments),
    })
}

/// Every owner's examples go to exactly one client. Owners are shuffled,
/// then taken largest first (the shuffle breaks ties between equal-size
/// owners) and each goes to the client currently holding the fewest
/// examples, lowest id on ties.
pub fn partition_by_repository(data: &Dataset, n_clients: usize, seed: u64) -> Result<PartitionPlan> {
    check_clients(data, n_clients)?;
    let mut owners: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, ex) in data.examples().iter().enumerate() {
        owners.entry(ex.repo_owner.as_str()).or_default().push(i);
    }
    if owners.len() < n_clients {
        return Err(Error::TooFewOwners { owners: owners.len(), clients: n_clients });
    }
    let mut groups: Vec<Vec<usize>> = owners.into_values().collect();
    let mut rng = seed::rng(seed);
    groups.shuffle(&mut rng);
    groups.sort_by_key(|g| core::cmp::Reverse(g.len()));
    let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for group in groups {
        let target = (0..n_clients).min_by_key(|&c| (assignments[c].len(), c)).unwrap_or(0);
        assignments[target].extend(group);
    }
    Ok(PartitionPlan {
        strategy: Strategy::ByRepository,
        seed,
        params: PartitionSpec::ByRepository { n_clients },
        assignments: sorted(assignments),
    })
}

/// One client holding a uniform random sample of `round(fraction * |data|)`
/// examples.
pub fn select_single_client(data: &Dataset, fraction: f64, seed: u64) -> Result<PartitionPlan> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig("fraction must be in (0, 1]".into()));
    }
    let amount = libm::round(fraction * data.len() as f64) as usize;
    if amount == 0 {
        return Err(Error::EmptySelection);
    }
    let mut rng = seed::rng(seed);
    let picked = index::sample(&mut rng, data.len(), amount.min(data.len())).into_vec();
    Ok(PartitionPlan {
        strategy: Strategy::SingleClient,
        seed,
        params: PartitionSpec::SingleClient { fraction },
        assignments: sorted(vec![picked]),
    })
}
