//! Synthetic labeled corpus with repository-owner structure.
//!
//! Every owner gets a Gaussian offset and every class a Gaussian center.
//! An example draws an owner and a class uniformly, then its features from
//! `class_center + owner_offset + cluster_spread * N(0, I)`. Grouping by
//! owner therefore shifts the feature distribution a client sees.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LabeledExample};
use crate::error::{Error, Result};
use crate::seed::{self, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_examples: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub n_owners: usize,
    /// Standard deviation of the per-example noise around its cluster center.
    pub cluster_spread: f64,
    /// Standard deviation of class-center coordinates.
    pub class_separation: f64,
    /// Standard deviation of owner-offset coordinates.
    pub owner_shift: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_examples: 10_000,
            feature_dim: 128,
            num_classes: 4,
            n_owners: 40,
            cluster_spread: 1.0,
            class_separation: 0.25,
            owner_shift: 0.5,
            seed: 0,
        }
    }
}

pub fn owner_name(owner: usize) -> String {
    alloc::format!("owner-{owner:03}")
}

fn gaussian_vec(rng: &mut SimRng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Generate a corpus with the given shape. All counts must be positive.
pub fn make_synthetic_corpus(
    n_examples: usize,
    feature_dim: usize,
    num_classes: usize,
    n_owners: usize,
    cluster_spread: f64,
    seed: u64,
) -> Result<Dataset> {
    generate(&CorpusConfig {
        n_examples,
        feature_dim,
        num_classes,
        n_owners,
        cluster_spread,
        seed,
        ..Default::default()
    })
}

pub fn generate(cfg: &CorpusConfig) -> Result<Dataset> {
    if cfg.n_examples == 0 || cfg.feature_dim == 0 || cfg.n_owners == 0 {
        return Err(Error::InvalidConfig("corpus counts must be positive".into()));
    }
    for (name, v) in [
        ("cluster_spread", cfg.cluster_spread),
        ("class_separation", cfg.class_separation),
        ("owner_shift", cfg.owner_shift),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("{name} must be finite and non-negative")));
        }
    }
    let mut rng = seed::rng(cfg.seed);
    let d = cfg.feature_dim;
    let class_centers: Vec<Vec<f64>> =
        (0..cfg.num_classes).map(|_| gaussian_vec(&mut rng, d, cfg.class_separation)).collect();
    let owner_offsets: Vec<Vec<f64>> = (0..cfg.n_owners).map(|_| gaussian_vec(&mut rng, d, cfg.owner_shift)).collect();
    let owners: Vec<String> = (0..cfg.n_owners).map(owner_name).collect();
    let examples = (0..cfg.n_examples)
        .map(|_| {
            let owner = rng.random_range(0..cfg.n_owners);
            let label = rng.random_range(0..cfg.num_classes);
            let features = class_centers[label]
                .iter()
                .zip(&owner_offsets[owner])
                .map(|(c, o)| c + o + cfg.cluster_spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            LabeledExample { features, label, repo_owner: owners[owner].clone() }
        })
        .collect();
    Dataset::new(examples, cfg.num_classes, d)
}

/// Accuracy of the nearest-class-mean classifier fitted and scored on
/// `data`. Nearest-mean rules are linear, so this lower-bounds what a linear
/// model can recover from the corpus.
pub fn nearest_centroid_accuracy(data: &Dataset) -> f64 {
    let (c, d) = (data.num_classes(), data.feature_dim());
    let mut sums = alloc::vec![alloc::vec![0.0; d]; c];
    let mut counts = alloc::vec![0usize; c];
    for ex in data.examples() {
        counts[ex.label] += 1;
        for (s, x) in sums[ex.label].iter_mut().zip(&ex.features) {
            *s += x;
        }
    }
    for (sum, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            sum.iter_mut().for_each(|s| *s /= n as f64);
        }
    }
    let correct = data
        .examples()
        .iter()
        .filter(|ex| {
            let dist = |k: usize| -> f64 { sums[k].iter().zip(&ex.features).map(|(m, x)| (m - x) * (m - x)).sum() };
            let best = (0..c).filter(|&k| counts[k] > 0).min_by(|&a, &b| dist(a).total_cmp(&dist(b)));
            best == Some(ex.label)
        })
        .count();
    correct as f64 / data.len() as f64
}
