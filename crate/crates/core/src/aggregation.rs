//! Server-side aggregation of client updates.
//!
//! All three rules work coordinate by coordinate on values sorted into a
//! canonical order, so the output never depends on the order the updates
//! arrive in, and is clamped to the range of the client values.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParameterVector;

pub const DEFAULT_TRIM_BETA: f64 = 0.2;

/// Parameters a client sends back after local training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub round: usize,
    pub params: ParameterVector,
    pub num_examples: usize,
    pub train_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationKind {
    FedAvg,
    FedTrimmedAvg,
    FedMedian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationConfig {
    pub kind: AggregationKind,
    /// Fraction trimmed from each tail (FedTrimmedAvg only).
    #[serde(default = "default_beta")]
    pub trim_beta: f64,
}

fn default_beta() -> f64 {
    DEFAULT_TRIM_BETA
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self { kind: AggregationKind::FedAvg, trim_beta: DEFAULT_TRIM_BETA }
    }
}

impl AggregationConfig {
    pub fn fedavg() -> Self {
        Self::default()
    }

    pub fn trimmed(trim_beta: f64) -> Self {
        Self { kind: AggregationKind::FedTrimmedAvg, trim_beta }
    }

    pub fn median() -> Self {
        Self { kind: AggregationKind::FedMedian, ..Self::default() }
    }

    /// Check that at least one value survives per coordinate with `clients` updates.
    pub fn validate(&self, clients: usize) -> Result<()> {
        if self.kind == AggregationKind::FedTrimmedAvg {
            trim_count(self.trim_beta, clients)?;
        }
        Ok(())
    }

    pub fn aggregate(&self, updates: &[ClientUpdate]) -> Result<ParameterVector> {
        match self.kind {
            AggregationKind::FedAvg => aggregate_fedavg(updates),
            AggregationKind::FedTrimmedAvg => aggregate_trimmed_mean(updates, self.trim_beta),
            AggregationKind::FedMedian => aggregate_median(updates),
        }
    }
}

fn check_updates(updates: &[ClientUpdate]) -> Result<&ParameterVector> {
    let first = &updates.first().ok_or(Error::EmptyUpdates)?.params;
    for u in updates {
        first.ensure_compatible(&u.params)?;
        if u.num_examples == 0 {
            return Err(Error::ZeroExamples);
        }
    }
    Ok(first)
}

/// Apply `reduce` to every coordinate's sorted `(value, weight)` column.
fn per_coordinate(updates: &[ClientUpdate], mut reduce: impl FnMut(&[(f64, f64)]) -> f64) -> Result<ParameterVector> {
    let layout = check_updates(updates)?;
    let mut column: Vec<(f64, f64)> = Vec::with_capacity(updates.len());
    let mut out = Vec::with_capacity(layout.len());
    for j in 0..layout.len() {
        column.clear();
        column.extend(updates.iter().map(|u| (u.params.values()[j], u.num_examples as f64)));
        column.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let (lo, hi) = (column[0].0, column[column.len() - 1].0);
        out.push(reduce(&column).clamp(lo, hi));
    }
    layout.with_values(out)
}

/// Example-count weighted mean (FedAvg).
pub fn aggregate_fedavg(updates: &[ClientUpdate]) -> Result<ParameterVector> {
    let total: f64 = updates.iter().map(|u| u.num_examples as f64).sum();
    per_coordinate(updates, |col| {
        let base = col[0].0;
        base + col.iter().map(|&(v, n)| (n / total) * (v - base)).sum::<f64>()
    })
}

fn trim_count(beta: f64, clients: usize) -> Result<usize> {
    if !(0.0..0.5).contains(&beta) {
        return Err(Error::TrimOutOfRange(beta));
    }
    // the epsilon absorbs products like 0.29 * 100 = 28.999...
    let k = libm::floor(beta * clients as f64 + 1e-9) as usize;
    if 2 * k >= clients {
        return Err(Error::OverTrimming { trimmed: k, clients });
    }
    Ok(k)
}

/// Unweighted mean after dropping `floor(beta * m)` values from each tail.
pub fn aggregate_trimmed_mean(updates: &[ClientUpdate], trim_beta: f64) -> Result<ParameterVector> {
    if updates.is_empty() {
        return Err(Error::EmptyUpdates);
    }
    let k = trim_count(trim_beta, updates.len())?;
    per_coordinate(updates, |col| {
        let kept = &col[k..col.len() - k];
        let base = kept[0].0;
        base + kept.iter().map(|&(v, _)| v - base).sum::<f64>() / kept.len() as f64
    })
}

/// Coordinate-wise median; the midpoint of the central pair for even counts.
pub fn aggregate_median(updates: &[ClientUpdate]) -> Result<ParameterVector> {
    per_coordinate(updates, |col| {
        let m = col.len();
        if m % 2 == 1 {
            col[m / 2].0
        } else {
            let (a, b) = (col[m / 2 - 1].0, col[m / 2].0);
            a + (b - a) / 2.0
        }
    })
}
