//! Labeled examples and the corpus they live in.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: usize,
    /// User or organization the example was collected from.
    pub repo_owner: String,
}

/// A nonempty corpus with uniform feature dimension and a fixed label space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDataset")]
pub struct Dataset {
    examples: Vec<LabeledExample>,
    num_classes: usize,
    feature_dim: usize,
}

#[derive(Deserialize)]
struct RawDataset {
    examples: Vec<LabeledExample>,
    num_classes: usize,
    feature_dim: usize,
}

impl TryFrom<RawDataset> for Dataset {
    type Error = Error;

    fn try_from(raw: RawDataset) -> Result<Self> {
        Self::new(raw.examples, raw.num_classes, raw.feature_dim)
    }
}

impl Dataset {
    pub fn new(examples: Vec<LabeledExample>, num_classes: usize, feature_dim: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidConfig("num_classes must be at least 2".into()));
        }
        if feature_dim == 0 {
            return Err(Error::InvalidConfig("feature_dim must be positive".into()));
        }
        if examples.is_empty() {
            return Err(Error::EmptyData);
        }
        for ex in &examples {
            if ex.features.len() != feature_dim {
                return Err(Error::DimensionMismatch { expected: feature_dim, found: ex.features.len() });
            }
            if ex.label >= num_classes {
                return Err(Error::LabelOutOfRange { label: ex.label, num_classes });
            }
            if ex.repo_owner.is_empty() {
                return Err(Error::InvalidConfig("repo_owner must be nonempty".into()));
            }
            if ex.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        Ok(Self { examples, num_classes, feature_dim })
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Copies of the examples at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Result<Vec<LabeledExample>> {
        indices
            .iter()
            .map(|&i| {
                self.examples.get(i).cloned().ok_or(Error::TooFewExamples { needed: i + 1, available: self.len() })
            })
            .collect()
    }

    /// A new dataset holding the examples at `indices`.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(self.gather(indices)?, self.num_classes, self.feature_dim)
    }

    /// Example indices grouped by label.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = alloc::vec![Vec::new(); self.num_classes];
        for (i, ex) in self.examples.iter().enumerate() {
            by_class[ex.label].push(i);
        }
        by_class
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.indices_by_class().iter().map(Vec::len).collect()
    }
}
