//! Evaluation measures: binary F1, accuracy, MRR, BLEU-4 and token accuracy.
//!
//! BLEU-4 uses uniform weights over clipped 1..4-gram precisions and the
//! standard brevity penalty. Precisions for n >= 2 use add-one smoothing,
//! `(matches + 1) / (candidates + 1)`, so short outputs without a matching
//! 4-gram still score; unigram precision is unsmoothed, so an output sharing
//! no token with the reference scores exactly zero.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn same_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::LengthMismatch { left: a, right: b })
    }
}

/// F1 of the positive class (label 1). Zero when precision + recall is zero.
pub fn f1_binary(preds: &[usize], golds: &[usize]) -> Result<f64> {
    same_len(preds.len(), golds.len())?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &g) in preds.iter().zip(golds) {
        for label in [p, g] {
            if label > 1 {
                return Err(Error::LabelOutOfRange { label, num_classes: 2 });
            }
        }
        match (p, g) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    // 2PR / (P + R) == 2tp / (2tp + fp + fn)
    let denom = 2 * tp + fp + fn_;
    Ok(if tp == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 })
}

/// Fraction of positions where prediction and gold agree.
pub fn accuracy<T: PartialEq>(preds: &[T], golds: &[T]) -> Result<f64> {
    same_len(preds.len(), golds.len())?;
    if golds.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / golds.len() as f64)
}

/// Mean reciprocal rank; each rank is the 1-based position of the gold item.
pub fn mrr(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::EmptyInput);
    }
    // grouping by rank makes the sum independent of query order
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for &r in ranks {
        if r == 0 {
            return Err(Error::NonPositiveRank);
        }
        *histogram.entry(r).or_default() += 1;
    }
    let total: f64 = histogram.iter().map(|(&r, &n)| n as f64 / r as f64).sum();
    Ok(total / ranks.len() as f64)
}

/// 1-based rank of `gold` when candidates are ordered by descending score,
/// ties going to the lower candidate index.
pub fn rank_by_scores(scores: &[f64], gold: usize) -> Result<usize> {
    let gold_score = *scores.get(gold).ok_or(Error::LengthMismatch { left: gold + 1, right: scores.len() })?;
    let ahead = scores.iter().enumerate().filter(|&(i, &s)| s > gold_score || (s == gold_score && i < gold)).count();
    Ok(ahead + 1)
}

/// Clipped n-gram statistics for one or more prediction/reference pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; 4],
    pub candidates: [usize; 4],
    pub pred_len: usize,
    pub gold_len: usize,
}

impl BleuStats {
    pub fn of<T: Ord>(pred: &[T], gold: &[T]) -> Self {
        let mut stats = Self { pred_len: pred.len(), gold_len: gold.len(), ..Self::default() };
        for n in 1..=4 {
            let mut gold_counts: BTreeMap<&[T], usize> = BTreeMap::new();
            for g in gold.windows(n) {
                *gold_counts.entry(g).or_default() += 1;
            }
            let mut pred_counts: BTreeMap<&[T], usize> = BTreeMap::new();
            for p in pred.windows(n) {
                *pred_counts.entry(p).or_default() += 1;
            }
            stats.candidates[n - 1] = pred.len().saturating_sub(n - 1);
            stats.matches[n - 1] =
                pred_counts.iter().map(|(g, &c)| c.min(gold_counts.get(g).copied().unwrap_or(0))).sum();
        }
        stats
    }

    pub fn add(&mut self, other: &Self) {
        for n in 0..4 {
            self.matches[n] += other.matches[n];
            self.candidates[n] += other.candidates[n];
        }
        self.pred_len += other.pred_len;
        self.gold_len += other.gold_len;
    }

    pub fn score(&self) -> Result<f64> {
        if self.gold_len == 0 {
            return Err(Error::EmptyInput);
        }
        if self.matches[0] == 0 {
            return Ok(0.0);
        }
        let mut log_sum = libm::log(self.matches[0] as f64 / self.candidates[0] as f64);
        for n in 1..4 {
            log_sum += libm::log((self.matches[n] + 1) as f64 / (self.candidates[n] + 1) as f64);
        }
        let brevity = if self.pred_len < self.gold_len {
            libm::exp(1.0 - self.gold_len as f64 / self.pred_len as f64)
        } else {
            1.0
        };
        Ok((brevity * libm::exp(log_sum / 4.0)).clamp(0.0, 1.0))
    }
}

/// Sentence-level BLEU-4.
pub fn bleu4<T: Ord>(pred_tokens: &[T], gold_tokens: &[T]) -> Result<f64> {
    if gold_tokens.is_empty() {
        return Err(Error::EmptyInput);
    }
    BleuStats::of(pred_tokens, gold_tokens).score()
}

/// Corpus-level BLEU-4: n-gram counts and lengths are summed over all pairs
/// before the precisions are formed.
pub fn corpus_bleu4<T: Ord>(pairs: &[(Vec<T>, Vec<T>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = BleuStats::default();
    for (pred, gold) in pairs {
        if gold.is_empty() {
            return Err(Error::EmptyInput);
        }
        total.add(&BleuStats::of(pred, gold));
    }
    total.score()
}

/// Per-token exact-match accuracy over all gold tokens. Positions past the
/// end of a prediction count as misses.
pub fn token_accuracy<T: PartialEq>(pairs: &[(Vec<T>, Vec<T>)]) -> Result<f64> {
    let total: usize = pairs.iter().map(|(_, g)| g.len()).sum();
    if total == 0 {
        return Err(Error::EmptyInput);
    }
    let hits: usize = pairs.iter().map(|(p, g)| p.iter().zip(g).filter(|(a, b)| a == b).count()).sum();
    Ok(hits as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    /// Candidate identifiers, best first.
    pub ranked: Vec<String>,
    pub gold: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenPair {
    pub pred: Vec<String>,
    pub gold: Vec<String>,
}

/// A batch of model outputs for one task kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task_kind", rename_all = "snake_case")]
pub enum EvalBatch {
    Classification { preds: Vec<usize>, golds: Vec<usize> },
    Retrieval { records: Vec<RetrievalRecord> },
    Generation { pairs: Vec<TokenPair> },
    TokenCompletion { pairs: Vec<TokenPair> },
}

fn pairs_of(pairs: &[TokenPair]) -> Vec<(Vec<&str>, Vec<&str>)> {
    pairs
        .iter()
        .map(|p| (p.pred.iter().map(String::as_str).collect(), p.gold.iter().map(String::as_str).collect()))
        .collect()
}

impl EvalBatch {
    /// Metric values keyed by name. Classification reports `f1` only when
    /// every label is 0 or 1.
    pub fn evaluate(&self) -> Result<BTreeMap<String, f64>> {
        let mut out = BTreeMap::new();
        match self {
            Self::Classification { preds, golds } => {
                out.insert("accuracy".into(), accuracy(preds, golds)?);
                if preds.iter().chain(golds).all(|&l| l <= 1) {
                    out.insert("f1".into(), f1_binary(preds, golds)?);
                }
            }
            Self::Retrieval { records } => {
                let ranks = records
                    .iter()
                    .map(|r| {
                        let mut hits = r.ranked.iter().enumerate().filter(|(_, c)| **c == r.gold);
                        match (hits.next(), hits.next()) {
                            (Some((pos, _)), None) => Ok(pos + 1),
                            _ => Err(Error::InvalidConfig(alloc::format!(
                                "gold {} must appear exactly once among candidates",
                                r.gold
                            ))),
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                out.insert("mrr".into(), mrr(&ranks)?);
            }
            Self::Generation { pairs } => {
                out.insert("bleu4".into(), corpus_bleu4(&pairs_of(pairs))?);
            }
            Self::TokenCompletion { pairs } => {
                out.insert("token_accuracy".into(), token_accuracy(&pairs_of(pairs))?);
            }
        }
        Ok(out)
    }
}
