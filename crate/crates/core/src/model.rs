//! Small predictive models: multinomial logistic regression and a
//! one-hidden-layer tanh MLP, with hand-written softmax cross-entropy
//! gradients.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledExample;
use crate::error::{Error, Result};
use crate::params::{ParameterVector, Segment};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LogisticRegression,
    Mlp,
}

/// Architecture shared by every participant. The parameter layout is a pure
/// function of this value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub feature_dim: usize,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_dim: Option<usize>,
}

impl ModelSpec {
    pub fn logistic(feature_dim: usize, num_classes: usize) -> Self {
        Self { kind: ModelKind::LogisticRegression, feature_dim, num_classes, hidden_dim: None }
    }

    pub fn mlp(feature_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        Self { kind: ModelKind::Mlp, feature_dim, num_classes, hidden_dim: Some(hidden_dim) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::InvalidConfig("feature_dim must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig("num_classes must be at least 2".into()));
        }
        match (self.kind, self.hidden_dim) {
            (ModelKind::Mlp, Some(h)) if h > 0 => Ok(()),
            (ModelKind::Mlp, _) => Err(Error::InvalidConfig("mlp needs a positive hidden_dim".into())),
            (ModelKind::LogisticRegression, _) => Ok(()),
        }
    }

    pub fn layout(&self) -> Vec<Segment> {
        let (d, c) = (self.feature_dim, self.num_classes);
        match self.kind {
            ModelKind::LogisticRegression => {
                vec![Segment::new("w", vec![c, d]), Segment::new("b", vec![c])]
            }
            ModelKind::Mlp => {
                let h = self.hidden_dim.unwrap_or(0);
                vec![
                    Segment::new("w1", vec![h, d]),
                    Segment::new("b1", vec![h]),
                    Segment::new("w2", vec![c, h]),
                    Segment::new("b2", vec![c]),
                ]
            }
        }
    }

    pub fn num_params(&self) -> usize {
        self.layout().iter().map(Segment::len).sum()
    }

    pub fn ensure_params(&self, params: &ParameterVector) -> Result<()> {
        if params.segments() == self.layout().as_slice() {
            Ok(())
        } else {
            Err(Error::LayoutMismatch)
        }
    }
}

/// Weights uniform in ±1/sqrt(fan_in), biases zero.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParameterVector> {
    spec.validate()?;
    let mut rng = seed::rng(seed);
    let layout = spec.layout();
    let mut values = Vec::with_capacity(spec.num_params());
    for segment in &layout {
        let is_bias = segment.shape.len() == 1;
        if is_bias {
            values.extend(core::iter::repeat_n(0.0, segment.len()));
        } else {
            let fan_in = segment.shape[1] as f64;
            let bound = 1.0 / libm::sqrt(fan_in);
            values.extend((0..segment.len()).map(|_| rng.random_range(-bound..bound)));
        }
    }
    ParameterVector::new(layout, values)
}

/// Borrowed view of a parameter vector split into its layers.
struct Layers<'a> {
    spec: &'a ModelSpec,
    values: &'a [f64],
}

impl<'a> Layers<'a> {
    fn hidden(&self) -> usize {
        self.spec.hidden_dim.unwrap_or(0)
    }

    /// Scores into `out`; for the MLP the tanh activations go into `hidden`.
    fn scores(&self, x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        let (d, c) = (self.spec.feature_dim, self.spec.num_classes);
        match self.spec.kind {
            ModelKind::LogisticRegression => {
                let (w, b) = self.values.split_at(c * d);
                affine(w, b, x, out);
            }
            ModelKind::Mlp => {
                let h = self.hidden();
                let (w1, rest) = self.values.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(c * h);
                affine(w1, b1, x, hidden);
                for v in hidden.iter_mut() {
                    *v = libm::tanh(*v);
                }
                affine(w2, b2, hidden, out);
            }
        }
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = b[r] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
}

fn log_sum_exp(scores: &[f64]) -> f64 {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + libm::log(scores.iter().map(|s| libm::exp(s - m)).sum::<f64>())
}

/// Softmax probabilities of a score vector.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(scores);
    scores.iter().map(|s| libm::exp(s - lse)).collect()
}

fn check_features(spec: &ModelSpec, x: &[f64]) -> Result<()> {
    if x.len() == spec.feature_dim {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: spec.feature_dim, found: x.len() })
    }
}

/// Class scores (logits) for one feature vector.
pub fn forward(spec: &ModelSpec, params: &ParameterVector, features: &[f64]) -> Result<Vec<f64>> {
    spec.ensure_params(params)?;
    check_features(spec, features)?;
    let mut hidden = vec![0.0; spec.hidden_dim.unwrap_or(0)];
    let mut out = vec![0.0; spec.num_classes];
    Layers { spec, values: params.values() }.scores(features, &mut hidden, &mut out);
    Ok(out)
}

/// Index of the highest score; ties go to the lowest class id.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn predict(spec: &ModelSpec, params: &ParameterVector, features: &[f64]) -> Result<usize> {
    forward(spec, params, features).map(|s| argmax(&s))
}

/// Accuracy and mean cross-entropy of `params` on `data`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

pub fn evaluate(spec: &ModelSpec, params: &ParameterVector, data: &[LabeledExample]) -> Result<Evaluation> {
    spec.ensure_params(params)?;
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let layers = Layers { spec, values: params.values() };
    let mut hidden = vec![0.0; spec.hidden_dim.unwrap_or(0)];
    let mut scores = vec![0.0; spec.num_classes];
    let (mut correct, mut loss) = (0usize, 0.0);
    for ex in data {
        check_features(spec, &ex.features)?;
        layers.scores(&ex.features, &mut hidden, &mut scores);
        if argmax(&scores) == ex.label {
            correct += 1;
        }
        loss += log_sum_exp(&scores) - scores[ex.label];
    }
    let n = data.len() as f64;
    Ok(Evaluation { accuracy: correct as f64 / n, loss: loss / n })
}

/// Reusable buffers for gradient accumulation.
pub(crate) struct GradWorkspace {
    hidden: Vec<f64>,
    scores: Vec<f64>,
    dhidden: Vec<f64>,
    pub(crate) grad: Vec<f64>,
}

impl GradWorkspace {
    pub(crate) fn new(spec: &ModelSpec) -> Self {
        let h = spec.hidden_dim.unwrap_or(0);
        Self {
            hidden: vec![0.0; h],
            scores: vec![0.0; spec.num_classes],
            dhidden: vec![0.0; h],
            grad: vec![0.0; spec.num_params()],
        }
    }
}

/// Mean cross-entropy over `batch`, writing its gradient into `ws.grad`.
/// Features and labels must already be validated.
pub(crate) fn batch_loss_grad<'e>(
    spec: &ModelSpec,
    values: &[f64],
    batch: impl ExactSizeIterator<Item = &'e LabeledExample>,
    ws: &mut GradWorkspace,
) -> f64 {
    let (d, c) = (spec.feature_dim, spec.num_classes);
    let n = batch.len() as f64;
    let layers = Layers { spec, values };
    ws.grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    for ex in batch {
        let x = &ex.features;
        layers.scores(x, &mut ws.hidden, &mut ws.scores);
        let lse = log_sum_exp(&ws.scores);
        loss += lse - ws.scores[ex.label];
        // dL/dscore = softmax - onehot
        for (k, s) in ws.scores.iter_mut().enumerate() {
            *s = libm::exp(*s - lse) - if k == ex.label { 1.0 } else { 0.0 };
        }
        match spec.kind {
            ModelKind::LogisticRegression => {
                let (gw, gb) = ws.grad.split_at_mut(c * d);
                outer_acc(gw, gb, &ws.scores, x);
            }
            ModelKind::Mlp => {
                let h = layers.hidden();
                let w2 = &values[h * d + h..h * d + h + c * h];
                let (g1, g2) = ws.grad.split_at_mut(h * d + h);
                let (gw2, gb2) = g2.split_at_mut(c * h);
                outer_acc(gw2, gb2, &ws.scores, &ws.hidden);
                for j in 0..h {
                    let back: f64 = (0..c).map(|k| w2[k * h + j] * ws.scores[k]).sum();
                    ws.dhidden[j] = back * (1.0 - ws.hidden[j] * ws.hidden[j]);
                }
                let (gw1, gb1) = g1.split_at_mut(h * d);
                outer_acc(gw1, gb1, &ws.dhidden, x);
            }
        }
    }
    ws.grad.iter_mut().for_each(|g| *g /= n);
    loss / n
}

fn outer_acc(gw: &mut [f64], gb: &mut [f64], delta: &[f64], input: &[f64]) {
    let cols = input.len();
    for (r, &dr) in delta.iter().enumerate() {
        gb[r] += dr;
        for (g, v) in gw[r * cols..(r + 1) * cols].iter_mut().zip(input) {
            *g += dr * v;
        }
    }
}

fn validate_data(spec: &ModelSpec, data: &[LabeledExample]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    for ex in data {
        check_features(spec, &ex.features)?;
        if ex.label >= spec.num_classes {
            return Err(Error::LabelOutOfRange { label: ex.label, num_classes: spec.num_classes });
        }
    }
    Ok(())
}

/// Mean cross-entropy on `data` plus `(prox_mu / 2) * ||params - anchor||^2`,
/// with its analytic gradient.
pub fn objective_and_gradient(
    spec: &ModelSpec,
    params: &ParameterVector,
    data: &[LabeledExample],
    prox_mu: f64,
    anchor: &ParameterVector,
) -> Result<(f64, Vec<f64>)> {
    spec.ensure_params(params)?;
    spec.ensure_params(anchor)?;
    validate_data(spec, data)?;
    let mut ws = GradWorkspace::new(spec);
    let mut loss = batch_loss_grad(spec, params.values(), data.iter(), &mut ws);
    if prox_mu > 0.0 {
        let mut sq = 0.0;
        for ((g, w), a) in ws.grad.iter_mut().zip(params.values()).zip(anchor.values()) {
            let diff = w - a;
            sq += diff * diff;
            *g += prox_mu * diff;
        }
        loss += 0.5 * prox_mu * sq;
    }
    Ok((loss, ws.grad))
}

pub(crate) fn validate_training(
    spec: &ModelSpec,
    start: &ParameterVector,
    anchor: &ParameterVector,
    data: &[LabeledExample],
) -> Result<()> {
    spec.validate()?;
    spec.ensure_params(start)?;
    spec.ensure_params(anchor)?;
    validate_data(spec, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::String;

    fn ex(features: Vec<f64>, label: usize) -> LabeledExample {
        LabeledExample { features, label, repo_owner: String::from("o") }
    }

    #[test]
    fn logistic_layout_and_zero_biases() {
        let spec = ModelSpec::logistic(3, 2);
        let p = init_params(&spec, 7).unwrap();
        assert_eq!(p.segments(), &[Segment::new("w", vec![2, 3]), Segment::new("b", vec![2])]);
        assert_eq!(p.len(), 8);
        assert_eq!(p.segment("b").unwrap(), &[0.0, 0.0]);
        let bound = 1.0 / libm::sqrt(3.0);
        assert!(p.segment("w").unwrap().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn init_is_seeded() {
        let spec = ModelSpec::mlp(4, 5, 3);
        assert_eq!(init_params(&spec, 1).unwrap(), init_params(&spec, 1).unwrap());
        assert_ne!(init_params(&spec, 1).unwrap(), init_params(&spec, 2).unwrap());
        let p = init_params(&spec, 3).unwrap();
        assert!(p.segment("b1").unwrap().iter().all(|&b| b == 0.0));
        assert!(p.segment("b2").unwrap().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn invalid_specs() {
        assert!(ModelSpec::logistic(0, 2).validate().is_err());
        assert!(ModelSpec::logistic(3, 1).validate().is_err());
        let mut spec = ModelSpec::mlp(3, 4, 2);
        spec.hidden_dim = None;
        assert!(spec.validate().is_err());
        assert!(init_params(&spec, 0).is_err());
    }

    #[test]
    fn zero_params_give_uniform_probabilities() {
        let spec = ModelSpec::mlp(3, 4, 5);
        let p = ParameterVector::zeros(spec.layout());
        let s = forward(&spec, &p, &[1.0, -2.0, 0.5]).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
        for prob in softmax(&s) {
            assert!((prob - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_weights() {
        let spec = ModelSpec::logistic(2, 2);
        let p = ParameterVector::new(spec.layout(), vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(forward(&spec, &p, &[2.0, 0.0]).unwrap(), vec![2.0, 0.0]);
    }

    #[test]
    fn forward_rejects_bad_dimensions() {
        let spec = ModelSpec::logistic(2, 2);
        let p = ParameterVector::zeros(spec.layout());
        assert!(matches!(forward(&spec, &p, &[1.0]), Err(Error::DimensionMismatch { .. })));
        let other = ParameterVector::zeros(ModelSpec::logistic(3, 2).layout());
        assert_eq!(forward(&spec, &other, &[1.0, 2.0]), Err(Error::LayoutMismatch));
    }

    /// Dense forward written independently with explicit index loops.
    #[allow(clippy::needless_range_loop)]
    fn mlp_oracle(d: usize, h: usize, c: usize, v: &[f64], x: &[f64]) -> Vec<f64> {
        let w1 = |i: usize, j: usize| v[i * d + j];
        let b1 = |i: usize| v[h * d + i];
        let w2 = |k: usize, i: usize| v[h * d + h + k * h + i];
        let b2 = |k: usize| v[h * d + h + c * h + k];
        let mut hid = vec![0.0; h];
        for i in 0..h {
            let mut z = b1(i);
            for j in 0..d {
                z += w1(i, j) * x[j];
            }
            hid[i] = libm::tanh(z);
        }
        (0..c)
            .map(|k| {
                let mut s = b2(k);
                for i in 0..h {
                    s += w2(k, i) * hid[i];
                }
                s
            })
            .collect()
    }

    #[test]
    fn mlp_forward_matches_dense_oracle() {
        let spec = ModelSpec::mlp(3, 4, 2);
        let mut p = init_params(&spec, 11).unwrap();
        // non-zero biases so they are exercised
        let vals: Vec<f64> = p.values().iter().enumerate().map(|(i, v)| v + 0.01 * i as f64).collect();
        p = p.with_values(vals).unwrap();
        let x = [0.3, -1.2, 2.0];
        let got = forward(&spec, &p, &x).unwrap();
        let want = mlp_oracle(3, 4, 2, p.values(), &x);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12, "{g} vs {w}");
        }
    }

    fn check_gradient(spec: ModelSpec, mu: f64, seed: u64) {
        let mut rng = seed::rng(seed);
        let params = init_params(&spec, seed).unwrap();
        let jitter: Vec<f64> = params.values().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
        let params = params.with_values(jitter).unwrap();
        let anchor = init_params(&spec, seed + 100).unwrap();
        let data: Vec<LabeledExample> = (0..6)
            .map(|i| {
                let x = (0..spec.feature_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
                ex(x, i % spec.num_classes)
            })
            .collect();
        let (_, grad) = objective_and_gradient(&spec, &params, &data, mu, &anchor).unwrap();
        let h = 1e-5;
        for i in 0..params.len() {
            let mut plus = params.values().to_vec();
            let mut minus = params.values().to_vec();
            plus[i] += h;
            minus[i] -= h;
            let fp = objective_and_gradient(&spec, &params.with_values(plus).unwrap(), &data, mu, &anchor).unwrap().0;
            let fm = objective_and_gradient(&spec, &params.with_values(minus).unwrap(), &data, mu, &anchor).unwrap().0;
            let fd = (fp - fm) / (2.0 * h);
            let denom = fd.abs().max(grad[i].abs()).max(1e-6);
            assert!((fd - grad[i]).abs() / denom < 1e-5, "coord {i}: fd {fd} vs analytic {}", grad[i]);
        }
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        for seed in 0..4 {
            check_gradient(ModelSpec::logistic(3, 3), 0.0, seed);
            check_gradient(ModelSpec::logistic(4, 2), 0.7, seed);
        }
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        for seed in 0..4 {
            check_gradient(ModelSpec::mlp(3, 4, 3), 0.0, seed);
            check_gradient(ModelSpec::mlp(2, 3, 2), 1.3, seed);
        }
    }

    #[test]
    fn evaluate_counts_correct() {
        let spec = ModelSpec::logistic(2, 2);
        let p = ParameterVector::new(spec.layout(), vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let data = vec![ex(vec![2.0, 0.0], 0), ex(vec![0.0, 2.0], 1), ex(vec![0.0, 2.0], 0)];
        let e = evaluate(&spec, &p, &data).unwrap();
        assert!((e.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert!(e.loss > 0.0);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
