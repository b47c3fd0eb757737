//! Differentiable classifiers with hand-derived gradients.
//!
//! Both model kinds are dense networks: logistic regression is a single affine
//! layer, the feedforward model adds `tanh` hidden layers with optional
//! dropout on their activations. The loss is mean softmax cross-entropy plus
//! `weight_decay / 2 * ||W||^2` over weight matrices (biases are not decayed).

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::mlp::Mlp;
use crate::rng::{rng_for, SimRng};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    LogisticRegression,
    Feedforward { hidden: Vec<usize> },
}

/// A named slice of a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    /// Whether weight decay applies (weights yes, biases no).
    pub decay: bool,
}

/// Flat model parameters with their layer layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Arc<[Segment]>,
}

impl ParamVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            layout: self.layout.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.offset..s.offset + s.len])
    }

    /// Euclidean distance to `other`.
    pub fn distance(&self, other: &ParamVector) -> f64 {
        libm::sqrt(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (a - b) * (a - b))
                .sum(),
        )
    }

    /// Bit-level equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &ParamVector) -> bool {
        self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Model architecture bound to a feature and class count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub num_features: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, num_features: usize, num_classes: usize) -> Result<Self> {
        if num_features == 0 || num_classes == 0 {
            return Err(Error::InvalidModel("feature and class counts must be positive".into()));
        }
        if let ModelKind::Feedforward { hidden } = &kind {
            if hidden.contains(&0) {
                return Err(Error::InvalidModel("hidden layer of width 0".into()));
            }
        }
        Ok(Self {
            kind,
            num_features,
            num_classes,
        })
    }

    pub fn logistic(num_features: usize, num_classes: usize) -> Result<Self> {
        Self::new(ModelKind::LogisticRegression, num_features, num_classes)
    }

    pub fn mlp(&self) -> Mlp {
        let mut sizes = vec![self.num_features];
        if let ModelKind::Feedforward { hidden } = &self.kind {
            sizes.extend_from_slice(hidden);
        }
        sizes.push(self.num_classes);
        Mlp::new(sizes)
    }

    pub fn param_count(&self) -> usize {
        self.mlp().param_count()
    }

    pub fn has_hidden_layers(&self) -> bool {
        matches!(&self.kind, ModelKind::Feedforward { hidden } if !hidden.is_empty())
    }

    pub fn layout(&self) -> Arc<[Segment]> {
        let mlp = self.mlp();
        let mut segs = Vec::with_capacity(2 * mlp.num_layers());
        for l in 0..mlp.num_layers() {
            let (w, b) = mlp.layer_offsets(l);
            let out = mlp.sizes()[l + 1];
            segs.push(Segment {
                name: format!("layer{l}.weight"),
                offset: w,
                len: b - w,
                decay: true,
            });
            segs.push(Segment {
                name: format!("layer{l}.bias"),
                offset: b,
                len: out,
                decay: false,
            });
        }
        segs.into()
    }

    /// Deterministic initialization: Glorot-uniform weights, zero biases.
    pub fn init(&self, seed: u64) -> ParamVector {
        let mut rng = rng_for(seed, "model-init", &[]);
        ParamVector {
            values: self.mlp().init(&mut rng),
            layout: self.layout(),
        }
    }

    pub fn zeros(&self) -> ParamVector {
        ParamVector {
            values: vec![0.0; self.param_count()],
            layout: self.layout(),
        }
    }

    pub fn params_from(&self, values: Vec<f64>) -> Result<ParamVector> {
        if values.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                expected: self.param_count(),
                got: values.len(),
            });
        }
        Ok(ParamVector {
            values,
            layout: self.layout(),
        })
    }

    fn check(&self, w: &ParamVector, data: &DataSet) -> Result<()> {
        if w.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                expected: self.param_count(),
                got: w.len(),
            });
        }
        if data.num_features() != self.num_features || data.num_classes() != self.num_classes {
            return Err(Error::InvalidModel(format!(
                "data shape ({}, {}) does not match model ({}, {})",
                data.num_features(),
                data.num_classes(),
                self.num_features,
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Mean cross-entropy plus L2 penalty, and its exact gradient.
    ///
    /// Dropout masks are drawn from `rng` only when `dropout > 0` and the
    /// model has hidden layers.
    pub fn loss_and_grad(
        &self,
        w: &ParamVector,
        batch: &DataSet,
        weight_decay: f64,
        dropout: f64,
        rng: &mut SimRng,
    ) -> Result<(f64, ParamVector)> {
        self.check(w, batch)?;
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mlp = self.mlp();
        let mut grad = w.zeros_like();
        let mut loss = 0.0;
        let dropout = if self.has_hidden_layers() { dropout } else { 0.0 };
        for i in 0..batch.len() {
            let trace = mlp.forward_dropout(&w.values, batch.row(i), dropout, rng);
            let (l, dlogits) = cross_entropy(&trace.output, batch.label(i));
            loss += l;
            mlp.backward(&w.values, &trace, &dlogits, &mut grad.values);
        }
        let inv = 1.0 / batch.len() as f64;
        loss *= inv;
        for g in &mut grad.values {
            *g *= inv;
        }
        if weight_decay > 0.0 {
            for s in w.layout.iter().filter(|s| s.decay) {
                let r = s.offset..s.offset + s.len;
                let sq: f64 = w.values[r.clone()].iter().map(|v| v * v).sum();
                loss += 0.5 * weight_decay * sq;
                for (g, v) in grad.values[r.clone()].iter_mut().zip(&w.values[r]) {
                    *g += weight_decay * v;
                }
            }
        }
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::Diverged);
        }
        Ok((loss, grad))
    }

    pub fn logits(&self, w: &ParamVector, x: &[f64]) -> Vec<f64> {
        self.mlp().forward(&w.values, x).output
    }

    /// Mean cross-entropy (no penalty, no dropout) and accuracy.
    pub fn loss_and_accuracy(&self, w: &ParamVector, data: &DataSet) -> Result<(f64, f64)> {
        self.check(w, data)?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mlp = self.mlp();
        let mut loss = 0.0;
        let mut correct = 0usize;
        for i in 0..data.len() {
            let out = mlp.forward(&w.values, data.row(i)).output;
            let y = data.label(i);
            loss += cross_entropy(&out, y).0;
            if argmax(&out) == y {
                correct += 1;
            }
        }
        let n = data.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }
}

/// First index of the maximum entry.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| libm::exp(l - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy of `label` under `softmax(logits)`, and its logit gradient.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logits.iter().map(|l| libm::exp(l - m)).sum();
    let lse = m + libm::log(s);
    let mut g: Vec<f64> = logits.iter().map(|l| libm::exp(l - lse)).collect();
    g[label] -= 1.0;
    (lse - logits[label], g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn toy_batch(n: usize, f: usize, k: usize, seed: u64) -> DataSet {
        use rand::Rng;
        let mut rng = rng_for(seed, "toy", &[]);
        let features = (0..n * f).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels = (0..n).map(|i| i % k).collect();
        DataSet::new(features, labels, f, k).unwrap()
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(ModelSpec::logistic(10, 3).unwrap().param_count(), 33);
        let ff = ModelSpec::new(ModelKind::Feedforward { hidden: vec![8] }, 4, 2).unwrap();
        assert_eq!(ff.param_count(), 58);
        assert!(ModelSpec::logistic(0, 3).is_err());
        assert!(ModelSpec::new(ModelKind::Feedforward { hidden: vec![0] }, 4, 2).is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let m = ModelSpec::new(ModelKind::Feedforward { hidden: vec![8] }, 4, 2).unwrap();
        let a = m.init(9);
        assert!(a.bit_eq(&m.init(9)));
        assert!(!a.bit_eq(&m.init(10)));
        assert!(a.segment("layer0.bias").unwrap().iter().all(|&b| b == 0.0));
        let r = libm::sqrt(6.0 / 12.0);
        assert!(a.segment("layer0.weight").unwrap().iter().all(|w| w.abs() <= r));
    }

    #[test]
    fn zero_weights_give_ln_k() {
        for k in [2usize, 3, 7] {
            let m = ModelSpec::logistic(4, k).unwrap();
            let batch = toy_batch(11, 4, k, 1);
            let mut rng = rng_for(0, "x", &[]);
            let (loss, _) = m.loss_and_grad(&m.zeros(), &batch, 0.3, 0.0, &mut rng).unwrap();
            assert!((loss - libm::log(k as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_off_ignores_rng() {
        let m = ModelSpec::new(ModelKind::Feedforward { hidden: vec![5] }, 3, 2).unwrap();
        let w = m.init(2);
        let b = toy_batch(8, 3, 2, 4);
        let l1 = m.loss_and_grad(&w, &b, 0.0, 0.0, &mut rng_for(1, "a", &[])).unwrap();
        let l2 = m.loss_and_grad(&w, &b, 0.0, 0.0, &mut rng_for(2, "b", &[])).unwrap();
        assert_eq!(l1.0.to_bits(), l2.0.to_bits());
        assert!(l1.1.bit_eq(&l2.1));
        let d1 = m.loss_and_grad(&w, &b, 0.0, 0.5, &mut rng_for(1, "a", &[])).unwrap();
        let d2 = m.loss_and_grad(&w, &b, 0.0, 0.5, &mut rng_for(2, "b", &[])).unwrap();
        assert_ne!(d1.0, d2.0);
    }

    #[test]
    fn softmax_closed_form() {
        let p = softmax(&[0.0, libm::log(3.0)]);
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn empty_batch_rejected() {
        let m = ModelSpec::logistic(2, 2).unwrap();
        let e = DataSet::empty(2, 2);
        let mut rng = rng_for(0, "x", &[]);
        assert_eq!(
            m.loss_and_grad(&m.zeros(), &e, 0.0, 0.0, &mut rng).unwrap_err(),
            Error::EmptyDataset
        );
    }
}
