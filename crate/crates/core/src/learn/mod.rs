// SPDX-License-Identifier: Apache-2.0

//! Linear readouts trained with Adam: softmax classification with
//! cross-entropy, and two-output regression of a complex target with MSE.

mod adam;
pub mod dataset;

pub use adam::Adam;

use alloc::vec;
use alloc::vec::Vec;

// Unused when std is linked (tests), which provides the inherent methods.
#[allow(unused_imports)]
use num_traits::Float;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{stream, Purpose};
use crate::C64;

/// Probabilities are clamped to at least this before taking logs.
pub const PROB_FLOOR: f64 = 1e-15;

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Mean categorical cross-entropy of `probs` against one-hot `labels`.
pub fn cross_entropy(probs: &[Vec<f64>], labels: &[Vec<f64>]) -> f64 {
    let n = probs.len().max(1) as f64;
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, y)| -p.iter().zip(y).map(|(pj, yj)| yj * pj.max(PROB_FLOOR).ln()).sum::<f64>())
        .sum();
    total / n
}

/// One-hot vector of `class` among `k`.
pub fn one_hot(class: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[class] = 1.0;
    v
}

/// Z-score transform fitted on training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Column means and population standard deviations; constant columns get scale 1.
    pub fn fit(x: &[Vec<f64>]) -> Result<Self> {
        let n = x.len();
        if n == 0 {
            return Err(invalid("cannot fit a standardizer on no rows"));
        }
        let m = x[0].len();
        if x.iter().any(|r| r.len() != m) {
            return Err(invalid("feature rows have unequal lengths"));
        }
        let mut mean = vec![0.0; m];
        for r in x {
            for (a, v) in mean.iter_mut().zip(r) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|a| *a /= n as f64);
        let mut scale = vec![0.0; m];
        for r in x {
            for ((s, v), mu) in scale.iter_mut().zip(r).zip(&mean) {
                *s += (v - mu).powi(2);
            }
        }
        for s in scale.iter_mut() {
            *s = (*s / n as f64).sqrt();
            if !(*s > 0.0) {
                *s = 1.0;
            }
        }
        Ok(Standardizer { mean, scale })
    }

    pub fn identity(m: usize) -> Self {
        Standardizer { mean: vec![0.0; m], scale: vec![1.0; m] }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

/// `y = W standardize(x) + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutModel {
    /// `outputs x features`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub standardizer: Standardizer,
}

impl ReadoutModel {
    /// Glorot-uniform weights and zero bias.
    pub fn init<R: Rng>(outputs: usize, standardizer: Standardizer, rng: &mut R) -> Self {
        let inputs = standardizer.mean.len();
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..outputs).map(|_| (0..inputs).map(|_| rng.gen_range(-limit..=limit)).collect()).collect();
        ReadoutModel { weights, bias: vec![0.0; outputs], standardizer }
    }

    pub fn outputs(&self) -> usize {
        self.bias.len()
    }

    pub fn inputs(&self) -> usize {
        self.standardizer.mean.len()
    }

    fn raw(&self, z: &[f64]) -> Vec<f64> {
        self.weights.iter().zip(&self.bias).map(|(w, b)| b + w.iter().zip(z).map(|(a, x)| a * x).sum::<f64>()).collect()
    }

    /// Linear output for raw (unstandardized) features.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.raw(&self.standardizer.apply(x))
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.predict(x))
    }

    pub fn predict_class(&self, x: &[f64]) -> usize {
        argmax(&self.predict(x))
    }

    pub fn predict_complex(&self, x: &[f64]) -> C64 {
        let y = self.predict(x);
        C64::new(y[0], y[1])
    }

    fn params(&self) -> Vec<f64> {
        self.weights.iter().flatten().chain(&self.bias).copied().collect()
    }

    fn set_params(&mut self, p: &[f64]) {
        let m = self.inputs();
        for (k, row) in self.weights.iter_mut().enumerate() {
            row.copy_from_slice(&p[k * m..(k + 1) * m]);
        }
        let off = self.weights.len() * m;
        self.bias.copy_from_slice(&p[off..]);
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = k;
        }
    }
    best
}

/// Loss and its gradient with respect to `(W row-major, b)`, on already
/// standardized inputs.
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Mean cross-entropy of softmax outputs and its gradient.
pub fn classification_loss_grad(model: &ReadoutModel, z: &[Vec<f64>], labels: &[Vec<f64>]) -> LossGrad {
    let (k, m) = (model.outputs(), model.inputs());
    let n = z.len() as f64;
    let mut grad = vec![0.0; k * m + k];
    let mut loss = 0.0;
    for (x, y) in z.iter().zip(labels) {
        let p = softmax(&model.raw(x));
        for j in 0..k {
            loss -= y[j] * p[j].max(PROB_FLOOR).ln();
            let d = (p[j] - y[j]) / n;
            for i in 0..m {
                grad[j * m + i] += d * x[i];
            }
            grad[k * m + j] += d;
        }
    }
    LossGrad { loss: loss / n, grad }
}

/// `(1/N) sum |zeta - zeta_hat|^2` and its gradient.
pub fn regression_loss_grad(model: &ReadoutModel, z: &[Vec<f64>], targets: &[C64]) -> LossGrad {
    let m = model.inputs();
    let n = z.len() as f64;
    let mut grad = vec![0.0; 2 * m + 2];
    let mut loss = 0.0;
    for (x, t) in z.iter().zip(targets) {
        let y = model.raw(x);
        let e = [y[0] - t.re, y[1] - t.im];
        loss += e[0] * e[0] + e[1] * e[1];
        for j in 0..2 {
            let d = 2.0 * e[j] / n;
            for i in 0..m {
                grad[j * m + i] += d * x[i];
            }
            grad[2 * m + j] += d;
        }
    }
    LossGrad { loss: loss / n, grad }
}

/// Central finite-difference gradient of `f` at `model`'s parameters.
pub fn numeric_gradient(model: &ReadoutModel, h: f64, f: impl Fn(&ReadoutModel) -> f64) -> Vec<f64> {
    let p = model.params();
    let mut probe = model.clone();
    (0..p.len())
        .map(|i| {
            let mut q = p.clone();
            q[i] = p[i] + h;
            probe.set_params(&q);
            let up = f(&probe);
            q[i] = p[i] - h;
            probe.set_params(&q);
            let down = f(&probe);
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub epochs: usize,
    /// `None` trains on the full batch.
    pub batch_size: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Hyperparams {
    /// 10^4 full-batch epochs at learning rate 5e-4.
    pub fn classification() -> Self {
        Hyperparams {
            learning_rate: 5e-4,
            epochs: 10_000,
            batch_size: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }

    /// 2.5 * 10^4 epochs, batches of 150, learning rate 5e-4.
    pub fn regression() -> Self {
        Hyperparams { epochs: 25_000, batch_size: Some(150), ..Self::classification() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == Some(0) {
            return Err(invalid("hyperparameters need learning_rate > 0, epochs >= 1, batch_size >= 1"));
        }
        Ok(())
    }
}

/// Features with one-hot class labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassSplit {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// Features with complex targets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegressionSplit {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<C64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    /// Accuracy for classification; unused (NaN) for regression.
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ReadoutModel,
    pub curve: Vec<EpochMetrics>,
}

fn batches(n: usize, size: Option<usize>, rng: &mut impl Rng, order: &mut [usize]) -> Vec<(usize, usize)> {
    match size {
        None => vec![(0, n)],
        Some(b) if b >= n => vec![(0, n)],
        Some(b) => {
            order.shuffle(rng);
            (0..n).step_by(b).map(|s| (s, (s + b).min(n))).collect()
        }
    }
}

fn check_rows(x: &[Vec<f64>], m: usize) -> Result<()> {
    if x.iter().any(|r| r.len() != m || r.iter().any(|v| !v.is_finite())) {
        return Err(invalid("feature rows must be finite and of equal length"));
    }
    Ok(())
}

/// Softmax readout over `classes` trained with Adam on cross-entropy.
/// The curve records metrics after every epoch.
pub fn train_classifier(
    train: &ClassSplit,
    test: &ClassSplit,
    classes: usize,
    hp: &Hyperparams,
) -> Result<TrainOutcome> {
    hp.validate()?;
    if classes < 2 {
        return Err(invalid("classification needs at least 2 classes"));
    }
    if train.features.is_empty()
        || train.features.len() != train.labels.len()
        || test.features.len() != test.labels.len()
    {
        return Err(invalid("training split is empty or mislabeled"));
    }
    if train.labels.iter().chain(&test.labels).any(|&c| c >= classes) {
        return Err(invalid("label out of range"));
    }
    let std = Standardizer::fit(&train.features)?;
    check_rows(&test.features, std.mean.len())?;
    let zt: Vec<Vec<f64>> = train.features.iter().map(|x| std.apply(x)).collect();
    let ze: Vec<Vec<f64>> = test.features.iter().map(|x| std.apply(x)).collect();
    let yt: Vec<Vec<f64>> = train.labels.iter().map(|&c| one_hot(c, classes)).collect();
    let ye: Vec<Vec<f64>> = test.labels.iter().map(|&c| one_hot(c, classes)).collect();

    let mut rng = stream(hp.seed, Purpose::Readout, 0);
    let mut model = ReadoutModel::init(classes, std, &mut rng);
    let mut params = model.params();
    let mut adam = Adam::new(params.len(), hp.learning_rate, hp.beta1, hp.beta2, hp.epsilon);
    let mut order: Vec<usize> = (0..zt.len()).collect();
    let mut curve = Vec::with_capacity(hp.epochs);
    let acc = |m: &ReadoutModel, z: &[Vec<f64>], y: &[usize]| {
        if z.is_empty() {
            return f64::NAN;
        }
        z.iter().zip(y).filter(|(x, &c)| argmax(&m.raw(x)) == c).count() as f64 / z.len() as f64
    };
    let mut bx = Vec::new();
    let mut by = Vec::new();
    for epoch in 1..=hp.epochs {
        for (s, e) in batches(zt.len(), hp.batch_size, &mut rng, &mut order) {
            bx.clear();
            by.clear();
            for &i in &order[s..e] {
                bx.push(zt[i].clone());
                by.push(yt[i].clone());
            }
            let lg = classification_loss_grad(&model, &bx, &by);
            adam.step(&mut params, &lg.grad);
            model.set_params(&params);
        }
        let train_loss = classification_loss_grad(&model, &zt, &yt).loss;
        if !train_loss.is_finite() {
            return Err(Error::TrainingDiverged(epoch));
        }
        let test_loss = if ze.is_empty() { f64::NAN } else { classification_loss_grad(&model, &ze, &ye).loss };
        curve.push(EpochMetrics {
            epoch,
            train_loss,
            test_loss,
            train_acc: acc(&model, &zt, &train.labels),
            test_acc: acc(&model, &ze, &test.labels),
        });
    }
    Ok(TrainOutcome { model, curve })
}

/// Two-output readout predicting `(Re zeta, Im zeta)` trained with Adam on MSE.
pub fn train_regressor(train: &RegressionSplit, test: &RegressionSplit, hp: &Hyperparams) -> Result<TrainOutcome> {
    hp.validate()?;
    if train.features.is_empty()
        || train.features.len() != train.targets.len()
        || test.features.len() != test.targets.len()
    {
        return Err(invalid("training split is empty or has mismatched targets"));
    }
    if train.targets.iter().chain(&test.targets).any(|t| !t.re.is_finite() || !t.im.is_finite()) {
        return Err(invalid("targets must be finite"));
    }
    let std = Standardizer::fit(&train.features)?;
    check_rows(&test.features, std.mean.len())?;
    let zt: Vec<Vec<f64>> = train.features.iter().map(|x| std.apply(x)).collect();
    let ze: Vec<Vec<f64>> = test.features.iter().map(|x| std.apply(x)).collect();

    let mut rng = stream(hp.seed, Purpose::Readout, 0);
    let mut model = ReadoutModel::init(2, std, &mut rng);
    let mut params = model.params();
    let mut adam = Adam::new(params.len(), hp.learning_rate, hp.beta1, hp.beta2, hp.epsilon);
    let mut order: Vec<usize> = (0..zt.len()).collect();
    let mut curve = Vec::with_capacity(hp.epochs);
    let mut bx = Vec::new();
    let mut by = Vec::new();
    for epoch in 1..=hp.epochs {
        for (s, e) in batches(zt.len(), hp.batch_size, &mut rng, &mut order) {
            bx.clear();
            by.clear();
            for &i in &order[s..e] {
                bx.push(zt[i].clone());
                by.push(train.targets[i]);
            }
            let lg = regression_loss_grad(&model, &bx, &by);
            adam.step(&mut params, &lg.grad);
            model.set_params(&params);
        }
        let train_loss = regression_loss_grad(&model, &zt, &train.targets).loss;
        if !train_loss.is_finite() {
            return Err(Error::TrainingDiverged(epoch));
        }
        let test_loss = if ze.is_empty() { f64::NAN } else { regression_loss_grad(&model, &ze, &test.targets).loss };
        curve.push(EpochMetrics { epoch, train_loss, test_loss, train_acc: f64::NAN, test_acc: f64::NAN });
    }
    Ok(TrainOutcome { model, curve })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<usize>>,
    /// Rows of `counts` divided by their totals (zero rows stay zero).
    pub confusion: Vec<Vec<f64>>,
    pub predictions: Vec<usize>,
}

pub fn evaluate_classifier(model: &ReadoutModel, split: &ClassSplit, classes: usize) -> Result<ClassificationMetrics> {
    if split.features.is_empty() {
        return Err(invalid("cannot evaluate on an empty split"));
    }
    let mut counts = vec![vec![0usize; classes]; classes];
    let predictions: Vec<usize> = split.features.iter().map(|x| model.predict_class(x)).collect();
    for (&t, &p) in split.labels.iter().zip(&predictions) {
        if t >= classes || p >= classes {
            return Err(invalid("label out of range"));
        }
        counts[t][p] += 1;
    }
    let correct = split.labels.iter().zip(&predictions).filter(|(a, b)| a == b).count();
    let confusion = counts
        .iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            row.iter().map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 }).collect()
        })
        .collect();
    Ok(ClassificationMetrics { accuracy: correct as f64 / split.labels.len() as f64, counts, confusion, predictions })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mse: f64,
    pub predictions: Vec<C64>,
    /// `|zeta - zeta_hat|^2` per record.
    pub squared_errors: Vec<f64>,
}

/// `(1/N) sum |zeta_i - zeta_hat_i|^2`.
pub fn mse(predictions: &[C64], targets: &[C64]) -> f64 {
    predictions.iter().zip(targets).map(|(p, t)| (p - t).norm_sqr()).sum::<f64>() / targets.len().max(1) as f64
}

pub fn evaluate_regressor(model: &ReadoutModel, split: &RegressionSplit) -> Result<RegressionMetrics> {
    if split.features.is_empty() {
        return Err(invalid("cannot evaluate on an empty split"));
    }
    let predictions: Vec<C64> = split.features.iter().map(|x| model.predict_complex(x)).collect();
    let squared_errors = predictions.iter().zip(&split.targets).map(|(p, t)| (p - t).norm_sqr()).collect();
    Ok(RegressionMetrics { mse: mse(&predictions, &split.targets), predictions, squared_errors })
}

/// Variance of complex targets, `(1/N) sum |zeta - mean|^2`: the MSE of
/// always predicting the mean.
pub fn target_variance(targets: &[C64]) -> f64 {
    let n = targets.len().max(1) as f64;
    let mean: C64 = targets.iter().sum::<C64>() / n;
    targets.iter().map(|t| (t - mean).norm_sqr()).sum::<f64>() / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0, 0.0]);
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let p = softmax(&[2f64.ln(), 0.0, 0.0]);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        let q = softmax(&[2f64.ln() + 700.0, 700.0, 700.0]);
        assert!(p.iter().zip(&q).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn cross_entropy_examples() {
        let y = vec![one_hot(1, 3)];
        assert_eq!(cross_entropy(&[vec![0.0, 1.0, 0.0]], &y), 0.0);
        let u = cross_entropy(&[vec![1.0 / 3.0; 3]], &y);
        assert!((u - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn separable_toy_set() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut train = ClassSplit::default();
        for i in 0..90 {
            let c = i % 3;
            train
                .features
                .push((0..3).map(|k| if k == c { 1.0 } else { 0.0 } + 0.05 * rng.gen_range(-1.0..1.0)).collect());
            train.labels.push(c);
        }
        let hp = Hyperparams { epochs: 200, learning_rate: 0.05, ..Hyperparams::classification() };
        let out = train_classifier(&train, &train, 3, &hp).unwrap();
        assert_eq!(out.curve.last().unwrap().train_acc, 1.0);
        assert!(out.curve.last().unwrap().train_loss < out.curve[0].train_loss);
    }

    #[test]
    fn zero_features_give_majority_rate() {
        let train = ClassSplit { features: vec![vec![0.0, 0.0]; 10], labels: vec![0, 0, 0, 0, 0, 0, 1, 1, 2, 2] };
        let hp = Hyperparams { epochs: 300, learning_rate: 0.05, ..Hyperparams::classification() };
        let out = train_classifier(&train, &train, 3, &hp).unwrap();
        let m = evaluate_classifier(&out.model, &train, 3).unwrap();
        assert!((m.accuracy - 0.6).abs() < 1e-12);
    }

    #[test]
    fn linear_targets_are_fit() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut split = RegressionSplit::default();
        for _ in 0..60 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            split.targets.push(C64::new(0.5 * x[0] - x[2] + 0.2, 2.0 * x[1] - 1.0));
            split.features.push(x);
        }
        let hp = Hyperparams { epochs: 3000, learning_rate: 0.01, batch_size: None, ..Hyperparams::regression() };
        let out = train_regressor(&split, &split, &hp).unwrap();
        assert!(evaluate_regressor(&out.model, &split).unwrap().mse < 1e-6);
    }

    #[test]
    fn confusion_rows_sum_to_one() {
        let model = ReadoutModel {
            weights: vec![vec![1.0], vec![-1.0], vec![0.0]],
            bias: vec![0.0, 0.0, 0.1],
            standardizer: Standardizer::identity(1),
        };
        let split =
            ClassSplit { features: vec![vec![2.0], vec![-2.0], vec![0.0], vec![1.0]], labels: vec![0, 1, 2, 2] };
        let m = evaluate_classifier(&model, &split, 3).unwrap();
        assert_eq!(m.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![1, 0, 1]]);
        assert_eq!(m.confusion[2], vec![0.5, 0.0, 0.5]);
        assert_eq!(m.accuracy, 0.75);
        assert_eq!(mse(&[C64::new(1.0, 2.0)], &[C64::new(1.0, 2.0)]), 0.0);
    }
}
