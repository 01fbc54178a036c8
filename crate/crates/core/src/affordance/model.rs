//! Two-layer per-point scorer trained with class-weighted binary cross entropy.
//!
//! Model file layout (all integers and floats little-endian):
//!
//! ```text
//! b"PMAF"            magic
//! u32 version        (1)
//! u32 feature_dim    (13)
//! u32 hidden
//! u32 k              neighbourhood size of the feature extractor
//! u32 epochs
//! u32 batch_size
//! u64 seed
//! f64 learning_rate, momentum
//! f64 view_axis[3]
//! f64 mean[feature_dim], std[feature_dim]
//! f64 w1[hidden * feature_dim]   row-major, one row per hidden unit
//! f64 b1[hidden], w2[hidden], b2
//! ```

use super::features::{extract_features_with, FeatureConfig, FeatureRow, FEATURE_DIM};
use super::{AffordanceDataset, AffordanceError, AffordanceMap, PartPointCloud};
use crate::geometry::Vec3;
use crate::parallel::Execution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAGIC: &[u8; 4] = b"PMAF";
const VERSION: u32 = 1;
const LOGIT_CLAMP: f64 = 30.0;
/// Leading floats before the normalisation statistics.
const HEAD: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Heavy-ball momentum coefficient; 0 gives plain gradient descent.
    pub momentum: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self { hidden: 32, epochs: 40, learning_rate: 0.05, batch_size: 256, momentum: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffordanceModel {
    pub feature: FeatureConfig,
    mean: [f64; FEATURE_DIM],
    std: [f64; FEATURE_DIM],
    hidden: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
    pub hyper: Hyperparameters,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Loss of the initial parameters over the full training set.
    pub initial_loss: f64,
    /// Mean mini-batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    pub epochs: usize,
    pub seed: u64,
    pub positive_weight: f64,
}

/// Gradient of the mean loss, laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl Gradient {
    fn zeros(hidden: usize) -> Self {
        Self { w1: vec![0.0; hidden * FEATURE_DIM], b1: vec![0.0; hidden], w2: vec![0.0; hidden], b2: 0.0 }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.w1.len() + 2 * self.b1.len() + 1);
        v.extend(&self.w1);
        v.extend(&self.b1);
        v.extend(&self.w2);
        v.push(self.b2);
        v
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Positive-class weight `#neg / #pos` clamped to `[1, 20]`.
pub(crate) fn positive_weight(labels: &[bool]) -> f64 {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 {
        return 1.0;
    }
    (neg as f64 / pos as f64).clamp(1.0, 20.0)
}

impl AffordanceModel {
    fn init(feature: FeatureConfig, rows: &[FeatureRow], hyper: Hyperparameters, seed: u64) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = [0.0; FEATURE_DIM];
        let mut std = [0.0; FEATURE_DIM];
        for r in rows {
            for k in 0..FEATURE_DIM {
                mean[k] += r[k] / n;
            }
        }
        for r in rows {
            for k in 0..FEATURE_DIM {
                std[k] += (r[k] - mean[k]).powi(2) / n;
            }
        }
        for s in &mut std {
            *s = s.sqrt().max(1e-6);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = hyper.hidden;
        let a1 = (6.0 / (FEATURE_DIM + h) as f64).sqrt();
        let a2 = (6.0 / (h + 1) as f64).sqrt();
        let w1 = (0..h * FEATURE_DIM).map(|_| rng.random_range(-a1..a1)).collect();
        let w2 = (0..h).map(|_| rng.random_range(-a2..a2)).collect();
        Self { feature, mean, std, hidden: h, w1, b1: vec![0.0; h], w2, b2: 0.0, hyper, seed }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn feature_dim(&self) -> usize {
        FEATURE_DIM
    }

    fn normalize(&self, r: &FeatureRow) -> FeatureRow {
        std::array::from_fn(|k| (r[k] - self.mean[k]) / self.std[k])
    }

    /// Hidden activations and output logit for a normalised row.
    fn forward(&self, x: &FeatureRow, h: &mut [f64]) -> f64 {
        let mut z = self.b2;
        for j in 0..self.hidden {
            let w = &self.w1[j * FEATURE_DIM..(j + 1) * FEATURE_DIM];
            let mut a = self.b1[j];
            for k in 0..FEATURE_DIM {
                a += w[k] * x[k];
            }
            h[j] = a.tanh();
            z += self.w2[j] * h[j];
        }
        z
    }

    /// Actionability score of one raw feature row.
    pub fn score(&self, row: &FeatureRow) -> f64 {
        let mut h = vec![0.0; self.hidden];
        sigmoid(self.forward(&self.normalize(row), &mut h).clamp(-LOGIT_CLAMP, LOGIT_CLAMP))
    }

    /// Mean weighted BCE over raw rows.
    pub fn loss(&self, rows: &[FeatureRow], labels: &[bool], pos_weight: f64) -> f64 {
        let normalized: Vec<FeatureRow> = rows.iter().map(|r| self.normalize(r)).collect();
        self.loss_normalized(&normalized, labels, pos_weight)
    }

    fn loss_normalized(&self, rows: &[FeatureRow], labels: &[bool], pos_weight: f64) -> f64 {
        let mut h = vec![0.0; self.hidden];
        let total: f64 = rows
            .iter()
            .zip(labels)
            .map(|(x, &y)| {
                let z = self.forward(x, &mut h);
                if y {
                    pos_weight * softplus(-z)
                } else {
                    softplus(z)
                }
            })
            .sum();
        total / rows.len().max(1) as f64
    }

    /// Mean weighted BCE and its analytic gradient over raw rows.
    pub fn loss_and_gradient(&self, rows: &[FeatureRow], labels: &[bool], pos_weight: f64) -> (f64, Gradient) {
        let normalized: Vec<FeatureRow> = rows.iter().map(|r| self.normalize(r)).collect();
        let idx: Vec<usize> = (0..rows.len()).collect();
        let mut g = Gradient::zeros(self.hidden);
        let loss = self.accumulate(&normalized, labels, &idx, pos_weight, &mut g);
        (loss, g)
    }

    fn accumulate(&self, rows: &[FeatureRow], labels: &[bool], batch: &[usize], pos_weight: f64, g: &mut Gradient) -> f64 {
        let mut h = vec![0.0; self.hidden];
        let inv = 1.0 / batch.len().max(1) as f64;
        let mut loss = 0.0;
        for &i in batch {
            let x = &rows[i];
            let z = self.forward(x, &mut h);
            let s = sigmoid(z);
            let dz = if labels[i] {
                loss += pos_weight * softplus(-z);
                -pos_weight * (1.0 - s)
            } else {
                loss += softplus(z);
                s
            } * inv;
            g.b2 += dz;
            for j in 0..self.hidden {
                g.w2[j] += dz * h[j];
                let da = dz * self.w2[j] * (1.0 - h[j] * h[j]);
                g.b1[j] += da;
                let gw = &mut g.w1[j * FEATURE_DIM..(j + 1) * FEATURE_DIM];
                for k in 0..FEATURE_DIM {
                    gw[k] += da * x[k];
                }
            }
        }
        loss * inv
    }

    /// `v ← μ·v + g`, `θ ← θ − lr·v`.
    fn apply(&mut self, g: &Gradient, v: &mut Gradient, lr: f64, mu: f64) {
        fn step(w: &mut [f64], v: &mut [f64], g: &[f64], lr: f64, mu: f64) {
            for ((w, v), g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = mu * *v + g;
                *w -= lr * *v;
            }
        }
        step(&mut self.w1, &mut v.w1, &g.w1, lr, mu);
        step(&mut self.b1, &mut v.b1, &g.b1, lr, mu);
        step(&mut self.w2, &mut v.w2, &g.w2, lr, mu);
        v.b2 = mu * v.b2 + g.b2;
        self.b2 -= lr * v.b2;
    }

    /// Flattened trainable parameters (`w1`, `b1`, `w2`, `b2`).
    pub fn params(&self) -> Vec<f64> {
        Gradient { w1: self.w1.clone(), b1: self.b1.clone(), w2: self.w2.clone(), b2: self.b2 }.to_vec()
    }

    pub fn with_params(&self, p: &[f64]) -> Self {
        let h = self.hidden;
        assert_eq!(p.len(), h * FEATURE_DIM + 2 * h + 1, "parameter count");
        let mut m = self.clone();
        m.w1 = p[..h * FEATURE_DIM].to_vec();
        m.b1 = p[h * FEATURE_DIM..h * FEATURE_DIM + h].to_vec();
        m.w2 = p[h * FEATURE_DIM + h..h * FEATURE_DIM + 2 * h].to_vec();
        m.b2 = p[h * FEATURE_DIM + 2 * h];
        m
    }

    /// Fresh model with normalisation fitted to `rows` and seeded weights.
    pub fn initialized(feature: FeatureConfig, rows: &[FeatureRow], hyper: Hyperparameters, seed: u64) -> Self {
        Self::init(feature, rows, hyper, seed)
    }

    /// Mini-batch gradient descent on precomputed feature rows.
    pub fn train_on_features(
        feature: FeatureConfig,
        rows: &[FeatureRow],
        labels: &[bool],
        hyper: Hyperparameters,
        seed: u64,
    ) -> Result<(Self, TrainingReport), AffordanceError> {
        if rows.is_empty() {
            return Err(AffordanceError::EmptyDataset);
        }
        if rows.len() != labels.len() {
            return Err(AffordanceError::LengthMismatch(rows.len(), labels.len()));
        }
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            return Err(AffordanceError::SingleClass);
        }
        if hyper.hidden == 0 || hyper.batch_size == 0 || !(hyper.learning_rate > 0.0) || !(0.0..1.0).contains(&hyper.momentum) {
            return Err(AffordanceError::InvalidParameter(format!("{hyper:?}")));
        }
        let mut model = Self::init(feature, rows, hyper, seed);
        let normalized: Vec<FeatureRow> = rows.iter().map(|r| model.normalize(r)).collect();
        let pw = positive_weight(labels);
        let initial_loss = model.loss_normalized(&normalized, labels, pw);
        if !initial_loss.is_finite() {
            return Err(AffordanceError::NonFiniteLoss { epoch: 0, loss: initial_loss });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut grad = Gradient::zeros(hyper.hidden);
        let mut velocity = Gradient::zeros(hyper.hidden);
        let mut epoch_losses = Vec::with_capacity(hyper.epochs);
        for epoch in 0..hyper.epochs {
            order.shuffle(&mut rng);
            // running mean of the mini-batch losses seen during the epoch
            let mut loss = 0.0;
            for batch in order.chunks(hyper.batch_size) {
                grad.w1.fill(0.0);
                grad.b1.fill(0.0);
                grad.w2.fill(0.0);
                grad.b2 = 0.0;
                loss += model.accumulate(&normalized, labels, batch, pw, &mut grad) * batch.len() as f64;
                model.apply(&grad, &mut velocity, hyper.learning_rate, hyper.momentum);
            }
            loss /= rows.len() as f64;
            if !loss.is_finite() {
                return Err(AffordanceError::NonFiniteLoss { epoch: epoch + 1, loss });
            }
            log::debug!("epoch {} loss {loss:.6}", epoch + 1);
            epoch_losses.push(loss);
        }
        let final_loss = epoch_losses.last().copied().unwrap_or(initial_loss);
        let report = TrainingReport { initial_loss, epoch_losses, final_loss, epochs: hyper.epochs, seed, positive_weight: pw };
        Ok((model, report))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [VERSION, FEATURE_DIM as u32, self.hidden as u32, self.feature.k as u32, self.hyper.epochs as u32, self.hyper.batch_size as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        let mut floats =
            vec![self.hyper.learning_rate, self.hyper.momentum, self.feature.view_axis.x, self.feature.view_axis.y, self.feature.view_axis.z];
        floats.extend(self.mean);
        floats.extend(self.std);
        floats.extend(self.params());
        for f in floats {
            out.extend_from_slice(&f.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AffordanceError> {
        let bad = |m: &str| AffordanceError::MalformedModel(m.to_string());
        if bytes.len() < 36 || &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        if u32_at(0) != VERSION as usize {
            return Err(bad("unsupported version"));
        }
        if u32_at(1) != FEATURE_DIM {
            return Err(AffordanceError::FeatureDimension { expected: FEATURE_DIM, got: u32_at(1) });
        }
        let (hidden, k, epochs, batch) = (u32_at(2), u32_at(3), u32_at(4), u32_at(5));
        let seed = u64::from_le_bytes(bytes[28..36].try_into().unwrap());
        let body = &bytes[36..];
        let n_params = hidden * FEATURE_DIM + 2 * hidden + 1;
        let expected = HEAD + 2 * FEATURE_DIM + n_params;
        if body.len() != expected * 8 {
            return Err(bad(&format!("expected {} weight bytes, got {}", expected * 8, body.len())));
        }
        let f: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let mut mean = [0.0; FEATURE_DIM];
        let mut std = [0.0; FEATURE_DIM];
        mean.copy_from_slice(&f[HEAD..HEAD + FEATURE_DIM]);
        std.copy_from_slice(&f[HEAD + FEATURE_DIM..HEAD + 2 * FEATURE_DIM]);
        if std.iter().any(|s| !(*s > 0.0)) {
            return Err(bad("normalisation std must be positive"));
        }
        let feature = FeatureConfig { k, view_axis: Vec3::new(f[2], f[3], f[4]) };
        let hyper = Hyperparameters { hidden, epochs, learning_rate: f[0], batch_size: batch, momentum: f[1] };
        let shell = Self { feature, mean, std, hidden, w1: vec![], b1: vec![], w2: vec![], b2: 0.0, hyper, seed };
        Ok(shell.with_params(&f[HEAD + 2 * FEATURE_DIM..]))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AffordanceError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AffordanceError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Trains on every labelled point of the dataset with the default feature
/// extractor.
pub fn train_affordance(data: &AffordanceDataset, hyper: Hyperparameters, seed: u64) -> Result<(AffordanceModel, TrainingReport), AffordanceError> {
    if data.entries.is_empty() {
        return Err(AffordanceError::EmptyDataset);
    }
    let feature = FeatureConfig::default();
    let (rows, labels) = data.feature_table(&feature, Execution::default())?;
    AffordanceModel::train_on_features(feature, &rows, &labels, hyper, seed)
}

pub fn predict_affordance(model: &AffordanceModel, part: &PartPointCloud) -> Result<AffordanceMap, AffordanceError> {
    predict_affordance_with(model, part, Execution::default())
}

pub fn predict_affordance_with(model: &AffordanceModel, part: &PartPointCloud, exec: Execution) -> Result<AffordanceMap, AffordanceError> {
    if model.feature_dim() != FEATURE_DIM {
        return Err(AffordanceError::FeatureDimension { expected: FEATURE_DIM, got: model.feature_dim() });
    }
    let (rows, _) = extract_features_with(part, &model.feature, exec)?;
    let scores = crate::parallel::map_slice(exec, &rows, |r| model.score(r));
    AffordanceMap::new(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affordance::FrameTag;
    use crate::geometry::Pt3;

    fn separable(n: usize, seed: u64) -> (Vec<FeatureRow>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let mut r = [0.0; FEATURE_DIM];
            for v in r.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            let y = i % 2 == 0;
            // margin 0.2 along feature 0 and 3
            r[0] = if y { rng.random_range(0.2..1.0) } else { rng.random_range(-1.0..-0.2) };
            r[3] = r[0] * 0.5 + rng.random_range(-0.05..0.05);
            rows.push(r);
            labels.push(y);
        }
        (rows, labels)
    }

    fn hyper(epochs: usize) -> Hyperparameters {
        Hyperparameters { hidden: 8, epochs, learning_rate: 0.05, batch_size: 32, momentum: 0.0 }
    }

    #[test]
    fn separable_set_converges() {
        let (rows, labels) = separable(400, 1);
        let (model, report) = AffordanceModel::train_on_features(FeatureConfig::default(), &rows, &labels, hyper(200), 7).unwrap();
        assert!(report.final_loss < 0.05, "{}", report.final_loss);
        // closed-loop check: a logistic threshold on the trained scorer separates every sample
        let correct = rows.iter().zip(&labels).filter(|(r, &y)| (model.score(r) >= 0.5) == y).count();
        assert_eq!(correct, rows.len());
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (rows, labels) = separable(100, 2);
        let (model, report) = AffordanceModel::train_on_features(FeatureConfig::default(), &rows, &labels, hyper(0), 3).unwrap();
        let init = AffordanceModel::initialized(FeatureConfig::default(), &rows, hyper(0), 3);
        assert_eq!(model, init);
        assert_eq!(report.final_loss, report.initial_loss);
        assert!(report.epoch_losses.is_empty());
    }

    #[test]
    fn flipped_labels_flip_scores() {
        let (rows, labels) = separable(400, 4);
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let (a, _) = AffordanceModel::train_on_features(FeatureConfig::default(), &rows, &labels, hyper(100), 5).unwrap();
        let (b, _) = AffordanceModel::train_on_features(FeatureConfig::default(), &rows, &flipped, hyper(100), 5).unwrap();
        let mad: f64 = rows.iter().map(|r| (a.score(r) - (1.0 - b.score(r))).abs()).sum::<f64>() / rows.len() as f64;
        assert!(mad < 0.1, "{mad}");
    }

    #[test]
    fn single_class_rejected() {
        let (rows, _) = separable(10, 1);
        let labels = vec![true; 10];
        assert_eq!(
            AffordanceModel::train_on_features(FeatureConfig::default(), &rows, &labels, hyper(1), 0).unwrap_err(),
            AffordanceError::SingleClass
        );
    }

    #[test]
    fn deterministic_training() {
        let (rows, labels) = separable(200, 8);
        let a = AffordanceModel::train_on_features(FeatureConfig::default(), &rows, &labels, hyper(20), 9).unwrap();
        let b = AffordanceModel::train_on_features(FeatureConfig::default(), &rows, &labels, hyper(20), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (rows, labels) = separable(10, 11);
        let model = AffordanceModel::initialized(FeatureConfig::default(), &rows, hyper(0), 12);
        let (_, g) = model.loss_and_gradient(&rows, &labels, 2.5);
        let p = model.params();
        let analytic = g.to_vec();
        let h = 1e-5;
        for i in 0..p.len() {
            let mut plus = p.clone();
            plus[i] += h;
            let mut minus = p.clone();
            minus[i] -= h;
            let fd = (model.with_params(&plus).loss(&rows, &labels, 2.5) - model.with_params(&minus).loss(&rows, &labels, 2.5)) / (2.0 * h);
            let rel = (fd - analytic[i]).abs() / analytic[i].abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "param {i}: fd {fd} analytic {}", analytic[i]);
        }
    }

    #[test]
    fn model_bytes_round_trip() {
        let (rows, labels) = separable(50, 1);
        let (m, _) = AffordanceModel::train_on_features(FeatureConfig::default(), &rows, &labels, hyper(3), 1).unwrap();
        let back = AffordanceModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        let mut bytes = m.to_bytes();
        bytes[0] = b'X';
        assert!(AffordanceModel::from_bytes(&bytes).is_err());
        let mut bytes = m.to_bytes();
        bytes[8] = 12;
        assert!(matches!(AffordanceModel::from_bytes(&bytes), Err(AffordanceError::FeatureDimension { .. })));
        assert!(AffordanceModel::from_bytes(&m.to_bytes()[..100]).is_err());
    }

    #[test]
    fn prediction_ranges_and_duplicates() {
        let (rows, labels) = separable(50, 1);
        let (m, _) = AffordanceModel::train_on_features(FeatureConfig::default(), &rows, &labels, hyper(3), 1).unwrap();
        let base: Vec<Pt3> = (0..40).map(|i| Pt3::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos(), (i % 5) as f64 * 0.1)).collect();
        let mut doubled = base.clone();
        doubled.extend(base.iter().copied());
        let cloud = PartPointCloud::new(doubled, FrameTag::Part);
        let map = predict_affordance(&m, &cloud).unwrap();
        assert!(map.scores().iter().all(|&s| s > 0.0 && s < 1.0));
        for i in 0..40 {
            assert_eq!(map.scores()[i], map.scores()[i + 40]);
        }
        let small = PartPointCloud::new(base[..10].to_vec(), FrameTag::Part);
        assert!(matches!(predict_affordance(&m, &small), Err(AffordanceError::TooFewPoints { .. })));
    }
}
