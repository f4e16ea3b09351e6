//! Linear SVMs trained by dual coordinate descent.
//!
//! Binary problems solve the L2-regularized L1-loss (hinge) SVM
//!
//! ```text
//! min_w  1/2 |w~|^2 + C * sum_i max(0, 1 - y_i w~ . x~_i)
//! ```
//!
//! where `x~ = (x, 1)` so the bias is learned (and regularized) as an extra
//! weight. The dual `max_a sum a_i - 1/2 |sum a_i y_i x~_i|^2, 0 <= a_i <= C`
//! is optimized one coordinate at a time with a seeded random sweep order.
//! Multiclass models are one-vs-all collections of binary models.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecops::{axpy, dot};

pub const MODEL_MAGIC: &[u8; 4] = b"LSVM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub max_epochs: usize,
    /// Stop once the spread of projected gradients over one sweep drops below this.
    pub tol: f64,
    /// Seed for the coordinate sweep order.
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_epochs: 1000,
            tol: 1e-4,
            seed: 0,
        }
    }
}

impl SvmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("C must be positive, got {}", self.c)));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::Config("tol must be positive".into()));
        }
        Ok(())
    }
}

/// Separating hyperplane `weights . x + bias = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn constant(dim: usize, value: f64) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: value,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn weight_norm(&self) -> f64 {
        dot(&self.weights, &self.weights).sqrt()
    }

    /// Negates the hyperplane so the positive side swaps.
    pub fn flipped(&self) -> Self {
        Self {
            weights: self.weights.iter().map(|w| -w).collect(),
            bias: -self.bias,
        }
    }
}

/// Per-run diagnostics from the dual solver.
#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub epochs: usize,
    /// Dual objective after each sweep.
    pub dual_objective: Vec<f64>,
    /// Projected-gradient spread of the last sweep.
    pub kkt_residual: f64,
    pub converged: bool,
}

fn check_rows(samples: &[&[f64]]) -> Result<usize> {
    let dim = samples
        .first()
        .map(|r| r.len())
        .ok_or_else(|| Error::Degenerate("empty training set".into()))?;
    if let Some(r) = samples.iter().find(|r| r.len() != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            got: r.len(),
        });
    }
    Ok(dim)
}

pub fn train_binary(samples: &[&[f64]], labels: &[i8], params: &SvmParams) -> Result<LinearModel> {
    train_binary_with_report(samples, labels, params).map(|(m, _)| m)
}

/// Trains a binary model on labels in `{-1, +1}` and returns solver diagnostics.
pub fn train_binary_with_report(
    samples: &[&[f64]],
    labels: &[i8],
    params: &SvmParams,
) -> Result<(LinearModel, TrainReport)> {
    params.validate()?;
    let dim = check_rows(samples)?;
    if samples.len() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} samples but {} labels",
            samples.len(),
            labels.len()
        )));
    }
    if let Some(y) = labels.iter().find(|&&y| y != 1 && y != -1) {
        return Err(Error::Data(format!(
            "binary label must be -1 or +1, got {y}"
        )));
    }
    let has_pos = labels.iter().any(|&y| y > 0);
    let has_neg = labels.iter().any(|&y| y < 0);
    if !(has_pos && has_neg) {
        return Err(Error::Degenerate(
            "binary training needs samples of both signs".into(),
        ));
    }

    let c = params.c;
    let n = samples.len();
    let y: Vec<f64> = labels.iter().map(|&v| v as f64).collect();
    let qd: Vec<f64> = samples.iter().map(|x| dot(x, x) + 1.0).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut report = TrainReport::default();

    // Coordinates stuck at a bound are shrunk out of the sweep; a full sweep
    // confirms convergence before stopping.
    let mut active = n;
    let mut pg_max_old = f64::INFINITY;
    let mut pg_min_old = f64::NEG_INFINITY;
    for epoch in 0..params.max_epochs {
        order[..active].shuffle(&mut rng);
        let mut pg_max = f64::NEG_INFINITY;
        let mut pg_min = f64::INFINITY;
        let mut s = 0;
        while s < active {
            let i = order[s];
            let x = samples[i];
            let g = y[i] * (dot(&w, x) + b) - 1.0;
            let pg = if alpha[i] == 0.0 {
                if g > pg_max_old {
                    active -= 1;
                    order.swap(s, active);
                    continue;
                }
                g.min(0.0)
            } else if alpha[i] == c {
                if g < pg_min_old {
                    active -= 1;
                    order.swap(s, active);
                    continue;
                }
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / qd[i]).clamp(0.0, c);
                let delta = (alpha[i] - old) * y[i];
                if delta != 0.0 {
                    axpy(delta, x, &mut w);
                    b += delta;
                }
            }
            s += 1;
        }
        let wnorm2 = dot(&w, &w) + b * b;
        report
            .dual_objective
            .push(alpha.iter().sum::<f64>() - 0.5 * wnorm2);
        report.epochs = epoch + 1;
        report.kkt_residual = pg_max - pg_min;
        if report.kkt_residual <= params.tol {
            if active == n {
                report.converged = true;
                break;
            }
            active = n;
            pg_max_old = f64::INFINITY;
            pg_min_old = f64::NEG_INFINITY;
            continue;
        }
        pg_max_old = if pg_max <= 0.0 { f64::INFINITY } else { pg_max };
        pg_min_old = if pg_min >= 0.0 {
            f64::NEG_INFINITY
        } else {
            pg_min
        };
    }
    if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(Error::Numeric("non-finite SVM weights".into()));
    }
    Ok((
        LinearModel {
            weights: w,
            bias: b,
        },
        report,
    ))
}

/// `1/2 |w~|^2 + C * sum hinge`, with the bias counted as a regularized weight.
pub fn primal_objective(model: &LinearModel, samples: &[&[f64]], labels: &[i8], c: f64) -> f64 {
    let reg = 0.5 * (dot(&model.weights, &model.weights) + model.bias * model.bias);
    let loss: f64 = samples
        .iter()
        .zip(labels)
        .map(|(x, &y)| (1.0 - y as f64 * model.decision(x)).max(0.0))
        .sum();
    reg + c * loss
}

/// `(weights . x + bias) / |weights|`.
pub fn signed_distance(model: &LinearModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.dim() {
        return Err(Error::DimMismatch {
            expected: model.dim(),
            got: x.len(),
        });
    }
    let norm = model.weight_norm();
    if norm == 0.0 {
        return Err(Error::Degenerate(
            "zero-weight model has no hyperplane".into(),
        ));
    }
    Ok(model.decision(x) / norm)
}

/// One-vs-all collection of `n` binary models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MulticlassModel {
    per_class: Vec<LinearModel>,
}

impl MulticlassModel {
    pub fn new(per_class: Vec<LinearModel>) -> Result<Self> {
        let dim = per_class
            .first()
            .map(|m| m.dim())
            .ok_or_else(|| Error::Degenerate("multiclass model needs classes".into()))?;
        if let Some(m) = per_class.iter().find(|m| m.dim() != dim) {
            return Err(Error::DimMismatch {
                expected: dim,
                got: m.dim(),
            });
        }
        Ok(Self { per_class })
    }

    pub fn n_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn dim(&self) -> usize {
        self.per_class[0].dim()
    }

    pub fn per_class(&self) -> &[LinearModel] {
        &self.per_class
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn decision_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.per_class.iter().map(|m| m.decision(x)).collect())
    }

    /// Softmax of the decision values.
    pub fn confidence(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.decision_values(x)?))
    }

    /// Argmax of the decision values, lowest index on ties.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.decision_values(x)?))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&(self.n_classes() as u32).to_le_bytes())?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        for m in &self.per_class {
            for v in m.weights.iter().chain(std::iter::once(&m.bias)) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        if bytes.len() < 16 || &bytes[0..4] != MODEL_MAGIC {
            return Err(Error::Format("not an LSVM model file".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        if u32_at(4) != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported version {}", u32_at(4))));
        }
        let n = u32_at(8) as usize;
        let dim = u32_at(12) as usize;
        if bytes.len() != 16 + n * (dim + 1) * 8 {
            return Err(Error::Format("LSVM payload length mismatch".into()));
        }
        let vals: Vec<f64> = bytes[16..]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let per_class = vals
            .chunks_exact(dim + 1)
            .map(|c| LinearModel {
                weights: c[..dim].to_vec(),
                bias: c[dim],
            })
            .collect();
        Self::new(per_class)
    }
}

/// Trains one binary model per class in `[0, n_classes)`.
///
/// A class with no training samples gets the constant decision -1; a class
/// that owns every training sample gets the constant decision +1.
pub fn train_multiclass(
    samples: &[&[f64]],
    labels: &[usize],
    n_classes: usize,
    params: &SvmParams,
) -> Result<MulticlassModel> {
    if n_classes < 2 {
        return Err(Error::Config("need at least two classes".into()));
    }
    let dim = check_rows(samples)?;
    if samples.len() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} samples but {} labels",
            samples.len(),
            labels.len()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::Data(format!("label {y} outside [0, {n_classes})")));
    }
    let mut per_class = Vec::with_capacity(n_classes);
    let mut signs = vec![0i8; labels.len()];
    for c in 0..n_classes {
        let mut positives = 0;
        for (s, &y) in signs.iter_mut().zip(labels) {
            *s = if y == c {
                positives += 1;
                1
            } else {
                -1
            };
        }
        let model = if positives == 0 {
            LinearModel::constant(dim, -1.0)
        } else if positives == labels.len() {
            LinearModel::constant(dim, 1.0)
        } else {
            train_binary(samples, &signs, params)?
        };
        per_class.push(model);
    }
    MulticlassModel::new(per_class)
}

/// Numerically stable softmax.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose prediction matches the label.
pub fn accuracy(model: &MulticlassModel, samples: &[&[f64]], labels: &[usize]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples to score".into()));
    }
    let mut correct = 0usize;
    for (x, &y) in samples.iter().zip(labels) {
        if model.predict(x)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}
