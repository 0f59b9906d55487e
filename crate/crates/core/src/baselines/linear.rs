use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{glorot, log_softmax, shuffled_indices, Classifier, FeatureSet, ScaledMatrix};
use crate::error::{Error, Result};
use crate::vectorize::SparseVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Softmax cross-entropy (logistic regression).
    Logistic,
    /// One-vs-rest hinge (the linear SGD classifier).
    Hinge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            loss: LossKind::Logistic,
            epochs: super::DEFAULT_EPOCHS,
            lr: 0.1,
            l2: super::DEFAULT_L2,
            batch_size: super::DEFAULT_BATCH,
            seed: 0,
        }
    }
}

/// One weight vector and bias per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub labels: Vec<String>,
    pub dim: usize,
    pub loss_kind: LossKind,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Classifier for LinearModel {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn scores(&self, x: &SparseVector) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + x.pairs.iter().map(|&(j, v)| w[j] * v).sum::<f64>())
            .collect())
    }
}

/// Loss of one example and its derivative with respect to the class scores.
fn score_loss(loss: LossKind, scores: &[f64], target: usize) -> (f64, Vec<f64>) {
    match loss {
        LossKind::Logistic => {
            let logp = log_softmax(scores);
            let mut d: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
            d[target] -= 1.0;
            (-logp[target], d)
        }
        LossKind::Hinge => {
            let mut loss = 0.0;
            let d = scores
                .iter()
                .enumerate()
                .map(|(c, &s)| {
                    let y = if c == target { 1.0 } else { -1.0 };
                    if y * s < 1.0 {
                        loss += 1.0 - y * s;
                        -y
                    } else {
                        0.0
                    }
                })
                .collect();
            (loss, d)
        }
    }
}

impl LinearModel {
    /// Mean loss plus `l2 / 2 * ||W||^2` (bias unpenalized).
    pub fn objective(&self, data: &FeatureSet, l2: f64) -> Result<f64> {
        let mut total = 0.0;
        for (x, &t) in data.rows.iter().zip(&data.targets) {
            total += score_loss(self.loss_kind, &self.scores(x)?, t).0;
        }
        let penalty: f64 = self.weights.iter().flatten().map(|w| w * w).sum();
        Ok(total / data.len().max(1) as f64 + 0.5 * l2 * penalty)
    }

    /// Gradient of [`Self::objective`], flattened as in [`Self::flat_params`].
    pub fn flat_gradient(&self, data: &FeatureSet, l2: f64) -> Result<Vec<f64>> {
        let k = self.labels.len();
        let n = data.len().max(1) as f64;
        let mut gw: Vec<Vec<f64>> = self.weights.iter().map(|w| w.iter().map(|v| l2 * v).collect()).collect();
        let mut gb = vec![0.0; k];
        for (x, &t) in data.rows.iter().zip(&data.targets) {
            let (_, ds) = score_loss(self.loss_kind, &self.scores(x)?, t);
            for c in 0..k {
                gb[c] += ds[c] / n;
                for &(j, v) in &x.pairs {
                    gw[c][j] += ds[c] * v / n;
                }
            }
        }
        Ok(gw.into_iter().flatten().chain(gb).collect())
    }

    /// Class-major weights followed by the biases.
    pub fn flat_params(&self) -> Vec<f64> {
        self.weights.iter().flatten().chain(&self.bias).copied().collect()
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.labels.len() * (self.dim + 1));
        let (w, b) = params.split_at(self.labels.len() * self.dim);
        for (c, row) in self.weights.iter_mut().enumerate() {
            row.copy_from_slice(&w[c * self.dim..(c + 1) * self.dim]);
        }
        self.bias.copy_from_slice(b);
    }

    /// Glorot-initialized model with zero biases.
    pub fn init(labels: Vec<String>, dim: usize, loss_kind: LossKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = labels.len();
        let flat = glorot(&mut rng, dim, k, k * dim);
        LinearModel {
            weights: (0..k).map(|c| flat[c * dim..(c + 1) * dim].to_vec()).collect(),
            bias: vec![0.0; k],
            labels,
            dim,
            loss_kind,
        }
    }
}

/// Mini-batch SGD on mean loss + L2; deterministic per seed.
pub fn train_linear(train: &FeatureSet, config: &LinearConfig) -> Result<LinearModel> {
    if config.batch_size == 0 || config.lr <= 0.0 || config.l2 < 0.0 {
        return Err(Error::Config(format!("invalid linear config {config:?}")));
    }
    train.require_every_class()?;
    let k = train.n_classes();
    let dim = train.dim;
    let init = LinearModel::init(train.labels.clone(), dim, config.loss, config.seed);
    let mut weights = ScaledMatrix::from_vec(k, dim, init.weights.into_iter().flatten().collect());
    let mut bias = init.bias;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));

    let mut ds_batch: Vec<Vec<f64>> = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        let order = shuffled_indices(&mut rng, train.len());
        for batch in order.chunks(config.batch_size) {
            ds_batch.clear();
            for &i in batch {
                let x = &train.rows[i];
                let scores: Vec<f64> = (0..k)
                    .map(|c| bias[c] + x.pairs.iter().map(|&(j, v)| weights.get(c, j) * v).sum::<f64>())
                    .collect();
                ds_batch.push(score_loss(config.loss, &scores, train.targets[i]).1);
            }
            let step = config.lr / batch.len() as f64;
            weights.shrink(1.0 - config.lr * config.l2);
            for (&i, ds) in batch.iter().zip(&ds_batch) {
                for c in 0..k {
                    if ds[c] == 0.0 {
                        continue;
                    }
                    bias[c] -= step * ds[c];
                    for &(j, v) in &train.rows[i].pairs {
                        weights.add(c, j, -step * ds[c] * v);
                    }
                }
            }
        }
    }
    let flat = weights.into_vec();
    Ok(LinearModel {
        labels: train.labels.clone(),
        dim,
        loss_kind: config.loss,
        weights: (0..k).map(|c| flat[c * dim..(c + 1) * dim].to_vec()).collect(),
        bias,
    })
}
