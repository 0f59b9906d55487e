use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{glorot, log_softmax, shuffled_indices, Classifier, FeatureSet, ScaledMatrix};
use crate::error::{Error, Result};
use crate::vectorize::SparseVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_width: usize,
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_width: 128,
            epochs: super::DEFAULT_EPOCHS,
            lr: 0.01,
            l2: super::DEFAULT_L2,
            batch_size: super::DEFAULT_BATCH,
            seed: 0,
        }
    }
}

/// Fully connected layer, `weights` row-major `in_dim x out_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Rectifier hidden layers and a softmax output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MLPModel {
    pub labels: Vec<String>,
    pub layers: Vec<DenseLayer>,
}

trait LayerView {
    fn weight(&self, r: usize, c: usize) -> f64;
    fn bias(&self) -> &[f64];
}

impl LayerView for DenseLayer {
    #[inline]
    fn weight(&self, r: usize, c: usize) -> f64 {
        self.weights[r * self.out_dim + c]
    }

    fn bias(&self) -> &[f64] {
        &self.bias
    }
}

impl LayerView for (ScaledMatrix, Vec<f64>) {
    #[inline]
    fn weight(&self, r: usize, c: usize) -> f64 {
        self.0.get(r, c)
    }

    fn bias(&self) -> &[f64] {
        &self.1
    }
}

/// Pre-activations of every layer; the last entry holds the logits.
fn forward<L: LayerView>(layers: &[L], x: &SparseVector) -> Vec<Vec<f64>> {
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate() {
        let mut z = layer.bias().to_vec();
        if l == 0 {
            for &(r, v) in &x.pairs {
                for (c, zc) in z.iter_mut().enumerate() {
                    *zc += v * layer.weight(r, c);
                }
            }
        } else {
            for (r, &a) in pre[l - 1].iter().enumerate() {
                if a > 0.0 {
                    for (c, zc) in z.iter_mut().enumerate() {
                        *zc += a * layer.weight(r, c);
                    }
                }
            }
        }
        pre.push(z);
    }
    pre
}

/// Cross-entropy loss and the gradient with respect to every layer's
/// pre-activation. The weight gradient of layer `l` is the outer product of
/// its input activation with `dz[l]`.
fn backward<L: LayerView>(layers: &[L], pre: &[Vec<f64>], target: usize) -> (f64, Vec<Vec<f64>>) {
    let n = layers.len();
    let logp = log_softmax(&pre[n - 1]);
    let mut dz = vec![Vec::new(); n];
    let mut d: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    d[target] -= 1.0;
    dz[n - 1] = d;
    for l in (1..n).rev() {
        let width = pre[l - 1].len();
        let mut da = vec![0.0; width];
        for (r, dr) in da.iter_mut().enumerate() {
            if pre[l - 1][r] > 0.0 {
                *dr = dz[l].iter().enumerate().map(|(c, g)| g * layers[l].weight(r, c)).sum();
            }
        }
        dz[l - 1] = da;
    }
    (-logp[target], dz)
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

impl Classifier for MLPModel {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    fn scores(&self, x: &SparseVector) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(forward(&self.layers, x).pop().expect("at least one layer"))
    }
}

impl MLPModel {
    pub fn init(labels: Vec<String>, input_dim: usize, hidden_width: usize, seed: u64) -> Result<Self> {
        if hidden_width == 0 {
            return Err(Error::Config("hidden_width must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [input_dim, hidden_width, labels.len()];
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer {
                in_dim: w[0],
                out_dim: w[1],
                weights: glorot(&mut rng, w[0], w[1], w[0] * w[1]),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Ok(MLPModel { labels, layers })
    }

    /// Mean cross-entropy plus `l2 / 2` times the squared weight norm.
    pub fn objective(&self, data: &FeatureSet, l2: f64) -> Result<f64> {
        let mut total = 0.0;
        for (x, &t) in data.rows.iter().zip(&data.targets) {
            self.check_dim(x)?;
            let pre = forward(&self.layers, x);
            total += -log_softmax(&pre[pre.len() - 1])[t];
        }
        let penalty: f64 = self.layers.iter().flat_map(|l| &l.weights).map(|w| w * w).sum();
        Ok(total / data.len().max(1) as f64 + 0.5 * l2 * penalty)
    }

    /// Gradient of [`Self::objective`] in [`Self::flat_params`] order.
    pub fn flat_gradient(&self, data: &FeatureSet, l2: f64) -> Result<Vec<f64>> {
        let n = data.len().max(1) as f64;
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (l.weights.iter().map(|w| l2 * w).collect(), vec![0.0; l.out_dim]))
            .collect();
        for (x, &t) in data.rows.iter().zip(&data.targets) {
            self.check_dim(x)?;
            let pre = forward(&self.layers, x);
            let (_, dz) = backward(&self.layers, &pre, t);
            for (l, layer) in self.layers.iter().enumerate() {
                let (gw, gb) = &mut grads[l];
                for c in 0..layer.out_dim {
                    gb[c] += dz[l][c] / n;
                }
                let input: Vec<(usize, f64)> = if l == 0 {
                    x.pairs.clone()
                } else {
                    pre[l - 1].iter().map(|&z| relu(z)).enumerate().collect()
                };
                for (r, a) in input {
                    for c in 0..layer.out_dim {
                        gw[r * layer.out_dim + c] += a * dz[l][c] / n;
                    }
                }
            }
        }
        Ok(grads.into_iter().flat_map(|(w, b)| w.into_iter().chain(b)).collect())
    }

    /// Each layer's weights then bias, in layer order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .copied()
            .collect()
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        let mut it = params.iter().copied();
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = it.next().expect("parameter vector too short");
            }
        }
        assert!(it.next().is_none(), "parameter vector too long");
    }
}

/// Per-layer activations and per-layer output gradients of one example.
type Trace = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Mini-batch SGD with backpropagation; deterministic per seed.
pub fn train_mlp(train: &FeatureSet, config: &MlpConfig) -> Result<MLPModel> {
    if config.batch_size == 0 || config.lr <= 0.0 || config.l2 < 0.0 {
        return Err(Error::Config(format!("invalid MLP config {config:?}")));
    }
    let init = MLPModel::init(train.labels.clone(), train.dim, config.hidden_width, config.seed)?;
    train.require_every_class()?;
    let mut layers: Vec<(ScaledMatrix, Vec<f64>)> = init
        .layers
        .into_iter()
        .map(|l| (ScaledMatrix::from_vec(l.in_dim, l.out_dim, l.weights), l.bias))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));

    let mut cached: Vec<Trace> = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        let order = shuffled_indices(&mut rng, train.len());
        for batch in order.chunks(config.batch_size) {
            cached.clear();
            for &i in batch {
                let pre = forward(&layers, &train.rows[i]);
                let (loss, dz) = backward(&layers, &pre, train.targets[i]);
                if !loss.is_finite() {
                    return Err(Error::Divergence { step: epoch, loss });
                }
                cached.push((pre, dz));
            }
            let step = config.lr / batch.len() as f64;
            for (w, _) in &mut layers {
                w.shrink(1.0 - config.lr * config.l2);
            }
            for (&i, (pre, dz)) in batch.iter().zip(&cached) {
                for (l, (w, b)) in layers.iter_mut().enumerate() {
                    for (bc, g) in b.iter_mut().zip(&dz[l]) {
                        *bc -= step * g;
                    }
                    if l == 0 {
                        for &(r, a) in &train.rows[i].pairs {
                            for (c, g) in dz[0].iter().enumerate() {
                                w.add(r, c, -step * a * g);
                            }
                        }
                    } else {
                        for (r, &z) in pre[l - 1].iter().enumerate() {
                            if z > 0.0 {
                                for (c, g) in dz[l].iter().enumerate() {
                                    w.add(r, c, -step * z * g);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(MLPModel {
        labels: train.labels.clone(),
        layers: layers
            .into_iter()
            .map(|(w, bias)| DenseLayer {
                in_dim: w.rows,
                out_dim: w.cols,
                weights: w.into_vec(),
                bias,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn labels(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    fn xor() -> FeatureSet {
        let rows = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]
            .iter()
            .map(|p| SparseVector::from_dense(p))
            .collect();
        FeatureSet::new(rows, vec![0, 1, 1, 0], labels(2), 2).unwrap()
    }

    /// Exhaustive search over a grid of lines `w . x + b`: none labels XOR correctly.
    fn linear_rule_solves_xor() -> bool {
        let grid: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.25).collect();
        let points = [([0.0, 0.0], false), ([0.0, 1.0], true), ([1.0, 0.0], true), ([1.0, 1.0], false)];
        for &w0 in &grid {
            for &w1 in &grid {
                for &b in &grid {
                    if points.iter().all(|(p, y)| (w0 * p[0] + w1 * p[1] + b > 0.0) == *y) {
                        return true;
                    }
                }
            }
        }
        false
    }

    #[test]
    fn learns_xor() {
        assert!(!linear_rule_solves_xor());
        let data = xor();
        let config = MlpConfig {
            hidden_width: 8,
            epochs: 2000,
            lr: 0.1,
            seed: 1,
            ..Default::default()
        };
        let model = train_mlp(&data, &config).unwrap();
        for (x, &t) in data.rows.iter().zip(&data.targets) {
            assert_eq!(model.predict_index(x).unwrap(), t);
        }
    }

    #[test]
    fn zero_width_rejected() {
        let config = MlpConfig {
            hidden_width: 0,
            ..Default::default()
        };
        assert!(matches!(train_mlp(&xor(), &config), Err(Error::Config(_))));
    }

    #[test]
    fn seeded_determinism_and_shape_check() {
        let config = MlpConfig {
            hidden_width: 4,
            epochs: 20,
            seed: 9,
            ..Default::default()
        };
        let a = train_mlp(&xor(), &config).unwrap();
        assert_eq!(a, train_mlp(&xor(), &config).unwrap());
        assert!(matches!(a.scores(&SparseVector::zeros(5)), Err(Error::Shape(_))));
        assert_eq!(a.layers[0].weights.len(), 2 * 4);
        assert_eq!(a.layers[1].weights.len(), 4 * 2);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dim = 5;
        let rows: Vec<SparseVector> = (0..12)
            .map(|_| SparseVector::from_dense(&(0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let data = FeatureSet::new(rows, (0..12).map(|i| i % 3).collect(), labels(3), dim).unwrap();
        let mut model = MLPModel::init(labels(3), dim, 4, 2).unwrap();
        for layer in &mut model.layers {
            layer.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
        let analytic = model.flat_gradient(&data, 0.01).unwrap();
        let params = model.flat_params();
        assert_eq!(analytic.len(), params.len());
        let h = 1e-5;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            model.set_flat_params(&p);
            let up = model.objective(&data, 0.01).unwrap();
            p[i] -= 2.0 * h;
            model.set_flat_params(&p);
            let down = model.objective(&data, 0.01).unwrap();
            let numeric = (up - down) / (2.0 * h);
            let rel = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-8);
            assert!(rel <= 1e-4, "param {i}: {numeric} vs {}", analytic[i]);
        }
    }
}
