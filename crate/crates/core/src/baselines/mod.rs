//! Classical text classifiers over sparse features: softmax/hinge linear
//! models trained by mini-batch SGD, multinomial naive Bayes, and a
//! one-hidden-layer perceptron.

mod linear;
mod mlp;
mod naive_bayes;

pub use linear::{train_linear, LinearConfig, LinearModel, LossKind};
pub use mlp::{train_mlp, MLPModel, MlpConfig};
pub use naive_bayes::{train_nb, NBModel};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledPost;
use crate::error::{Error, Result};
use crate::vectorize::{SparseVector, VectorizerState};

/// Default L2 penalty shared by the SGD-trained models.
pub const DEFAULT_L2: f64 = 1e-4;
pub const DEFAULT_BATCH: usize = 32;
pub const DEFAULT_EPOCHS: usize = 100;

/// Vectorized examples with class indices into `labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub rows: Vec<SparseVector>,
    pub targets: Vec<usize>,
    pub labels: Vec<String>,
    pub dim: usize,
}

impl FeatureSet {
    pub fn new(rows: Vec<SparseVector>, targets: Vec<usize>, labels: Vec<String>, dim: usize) -> Result<Self> {
        if rows.len() != targets.len() {
            return Err(Error::Shape(format!("{} rows but {} targets", rows.len(), targets.len())));
        }
        if let Some(r) = rows.iter().find(|r| r.dim != dim) {
            return Err(Error::Shape(format!("row of dim {} in a dim-{dim} feature set", r.dim)));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= labels.len()) {
            return Err(Error::Shape(format!("target {t} out of range for {} labels", labels.len())));
        }
        Ok(FeatureSet {
            rows,
            targets,
            labels,
            dim,
        })
    }

    /// Vectorizes posts with a fitted state; labels index into `labels`.
    pub fn from_posts(posts: &[LabeledPost], state: &VectorizerState, labels: &[String]) -> Result<Self> {
        let mut rows = Vec::with_capacity(posts.len());
        let mut targets = Vec::with_capacity(posts.len());
        for post in posts {
            let target = labels
                .iter()
                .position(|l| *l == post.label)
                .ok_or_else(|| Error::Schema(format!("label {:?} not in {:?}", post.label, labels)))?;
            rows.push(state.transform(&post.text)?);
            targets.push(target);
        }
        Self::new(rows, targets, labels.to_vec(), state.dim())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    fn require_every_class(&self) -> Result<()> {
        let mut seen = vec![false; self.n_classes()];
        for &t in &self.targets {
            seen[t] = true;
        }
        match seen.iter().position(|s| !s) {
            Some(c) => Err(Error::Input(format!("no training example for class {:?}", self.labels[c]))),
            None => Ok(()),
        }
    }
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Common prediction surface of the fitted baselines.
pub trait Classifier {
    fn labels(&self) -> &[String];

    fn input_dim(&self) -> usize;

    /// Per-class scores; larger is more likely.
    fn scores(&self, x: &SparseVector) -> Result<Vec<f64>>;

    fn predict_index(&self, x: &SparseVector) -> Result<usize> {
        Ok(argmax(&self.scores(x)?))
    }

    fn predict(&self, x: &SparseVector) -> Result<&str> {
        let i = self.predict_index(x)?;
        Ok(&self.labels()[i])
    }

    fn check_dim(&self, x: &SparseVector) -> Result<()> {
        if x.dim != self.input_dim() {
            return Err(Error::Shape(format!(
                "feature dim {} does not match model dim {}",
                x.dim,
                self.input_dim()
            )));
        }
        Ok(())
    }
}

/// Any fitted baseline, as stored in a model artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BaselineModel {
    Linear(LinearModel),
    NaiveBayes(NBModel),
    Mlp(MLPModel),
}

impl BaselineModel {
    fn inner(&self) -> &dyn Classifier {
        match self {
            BaselineModel::Linear(m) => m,
            BaselineModel::NaiveBayes(m) => m,
            BaselineModel::Mlp(m) => m,
        }
    }
}

impl Classifier for BaselineModel {
    fn labels(&self) -> &[String] {
        self.inner().labels()
    }

    fn input_dim(&self) -> usize {
        self.inner().input_dim()
    }

    fn scores(&self, x: &SparseVector) -> Result<Vec<f64>> {
        self.inner().scores(x)
    }
}

/// Glorot-uniform sample in `±sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

/// Row-major matrix stored as `scale * data`, so that an L2 shrink of every
/// entry costs O(1) during sparse SGD.
#[derive(Debug, Clone)]
pub(crate) struct ScaledMatrix {
    pub rows: usize,
    pub cols: usize,
    scale: f64,
    data: Vec<f64>,
}

impl ScaledMatrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        ScaledMatrix {
            rows,
            cols,
            scale: 1.0,
            data,
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.scale * self.data[r * self.cols + c]
    }

    /// Multiplies every entry by `factor`.
    pub fn shrink(&mut self, factor: f64) {
        self.scale *= factor;
        if self.scale < 1e-9 {
            self.materialize_scale();
        }
    }

    #[inline]
    pub fn add(&mut self, r: usize, c: usize, delta: f64) {
        self.data[r * self.cols + c] += delta / self.scale;
    }

    fn materialize_scale(&mut self) {
        let s = self.scale;
        self.data.iter_mut().for_each(|v| *v *= s);
        self.scale = 1.0;
    }

    pub fn into_vec(mut self) -> Vec<f64> {
        self.materialize_scale();
        self.data
    }
}

/// Seeded epoch order.
pub(crate) fn shuffled_indices<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

pub(crate) fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores.iter().map(|s| s - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
        assert_eq!(argmax(&[-1.0, -0.5]), 1);
    }

    #[test]
    fn feature_set_checks_shapes() {
        let labels = vec!["a".to_string(), "b".to_string()];
        let ok = FeatureSet::new(vec![SparseVector::zeros(3)], vec![1], labels.clone(), 3);
        assert!(ok.is_ok());
        assert!(matches!(
            FeatureSet::new(vec![SparseVector::zeros(2)], vec![1], labels.clone(), 3),
            Err(Error::Shape(_))
        ));
        assert!(FeatureSet::new(vec![SparseVector::zeros(3)], vec![2], labels, 3).is_err());
    }

    #[test]
    fn scaled_matrix_tracks_dense_updates() {
        let mut m = ScaledMatrix::from_vec(1, 2, vec![1.0, 2.0]);
        m.shrink(0.5);
        m.add(0, 1, 1.0);
        assert!((m.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((m.get(0, 1) - 2.0).abs() < 1e-15);
        for _ in 0..40 {
            m.shrink(0.5);
        }
        assert!(m.get(0, 1) > 0.0 && m.get(0, 1) < 1e-11);
    }
}
