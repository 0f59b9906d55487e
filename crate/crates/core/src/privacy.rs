//! Differentially private gradient sanitization and the noise-ceiling check.
//!
//! Sanitization follows the DP-SGD shape: every per-example gradient is
//! clipped to `clip_norm` in global L2 norm, the clipped gradients are
//! averaged, and Gaussian noise with standard deviation
//! `noise_std * clip_norm / batch_size` is added to every coordinate.
//!
//! Noise comes from a caller-supplied RNG; the pipeline uses `ChaCha8Rng`
//! seeded from the run seed and draws standard normals with the ziggurat
//! sampler of `rand_distr::StandardNormal`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named gradient tensor, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradTensor {
    pub name: String,
    pub shape: (usize, usize),
    pub data: Vec<f64>,
}

/// Gradients for the trainable tensors of a parameter set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GradSet {
    pub tensors: Vec<GradTensor>,
}

impl GradSet {
    /// A single flat tensor, handy for tests and small models.
    pub fn flat(values: &[f64]) -> Self {
        GradSet {
            tensors: vec![GradTensor {
                name: "flat".into(),
                shape: (1, values.len()),
                data: values.to_vec(),
            }],
        }
    }

    pub fn zeros_like(&self) -> Self {
        GradSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| GradTensor {
                    data: vec![0.0; t.data.len()],
                    ..t.clone()
                })
                .collect(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.tensors.iter().flat_map(|t| t.data.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.tensors.iter_mut().flat_map(|t| t.data.iter_mut())
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn global_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    pub fn same_shape(&self, other: &GradSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape && a.data.len() == b.data.len())
    }

    /// `self += other`; shapes must agree.
    pub fn add_assign(&mut self, other: &GradSet) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape("gradient sets have different layouts".into()));
        }
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += b;
        }
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        for t in &self.tensors {
            if let Some(v) = t.data.iter().find(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient {v} in {}", t.name)));
            }
        }
        Ok(())
    }
}

/// Scales `grads` by `clip_norm / norm` when the global norm exceeds `clip_norm`.
pub fn clip(grads: &GradSet, clip_norm: f64) -> Result<GradSet> {
    if !(clip_norm > 0.0 && clip_norm.is_finite()) {
        return Err(Error::Domain(format!("clip_norm must be positive, got {clip_norm}")));
    }
    grads.check_finite()?;
    let mut out = grads.clone();
    let norm = grads.global_norm();
    if norm > clip_norm {
        out.scale(clip_norm / norm);
    }
    Ok(out)
}

/// Adds `noise_std * z` to every entry, `z` i.i.d. standard normal drawn in
/// tensor order from `rng`. A zero `noise_std` draws nothing.
pub fn add_noise<R: Rng + ?Sized>(grads: &GradSet, noise_std: f64, rng: &mut R) -> Result<GradSet> {
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::Domain(format!("noise_std must be non-negative, got {noise_std}")));
    }
    let mut out = grads.clone();
    if noise_std > 0.0 {
        for v in out.values_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += noise_std * z;
        }
    }
    Ok(out)
}

/// Privacy parameters of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
    /// Sensitivity of the loss to a single example.
    #[serde(rename = "S")]
    pub sensitivity: f64,
    pub clip_norm: f64,
    /// Number of instances the budget covers.
    pub n: usize,
    /// Standard deviation multiplier of the added Gaussian noise.
    pub noise_std: f64,
}

impl PrivacyBudget {
    /// Budget with the sensitivity tied to the clipping threshold.
    pub fn new(epsilon: f64, delta: f64, clip_norm: f64, n: usize, noise_std: f64) -> Self {
        PrivacyBudget {
            epsilon,
            delta,
            sensitivity: clip_norm,
            clip_norm,
            n,
            noise_std,
        }
    }

    pub fn total_epsilon(&self) -> f64 {
        2.0 * self.epsilon
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.epsilon, self.delta, self.sensitivity, self.clip_norm, self.noise_std]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain("privacy budget has non-finite fields".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Domain(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Domain(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.sensitivity < 0.0 || self.noise_std < 0.0 {
            return Err(Error::Domain("sensitivity and noise_std must be non-negative".into()));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::Domain(format!("clip_norm must be positive, got {}", self.clip_norm)));
        }
        if self.n == 0 {
            return Err(Error::Domain("n must be positive".into()));
        }
        Ok(())
    }
}

/// Clips each per-example gradient, averages them, then adds noise with
/// standard deviation `noise_std * clip_norm / batch_size`.
pub fn sanitize<R: Rng + ?Sized>(per_example: &[GradSet], budget: &PrivacyBudget, rng: &mut R) -> Result<GradSet> {
    let first = per_example
        .first()
        .ok_or_else(|| Error::Input("sanitize needs at least one per-example gradient".into()))?;
    let mut sum = first.zeros_like();
    for grads in per_example {
        if !grads.same_shape(first) {
            return Err(Error::Shape("per-example gradients have mismatched shapes".into()));
        }
        sum.add_assign(&clip(grads, budget.clip_norm)?)?;
    }
    let batch = per_example.len() as f64;
    sum.scale(1.0 / batch);
    add_noise(&sum, budget.noise_std * budget.clip_norm / batch, rng)
}

/// Largest admissible noise standard deviation:
/// `clip_norm * sqrt(2 * total_epsilon / n) + S * sqrt(2 * ln(1.25 / delta) / epsilon)`
/// with `total_epsilon = 2 * epsilon`.
pub fn max_noise_std(budget: &PrivacyBudget) -> Result<f64> {
    let b = budget;
    if !(b.epsilon > 0.0 && b.epsilon.is_finite()) {
        return Err(Error::Domain(format!("epsilon must be positive, got {}", b.epsilon)));
    }
    if b.delta.is_nan() || b.delta <= 0.0 {
        return Err(Error::Domain(format!("delta must be positive, got {}", b.delta)));
    }
    if b.delta >= 1.25 {
        return Err(Error::Domain(format!("delta {} leaves ln(1.25 / delta) non-positive", b.delta)));
    }
    if b.n == 0 {
        return Err(Error::Domain("n must be positive".into()));
    }
    if !(b.clip_norm >= 0.0 && b.sensitivity >= 0.0) {
        return Err(Error::Domain("clip_norm and S must be non-negative".into()));
    }
    let clip_term = b.clip_norm * (2.0 * b.total_epsilon() / b.n as f64).sqrt();
    let sensitivity_term = b.sensitivity * (2.0 * (1.25 / b.delta).ln() / b.epsilon).sqrt();
    Ok(clip_term + sensitivity_term)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Private,
    NotPrivate,
}

/// Output of [`certify`], serialized as the `privacy-check` report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub epsilon: f64,
    pub delta: f64,
    #[serde(rename = "S")]
    pub sensitivity: f64,
    pub clip_norm: f64,
    pub n: usize,
    pub noise_std: f64,
    pub max_noise_std: f64,
    /// `max_noise_std - noise_std`; positive exactly when private.
    pub margin: f64,
    pub verdict: Verdict,
    pub notes: Vec<String>,
}

/// Private iff the configured noise standard deviation is strictly below
/// [`max_noise_std`].
pub fn certify(budget: &PrivacyBudget) -> Result<Certificate> {
    if !(budget.noise_std >= 0.0 && budget.noise_std.is_finite()) {
        return Err(Error::Domain(format!("noise_std must be non-negative, got {}", budget.noise_std)));
    }
    let ceiling = max_noise_std(budget)?;
    let verdict = if budget.noise_std < ceiling {
        Verdict::Private
    } else {
        Verdict::NotPrivate
    };
    Ok(Certificate {
        epsilon: budget.epsilon,
        delta: budget.delta,
        sensitivity: budget.sensitivity,
        clip_norm: budget.clip_norm,
        n: budget.n,
        noise_std: budget.noise_std,
        max_noise_std: ceiling,
        margin: ceiling - budget.noise_std,
        verdict,
        notes: vec![
            "verdict is noise_std < max_noise_std; conventional DP-SGD analyses treat larger noise as stronger privacy, so this ceiling check is not a formal (epsilon, delta) proof".into(),
            "sanitization clips each example, averages the batch, then adds noise_std * clip_norm / batch_size Gaussian noise".into(),
        ],
    })
}
