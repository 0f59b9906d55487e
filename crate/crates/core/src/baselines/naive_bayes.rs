use serde::{Deserialize, Serialize};

use super::{Classifier, FeatureSet};
use crate::error::{Error, Result};
use crate::vectorize::SparseVector;

/// Multinomial naive Bayes with additive smoothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBModel {
    pub labels: Vec<String>,
    pub log_prior: Vec<f64>,
    /// `log_likelihood[c][t] = ln P(t | c)`.
    pub log_likelihood: Vec<Vec<f64>>,
    pub alpha: f64,
}

impl Classifier for NBModel {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn input_dim(&self) -> usize {
        self.log_likelihood.first().map_or(0, Vec::len)
    }

    /// Unnormalized log posterior per class.
    fn scores(&self, x: &SparseVector) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self
            .log_prior
            .iter()
            .zip(&self.log_likelihood)
            .map(|(prior, ll)| prior + x.pairs.iter().map(|&(t, v)| v * ll[t]).sum::<f64>())
            .collect())
    }
}

impl NBModel {
    /// Normalized posterior probabilities.
    pub fn posterior(&self, x: &SparseVector) -> Result<Vec<f64>> {
        let logp = super::log_softmax(&self.scores(x)?);
        Ok(logp.iter().map(|l| l.exp()).collect())
    }
}

/// Fits class priors from label frequencies and
/// `P(t | c) = (count(t, c) + alpha) / (sum_t count(t, c) + alpha * V)`.
pub fn train_nb(train: &FeatureSet, alpha: f64) -> Result<NBModel> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
    }
    if train.is_empty() {
        return Err(Error::Input("naive Bayes needs at least one training example".into()));
    }
    if let Some((_, v)) = train
        .rows
        .iter()
        .flat_map(|r| r.pairs.iter())
        .find(|(_, v)| *v < 0.0 || !v.is_finite())
    {
        return Err(Error::FeatureCompat(format!(
            "multinomial naive Bayes needs non-negative features, found {v} (signed hashing features are not supported)"
        )));
    }
    let k = train.n_classes();
    let v = train.dim;
    let mut counts = vec![vec![0.0; v]; k];
    let mut class_docs = vec![0usize; k];
    for (x, &c) in train.rows.iter().zip(&train.targets) {
        class_docs[c] += 1;
        for &(t, w) in &x.pairs {
            counts[c][t] += w;
        }
    }
    let n = train.len() as f64;
    let log_prior = class_docs
        .iter()
        .map(|&d| if d == 0 { f64::NEG_INFINITY } else { (d as f64 / n).ln() })
        .collect();
    let log_likelihood = counts
        .iter()
        .map(|row| {
            let denom = (row.iter().sum::<f64>() + alpha * v as f64).ln();
            row.iter().map(|c| (c + alpha).ln() - denom).collect()
        })
        .collect();
    Ok(NBModel {
        labels: train.labels.clone(),
        log_prior,
        log_likelihood,
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vectorize::{fit, Tokenizer, VectorizerKind};

    fn labels() -> Vec<String> {
        vec!["c0".into(), "c1".into()]
    }

    #[test]
    fn hand_computed_posterior() {
        let rows = vec![SparseVector::from_dense(&[2.0, 0.0]), SparseVector::from_dense(&[0.0, 2.0])];
        let data = FeatureSet::new(rows, vec![0, 1], labels(), 2).unwrap();
        let model = train_nb(&data, 1.0).unwrap();
        assert!((model.log_likelihood[0][0].exp() - 0.75).abs() < 1e-12);
        assert!((model.log_likelihood[0][1].exp() - 0.25).abs() < 1e-12);
        let x = SparseVector::from_dense(&[1.0, 0.0]);
        assert_eq!(model.predict(&x).unwrap(), "c0");
        // Equal priors, so P(c0 | "a") = 0.75 / (0.75 + 0.25).
        assert!((model.posterior(&x).unwrap()[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn distributions_normalize() {
        let rows = vec![
            SparseVector::from_dense(&[1.0, 3.0, 0.0]),
            SparseVector::from_dense(&[0.0, 1.0, 5.0]),
            SparseVector::from_dense(&[2.0, 0.0, 0.0]),
        ];
        let model = train_nb(&FeatureSet::new(rows, vec![0, 1, 1], labels(), 3).unwrap(), 0.5).unwrap();
        let prior: f64 = model.log_prior.iter().map(|l| l.exp()).sum();
        assert!((prior - 1.0).abs() < 1e-9);
        for row in &model.log_likelihood {
            assert!((row.iter().map(|l| l.exp()).sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_counts_give_prior() {
        let rows = vec![SparseVector::from_dense(&[1.0, 1.0]); 3];
        let model = train_nb(&FeatureSet::new(rows, vec![0, 1, 1], labels(), 2).unwrap(), 1.0).unwrap();
        let post = model.posterior(&SparseVector::from_dense(&[4.0, 1.0])).unwrap();
        assert!((post[0] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(model.predict(&SparseVector::zeros(2)).unwrap(), "c1");
    }

    #[test]
    fn signed_hash_features_rejected() {
        let docs = ["alpha beta", "gamma delta epsilon zeta eta theta"];
        let state = fit(docs, VectorizerKind::Hash, Tokenizer::default()).unwrap();
        let rows: Vec<_> = (0..40).map(|i| state.transform(&format!("tok{i} word{i}")).unwrap()).collect();
        assert!(rows.iter().any(|r| r.pairs.iter().any(|&(_, v)| v < 0.0)));
        let data = FeatureSet::new(rows, (0..40).map(|i| i % 2).collect(), labels(), state.dim()).unwrap();
        assert!(matches!(train_nb(&data, 1.0), Err(Error::FeatureCompat(_))));
    }

    #[test]
    fn duplicated_corpus_keeps_decisions() {
        let rows = vec![
            SparseVector::from_dense(&[3.0, 1.0, 0.0]),
            SparseVector::from_dense(&[0.0, 2.0, 1.0]),
            SparseVector::from_dense(&[1.0, 0.0, 4.0]),
            SparseVector::from_dense(&[0.0, 1.0, 1.0]),
        ];
        let targets = vec![0, 1, 1, 0];
        let once = train_nb(&FeatureSet::new(rows.clone(), targets.clone(), labels(), 3).unwrap(), 1e-3).unwrap();
        for k in [2, 5] {
            let many = FeatureSet::new(
                rows.iter().cycle().take(rows.len() * k).cloned().collect(),
                targets.iter().cycle().take(targets.len() * k).copied().collect(),
                labels(),
                3,
            )
            .unwrap();
            let model = train_nb(&many, 1e-3).unwrap();
            for probe in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [2.0, 1.0, 3.0]] {
                let x = SparseVector::from_dense(&probe);
                assert_eq!(model.predict_index(&x).unwrap(), once.predict_index(&x).unwrap());
            }
        }
    }
}
