//! Word tokenization and the count, TF-IDF and hashing feature extractors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default token cap, shared with the QA model's input length.
pub const DEFAULT_MAX_TOKENS: usize = 200;

/// Bucket count of the hashing vectorizer.
pub const DEFAULT_HASH_FEATURES: usize = 1 << 18;

/// Lowercases and splits on runs of non-alphanumeric characters, keeping the
/// first `max_tokens` tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub max_tokens: usize,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer {
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

impl Tokenizer {
    pub fn new(max_tokens: usize) -> Self {
        Tokenizer { max_tokens }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = tokenize_all(text);
        out.truncate(self.max_tokens);
        out
    }
}

/// Tokenizes without truncation.
pub fn tokenize_all(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorizerKind {
    Tfidf,
    Count,
    Hash,
}

/// A fitted (or not yet fitted) feature extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorizerState {
    pub kind: VectorizerKind,
    pub tokenizer: Tokenizer,
    /// Token to feature index, indices assigned in lexicographic token order.
    pub vocabulary: BTreeMap<String, usize>,
    /// Document frequency per feature index (TF-IDF only).
    pub doc_freq: Vec<usize>,
    pub n_docs: usize,
    /// Bucket count (hash only).
    pub n_features: usize,
    pub fitted: bool,
}

/// Sparse feature vector with strictly increasing indices and no stored zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub pairs: Vec<(usize, f64)>,
    pub dim: usize,
}

impl SparseVector {
    pub fn zeros(dim: usize) -> Self {
        SparseVector {
            pairs: Vec::new(),
            dim,
        }
    }

    /// Builds from unordered (index, weight) pairs, summing duplicates and
    /// dropping zeros.
    pub fn from_entries(dim: usize, entries: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, w) in entries {
            assert!(i < dim, "index {i} out of range for dim {dim}");
            *acc.entry(i).or_default() += w;
        }
        SparseVector {
            pairs: acc.into_iter().filter(|&(_, w)| w != 0.0).collect(),
            dim,
        }
    }

    pub fn from_dense(dense: &[f64]) -> Self {
        SparseVector {
            pairs: dense
                .iter()
                .enumerate()
                .filter(|&(_, &w)| w != 0.0)
                .map(|(i, &w)| (i, w))
                .collect(),
            dim: dense.len(),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, w) in &self.pairs {
            out[i] = w;
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.pairs.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn l2_normalized(mut self) -> Self {
        let norm = self.norm();
        if norm > 0.0 {
            for (_, w) in &mut self.pairs {
                *w /= norm;
            }
        }
        self
    }
}

impl VectorizerState {
    pub fn unfitted(kind: VectorizerKind, tokenizer: Tokenizer) -> Self {
        VectorizerState {
            kind,
            tokenizer,
            vocabulary: BTreeMap::new(),
            doc_freq: Vec::new(),
            n_docs: 0,
            n_features: 0,
            fitted: false,
        }
    }

    /// A hashing vectorizer with a custom bucket count.
    pub fn hashing(n_features: usize, tokenizer: Tokenizer) -> Self {
        VectorizerState {
            n_features,
            fitted: true,
            ..Self::unfitted(VectorizerKind::Hash, tokenizer)
        }
    }

    /// Feature dimension.
    pub fn dim(&self) -> usize {
        match self.kind {
            VectorizerKind::Hash => self.n_features,
            _ => self.vocabulary.len(),
        }
    }

    /// True when every emitted weight is non-negative.
    pub fn non_negative(&self) -> bool {
        self.kind != VectorizerKind::Hash
    }

    pub fn transform(&self, doc: &str) -> Result<SparseVector> {
        if !self.fitted {
            return Err(Error::State(format!("{:?} vectorizer used before fit", self.kind)));
        }
        let tokens = self.tokenizer.tokenize(doc);
        let dim = self.dim();
        Ok(match self.kind {
            VectorizerKind::Count => SparseVector::from_entries(
                dim,
                tokens
                    .iter()
                    .filter_map(|t| self.vocabulary.get(t).map(|&i| (i, 1.0))),
            ),
            VectorizerKind::Tfidf => {
                let counts = SparseVector::from_entries(
                    dim,
                    tokens
                        .iter()
                        .filter_map(|t| self.vocabulary.get(t).map(|&i| (i, 1.0))),
                );
                SparseVector {
                    pairs: counts
                        .pairs
                        .into_iter()
                        .map(|(i, tf)| (i, tf * self.idf(i)))
                        .collect(),
                    dim,
                }
                .l2_normalized()
            }
            VectorizerKind::Hash => SparseVector::from_entries(
                dim,
                tokens.iter().map(|t| {
                    let h = murmur3_32(t.as_bytes(), 0);
                    let sign = if h & 0x8000_0000 != 0 { -1.0 } else { 1.0 };
                    ((h as usize) % self.n_features, sign)
                }),
            )
            .l2_normalized(),
        })
    }

    pub fn transform_all<'a>(&self, docs: impl IntoIterator<Item = &'a str>) -> Result<Vec<SparseVector>> {
        docs.into_iter().map(|d| self.transform(d)).collect()
    }

    /// Smoothed inverse document frequency `ln((1 + n) / (1 + df)) + 1`.
    pub fn idf(&self, index: usize) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + self.doc_freq[index] as f64)).ln() + 1.0
    }
}

/// Fits a vectorizer with `min_df = 1` and the default hash dimension.
pub fn fit<'a>(docs: impl IntoIterator<Item = &'a str>, kind: VectorizerKind, tokenizer: Tokenizer) -> Result<VectorizerState> {
    fit_min_df(docs, kind, tokenizer, 1)
}

/// Fits a vectorizer keeping tokens that occur in at least `min_df` documents.
pub fn fit_min_df<'a>(
    docs: impl IntoIterator<Item = &'a str>,
    kind: VectorizerKind,
    tokenizer: Tokenizer,
    min_df: usize,
) -> Result<VectorizerState> {
    if kind == VectorizerKind::Hash {
        return Ok(VectorizerState::hashing(DEFAULT_HASH_FEATURES, tokenizer));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    let mut n_docs = 0;
    for doc in docs {
        n_docs += 1;
        let mut tokens = tokenizer.tokenize(doc);
        tokens.sort_unstable();
        tokens.dedup();
        for token in tokens {
            *df.entry(token).or_default() += 1;
        }
    }
    if n_docs == 0 {
        return Err(Error::Fit(format!("cannot fit {kind:?} vectorizer on an empty corpus")));
    }
    let kept: Vec<(String, usize)> = df.into_iter().filter(|&(_, n)| n >= min_df.max(1)).collect();
    let vocabulary = kept.iter().enumerate().map(|(i, (t, _))| (t.clone(), i)).collect();
    let doc_freq = match kind {
        VectorizerKind::Tfidf => kept.iter().map(|&(_, n)| n).collect(),
        _ => Vec::new(),
    };
    Ok(VectorizerState {
        kind,
        tokenizer,
        vocabulary,
        doc_freq,
        n_docs,
        n_features: 0,
        fitted: true,
    })
}

/// MurmurHash3, x86 32-bit variant.
pub fn murmur3_32(data: &[u8], seed: u32) -> u32 {
    const C1: u32 = 0xcc9e_2d51;
    const C2: u32 = 0x1b87_3593;
    let mut h = seed;
    let mut chunks = data.chunks_exact(4);
    for chunk in &mut chunks {
        let mut k = u32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        k = k.wrapping_mul(C1).rotate_left(15).wrapping_mul(C2);
        h ^= k;
        h = h.rotate_left(13).wrapping_mul(5).wrapping_add(0xe654_6b64);
    }
    let tail = chunks.remainder();
    if !tail.is_empty() {
        let mut k = 0u32;
        for (i, &b) in tail.iter().enumerate() {
            k |= (b as u32) << (8 * i);
        }
        k = k.wrapping_mul(C1).rotate_left(15).wrapping_mul(C2);
        h ^= k;
    }
    h ^= data.len() as u32;
    h ^= h >> 16;
    h = h.wrapping_mul(0x85eb_ca6b);
    h ^= h >> 13;
    h = h.wrapping_mul(0xc2b2_ae35);
    h ^= h >> 16;
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TWO_DOCS: [&str; 2] = ["a b", "b c"];

    #[test]
    fn tokenizer_rule() {
        let tok = Tokenizer::new(3);
        assert_eq!(tokenize_all("Hello, world!! it's <url>"), ["hello", "world", "it", "s", "url"]);
        assert_eq!(tok.tokenize("a b c d e"), ["a", "b", "c"]);
    }

    #[test]
    fn murmur_reference_values() {
        // Reference outputs of MurmurHash3_x86_32 with seed 0.
        assert_eq!(murmur3_32(b"", 0), 0);
        assert_eq!(murmur3_32(b"hello", 0), 0x248b_fa47);
        assert_eq!(murmur3_32(b"The quick brown fox jumps over the lazy dog", 0), 0x2e4f_f723);
        assert_eq!(murmur3_32(b"", 1), 0x514e_28b7);
    }

    #[test]
    fn count_fit_and_transform() {
        let state = fit(TWO_DOCS, VectorizerKind::Count, Tokenizer::default()).unwrap();
        assert_eq!(state.vocabulary.keys().collect::<Vec<_>>(), ["a", "b", "c"]);
        assert_eq!(state.transform("b b").unwrap().pairs, vec![(1, 2.0)]);
        assert_eq!(state.transform("zzz").unwrap(), SparseVector::zeros(3));
        assert_eq!(state.transform("").unwrap(), SparseVector::zeros(3));
    }

    #[test]
    fn tfidf_doc_freq() {
        let state = fit(TWO_DOCS, VectorizerKind::Tfidf, Tokenizer::default()).unwrap();
        assert_eq!(state.doc_freq, vec![1, 2, 1]);
        assert_eq!(state.n_docs, 2);
    }

    #[test]
    fn tfidf_matches_hand_values() {
        let state = fit(TWO_DOCS, VectorizerKind::Tfidf, Tokenizer::default()).unwrap();
        let v = state.transform("a b").unwrap();
        let (ia, ib) = ((1.5f64).ln() + 1.0, 1.0);
        let norm = (ia * ia + ib * ib).sqrt();
        assert_eq!(v.pairs.len(), 2);
        assert!((v.pairs[0].1 - ia / norm).abs() < 1e-12);
        assert!((v.pairs[1].1 - ib / norm).abs() < 1e-12);
        assert!((v.pairs[0].1 - 0.814_802).abs() < 1e-5);
        assert!((v.pairs[1].1 - 0.579_738).abs() < 1e-5);
    }

    #[test]
    fn hash_state_has_no_vocabulary() {
        let state = fit(TWO_DOCS, VectorizerKind::Hash, Tokenizer::default()).unwrap();
        assert!(state.fitted && state.vocabulary.is_empty());
        assert_eq!(state.dim(), DEFAULT_HASH_FEATURES);
        let other = fit(["completely", "different"], VectorizerKind::Hash, Tokenizer::default()).unwrap();
        assert_eq!(state.transform("a b c a").unwrap(), other.transform("a b c a").unwrap());
        assert!((state.transform("a b c a").unwrap().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unfitted_and_empty_errors() {
        let state = VectorizerState::unfitted(VectorizerKind::Count, Tokenizer::default());
        assert!(matches!(state.transform("a"), Err(Error::State(_))));
        let empty: [&str; 0] = [];
        assert!(matches!(fit(empty, VectorizerKind::Tfidf, Tokenizer::default()), Err(Error::Fit(_))));
    }

    #[test]
    fn min_df_prunes_rare_tokens() {
        let state = fit_min_df(TWO_DOCS, VectorizerKind::Count, Tokenizer::default(), 2).unwrap();
        assert_eq!(state.vocabulary.keys().collect::<Vec<_>>(), ["b"]);
    }

    proptest! {
        #[test]
        fn count_is_additive(a in "[a-e ]{0,30}", b in "[a-e ]{0,30}") {
            let state = fit(["a b c d e"], VectorizerKind::Count, Tokenizer::new(usize::MAX)).unwrap();
            let joined = format!("{a} {b}");
            let sum: Vec<f64> = state.transform(&a).unwrap().to_dense().iter()
                .zip(state.transform(&b).unwrap().to_dense())
                .map(|(x, y)| x + y)
                .collect();
            prop_assert_eq!(state.transform(&joined).unwrap().to_dense(), sum);
        }

        #[test]
        fn tfidf_unit_norm(doc in "[a-f]( [a-f]){0,20}") {
            let state = fit(["a b", "c d e", "f a c"], VectorizerKind::Tfidf, Tokenizer::default()).unwrap();
            prop_assert!((state.transform(&doc).unwrap().norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn truncation_ignores_tail(head in proptest::collection::vec("[a-c]", 200), t1 in "[a-c ]{0,20}", t2 in "[a-c ]{0,20}") {
            let base = head.join(" ");
            for kind in [VectorizerKind::Count, VectorizerKind::Tfidf, VectorizerKind::Hash] {
                let state = fit(["a b c"], kind, Tokenizer::default()).unwrap();
                prop_assert_eq!(
                    state.transform(&format!("{base} {t1}")).unwrap(),
                    state.transform(&format!("{base} {t2}")).unwrap()
                );
            }
        }

        #[test]
        fn sparse_vectors_are_canonical(doc in "[a-z ]{0,60}") {
            for kind in [VectorizerKind::Count, VectorizerKind::Tfidf, VectorizerKind::Hash] {
                let state = fit(["the quick brown fox", "jumps over"], kind, Tokenizer::default()).unwrap();
                let v = state.transform(&doc).unwrap();
                prop_assert!(v.pairs.windows(2).all(|w| w[0].0 < w[1].0));
                prop_assert!(v.pairs.iter().all(|&(i, w)| w != 0.0 && i < v.dim));
            }
        }
    }
}
