use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qaformat::QAExample;
use crate::vectorize::tokenize_all;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BEGIN: usize = 2;
pub const END: usize = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

pub const DEFAULT_VOCAB_SIZE: usize = 8000;

/// Word-level token map with four reserved ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TokenVocab {
    /// `tokens[id]`; the first four entries are the specials.
    pub tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for TokenVocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<TokenVocab> for Vec<String> {
    fn from(v: TokenVocab) -> Self {
        v.tokens
    }
}

impl TokenVocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Schema("vocabulary must start with the special tokens".into()));
        }
        let index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(Error::Schema("vocabulary has duplicate tokens".into()));
        }
        Ok(TokenVocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn ids(&self, text: &str) -> Vec<usize> {
        tokenize_all(text).iter().map(|t| self.id(t)).collect()
    }

    /// Space-joined tokens, skipping specials.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i >= SPECIALS.len() && i < self.tokens.len())
            .map(|&i| self.tokens[i].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Keeps the `max_size` most frequent tokens of inputs and gold answers
/// (ties broken lexicographically) after the specials.
pub fn build_vocab(examples: &[QAExample], max_size: usize) -> Result<TokenVocab> {
    if examples.is_empty() {
        return Err(Error::Input("cannot build a vocabulary from no examples".into()));
    }
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    for ex in examples {
        for tok in tokenize_all(&ex.input_string).into_iter().chain(tokenize_all(&ex.gold_answer)) {
            *freq.entry(tok).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = SPECIALS
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().take(max_size).map(|(t, _)| t))
        .collect();
    TokenVocab::from_tokens(tokens)
}

/// Token ids of the input, truncated to `max_input_tokens`, then end-marked.
pub fn encode_input(example: &QAExample, vocab: &TokenVocab, max_input_tokens: usize) -> Vec<usize> {
    let mut ids = vocab.ids(&example.input_string);
    ids.truncate(max_input_tokens);
    ids.push(END);
    ids
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(input: &str, gold: &str) -> QAExample {
        QAExample {
            input_string: input.into(),
            gold_answer: gold.into(),
            source_id: "x".into(),
        }
    }

    #[test]
    fn small_corpus_kept_whole() {
        let exs = [ex("a b c", "yes"), ex("b c d", "no"), ex("c", "yes")];
        let v = build_vocab(&exs, 100).unwrap();
        assert_eq!(v.len(), 4 + 6);
        for t in ["a", "b", "c", "d", "yes", "no"] {
            assert_ne!(v.id(t), UNK);
        }
        // c:3, b:2, yes:2 then singletons in lexicographic order.
        assert_eq!(&v.tokens[4..], ["c", "b", "yes", "a", "d", "no"]);
        assert_eq!(v, build_vocab(&exs, 100).unwrap());
    }

    #[test]
    fn frequency_ties_break_lexicographically() {
        let v = build_vocab(&[ex("ab aa", "")], 1).unwrap();
        assert_eq!(&v.tokens[4..], ["aa"]);
        assert_eq!(v.id("ab"), UNK);
    }

    #[test]
    fn encode_truncates_then_marks_end() {
        let v = build_vocab(&[ex("w", "")], 10).unwrap();
        let ten = ["w"; 10].join(" ");
        assert_eq!(encode_input(&ex(&ten, ""), &v, 200).len(), 11);
        let long = vec!["w"; 300].join(" ");
        let ids = encode_input(&ex(&long, ""), &v, 200);
        assert_eq!(ids.len(), 201);
        assert_eq!(*ids.last().unwrap(), END);
        let unk = encode_input(&ex("zz qq", ""), &v, 200);
        assert_eq!(unk, vec![UNK, UNK, END]);
    }

    #[test]
    fn specials_are_distinct_and_dense() {
        let v = build_vocab(&[ex("x y", "z")], 10).unwrap();
        assert_eq!([PAD, UNK, BEGIN, END], [0, 1, 2, 3]);
        assert_eq!(v.detokenize(&[BEGIN, v.id("x"), v.id("z"), END, PAD]), "x z");
        let json = serde_json::to_string(&v).unwrap();
        let back: TokenVocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert!(serde_json::from_str::<TokenVocab>(r#"["a"]"#).is_err());
        assert!(build_vocab(&[], 5).is_err());
    }
}
