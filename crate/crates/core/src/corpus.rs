//! Labeled text datasets: JSON Lines ingestion, cleaning, stratified
//! splitting, and a synthetic generator shaped like the binary and
//! multi-class mental-health corpora.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Sentinel that replaces every URL during cleaning.
pub const URL_TOKEN: &str = "<url>";

/// One raw text and its class label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPost {
    pub id: String,
    pub text: String,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Binary,
    Multiclass,
}

/// Describes a dataset: its ordered label set and how it is split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub labels: Vec<String>,
    pub task_kind: TaskKind,
    /// (train, test) fractions.
    pub split_fractions: (f64, f64),
    /// Label reported by positive-class metrics. Defaults to the first label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_label: Option<String>,
}

impl DatasetManifest {
    /// Builds a manifest with the default 80/20 split, inferring the task
    /// kind from the label count.
    pub fn new(name: impl Into<String>, labels: &[&str]) -> Result<Self> {
        let task_kind = if labels.len() == 2 {
            TaskKind::Binary
        } else {
            TaskKind::Multiclass
        };
        let manifest = DatasetManifest {
            name: name.into(),
            labels: labels.iter().map(|l| l.to_string()).collect(),
            task_kind,
            split_fractions: (0.8, 0.2),
            positive_label: None,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        match self.task_kind {
            TaskKind::Binary if self.labels.len() != 2 => {
                return Err(Error::Schema(format!(
                    "binary manifest needs exactly 2 labels, got {}",
                    self.labels.len()
                )))
            }
            TaskKind::Multiclass if self.labels.len() < 3 => {
                return Err(Error::Schema(format!(
                    "multiclass manifest needs at least 3 labels, got {}",
                    self.labels.len()
                )))
            }
            _ => {}
        }
        let mut seen = HashSet::new();
        for label in &self.labels {
            if label.is_empty() {
                return Err(Error::Schema("empty label in manifest".into()));
            }
            if !seen.insert(label.as_str()) {
                return Err(Error::Schema(format!("duplicate label {label:?}")));
            }
        }
        let (train, test) = self.split_fractions;
        let in_unit = |f: f64| f > 0.0 && f < 1.0;
        if !in_unit(train) || !in_unit(test) || (train + test - 1.0).abs() > 1e-9 {
            return Err(Error::Schema(format!(
                "split fractions must lie in (0,1) and sum to 1, got ({train}, {test})"
            )));
        }
        if let Some(pos) = &self.positive_label {
            if !self.labels.contains(pos) {
                return Err(Error::Schema(format!(
                    "positive label {pos:?} is not a declared label"
                )));
            }
        }
        Ok(())
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// The label that positive-class metrics are computed for.
    pub fn positive(&self) -> &str {
        self.positive_label.as_deref().unwrap_or(&self.labels[0])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&raw)?;
        manifest.validate()?;
        Ok(manifest)
    }
}

/// A train/test partition plus the manifest it was drawn under.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<LabeledPost>,
    pub test: Vec<LabeledPost>,
    pub manifest: DatasetManifest,
}

/// Lowercases, NFC-normalizes, strips control characters, replaces URLs
/// with [`URL_TOKEN`] and collapses whitespace runs.
pub fn clean_text(raw: &str) -> String {
    let normalized: String = raw
        .nfc()
        .filter(|c| c.is_whitespace() || !c.is_control())
        .collect::<String>()
        .to_lowercase()
        .nfc()
        .collect();
    let mut out = String::with_capacity(normalized.len());
    for word in normalized.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        if is_url(word) {
            out.push_str(URL_TOKEN);
        } else {
            out.push_str(word);
        }
    }
    out
}

fn is_url(word: &str) -> bool {
    ["http://", "https://", "www."]
        .iter()
        .any(|prefix| word.len() > prefix.len() && word.starts_with(prefix))
}

/// Result of [`load_jsonl`]: the surviving posts and how many were dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub posts: Vec<LabeledPost>,
    pub dropped: usize,
}

/// Reads one `{id, text, label}` object per line, cleaning each text.
/// Records whose cleaned text is empty are dropped and counted.
pub fn load_jsonl(path: &Path, manifest: &DatasetManifest) -> Result<Loaded> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut posts = Vec::new();
    let mut dropped = 0;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LabeledPost = serde_json::from_str(&line).map_err(|e| Error::Parse {
            context: path.display().to_string(),
            line: line_no,
            message: e.to_string(),
        })?;
        if manifest.label_index(&record.label).is_none() {
            return Err(Error::Schema(format!(
                "{}:{line_no}: label {:?} not in manifest labels {:?}",
                path.display(),
                record.label,
                manifest.labels
            )));
        }
        let text = clean_text(&record.text);
        if text.is_empty() {
            dropped += 1;
            continue;
        }
        posts.push(LabeledPost { text, ..record });
    }
    Ok(Loaded { posts, dropped })
}

pub fn write_jsonl(path: &Path, posts: &[LabeledPost]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for post in posts {
        serde_json::to_writer(&mut out, post)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Stratified, seeded train/test split. Within each label the test share is
/// the rounded exact proportion, kept in `[1, n - 1]`; both splits preserve
/// input order.
pub fn split(posts: &[LabeledPost], manifest: &DatasetManifest, seed: u64) -> Result<SplitDataset> {
    manifest.validate()?;
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, post) in posts.iter().enumerate() {
        let label = manifest.label_index(&post.label).ok_or_else(|| {
            Error::Schema(format!("post {:?} has undeclared label {:?}", post.id, post.label))
        })?;
        by_label.entry(label).or_default().push(i);
    }
    let mut ids = HashSet::new();
    for post in posts {
        if !ids.insert(post.id.as_str()) {
            return Err(Error::Schema(format!("duplicate post id {:?}", post.id)));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; posts.len()];
    for (label_idx, label) in manifest.labels.iter().enumerate() {
        let members = by_label.get(&label_idx).map(Vec::as_slice).unwrap_or(&[]);
        if members.len() < 2 {
            return Err(Error::Stratification(format!(
                "label {label:?} has {} post(s); at least 2 are required",
                members.len()
            )));
        }
        let n_test = ((members.len() as f64 * manifest.split_fractions.1).round() as usize)
            .clamp(1, members.len() - 1);
        let mut shuffled = members.to_vec();
        shuffled.shuffle(&mut rng);
        for &i in &shuffled[..n_test] {
            in_test[i] = true;
        }
    }

    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (post, &is_test) in posts.iter().zip(&in_test) {
        if is_test {
            test.push(post.clone());
        } else {
            train.push(post.clone());
        }
    }
    Ok(SplitDataset {
        train,
        test,
        manifest: manifest.clone(),
    })
}

/// Shared background vocabulary for synthetic posts, most frequent first.
const BACKGROUND_WORDS: &[&str] = &[
    "i", "the", "to", "and", "my", "a", "it", "is", "that", "of", "in", "me", "for", "this",
    "have", "just", "but", "so", "was", "with", "like", "not", "be", "on", "do", "im", "what",
    "all", "about", "get", "know", "feel", "can", "really", "time", "when", "if", "or", "out",
    "up", "at", "people", "one", "would", "dont", "some", "been", "because", "think", "now",
    "how", "day", "even", "want", "them", "they", "work", "go", "life", "there", "anyone",
    "friends", "still", "back", "thing", "things", "going", "much", "never", "year", "make",
    "help", "today", "week", "also", "good", "night", "home", "any", "job", "family", "school",
    "better", "else", "every", "something", "last", "always", "could", "first", "new", "got",
    "months", "since", "started", "through", "long", "weekend", "morning", "question", "advice",
    "post", "sure", "try", "tried", "thanks", "maybe", "around", "little", "made", "pretty",
    "right", "says", "thought", "trying", "world", "hours", "lot", "idea", "whole", "game",
    "car", "money", "food", "movie", "music", "book", "phone", "city", "trip", "plan",
];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ru", "ve", "zo", "ta", "ne", "shi", "por", "dal", "fen", "gri", "hu",
    "jas", "kel", "mun", "nor", "pra", "qui", "sol", "tev", "ul", "vra", "wex", "yor", "zin",
];

const MARKERS_PER_CLASS: usize = 6;
const MARKER_VOCAB_SEED: u64 = 0x6d61_726b;

/// Class-marker vocabulary used by [`synth_corpus`]: `labels.len()` disjoint
/// sets of pseudo-words, none of which occur in the background vocabulary.
/// Independent of the corpus seed.
pub fn marker_vocabulary(n_classes: usize) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(MARKER_VOCAB_SEED);
    let mut used: HashSet<String> = BACKGROUND_WORDS.iter().map(|w| w.to_string()).collect();
    (0..n_classes)
        .map(|_| {
            let mut set = Vec::with_capacity(MARKERS_PER_CLASS);
            while set.len() < MARKERS_PER_CLASS {
                let n_syl = rng.random_range(2..=3);
                let word: String = (0..n_syl)
                    .map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())])
                    .collect();
                if used.insert(word.clone()) {
                    set.push(word);
                }
            }
            set
        })
        .collect()
}

/// Generates `per_class` posts for every label.
///
/// Each post is a run of background words drawn from a Zipf-like unigram
/// distribution shared by all classes, with 3 to 5 marker tokens inserted at
/// random positions. Each marker comes from the post's own class set with
/// probability `separability`, otherwise from the set of a uniformly chosen
/// class (which may be its own). At 1.0 every marker belongs to the post's
/// class; at 0.0 markers carry no label information.
pub fn synth_corpus(labels: &[&str], per_class: usize, seed: u64, separability: f64) -> Vec<LabeledPost> {
    let separability = separability.clamp(0.0, 1.0);
    let markers = marker_vocabulary(labels.len());
    let weights: Vec<f64> = (0..BACKGROUND_WORDS.len())
        .map(|rank| 1.0 / (rank as f64 + 2.0))
        .collect();
    let background = rand::distr::weighted::WeightedIndex::new(&weights)
        .expect("positive background weights");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut posts = Vec::with_capacity(labels.len() * per_class);
    for _ in 0..per_class {
        for (class, label) in labels.iter().enumerate() {
            let n_words = rng.random_range(10..=24);
            let mut words: Vec<&str> = (0..n_words)
                .map(|_| BACKGROUND_WORDS[rng.sample(&background)])
                .collect();
            let n_markers = rng.random_range(3..=5);
            for _ in 0..n_markers {
                let source = if rng.random_bool(separability) {
                    class
                } else {
                    rng.random_range(0..labels.len())
                };
                let set = &markers[source];
                let marker = set[rng.random_range(0..set.len())].as_str();
                let at = rng.random_range(0..=words.len());
                words.insert(at, marker);
            }
            posts.push(LabeledPost {
                id: format!("synth-{:06}", posts.len()),
                text: words.join(" "),
                label: label.to_string(),
            });
        }
    }
    posts
}

/// Per-label counts in manifest order.
pub fn class_counts(posts: &[LabeledPost], manifest: &DatasetManifest) -> Vec<(String, usize)> {
    manifest
        .labels
        .iter()
        .map(|l| (l.clone(), posts.iter().filter(|p| &p.label == l).count()))
        .collect()
}
