//! Classification instances recast as multiple-choice questions.
//!
//! A post becomes `question \n (a) opt (b) opt ... \n post text`, where the
//! options are the dataset's class labels in manifest order. Model answers
//! are mapped back onto a label with [`match_answer`], which is total.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetManifest, LabeledPost, TaskKind};
use crate::error::{Error, Result};
use crate::vectorize::tokenize_all;

pub const BINARY_QUESTION: &str = "is this post indicative of mental health risk?";
pub const MULTICLASS_QUESTION: &str = "which condition does this post indicate?";

const SEPARATOR: &str = " \n ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QATemplate {
    pub question_text: String,
    pub option_labels: Vec<String>,
    pub task_kind: TaskKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub input_string: String,
    pub gold_answer: String,
    pub source_id: String,
}

impl QATemplate {
    /// Template with the default question for the manifest's task kind.
    pub fn for_manifest(manifest: &DatasetManifest) -> Result<Self> {
        let question = match manifest.task_kind {
            TaskKind::Binary => BINARY_QUESTION,
            TaskKind::Multiclass => MULTICLASS_QUESTION,
        };
        Self::new(question, manifest.labels.clone(), manifest.task_kind)
    }

    pub fn new(question_text: impl Into<String>, option_labels: Vec<String>, task_kind: TaskKind) -> Result<Self> {
        let template = QATemplate {
            question_text: question_text.into().to_lowercase(),
            option_labels: option_labels.iter().map(|l| l.to_lowercase()).collect(),
            task_kind,
        };
        if template.question_text.trim().is_empty() {
            return Err(Error::Schema("question text must be non-empty".into()));
        }
        if template.option_labels.len() < 2 || template.option_labels.len() > 26 {
            return Err(Error::Schema(format!(
                "between 2 and 26 options are supported, got {}",
                template.option_labels.len()
            )));
        }
        let mut sorted = template.option_labels.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != template.option_labels.len() {
            return Err(Error::Schema("option labels collide after lowercasing".into()));
        }
        Ok(template)
    }

    /// Checks that the options are exactly the manifest labels in manifest order.
    pub fn check_against(&self, manifest: &DatasetManifest) -> Result<()> {
        let expected: Vec<String> = manifest.labels.iter().map(|l| l.to_lowercase()).collect();
        if self.option_labels != expected {
            return Err(Error::Schema(format!(
                "template options {:?} do not match manifest labels {:?}",
                self.option_labels, manifest.labels
            )));
        }
        Ok(())
    }

    pub fn option_index(&self, label: &str) -> Option<usize> {
        let label = label.to_lowercase();
        self.option_labels.iter().position(|o| *o == label)
    }

    /// `(a) first (b) second ...`
    pub fn render_options(&self) -> String {
        self.option_labels
            .iter()
            .enumerate()
            .map(|(i, label)| render_option(i, label))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn render_option(index: usize, label: &str) -> String {
    format!("({}) {}", option_letter(index), label.to_lowercase())
}

fn option_letter(index: usize) -> char {
    (b'a' + index as u8) as char
}

pub fn format_example(post: &LabeledPost, template: &QATemplate) -> Result<QAExample> {
    let gold = template.option_index(&post.label).ok_or_else(|| {
        Error::Schema(format!(
            "post {:?} label {:?} is not one of the options {:?}",
            post.id, post.label, template.option_labels
        ))
    })?;
    let input_string = [
        template.question_text.as_str(),
        &template.render_options(),
        &post.text,
    ]
    .join(SEPARATOR)
    .to_lowercase();
    Ok(QAExample {
        input_string,
        gold_answer: template.option_labels[gold].clone(),
        source_id: post.id.clone(),
    })
}

pub fn format_all(posts: &[LabeledPost], template: &QATemplate) -> Result<Vec<QAExample>> {
    posts.iter().map(|p| format_example(p, template)).collect()
}

/// Maps an arbitrary decoded string onto an option label.
pub fn match_answer<'t>(decoded: &str, template: &'t QATemplate) -> &'t str {
    &template.option_labels[match_answer_index(decoded, template)]
}

/// Index form of [`match_answer`]. Rules, in order: exact match; option
/// letter (`(b)`, `b`, or a leading `(b)` marker); best overlap F1 over
/// character-bigram tokens. Ties go to the lowest index.
pub fn match_answer_index(decoded: &str, template: &QATemplate) -> usize {
    let decoded = decoded.trim().to_lowercase();
    let options = &template.option_labels;
    if let Some(i) = options.iter().position(|o| *o == decoded) {
        return i;
    }
    if let Some(i) = letter_choice(&decoded, options.len()) {
        return i;
    }
    let decoded_grams = bigram_tokens(&decoded);
    let mut best = (0, f64::NEG_INFINITY);
    for (i, option) in options.iter().enumerate() {
        let score = overlap_f1(&decoded_grams, &bigram_tokens(option));
        if score > best.1 {
            best = (i, score);
        }
    }
    best.0
}

fn letter_choice(decoded: &str, n_options: usize) -> Option<usize> {
    let letter = if decoded.len() == 1 {
        decoded.chars().next()
    } else {
        let b = decoded.as_bytes();
        if b.len() >= 3 && b[0] == b'(' && b[2] == b')' && (b.len() == 3 || b[3] == b' ') {
            Some(b[1] as char)
        } else {
            None
        }
    }?;
    let index = (letter as u32).checked_sub('a' as u32)? as usize;
    (index < n_options).then_some(index)
}

/// Character bigrams of each word token; a one-character word is its own token.
fn bigram_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in tokenize_all(text) {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() == 1 {
            out.push(word);
        } else {
            out.extend(chars.windows(2).map(|w| w.iter().collect::<String>()));
        }
    }
    out
}

fn overlap_f1(a: &[String], b: &[String]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in b {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in a {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    2.0 * common as f64 / (a.len() + b.len()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn binary() -> QATemplate {
        QATemplate::new(BINARY_QUESTION, vec!["yes".into(), "no".into()], TaskKind::Binary).unwrap()
    }

    fn smk() -> QATemplate {
        let labels = ["adhd", "depression", "ocd", "aspergers", "ptsd"];
        QATemplate::new(MULTICLASS_QUESTION, labels.iter().map(|s| s.to_string()).collect(), TaskKind::Multiclass)
            .unwrap()
    }

    fn post(text: &str, label: &str) -> LabeledPost {
        LabeledPost {
            id: "p".into(),
            text: text.into(),
            label: label.into(),
        }
    }

    #[test]
    fn binary_prompt_layout() {
        let ex = format_example(&post("i feel hopeless…", "yes"), &binary()).unwrap();
        assert_eq!(
            ex.input_string,
            "is this post indicative of mental health risk? \n (a) yes (b) no \n i feel hopeless…"
        );
        assert_eq!(ex.gold_answer, "yes");
    }

    #[test]
    fn multiclass_options_in_manifest_order() {
        let ex = format_example(&post("cannot focus", "ocd"), &smk()).unwrap();
        assert!(ex
            .input_string
            .contains("(a) adhd (b) depression (c) ocd (d) aspergers (e) ptsd"));
    }

    #[test]
    fn unknown_label_is_schema_error() {
        assert!(matches!(format_example(&post("x", "anxiety"), &binary()), Err(Error::Schema(_))));
    }

    #[test]
    fn answer_matching_rules() {
        assert_eq!(match_answer("yes", &binary()), "yes");
        assert_eq!(match_answer(" YES ", &binary()), "yes");
        assert_eq!(match_answer("(b)", &binary()), "no");
        assert_eq!(match_answer("b", &binary()), "no");
        assert_eq!(match_answer("depressions", &smk()), "depression");
        assert_eq!(match_answer("", &smk()), "adhd");
        assert_eq!(match_answer("(z)", &binary()), "yes");
    }

    #[test]
    fn depressions_overlap_by_hand() {
        // "depressions" has 10 bigrams, "depression" 9, all 9 shared.
        let d = bigram_tokens("depressions");
        let o = bigram_tokens("depression");
        assert_eq!((d.len(), o.len()), (10, 9));
        assert!((overlap_f1(&d, &o) - 18.0 / 19.0).abs() < 1e-12);
        for other in ["adhd", "ocd", "aspergers", "ptsd"] {
            assert_eq!(overlap_f1(&d, &bigram_tokens(other)), 0.0);
        }
    }

    #[test]
    fn template_matches_manifest() {
        let manifest = DatasetManifest::new("smk", &["adhd", "depression", "ocd", "aspergers", "ptsd"]).unwrap();
        let t = QATemplate::for_manifest(&manifest).unwrap();
        t.check_against(&manifest).unwrap();
        assert_eq!(t.question_text, MULTICLASS_QUESTION);
        assert!(binary().check_against(&manifest).is_err());
        assert!(QATemplate::new("  ", vec!["a".into(), "b".into()], TaskKind::Binary).is_err());
    }

    #[test]
    fn rendered_options_round_trip() {
        for t in [binary(), smk()] {
            for (i, label) in t.option_labels.iter().enumerate() {
                assert_eq!(match_answer_index(&render_option(i, label), &t), i);
                assert_eq!(match_answer_index(label, &t), i);
            }
        }
    }

    proptest! {
        #[test]
        fn match_is_total(s in "\\PC{0,30}") {
            let t = smk();
            let i = match_answer_index(&s, &t);
            prop_assert!(i < t.option_labels.len());
        }

        #[test]
        fn formatting_is_injective(a in "[a-z ]{1,30}", b in "[a-z ]{1,30}") {
            prop_assume!(a != b);
            let t = binary();
            let ea = format_example(&post(&a, "yes"), &t).unwrap();
            let eb = format_example(&post(&b, "yes"), &t).unwrap();
            prop_assert_ne!(ea.input_string, eb.input_string);
        }
    }
}
