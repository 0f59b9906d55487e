//! A small transformer encoder-decoder that answers the multiple-choice
//! prompts of [`crate::qaformat`]. It is trained from scratch with manual
//! backpropagation in `f64`, AdamW and a linear learning-rate decay, and
//! can be fine-tuned privately with frozen encoder and decoder.

mod layers;
mod model;
mod params;
mod train;
mod vocab;

pub use model::{example_gradient, example_loss, next_token_probs, EncodedExample};
pub use params::{ModelPreset, ParamGroup, ParamSet, ParamTensor};
pub use train::{
    stratified_subset, train, train_from, AdamW, DpLog, EpochLog, LinearSchedule, TrainConfig, TrainLog,
};
pub use vocab::{build_vocab, encode_input, TokenVocab, BEGIN, DEFAULT_VOCAB_SIZE, END, PAD, UNK};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::argmax;
use crate::error::{Error, Result};
use crate::qaformat::{match_answer_index, QAExample, QATemplate};

pub const ARTIFACT_VERSION: u32 = 1;

/// Answer tokens emitted at most by [`predict`] in generate mode.
pub const MAX_ANSWER_TOKENS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMode {
    /// Highest length-normalized option likelihood.
    #[default]
    Likelihood,
    /// Greedy decoding mapped onto an option.
    Generate,
}

/// Parameters plus the vocabulary and input cap they were trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAModel {
    pub format_version: u32,
    pub params: ParamSet,
    pub vocab: TokenVocab,
    pub max_input_tokens: usize,
}

impl QAModel {
    pub fn new(params: ParamSet, vocab: TokenVocab, max_input_tokens: usize) -> Result<Self> {
        let model = QAModel {
            format_version: ARTIFACT_VERSION,
            params,
            vocab,
            max_input_tokens,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != ARTIFACT_VERSION {
            return Err(Error::Compat(format!(
                "model artifact version {} (expected {ARTIFACT_VERSION})",
                self.format_version
            )));
        }
        if self.vocab.len() != self.params.vocab_size {
            return Err(Error::Shape(format!(
                "vocabulary has {} tokens but parameters expect {}",
                self.vocab.len(),
                self.params.vocab_size
            )));
        }
        self.params.validate()
    }

    pub fn encode(&self, ex: &QAExample) -> EncodedExample {
        EncodedExample {
            input: encode_input(ex, &self.vocab, self.max_input_tokens),
            answer: self.vocab.ids(&ex.gold_answer),
        }
    }

    pub fn input_ids(&self, ex: &QAExample) -> Vec<usize> {
        encode_input(ex, &self.vocab, self.max_input_tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: QAModel = serde_json::from_str(&text)?;
        model.validate()?;
        Ok(model)
    }
}

/// Per option: mean log-probability of the option's tokens and the end
/// marker, teacher-forced after the begin marker.
pub fn score_options(model: &QAModel, input: &[usize], template: &QATemplate) -> Vec<f64> {
    let candidates: Vec<Vec<usize>> = template.option_labels.iter().map(|o| model.vocab.ids(o)).collect();
    model::sequence_scores(&model.params, input, &candidates)
}

pub fn greedy_decode(model: &QAModel, input: &[usize], max_len: usize) -> String {
    model.vocab.detokenize(&model::greedy_ids(&model.params, input, max_len))
}

pub fn predict_index(model: &QAModel, example: &QAExample, template: &QATemplate, mode: InferenceMode) -> usize {
    let input = model.input_ids(example);
    match mode {
        InferenceMode::Likelihood => argmax(&score_options(model, &input, template)),
        InferenceMode::Generate => match_answer_index(&greedy_decode(model, &input, MAX_ANSWER_TOKENS), template),
    }
}

/// Always one of the template's option labels.
pub fn predict<'t>(model: &QAModel, example: &QAExample, template: &'t QATemplate, mode: InferenceMode) -> &'t str {
    &template.option_labels[predict_index(model, example, template, mode)]
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::layers::Grads;
    use super::*;
    use crate::corpus::TaskKind;
    use crate::privacy::PrivacyBudget;

    fn template() -> QATemplate {
        QATemplate::new("is it risky?", vec!["yes".into(), "no".into()], TaskKind::Binary).unwrap()
    }

    fn qa(text: &str, gold: &str) -> QAExample {
        QAExample {
            input_string: format!("is it risky? \n (a) yes (b) no \n {text}"),
            gold_answer: gold.into(),
            source_id: text.into(),
        }
    }

    fn tiny_model(examples: &[QAExample], seed: u64) -> QAModel {
        let vocab = build_vocab(examples, 100).unwrap();
        let params = ParamSet::init(&ModelPreset::tiny(), vocab.len(), seed).unwrap();
        QAModel::new(params, vocab, 50).unwrap()
    }

    /// Randomizes every tensor so biases and norm gains are probed away
    /// from their initial constants.
    fn perturb(params: &mut ParamSet, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in &mut params.tensors {
            t.value.mapv_inplace(|v| v + rng.random_range(-0.5..0.5));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let examples = [qa("feel hopeless tonight", "yes"), qa("great hike today", "no")];
        let mut model = tiny_model(&examples, 7);
        perturb(&mut model.params, 8);
        let ex = model.encode(&examples[0]);
        let params = &model.params;
        let p = params.values();
        let mut g = Grads::zeros(&p, &params.trainable_mask());
        model::loss_and_backward(params, &params.layout(), &p, &ex, &mut g);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-4;
        let mut probed = std::collections::BTreeSet::new();
        let mut worst: f64 = 0.0;
        while probed.len() < 80 {
            let ti = rng.random_range(0..params.tensors.len());
            let n = params.tensors[ti].value.len();
            let k = rng.random_range(0..n);
            if probed.contains(&(ti, k)) {
                continue;
            }
            let analytic = g.slots[ti].as_ref().unwrap().as_slice().unwrap()[k];
            let mut plus = params.clone();
            plus.tensors[ti].value.as_slice_mut().unwrap()[k] += h;
            let mut minus = params.clone();
            minus.tensors[ti].value.as_slice_mut().unwrap()[k] -= h;
            let numeric = (example_loss(&plus, &ex) - example_loss(&minus, &ex)) / (2.0 * h);
            if analytic.abs() < 1e-7 && numeric.abs() < 1e-7 {
                continue;
            }
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
            worst = worst.max(rel);
            probed.insert((ti, k));
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn decode_distributions_sum_to_one() {
        let examples = [qa("a b c", "yes")];
        let model = tiny_model(&examples, 1);
        let ids = model.input_ids(&examples[0]);
        let probs = next_token_probs(&model.params, &ids, &[BEGIN, model.vocab.id("yes"), 5]);
        assert_eq!(probs.nrows(), 3);
        for row in probs.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_output_model_scores_options_equally() {
        let examples = [qa("a b c", "yes"), qa("d e", "no")];
        let mut model = tiny_model(&examples, 2);
        for t in &mut model.params.tensors {
            if t.group == ParamGroup::Output {
                t.value.fill(0.0);
            }
        }
        let ids = model.input_ids(&examples[0]);
        let scores = score_options(&model, &ids, &template());
        assert!((scores[0] - scores[1]).abs() < 1e-6);
        let uniform = -(model.vocab.len() as f64).ln();
        assert!((scores[0] - uniform).abs() < 1e-9);
        assert_eq!(predict(&model, &examples[0], &template(), InferenceMode::Likelihood), "yes");
    }

    #[test]
    fn option_scores_are_length_normalized() {
        let examples = [qa("x", "ocd"), qa("y", "eating disorder")];
        let model = tiny_model(&examples, 3);
        let t = QATemplate::new("q", vec!["ocd".into(), "eating disorder".into()], TaskKind::Multiclass).unwrap();
        let ids = model.input_ids(&examples[0]);
        let scores = score_options(&model, &ids, &t);
        let probs = next_token_probs(
            &model.params,
            &ids,
            &[BEGIN, model.vocab.id("eating"), model.vocab.id("disorder")],
        );
        let by_hand = (probs[[0, model.vocab.id("eating")]].ln()
            + probs[[1, model.vocab.id("disorder")]].ln()
            + probs[[2, END]].ln())
            / 3.0;
        assert!((scores[1] - by_hand).abs() < 1e-12);
    }

    #[test]
    fn greedy_decode_respects_cap_and_is_deterministic() {
        let examples = [qa("a", "yes")];
        let model = tiny_model(&examples, 4);
        let ids = model.input_ids(&examples[0]);
        assert_eq!(greedy_decode(&model, &ids, 0), "");
        assert_eq!(greedy_decode(&model, &ids, 5), greedy_decode(&model, &ids, 5));
    }

    #[test]
    fn overfits_a_single_example() {
        let examples = [qa("i cannot sleep and feel worthless", "yes")];
        let vocab = build_vocab(&examples, 100).unwrap();
        let params = ParamSet::init(&ModelPreset::small(), vocab.len(), 5).unwrap();
        let model = QAModel::new(params, vocab, 50).unwrap();
        let config = TrainConfig {
            epochs: 60,
            batch_size: 1,
            lr: 3e-3,
            ..TrainConfig::default()
        };
        let (model, log) = train_from(model, &examples, &config, None).unwrap();
        let losses = log.epoch_losses();
        assert!(losses.last().unwrap() < &0.05, "{losses:?}");
        let t = template();
        let ids = model.input_ids(&examples[0]);
        let scores = score_options(&model, &ids, &t);
        assert!(scores[0] > scores[1]);
        assert_eq!(greedy_decode(&model, &ids, MAX_ANSWER_TOKENS), "yes");
        assert_eq!(predict(&model, &examples[0], &t, InferenceMode::Likelihood), "yes");
        assert_eq!(predict(&model, &examples[0], &t, InferenceMode::Generate), "yes");
    }

    #[test]
    fn frozen_groups_stay_bit_identical() {
        let examples = [qa("sad", "yes"), qa("fine", "no"), qa("tired", "yes")];
        let mut model = tiny_model(&examples, 6);
        let before = model.clone();
        for g in ParamGroup::ALL {
            model.params.freeze(g);
        }
        let config = TrainConfig {
            epochs: 2,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let (after, log) = train_from(model, &examples, &config, None).unwrap();
        assert_eq!(after.params.tensors, before.params.tensors);
        assert!(log.trainable_groups.is_empty());

        let mut model = before.clone();
        model.params.freeze(ParamGroup::Encoder);
        model.params.freeze(ParamGroup::Decoder);
        let one_step = TrainConfig {
            epochs: 1,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let (after, _) = train_from(model, &examples, &one_step, None).unwrap();
        for (a, b) in after.params.tensors.iter().zip(&before.params.tensors) {
            match a.group {
                ParamGroup::Encoder | ParamGroup::Decoder => assert_eq!(a.value, b.value, "{}", a.name),
                _ => assert_ne!(a.value, b.value, "{}", a.name),
            }
        }
    }

    #[test]
    fn linear_schedule_decays_to_zero() {
        let s = LinearSchedule {
            base_lr: 1e-3,
            total_steps: 7,
        };
        for t in 0..7 {
            assert!((s.lr(t) - 1e-3 * (1.0 - t as f64 / 7.0)).abs() < 1e-12);
        }
        assert!(s.lr(6) > 0.0);
        assert_eq!(s.lr(7), 0.0);
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let mut examples = Vec::new();
        for i in 0..12 {
            examples.push(qa(&format!("hopeless worthless day{i}"), "yes"));
            examples.push(qa(&format!("sunny picnic day{i}"), "no"));
        }
        let config = TrainConfig {
            epochs: 6,
            batch_size: 4,
            seed: 11,
            ..TrainConfig::default()
        };
        let (a, log_a) = train(&examples, &config, &ModelPreset::tiny(), None).unwrap();
        let (b, log_b) = train(&examples, &config, &ModelPreset::tiny(), None).unwrap();
        assert_eq!(a, b);
        assert_eq!(log_a, log_b);
        let losses = log_a.epoch_losses();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn private_training_freezes_and_subsamples() {
        let mut examples = Vec::new();
        for i in 0..30 {
            examples.push(qa(&format!("hopeless {i}"), "yes"));
            examples.push(qa(&format!("sunny {i}"), "no"));
        }
        let config = TrainConfig {
            epochs: 1,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let wrong_n = PrivacyBudget::new(1.0, 1e-5, 1.0, 60, 1.0);
        let model = tiny_model(&examples, 0);
        assert!(matches!(
            train_from(model.clone(), &examples, &config, Some(&wrong_n)),
            Err(Error::Config(_))
        ));
        let budget = PrivacyBudget::new(1.0, 1e-5, 1.0, 6, 1.0);
        let (after, log) = train_from(model.clone(), &examples, &config, Some(&budget)).unwrap();
        assert_eq!(log.n_examples, 6);
        assert_eq!(log.frozen_groups, vec![ParamGroup::Encoder, ParamGroup::Decoder]);
        assert_eq!(log.privacy.as_ref().unwrap().subset_size, 6);
        for (a, b) in after.params.tensors.iter().zip(&model.params.tensors) {
            if matches!(a.group, ParamGroup::Encoder | ParamGroup::Decoder) {
                assert_eq!(a.value, b.value);
            }
        }
        let subset = stratified_subset(&examples, 0.1, 0);
        let yes = subset.iter().filter(|&&i| examples[i].gold_answer == "yes").count();
        assert_eq!((subset.len(), yes), (6, 3));
        assert!(subset.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn empty_training_set_is_a_config_error() {
        assert!(matches!(
            train(&[], &TrainConfig::default(), &ModelPreset::tiny(), None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn artifact_round_trips() {
        let examples = [qa("a b", "yes"), qa("c", "no")];
        let model = tiny_model(&examples, 12);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        assert_eq!(QAModel::load(&path).unwrap(), model);
        let mut old = model.clone();
        old.format_version = 0;
        old.save(&path).unwrap();
        assert!(matches!(QAModel::load(&path), Err(Error::Compat(_))));
    }
}
