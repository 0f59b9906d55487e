use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Grads;
use super::model::{loss_and_backward, EncodedExample};
use super::params::{ModelPreset, ParamGroup, ParamSet};
use super::vocab::{build_vocab, DEFAULT_VOCAB_SIZE};
use super::QAModel;
use crate::baselines::shuffled_indices;
use crate::error::{Error, Result};
use crate::privacy::{sanitize, GradSet, PrivacyBudget};
use crate::qaformat::QAExample;
use crate::vectorize::DEFAULT_MAX_TOKENS;

/// Seed offset separating the noise stream from the batch-order stream.
const NOISE_STREAM: u64 = 0x6e6f697365;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Decoupled (AdamW-style) decay coefficient.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_input_tokens: usize,
    pub max_vocab: usize,
    /// Share of the training split used for private fine-tuning.
    pub dp_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 128,
            lr: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_input_tokens: DEFAULT_MAX_TOKENS,
            max_vocab: DEFAULT_VOCAB_SIZE,
            dp_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults with the preset's batch size (128 small, 64 base).
    pub fn for_preset(preset: &ModelPreset) -> Self {
        TrainConfig {
            batch_size: if preset.name == "base" { 64 } else { 128 },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("train config: {what}")));
        if self.epochs == 0 || self.batch_size == 0 || self.max_input_tokens == 0 || self.max_vocab == 0 {
            return bad("epochs, batch_size, max_input_tokens and max_vocab must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return bad("adam betas must lie in [0, 1) and eps must be positive");
        }
        if !(self.dp_fraction > 0.0 && self.dp_fraction <= 1.0) {
            return bad("dp_fraction must lie in (0, 1]");
        }
        Ok(())
    }
}

/// `lr0 * (1 - t / T)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    pub base_lr: f64,
    pub total_steps: usize,
}

impl LinearSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        if self.total_steps == 0 {
            return 0.0;
        }
        let frac = step.min(self.total_steps) as f64 / self.total_steps as f64;
        self.base_lr * (1.0 - frac)
    }
}

/// Adam with decoupled weight decay over the trainable tensors.
#[derive(Debug, Clone)]
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl AdamW {
    pub fn new(params: &ParamSet, config: &TrainConfig) -> Self {
        let sizes: Vec<usize> = params.zero_grads().tensors.iter().map(|t| t.data.len()).collect();
        AdamW {
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_eps,
            weight_decay: config.weight_decay,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    /// One update; `grads` must list exactly the trainable tensors in order.
    pub fn step(&mut self, params: &mut ParamSet, grads: &GradSet, lr: f64) -> Result<()> {
        let frozen = params.frozen.clone();
        let trainable: Vec<_> = params.tensors.iter_mut().filter(|t| !frozen.contains(&t.group)).collect();
        if trainable.len() != grads.tensors.len() || trainable.len() != self.m.len() {
            return Err(Error::Shape("optimizer state does not match the trainable tensors".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((param, g), m), v) in trainable.into_iter().zip(&grads.tensors).zip(&mut self.m).zip(&mut self.v) {
            if param.name != g.name || param.value.len() != g.data.len() {
                return Err(Error::Shape(format!("gradient {} does not match parameter {}", g.name, param.name)));
            }
            let values = param.value.as_slice_mut().expect("parameters are contiguous");
            for (i, w) in values.iter_mut().enumerate() {
                let gi = g.data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                *w -= lr * (update + self.weight_decay * *w);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
    pub lr_start: f64,
    pub lr_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpLog {
    pub budget: PrivacyBudget,
    pub subset_size: usize,
    /// Standard deviation of the noise added to each averaged batch gradient.
    pub batch_noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub preset: String,
    pub n_examples: usize,
    pub vocab_size: usize,
    pub n_params: usize,
    pub trainable_groups: Vec<ParamGroup>,
    pub frozen_groups: Vec<ParamGroup>,
    pub total_steps: usize,
    pub epochs: Vec<EpochLog>,
    pub privacy: Option<DpLog>,
}

impl TrainLog {
    pub fn epoch_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }
}

/// Seeded sample of `fraction` of each gold answer's examples (at least one
/// per answer), returned in original order.
pub fn stratified_subset(examples: &[QAExample], fraction: f64, seed: u64) -> Vec<usize> {
    let mut by_answer: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        by_answer.entry(ex.gold_answer.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    for members in by_answer.values() {
        let take = ((members.len() as f64 * fraction).round() as usize).clamp(1, members.len());
        let order = shuffled_indices(&mut rng, members.len());
        chosen.extend(order[..take].iter().map(|&k| members[k]));
    }
    chosen.sort_unstable();
    chosen
}

/// Trains a fresh model. With a privacy budget the encoder and decoder are
/// frozen and only a stratified `dp_fraction` sample of `examples` is used.
pub fn train(
    examples: &[QAExample],
    config: &TrainConfig,
    preset: &ModelPreset,
    privacy: Option<&PrivacyBudget>,
) -> Result<(QAModel, TrainLog)> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let vocab = build_vocab(examples, config.max_vocab)?;
    let params = ParamSet::init(preset, vocab.len(), config.seed)?;
    let model = QAModel::new(params, vocab, config.max_input_tokens)?;
    train_from(model, examples, config, privacy)
}

/// Continues training `model`, keeping its vocabulary. Groups already frozen
/// on the model stay frozen; a privacy budget additionally freezes the
/// encoder and decoder and restricts training to the private subset.
pub fn train_from(
    mut model: QAModel,
    examples: &[QAExample],
    config: &TrainConfig,
    privacy: Option<&PrivacyBudget>,
) -> Result<(QAModel, TrainLog)> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    model.max_input_tokens = config.max_input_tokens;
    let mut subset: Vec<&QAExample> = examples.iter().collect();
    let mut dp_log = None;
    if let Some(budget) = privacy {
        budget.validate()?;
        model.params.freeze(ParamGroup::Encoder);
        model.params.freeze(ParamGroup::Decoder);
        let idx = stratified_subset(examples, config.dp_fraction, config.seed);
        subset = idx.iter().map(|&i| &examples[i]).collect();
        if budget.n != subset.len() {
            return Err(Error::Config(format!(
                "privacy budget n = {} but the private training subset has {} examples",
                budget.n,
                subset.len()
            )));
        }
        dp_log = Some(DpLog {
            budget: budget.clone(),
            subset_size: subset.len(),
            batch_noise_std: budget.noise_std * budget.clip_norm / config.batch_size.min(subset.len()) as f64,
        });
    }
    let encoded: Vec<EncodedExample> = subset.iter().map(|ex| model.encode(ex)).collect();

    let params = &mut model.params;
    let steps_per_epoch = encoded.len().div_ceil(config.batch_size);
    let schedule = LinearSchedule {
        base_lr: config.lr,
        total_steps: steps_per_epoch * config.epochs,
    };
    let mut adam = AdamW::new(params, config);
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed ^ NOISE_STREAM);
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut step = 0;

    for epoch in 0..config.epochs {
        let order = shuffled_indices(&mut order_rng, encoded.len());
        let lr_start = schedule.lr(step);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let lr = schedule.lr(step);
            let (loss, grads) = batch_gradient(params, &encoded, batch, privacy, &mut noise_rng)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { step, loss });
            }
            adam.step(params, &grads, lr)?;
            loss_sum += loss * batch.len() as f64;
            step += 1;
        }
        epochs.push(EpochLog {
            epoch: epoch + 1,
            mean_loss: loss_sum / encoded.len() as f64,
            steps: steps_per_epoch,
            lr_start,
            lr_end: schedule.lr(step - 1),
        });
    }

    let log = TrainLog {
        preset: params.preset.name.clone(),
        n_examples: encoded.len(),
        vocab_size: params.vocab_size,
        n_params: params.n_params(),
        trainable_groups: params.trainable_groups(),
        frozen_groups: params.frozen.clone(),
        total_steps: step,
        epochs,
        privacy: dp_log,
    };
    Ok((model, log))
}

/// Mean loss of the batch and the gradient applied for it: the plain mean
/// gradient, or the sanitized one under a privacy budget.
fn batch_gradient(
    params: &ParamSet,
    encoded: &[EncodedExample],
    batch: &[usize],
    privacy: Option<&PrivacyBudget>,
    noise_rng: &mut ChaCha8Rng,
) -> Result<(f64, GradSet)> {
    let layout = params.layout();
    let p = params.values();
    let mut g = Grads::zeros(&p, &params.trainable_mask());
    let mut loss = 0.0;
    let grads = match privacy {
        None => {
            for &i in batch {
                loss += loss_and_backward(params, &layout, &p, &encoded[i], &mut g);
            }
            let mut grads = to_gradset(params, &g);
            grads.scale(1.0 / batch.len() as f64);
            grads
        }
        Some(budget) => {
            let mut per_example = Vec::with_capacity(batch.len());
            for &i in batch {
                g.reset();
                loss += loss_and_backward(params, &layout, &p, &encoded[i], &mut g);
                per_example.push(to_gradset(params, &g));
            }
            sanitize(&per_example, budget, noise_rng)?
        }
    };
    Ok((loss / batch.len() as f64, grads))
}

pub(crate) fn to_gradset(params: &ParamSet, g: &Grads) -> GradSet {
    let mut out = params.zero_grads();
    let filled = g.slots.iter().flatten();
    for (t, slot) in out.tensors.iter_mut().zip(filled) {
        t.data.copy_from_slice(slot.as_slice().expect("gradients are contiguous"));
    }
    out
}
