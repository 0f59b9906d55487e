//! Config-driven commands: `prepare` writes the split dataset, `train` fits
//! the selected model, `evaluate` scores it on the test split and
//! `privacy-check` certifies the configured budget.
//!
//! Every command resolves defaults first and writes the resulting effective
//! config as `config.json` beside its artifacts; rerunning from that file
//! reproduces them byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{
    train_linear, train_mlp, train_nb, BaselineModel, Classifier, FeatureSet, LinearConfig, LossKind, MlpConfig,
};
use crate::corpus::{class_counts, load_jsonl, split, synth_corpus, write_jsonl, DatasetManifest, LabeledPost, TaskKind};
use crate::error::{Error, Result};
use crate::evalmetrics::{confusion, metrics, render_table, AggregateMode, EvalReport};
use crate::privacy::{certify, Certificate, PrivacyBudget};
use crate::qaformat::{format_all, QATemplate};
use crate::qamodel::{
    predict, stratified_subset, train, train_from, InferenceMode, ModelPreset, QAModel, TrainConfig, TrainLog,
};
use crate::vectorize::{fit, Tokenizer, VectorizerKind, VectorizerState, DEFAULT_HASH_FEATURES};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";
pub const MODEL_FILE: &str = "model.json";
pub const TRAIN_LOG_FILE: &str = "train_log.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const PRIVACY_FILE: &str = "privacy.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Raw posts plus a manifest; text is cleaned on load.
    Jsonl { path: PathBuf, manifest: PathBuf },
    /// Generated corpus, see [`synth_corpus`].
    Synth {
        #[serde(default = "default_synth_name")]
        name: String,
        labels: Vec<String>,
        per_class: usize,
        separability: f64,
    },
}

fn default_synth_name() -> String {
    "synthetic".into()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateSpec {
    /// Replaces the default question for the task kind.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub question_text: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Logistic,
    /// Linear SGD classifier with hinge loss.
    Sgd,
    NaiveBayes,
    Mlp,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Logistic => "logistic",
            BaselineKind::Sgd => "sgd",
            BaselineKind::NaiveBayes => "naive_bayes",
            BaselineKind::Mlp => "mlp",
        }
    }
}

/// A named preset or explicit dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PresetSpec {
    Named(String),
    Custom(ModelPreset),
}

impl PresetSpec {
    pub fn resolve(&self) -> Result<ModelPreset> {
        match self {
            PresetSpec::Named(name) => ModelPreset::by_name(name),
            PresetSpec::Custom(p) => {
                p.validate()?;
                Ok(p.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    Baseline {
        kind: BaselineKind,
        #[serde(default = "default_vectorizer")]
        vectorizer: VectorizerKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hash_features: Option<usize>,
    },
    Qa {
        preset: PresetSpec,
        #[serde(default)]
        inference: InferenceMode,
        /// Model artifact to fine-tune instead of training from scratch.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        init_from: Option<PathBuf>,
    },
}

fn default_vectorizer() -> VectorizerKind {
    VectorizerKind::Tfidf
}

/// Training fields; unset ones are filled per model family by
/// [`RunConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_input_tokens: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_vocab: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dp_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_width: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySpec {
    pub epsilon: f64,
    pub delta: f64,
    pub clip_norm: f64,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    /// Defaults to `clip_norm`.
    #[serde(rename = "S", default, skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<f64>,
    /// Size of the private training subset; resolved by `train`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

fn default_noise_std() -> f64 {
    1.0
}

impl PrivacySpec {
    pub fn budget(&self, n: usize) -> PrivacyBudget {
        PrivacyBudget {
            sensitivity: self.sensitivity.unwrap_or(self.clip_norm),
            ..PrivacyBudget::new(self.epsilon, self.delta, self.clip_norm, n, self.noise_std)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub template: TemplateSpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privacy: Option<PrivacySpec>,
    pub out_dir: PathBuf,
    /// Where `prepare` writes and later commands read the dataset; defaults
    /// to `out_dir`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

/// Command-line replacements for config fields; set fields win.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub question_text: Option<String>,
    pub preset: Option<String>,
    pub inference: Option<InferenceMode>,
    pub init_from: Option<PathBuf>,
    pub vectorizer: Option<VectorizerKind>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub max_input_tokens: Option<usize>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub clip_norm: Option<f64>,
    pub noise_std: Option<f64>,
    pub sensitivity: Option<f64>,
    pub n: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            context: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn data_dir(&self) -> &Path {
        self.data_dir.as_deref().unwrap_or(&self.out_dir)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(d) = &o.data_dir {
            self.data_dir = Some(d.clone());
        }
        if let Some(q) = &o.question_text {
            self.template.question_text = Some(q.clone());
        }
        match &mut self.model {
            ModelSpec::Qa {
                preset,
                inference,
                init_from,
            } => {
                if let Some(p) = &o.preset {
                    *preset = PresetSpec::Named(p.clone());
                }
                if let Some(m) = o.inference {
                    *inference = m;
                }
                if let Some(p) = &o.init_from {
                    *init_from = Some(p.clone());
                }
                if o.vectorizer.is_some() {
                    return Err(Error::Config("--vectorizer applies to baseline models only".into()));
                }
            }
            ModelSpec::Baseline { vectorizer, .. } => {
                if let Some(v) = o.vectorizer {
                    *vectorizer = v;
                }
                if o.preset.is_some() || o.inference.is_some() || o.init_from.is_some() {
                    return Err(Error::Config(
                        "--preset, --inference and --init-from apply to QA models only".into(),
                    ));
                }
            }
        }
        let t = &mut self.train;
        t.epochs = o.epochs.or(t.epochs);
        t.batch_size = o.batch_size.or(t.batch_size);
        t.lr = o.lr.or(t.lr);
        t.weight_decay = o.weight_decay.or(t.weight_decay);
        t.max_input_tokens = o.max_input_tokens.or(t.max_input_tokens);

        let privacy_flags = [o.epsilon, o.delta, o.clip_norm, o.noise_std, o.sensitivity];
        if privacy_flags.iter().any(Option::is_some) || o.n.is_some() {
            let p = match &mut self.privacy {
                Some(p) => p,
                None => {
                    let (Some(epsilon), Some(delta), Some(clip_norm)) = (o.epsilon, o.delta, o.clip_norm) else {
                        return Err(Error::Config(
                            "a privacy budget from flags needs --epsilon, --delta and --clip-norm".into(),
                        ));
                    };
                    self.privacy.insert(PrivacySpec {
                        epsilon,
                        delta,
                        clip_norm,
                        noise_std: default_noise_std(),
                        sensitivity: None,
                        n: None,
                    })
                }
            };
            p.epsilon = o.epsilon.unwrap_or(p.epsilon);
            p.delta = o.delta.unwrap_or(p.delta);
            p.clip_norm = o.clip_norm.unwrap_or(p.clip_norm);
            p.noise_std = o.noise_std.unwrap_or(p.noise_std);
            p.sensitivity = o.sensitivity.or(p.sensitivity);
            p.n = o.n.or(p.n);
        }
        Ok(())
    }

    /// Rejects invalid combinations and fills every unset default.
    pub fn resolve(&mut self) -> Result<()> {
        let t = &mut self.train;
        match &self.model {
            ModelSpec::Baseline { kind, vectorizer, .. } => {
                if self.privacy.is_some() {
                    return Err(Error::Config(
                        "privacy budgets apply to QA models only; baselines train without DP".into(),
                    ));
                }
                t.max_input_tokens.get_or_insert(crate::vectorize::DEFAULT_MAX_TOKENS);
                match kind {
                    BaselineKind::NaiveBayes => {
                        if *vectorizer == VectorizerKind::Hash {
                            return Err(Error::FeatureCompat(
                                "multinomial naive Bayes cannot use signed hashing features".into(),
                            ));
                        }
                        t.alpha.get_or_insert(1.0);
                    }
                    BaselineKind::Logistic | BaselineKind::Sgd => {
                        let d = LinearConfig::default();
                        t.epochs.get_or_insert(d.epochs);
                        t.batch_size.get_or_insert(d.batch_size);
                        t.lr.get_or_insert(d.lr);
                        t.l2.get_or_insert(d.l2);
                    }
                    BaselineKind::Mlp => {
                        let d = MlpConfig::default();
                        t.epochs.get_or_insert(d.epochs);
                        t.batch_size.get_or_insert(d.batch_size);
                        t.lr.get_or_insert(d.lr);
                        t.l2.get_or_insert(d.l2);
                        t.hidden_width.get_or_insert(d.hidden_width);
                    }
                }
            }
            ModelSpec::Qa { preset, .. } => {
                let d = TrainConfig::for_preset(&preset.resolve()?);
                t.epochs.get_or_insert(d.epochs);
                t.batch_size.get_or_insert(d.batch_size);
                t.lr.get_or_insert(d.lr);
                t.weight_decay.get_or_insert(d.weight_decay);
                t.max_input_tokens.get_or_insert(d.max_input_tokens);
                t.max_vocab.get_or_insert(d.max_vocab);
                t.dp_fraction.get_or_insert(d.dp_fraction);
            }
        }
        if let Some(p) = &mut self.privacy {
            p.sensitivity.get_or_insert(p.clip_norm);
        }
        Ok(())
    }

    /// QA training settings; call after [`RunConfig::resolve`].
    pub fn qa_train_config(&self) -> TrainConfig {
        let t = &self.train;
        let d = TrainConfig::default();
        TrainConfig {
            epochs: t.epochs.unwrap_or(d.epochs),
            batch_size: t.batch_size.unwrap_or(d.batch_size),
            lr: t.lr.unwrap_or(d.lr),
            weight_decay: t.weight_decay.unwrap_or(d.weight_decay),
            max_input_tokens: t.max_input_tokens.unwrap_or(d.max_input_tokens),
            max_vocab: t.max_vocab.unwrap_or(d.max_vocab),
            dp_fraction: t.dp_fraction.unwrap_or(d.dp_fraction),
            seed: self.seed,
            ..d
        }
    }

    fn template(&self, manifest: &DatasetManifest) -> Result<QATemplate> {
        let mut template = QATemplate::for_manifest(manifest)?;
        if let Some(q) = &self.template.question_text {
            template = QATemplate::new(q.clone(), template.option_labels, template.task_kind)?;
        }
        Ok(template)
    }
}

/// Fitted model with everything `evaluate` needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelArtifact {
    Baseline {
        descriptor: String,
        labels: Vec<String>,
        vectorizer: VectorizerState,
        model: BaselineModel,
    },
    Qa {
        descriptor: String,
        labels: Vec<String>,
        template: QATemplate,
        inference: InferenceMode,
        model: QAModel,
    },
}

impl ModelArtifact {
    pub fn descriptor(&self) -> &str {
        match self {
            ModelArtifact::Baseline { descriptor, .. } | ModelArtifact::Qa { descriptor, .. } => descriptor,
        }
    }

    pub fn labels(&self) -> &[String] {
        match self {
            ModelArtifact::Baseline { labels, .. } | ModelArtifact::Qa { labels, .. } => labels,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let artifact: ModelArtifact = serde_json::from_str(&text)?;
        if let ModelArtifact::Qa { model, .. } = &artifact {
            model.validate()?;
        }
        Ok(artifact)
    }

    /// Predicted label per post.
    pub fn predict_all(&self, posts: &[LabeledPost]) -> Result<Vec<String>> {
        match self {
            ModelArtifact::Baseline { vectorizer, model, .. } => posts
                .iter()
                .map(|p| Ok(model.predict(&vectorizer.transform(&p.text)?)?.to_string()))
                .collect(),
            ModelArtifact::Qa {
                template,
                inference,
                model,
                ..
            } => Ok(format_all(posts, template)?
                .iter()
                .map(|q| predict(model, q, template, *inference).to_string())
                .collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCount {
    pub label: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub n: usize,
    pub class_counts: Vec<LabelCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub dataset: String,
    pub task_kind: TaskKind,
    pub seed: u64,
    pub n_loaded: usize,
    /// Posts whose text was empty after cleaning.
    pub n_dropped: usize,
    pub train: SplitSummary,
    pub test: SplitSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineLog {
    pub descriptor: String,
    pub n_examples: usize,
    pub n_features: usize,
    /// Regularized training objective at the end of training, when defined.
    pub final_objective: Option<f64>,
    pub final_train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TrainReport {
    Baseline(BaselineLog),
    Qa { descriptor: String, log: TrainLog },
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn summarize(posts: &[LabeledPost], manifest: &DatasetManifest) -> SplitSummary {
    SplitSummary {
        n: posts.len(),
        class_counts: class_counts(posts, manifest)
            .into_iter()
            .map(|(label, count)| LabelCount { label, count })
            .collect(),
    }
}

/// Loads or synthesizes the corpus, splits it and writes the dataset files.
pub fn cmd_prepare(config: &RunConfig) -> Result<PrepareSummary> {
    let mut config = config.clone();
    config.resolve()?;
    let (manifest, posts, dropped) = match &config.dataset {
        DatasetSpec::Jsonl { path, manifest } => {
            let manifest = DatasetManifest::load(manifest)?;
            let loaded = load_jsonl(path, &manifest)?;
            (manifest, loaded.posts, loaded.dropped)
        }
        DatasetSpec::Synth {
            name,
            labels,
            per_class,
            separability,
        } => {
            let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
            let manifest = DatasetManifest::new(name.clone(), &refs)?;
            (manifest, synth_corpus(&refs, *per_class, config.seed, *separability), 0)
        }
    };
    let data = split(&posts, &manifest, config.seed)?;
    let dir = config.data_dir().to_path_buf();
    create_dir(&dir)?;
    write_jsonl(&dir.join(TRAIN_FILE), &data.train)?;
    write_jsonl(&dir.join(TEST_FILE), &data.test)?;
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    let summary = PrepareSummary {
        dataset: manifest.name.clone(),
        task_kind: manifest.task_kind,
        seed: config.seed,
        n_loaded: posts.len(),
        n_dropped: dropped,
        train: summarize(&data.train, &manifest),
        test: summarize(&data.test, &manifest),
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    write_json(&dir.join(CONFIG_FILE), &config)?;
    Ok(summary)
}

/// Reads the prepared manifest and one split.
pub fn load_split(config: &RunConfig, file: &str) -> Result<(DatasetManifest, Vec<LabeledPost>)> {
    let dir = config.data_dir();
    let manifest = DatasetManifest::load(&dir.join(MANIFEST_FILE))?;
    let posts = load_jsonl(&dir.join(file), &manifest)?.posts;
    Ok((manifest, posts))
}

/// Trains the configured model on the prepared train split and writes the
/// model artifact, the training log and the effective config.
pub fn cmd_train(config: &RunConfig) -> Result<TrainReport> {
    let mut config = config.clone();
    config.resolve()?;
    let (manifest, posts) = load_split(&config, TRAIN_FILE)?;
    if posts.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let (artifact, report) = match config.model.clone() {
        ModelSpec::Baseline {
            kind,
            vectorizer,
            hash_features,
        } => train_baseline(&config, &manifest, &posts, kind, vectorizer, hash_features)?,
        ModelSpec::Qa {
            preset,
            inference,
            init_from,
        } => {
            let template = config.template(&manifest)?;
            let examples = format_all(&posts, &template)?;
            let train_config = config.qa_train_config();
            let budget = match &mut config.privacy {
                Some(p) => {
                    let n = stratified_subset(&examples, train_config.dp_fraction, train_config.seed).len();
                    if p.n.is_some_and(|given| given != n) {
                        return Err(Error::Config(format!(
                            "privacy.n = {} but the private training subset has {n} examples",
                            p.n.unwrap_or_default()
                        )));
                    }
                    p.n = Some(n);
                    Some(p.budget(n))
                }
                None => None,
            };
            let (model, log) = match &init_from {
                Some(path) => {
                    let init = match ModelArtifact::load(path)? {
                        ModelArtifact::Qa { model, labels, .. } => {
                            check_labels(&labels, &manifest)?;
                            model
                        }
                        ModelArtifact::Baseline { .. } => {
                            return Err(Error::Config(format!("{} is not a QA model", path.display())))
                        }
                    };
                    train_from(init, &examples, &train_config, budget.as_ref())?
                }
                None => train(&examples, &train_config, &preset.resolve()?, budget.as_ref())?,
            };
            let suffix = if budget.is_some() { "-dp" } else { "" };
            let descriptor = format!("qa-{}{suffix}", model.params.preset.name);
            let artifact = ModelArtifact::Qa {
                descriptor: descriptor.clone(),
                labels: manifest.labels.clone(),
                template,
                inference,
                model,
            };
            (artifact, TrainReport::Qa { descriptor, log })
        }
    };
    create_dir(&config.out_dir)?;
    write_json(&config.out_dir.join(MODEL_FILE), &artifact)?;
    write_json(&config.out_dir.join(TRAIN_LOG_FILE), &report)?;
    write_json(&config.out_dir.join(CONFIG_FILE), &config)?;
    Ok(report)
}

fn train_baseline(
    config: &RunConfig,
    manifest: &DatasetManifest,
    posts: &[LabeledPost],
    kind: BaselineKind,
    vectorizer: VectorizerKind,
    hash_features: Option<usize>,
) -> Result<(ModelArtifact, TrainReport)> {
    let t = &config.train;
    let tokenizer = Tokenizer::new(t.max_input_tokens.unwrap_or(crate::vectorize::DEFAULT_MAX_TOKENS));
    let state = match vectorizer {
        VectorizerKind::Hash => VectorizerState::hashing(hash_features.unwrap_or(DEFAULT_HASH_FEATURES), tokenizer),
        kind => fit(posts.iter().map(|p| p.text.as_str()), kind, tokenizer)?,
    };
    let data = FeatureSet::from_posts(posts, &state, &manifest.labels)?;
    let (model, objective) = match kind {
        BaselineKind::Logistic | BaselineKind::Sgd => {
            let cfg = LinearConfig {
                loss: if kind == BaselineKind::Logistic {
                    LossKind::Logistic
                } else {
                    LossKind::Hinge
                },
                epochs: t.epochs.unwrap_or_default(),
                lr: t.lr.unwrap_or_default(),
                l2: t.l2.unwrap_or_default(),
                batch_size: t.batch_size.unwrap_or_default(),
                seed: config.seed,
            };
            let m = train_linear(&data, &cfg)?;
            let obj = m.objective(&data, cfg.l2)?;
            (BaselineModel::Linear(m), Some(obj))
        }
        BaselineKind::Mlp => {
            let cfg = MlpConfig {
                hidden_width: t.hidden_width.unwrap_or_default(),
                epochs: t.epochs.unwrap_or_default(),
                lr: t.lr.unwrap_or_default(),
                l2: t.l2.unwrap_or_default(),
                batch_size: t.batch_size.unwrap_or_default(),
                seed: config.seed,
            };
            let m = train_mlp(&data, &cfg)?;
            let obj = m.objective(&data, cfg.l2)?;
            (BaselineModel::Mlp(m), Some(obj))
        }
        BaselineKind::NaiveBayes => (BaselineModel::NaiveBayes(train_nb(&data, t.alpha.unwrap_or(1.0))?), None),
    };
    let correct = data
        .rows
        .iter()
        .zip(&data.targets)
        .map(|(x, &y)| Ok(usize::from(model.predict_index(x)? == y)))
        .sum::<Result<usize>>()?;
    let vec_name = match vectorizer {
        VectorizerKind::Tfidf => "tfidf",
        VectorizerKind::Count => "count",
        VectorizerKind::Hash => "hash",
    };
    let descriptor = format!("{}+{vec_name}", kind.name());
    let log = BaselineLog {
        descriptor: descriptor.clone(),
        n_examples: data.len(),
        n_features: state.dim(),
        final_objective: objective,
        final_train_accuracy: correct as f64 / data.len() as f64,
    };
    let artifact = ModelArtifact::Baseline {
        descriptor,
        labels: manifest.labels.clone(),
        vectorizer: state,
        model,
    };
    Ok((artifact, TrainReport::Baseline(log)))
}

fn check_labels(labels: &[String], manifest: &DatasetManifest) -> Result<()> {
    if labels != manifest.labels.as_slice() {
        return Err(Error::Compat(format!(
            "model labels {labels:?} do not match dataset labels {:?}",
            manifest.labels
        )));
    }
    Ok(())
}

/// Positive-class metrics for binary datasets, support-weighted otherwise.
pub fn report_mode(manifest: &DatasetManifest) -> AggregateMode {
    match manifest.task_kind {
        TaskKind::Binary => AggregateMode::PositiveClass(manifest.positive().to_string()),
        TaskKind::Multiclass => AggregateMode::Weighted,
    }
}

/// Scores the trained artifact on the test split and writes the JSON and
/// text reports.
pub fn cmd_evaluate(config: &RunConfig) -> Result<EvalReport> {
    let mut config = config.clone();
    config.resolve()?;
    let artifact = ModelArtifact::load(&config.out_dir.join(MODEL_FILE))?;
    let (manifest, posts) = load_split(&config, TEST_FILE)?;
    check_labels(artifact.labels(), &manifest)?;
    let pred = artifact.predict_all(&posts)?;
    let gold: Vec<&str> = posts.iter().map(|p| p.label.as_str()).collect();
    let cm = confusion(&gold, &pred, &manifest.labels)?;
    let report = metrics(&cm, &report_mode(&manifest), artifact.descriptor())?;
    create_dir(&config.out_dir)?;
    write_json(&config.out_dir.join(REPORT_JSON), &report)?;
    let table = render_table(&[&report]);
    fs::write(config.out_dir.join(REPORT_TEXT), &table).map_err(|e| Error::io(config.out_dir.join(REPORT_TEXT), e))?;
    write_json(&config.out_dir.join(CONFIG_FILE), &config)?;
    Ok(report)
}

/// Certifies the configured budget. When `n` is unset it is resolved from
/// the prepared train split exactly as `train` would.
pub fn cmd_privacy_check(config: &RunConfig) -> Result<Certificate> {
    let mut config = config.clone();
    config.resolve()?;
    let spec = config
        .privacy
        .clone()
        .ok_or_else(|| Error::Config("privacy-check needs a privacy budget".into()))?;
    let n = match spec.n {
        Some(n) => n,
        None => {
            let (manifest, posts) = load_split(&config, TRAIN_FILE)?;
            let examples = format_all(&posts, &config.template(&manifest)?)?;
            let tc = config.qa_train_config();
            stratified_subset(&examples, tc.dp_fraction, tc.seed).len()
        }
    };
    let cert = certify(&spec.budget(n))?;
    create_dir(&config.out_dir)?;
    write_json(&config.out_dir.join(PRIVACY_FILE), &cert)?;
    Ok(cert)
}

/// Reads a previously written training log.
pub fn load_train_report(dir: &Path) -> Result<TrainReport> {
    read_json(&dir.join(TRAIN_LOG_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth_config(dir: &Path, model: ModelSpec) -> RunConfig {
        RunConfig {
            dataset: DatasetSpec::Synth {
                name: "synthetic".into(),
                labels: vec!["yes".into(), "no".into()],
                per_class: 1000,
                separability: 0.9,
            },
            template: TemplateSpec::default(),
            model,
            train: TrainSpec::default(),
            privacy: None,
            out_dir: dir.to_path_buf(),
            data_dir: None,
            seed: 1,
        }
    }

    fn logistic() -> ModelSpec {
        ModelSpec::Baseline {
            kind: BaselineKind::Logistic,
            vectorizer: VectorizerKind::Tfidf,
            hash_features: None,
        }
    }

    fn budget() -> PrivacySpec {
        PrivacySpec {
            epsilon: 1.0,
            delta: 1e-5,
            clip_norm: 1.0,
            noise_std: 1.0,
            sensitivity: None,
            n: None,
        }
    }

    #[test]
    fn prepare_splits_and_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("nested/out");
        let config = synth_config(&out, logistic());
        let summary = cmd_prepare(&config).unwrap();
        assert_eq!((summary.train.n, summary.test.n), (1600, 400));
        let first = fs::read(out.join(TRAIN_FILE)).unwrap();
        cmd_prepare(&config).unwrap();
        assert_eq!(fs::read(out.join(TRAIN_FILE)).unwrap(), first);
        let effective = RunConfig::load(&out.join(CONFIG_FILE)).unwrap();
        assert_eq!(effective.train.lr, Some(0.1));
    }

    #[test]
    fn privacy_with_baseline_is_rejected_before_work() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = synth_config(dir.path(), logistic());
        config.privacy = Some(budget());
        assert!(matches!(cmd_train(&config), Err(Error::Config(_))));
        assert!(matches!(cmd_prepare(&config), Err(Error::Config(_))));
        assert!(!dir.path().join(TRAIN_FILE).exists());
    }

    #[test]
    fn baseline_round_trip_and_evaluation_modes() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = synth_config(dir.path(), logistic());
        config.train.epochs = Some(5);
        cmd_prepare(&config).unwrap();
        let report = match cmd_train(&config).unwrap() {
            TrainReport::Baseline(log) => log,
            other => panic!("unexpected {other:?}"),
        };
        assert!(report.final_train_accuracy > 0.9);
        let eval = cmd_evaluate(&config).unwrap();
        assert_eq!(eval.mode, AggregateMode::PositiveClass("yes".into()));
        let bytes = fs::read(dir.path().join(REPORT_JSON)).unwrap();
        cmd_evaluate(&config).unwrap();
        assert_eq!(fs::read(dir.path().join(REPORT_JSON)).unwrap(), bytes);

        let multi = tempfile::tempdir().unwrap();
        let mut config = synth_config(multi.path(), logistic());
        config.dataset = DatasetSpec::Synth {
            name: "five".into(),
            labels: ["a", "b", "c", "d", "e"].map(String::from).to_vec(),
            per_class: 40,
            separability: 0.9,
        };
        config.train.epochs = Some(5);
        cmd_prepare(&config).unwrap();
        cmd_train(&config).unwrap();
        assert_eq!(cmd_evaluate(&config).unwrap().mode, AggregateMode::Weighted);
    }

    #[test]
    fn mismatched_manifest_is_a_compat_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = synth_config(dir.path(), logistic());
        config.train.epochs = Some(1);
        cmd_prepare(&config).unwrap();
        cmd_train(&config).unwrap();
        config.dataset = DatasetSpec::Synth {
            name: "other".into(),
            labels: vec!["no".into(), "yes".into()],
            per_class: 10,
            separability: 0.9,
        };
        cmd_prepare(&config).unwrap();
        assert!(matches!(cmd_evaluate(&config), Err(Error::Compat(_))));
    }

    #[test]
    fn privacy_check_resolves_n_and_reports_verdict() {
        let dir = tempfile::tempdir().unwrap();
        let qa = ModelSpec::Qa {
            preset: PresetSpec::Named("small".into()),
            inference: InferenceMode::Likelihood,
            init_from: None,
        };
        let mut config = synth_config(dir.path(), qa);
        config.privacy = Some(budget());
        cmd_prepare(&config).unwrap();
        let cert = cmd_privacy_check(&config).unwrap();
        assert_eq!(cert.n, 160);
        assert_eq!(cert.verdict, crate::privacy::Verdict::Private);
        config.privacy.as_mut().unwrap().noise_std = 10.0;
        assert_eq!(
            cmd_privacy_check(&config).unwrap().verdict,
            crate::privacy::Verdict::NotPrivate
        );
    }

    #[test]
    fn overrides_win_over_config() {
        let mut config = synth_config(Path::new("/tmp/x"), logistic());
        let o = Overrides {
            seed: Some(9),
            epochs: Some(3),
            vectorizer: Some(VectorizerKind::Count),
            ..Overrides::default()
        };
        config.apply(&o).unwrap();
        assert_eq!(config.seed, 9);
        assert_eq!(config.train.epochs, Some(3));
        assert!(matches!(config.model, ModelSpec::Baseline { vectorizer: VectorizerKind::Count, .. }));
        let bad = Overrides {
            preset: Some("base".into()),
            ..Overrides::default()
        };
        assert!(config.apply(&bad).is_err());
        let partial = Overrides {
            epsilon: Some(1.0),
            ..Overrides::default()
        };
        assert!(config.apply(&partial).is_err());
    }

    #[test]
    fn config_json_shape() {
        let json = r#"{
            "dataset": {"source": "synth", "labels": ["yes", "no"], "per_class": 10, "separability": 0.9},
            "model": {"family": "qa", "preset": "small"},
            "privacy": {"epsilon": 1.0, "delta": 1e-5, "clip_norm": 1.0},
            "out_dir": "runs/x",
            "seed": 3
        }"#;
        let mut c: RunConfig = serde_json::from_str(json).unwrap();
        c.resolve().unwrap();
        assert_eq!(c.train.batch_size, Some(128));
        assert_eq!(c.privacy.as_ref().unwrap().sensitivity, Some(1.0));
        let custom = r#"{"family": "qa", "preset": {"name": "mini", "d_model": 8, "n_heads": 2, "n_layers": 1, "d_ff": 16}}"#;
        let m: ModelSpec = serde_json::from_str(custom).unwrap();
        assert!(matches!(m, ModelSpec::Qa { preset: PresetSpec::Custom(_), .. }));
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
