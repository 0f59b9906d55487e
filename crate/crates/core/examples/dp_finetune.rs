//! Private fine-tuning of a trained QA model: encoder and decoder frozen,
//! stratified 10% subset, clipped and noised per-example gradients.
//!
//! cargo run --release --example dp_finetune -- [epochs] [noise_std]

use riskqa::corpus::{split, synth_corpus, DatasetManifest};
use riskqa::evalmetrics::{confusion, f1_drop, metrics, render_table, AggregateMode, EvalReport};
use riskqa::privacy::{certify, PrivacyBudget};
use riskqa::qaformat::{format_all, QAExample, QATemplate};
use riskqa::qamodel::{predict, stratified_subset, train, train_from, InferenceMode, ModelPreset, QAModel, TrainConfig};

fn evaluate(model: &QAModel, test: &[QAExample], template: &QATemplate, manifest: &DatasetManifest, name: &str) -> riskqa::Result<EvalReport> {
    let gold: Vec<&str> = test.iter().map(|q| q.gold_answer.as_str()).collect();
    let pred: Vec<&str> = test.iter().map(|q| predict(model, q, template, InferenceMode::Likelihood)).collect();
    let mode = AggregateMode::PositiveClass(manifest.positive().to_string());
    metrics(&confusion(&gold, &pred, &manifest.labels)?, &mode, name)
}

fn main() -> riskqa::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().and_then(|a| a.parse().ok()).unwrap_or(10);
    let noise_std = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(1.0);

    let manifest = DatasetManifest::new("synthetic", &["yes", "no"])?;
    let data = split(&synth_corpus(&["yes", "no"], 1000, 5, 0.9), &manifest, 5)?;
    let template = QATemplate::for_manifest(&manifest)?;
    let train_qa = format_all(&data.train, &template)?;
    let test_qa = format_all(&data.test, &template)?;

    let preset = ModelPreset::small();
    let config = TrainConfig {
        epochs,
        seed: 5,
        ..TrainConfig::for_preset(&preset)
    };
    let (clean, _) = train(&train_qa, &config, &preset, None)?;
    let clean_report = evaluate(&clean, &test_qa, &template, &manifest, "qa-small")?;

    let n = stratified_subset(&train_qa, config.dp_fraction, config.seed).len();
    let budget = PrivacyBudget::new(1.0, 1e-5, 1.0, n, noise_std);
    let (private, log) = train_from(clean, &train_qa, &config, Some(&budget))?;
    let private_report = evaluate(&private, &test_qa, &template, &manifest, "qa-small-dp")?;

    println!("frozen {:?}, trainable {:?}", log.frozen_groups, log.trainable_groups);
    println!("{}", render_table(&[&clean_report, &private_report]));
    println!("F1 drop {:.3} points", f1_drop(&clean_report, &private_report)?);
    println!("{}", serde_json::to_string_pretty(&certify(&budget)?)?);
    Ok(())
}
