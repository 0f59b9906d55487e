//! Trains the small QA preset on a synthetic binary corpus and reports
//! test metrics with both inference modes.
//!
//! cargo run --release --example qa_synthetic -- [epochs] [seed]

use std::time::Instant;

use riskqa::corpus::{split, synth_corpus, DatasetManifest};
use riskqa::evalmetrics::{confusion, metrics, render_table, AggregateMode};
use riskqa::qaformat::{format_all, QATemplate};
use riskqa::qamodel::{predict, train, InferenceMode, ModelPreset, TrainConfig};

fn main() -> riskqa::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().and_then(|a| a.parse().ok()).unwrap_or(20);
    let seed = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(1);

    let manifest = DatasetManifest::new("synthetic", &["yes", "no"])?;
    let posts = synth_corpus(&["yes", "no"], 1000, seed, 0.9);
    let data = split(&posts, &manifest, seed)?;
    let template = QATemplate::for_manifest(&manifest)?;
    let train_qa = format_all(&data.train, &template)?;
    let test_qa = format_all(&data.test, &template)?;

    let preset = ModelPreset::small();
    let config = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::for_preset(&preset)
    };
    let start = Instant::now();
    let (model, log) = train(&train_qa, &config, &preset, None)?;
    println!(
        "trained {} params, vocab {}, {} steps in {:.1}s",
        log.n_params,
        log.vocab_size,
        log.total_steps,
        start.elapsed().as_secs_f64()
    );
    for e in &log.epochs {
        println!("epoch {:>2}  loss {:.4}  lr {:.2e}", e.epoch, e.mean_loss, e.lr_start);
    }

    let gold: Vec<&str> = test_qa.iter().map(|q| q.gold_answer.as_str()).collect();
    let mode = AggregateMode::PositiveClass(manifest.positive().to_string());
    let mut reports = Vec::new();
    for (name, inference) in [("qa-likelihood", InferenceMode::Likelihood), ("qa-generate", InferenceMode::Generate)] {
        let pred: Vec<&str> = test_qa.iter().map(|q| predict(&model, q, &template, inference)).collect();
        reports.push(metrics(&confusion(&gold, &pred, &manifest.labels)?, &mode, name)?);
    }
    println!("{}", render_table(&reports.iter().collect::<Vec<_>>()));
    Ok(())
}
