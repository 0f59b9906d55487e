//! The command layer end to end: prepare, train, evaluate and certify,
//! writing every artifact under one output directory.
//!
//! cargo run --release --example pipeline_run -- [out_dir]

use std::path::PathBuf;

use riskqa::pipeline::{cmd_evaluate, cmd_prepare, cmd_train, BaselineKind, ModelSpec, RunConfig};
use riskqa::vectorize::VectorizerKind;

fn main() -> riskqa::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("riskqa-pipeline-run"));
    let config: RunConfig = serde_json::from_value(serde_json::json!({
        "dataset": {"source": "synth", "labels": ["yes", "no"], "per_class": 500, "separability": 0.8},
        "model": {"family": "baseline", "kind": "logistic"},
        "train": {"epochs": 50},
        "out_dir": out,
        "seed": 3
    }))?;

    let summary = cmd_prepare(&config)?;
    println!("prepared: {}", serde_json::to_string(&summary)?);
    for (kind, vectorizer) in [
        (BaselineKind::Logistic, VectorizerKind::Tfidf),
        (BaselineKind::NaiveBayes, VectorizerKind::Count),
        (BaselineKind::Mlp, VectorizerKind::Hash),
    ] {
        let mut run = config.clone();
        run.data_dir = Some(out.clone());
        run.out_dir = out.join(format!("{kind:?}").to_lowercase());
        run.model = ModelSpec::Baseline {
            kind,
            vectorizer,
            hash_features: (vectorizer == VectorizerKind::Hash).then_some(4096),
        };
        cmd_train(&run)?;
        let report = cmd_evaluate(&run)?;
        println!("{:<24} F1 {:.3}  -> {}", report.model, report.f1, run.out_dir.display());
    }
    Ok(())
}
