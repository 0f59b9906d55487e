//! Fits every classical baseline on a three-class synthetic corpus under
//! each vectorizer and prints one metrics table.
//!
//! cargo run --release --example baselines -- [separability]

use riskqa::baselines::{
    train_linear, train_mlp, train_nb, Classifier, FeatureSet, LinearConfig, LossKind, MlpConfig,
};
use riskqa::corpus::{split, synth_corpus, DatasetManifest};
use riskqa::evalmetrics::{confusion, metrics, render_table, AggregateMode};
use riskqa::vectorize::{fit, Tokenizer, VectorizerKind};

fn main() -> riskqa::Result<()> {
    let sep = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0.6);
    let labels = ["low", "moderate", "severe"];
    let manifest = DatasetManifest::new("synthetic-3", &labels)?;
    let data = split(&synth_corpus(&labels, 400, 11, sep), &manifest, 11)?;
    let gold: Vec<&str> = data.test.iter().map(|p| p.label.as_str()).collect();

    let mut reports = Vec::new();
    for kind in [VectorizerKind::Tfidf, VectorizerKind::Count, VectorizerKind::Hash] {
        let state = fit(data.train.iter().map(|p| p.text.as_str()), kind, Tokenizer::default())?;
        let train = FeatureSet::from_posts(&data.train, &state, &manifest.labels)?;
        let test = FeatureSet::from_posts(&data.test, &state, &manifest.labels)?;

        let linear = |loss| LinearConfig {
            loss,
            epochs: 50,
            ..LinearConfig::default()
        };
        let mut models: Vec<(&str, Box<dyn Classifier>)> = vec![
            ("logistic", Box::new(train_linear(&train, &linear(LossKind::Logistic))?)),
            ("sgd-hinge", Box::new(train_linear(&train, &linear(LossKind::Hinge))?)),
            (
                "mlp",
                Box::new(train_mlp(
                    &train,
                    &MlpConfig {
                        hidden_width: 32,
                        epochs: 30,
                        ..MlpConfig::default()
                    },
                )?),
            ),
        ];
        // Signed hash features are not valid counts for naive Bayes.
        if state.non_negative() {
            models.push(("naive-bayes", Box::new(train_nb(&train, 1.0)?)));
        }

        for (name, model) in &models {
            let pred = test.rows.iter().map(|x| model.predict(x)).collect::<riskqa::Result<Vec<_>>>()?;
            let cm = confusion(&gold, &pred, &manifest.labels)?;
            reports.push(metrics(&cm, &AggregateMode::Weighted, &format!("{name}+{kind:?}").to_lowercase())?);
        }
    }
    println!("separability {sep}, {} train / {} test", data.train.len(), data.test.len());
    println!("{}", render_table(&reports.iter().collect::<Vec<_>>()));
    Ok(())
}
