use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use riskqa::pipeline::{cmd_evaluate, cmd_prepare, cmd_privacy_check, cmd_train, Overrides, RunConfig};
use riskqa::privacy::Verdict;
use riskqa::qamodel::InferenceMode;
use riskqa::vectorize::VectorizerKind;

#[derive(Parser)]
#[command(name = "riskqa", version, about = "Risk classification as multiple-choice QA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean, split and write the dataset.
    Prepare(Common),
    /// Train the configured model on the prepared split.
    Train(Common),
    /// Score the trained model on the test split.
    Evaluate(Common),
    /// Certify the privacy budget (exit 0 private, 2 not private).
    PrivacyCheck(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Vectorizer {
    Tfidf,
    Count,
    Hash,
}

#[derive(Clone, Copy, ValueEnum)]
enum Inference {
    Likelihood,
    Generate,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    question: Option<String>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, value_enum)]
    inference: Option<Inference>,
    #[arg(long)]
    init_from: Option<PathBuf>,
    #[arg(long, value_enum)]
    vectorizer: Option<Vectorizer>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    max_input_tokens: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    sensitivity: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
}

impl Common {
    fn load(&self) -> riskqa::Result<RunConfig> {
        let mut config = RunConfig::load(&self.config)?;
        config.apply(&Overrides {
            seed: self.seed,
            out_dir: self.out.clone(),
            data_dir: self.data_dir.clone(),
            question_text: self.question.clone(),
            preset: self.preset.clone(),
            inference: self.inference.map(|i| match i {
                Inference::Likelihood => InferenceMode::Likelihood,
                Inference::Generate => InferenceMode::Generate,
            }),
            init_from: self.init_from.clone(),
            vectorizer: self.vectorizer.map(|v| match v {
                Vectorizer::Tfidf => VectorizerKind::Tfidf,
                Vectorizer::Count => VectorizerKind::Count,
                Vectorizer::Hash => VectorizerKind::Hash,
            }),
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            max_input_tokens: self.max_input_tokens,
            epsilon: self.epsilon,
            delta: self.delta,
            clip_norm: self.clip_norm,
            noise_std: self.noise_std,
            sensitivity: self.sensitivity,
            n: self.n,
        })?;
        Ok(config)
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> riskqa::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> riskqa::Result<ExitCode> {
    match cli.command {
        Command::Prepare(c) => print_json(&cmd_prepare(&c.load()?)?)?,
        Command::Train(c) => print_json(&cmd_train(&c.load()?)?)?,
        Command::Evaluate(c) => print_json(&cmd_evaluate(&c.load()?)?)?,
        Command::PrivacyCheck(c) => {
            let cert = cmd_privacy_check(&c.load()?)?;
            print_json(&cert)?;
            if cert.verdict == Verdict::NotPrivate {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
