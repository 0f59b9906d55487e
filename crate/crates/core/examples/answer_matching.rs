//! QA formatting of labeled posts and mapping free-text answers back to
//! option labels.
//!
//! cargo run --example answer_matching

use riskqa::corpus::{DatasetManifest, LabeledPost};
use riskqa::qaformat::{format_example, match_answer, QATemplate};

fn main() -> riskqa::Result<()> {
    let manifest = DatasetManifest::new("severity", &["no risk", "low risk", "moderate risk", "severe risk"])?;
    let template = QATemplate::for_manifest(&manifest)?;
    let post = LabeledPost {
        id: "p1".into(),
        text: "I keep giving my things away and saying goodbye.".into(),
        label: "severe risk".into(),
    };
    let ex = format_example(&post, &template)?;
    println!("input:  {}\ngold:   {}\n", ex.input_string, ex.gold_answer);

    for decoded in ["severe risk", "Severe Risk.", "(d)", "moderate", "risk", "sever risks", "nothing"] {
        println!("{decoded:>14?} -> {}", match_answer(decoded, &template));
    }
    Ok(())
}
