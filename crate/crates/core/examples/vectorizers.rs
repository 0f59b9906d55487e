//! The three sparse feature extractors on a toy corpus.
//!
//! cargo run --example vectorizers

use riskqa::vectorize::{fit, tokenize_all, SparseVector, Tokenizer, VectorizerKind, VectorizerState};

fn show(name: &str, v: &SparseVector) {
    let entries: Vec<String> = v.pairs.iter().map(|(i, x)| format!("{i}:{x:.4}")).collect();
    println!("  {name:<6} dim {:>6}  norm {:.4}  [{}]", v.dim, v.norm(), entries.join(" "));
}

fn main() -> riskqa::Result<()> {
    let corpus = [
        "I can't sleep and I feel hopeless",
        "Feeling better after talking to a friend",
        "Can't stop thinking about it, can't sleep",
    ];
    println!("tokens: {:?}", tokenize_all(corpus[2]));

    let tok = Tokenizer::default();
    let tfidf = fit(corpus, VectorizerKind::Tfidf, tok)?;
    let count = fit(corpus, VectorizerKind::Count, tok)?;
    let hash = VectorizerState::hashing(32, tok);

    for doc in ["can't sleep, feel hopeless", "a friend helps"] {
        println!("{doc:?}");
        show("tfidf", &tfidf.transform(doc)?);
        show("count", &count.transform(doc)?);
        show("hash", &hash.transform(doc)?);
    }
    Ok(())
}
