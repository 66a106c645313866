//! Train briefly, save a checkpoint, reload it and extract pairs from raw
//! documents, printing the same JSON lines as `ecsp predict`.
//!
//! cargo run --release --example predict

use ecsp::synthetic::{generate, SyntheticConfig};
use ecsp::{load_checkpoint, train, EtcModel, Extractor, RunConfig};

fn main() -> ecsp::Result<()> {
    let corpus = generate(&SyntheticConfig {
        num_documents: 20,
        seed: 2,
        ..SyntheticConfig::default()
    });
    let mut config = RunConfig::toy(64);
    config.span.max_len = 8;
    config.train.total_steps = Some(500);
    config.train.peak_lr = 1e-2;
    config.train.batch_size = 4;
    config.train.dropout = 0.0;
    config.train.dev_fraction = 0.0;

    let dir = tempfile::tempdir().expect("temp dir");
    let mut model = EtcModel::new(config, corpus.categories())?;
    let outcome = train(&mut model, &corpus, &corpus, dir.path())?;
    println!("checkpoint {} (step {})", outcome.checkpoint.dir.display(), outcome.best_step);

    let reloaded = load_checkpoint(dir.path())?;
    for doc in corpus.iter().take(5) {
        let prediction = reloaded.predict(doc)?;
        assert_eq!(prediction, model.predict(doc)?);
        println!("{}", serde_json::json!({ "doc_id": doc.doc_id, "pairs": prediction.pairs }));
        println!("  text: {}", doc.tokens.join(" "));
        for p in &prediction.pairs {
            let words = |s: ecsp::SpanRef| doc.tokens[s.start..=s.end].join(" ");
            println!("  {:?} <- {:?} [{}] {:.2}", words(p.emotion), words(p.cause), p.category, p.score);
        }
    }
    Ok(())
}
