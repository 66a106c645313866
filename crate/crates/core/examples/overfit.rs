//! Overfit a 20-document synthetic corpus: the model should memorize every
//! training pair, category included.
//!
//! cargo run --release --example overfit -- [corpus_seed]

use ecsp::evaluation::{evaluate, EvalMode, Task};
use ecsp::synthetic::{generate, SyntheticConfig};
use ecsp::{train, EtcModel, Extractor, RunConfig};

fn main() -> ecsp::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let seed: u64 = std::env::args().nth(1).map_or(11, |s| s.parse().expect("corpus seed"));

    let corpus = generate(&SyntheticConfig {
        num_documents: 20,
        seed,
        ..SyntheticConfig::default()
    });
    let mut config = RunConfig::toy(64);
    config.span.max_len = 8;
    config.train.total_steps = Some(500);
    config.train.peak_lr = 1e-2;
    config.train.batch_size = 4;
    config.train.dropout = 0.0;
    config.train.dev_fraction = 0.0;
    config.train.eval_interval_steps = Some(20);

    let mut model = EtcModel::new(config, corpus.categories())?;
    let out = std::env::temp_dir().join("ecsp-overfit");
    let outcome = train(&mut model, &corpus, &corpus, &out)?;
    let report = evaluate(&corpus, &model, EvalMode::Span, false)?;
    print!("{}", report.to_table());
    println!(
        "train ECSP F1 {:.4} (best at step {})",
        report.f1(Task::Ecsp).unwrap_or(0.0),
        outcome.best_step
    );

    let mut missing = 0;
    for doc in &corpus {
        let predicted = model.predict(doc)?.pairs;
        for gold in &doc.pairs {
            let found = predicted
                .iter()
                .any(|p| p.emotion == gold.emotion && p.cause == gold.cause && p.category == gold.category);
            if !found {
                println!("{}: missed {} -> {} ({})", doc.doc_id, gold.emotion, gold.cause, gold.category);
                missing += 1;
            }
        }
    }
    println!("gold pairs not reproduced: {missing}");
    Ok(())
}
