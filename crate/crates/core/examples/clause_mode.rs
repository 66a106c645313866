//! Clause candidates: instead of every span up to `max_len`, each clause is
//! one candidate. Gold spans are mapped onto the clauses they overlap.
//!
//! cargo run --release --example clause_mode

use ecsp::config::CandidateMode;
use ecsp::evaluation::{evaluate, EvalMode};
use ecsp::synthetic::{generate, SyntheticConfig};
use ecsp::training::build_examples;
use ecsp::{train, EtcModel, RunConfig};

fn main() -> ecsp::Result<()> {
    let corpus = generate(&SyntheticConfig {
        num_documents: 60,
        seed: 9,
        ..SyntheticConfig::default()
    });
    let mut config = RunConfig::toy(32);
    config.span.candidates = CandidateMode::Clauses;
    config.span.max_len = 12;
    config.train.total_steps = Some(600);
    config.train.peak_lr = 1e-2;
    config.train.batch_size = 4;
    config.train.dev_fraction = 0.0;

    let mut model = EtcModel::new(config, corpus.categories())?;
    let (examples, supervision) = build_examples(&model, &corpus)?;
    let candidates: usize = examples.iter().map(|e| e.spans.len()).sum();
    println!("{} clause candidates, supervision {supervision:?}", candidates);

    let dir = tempfile::tempdir().expect("temp dir");
    train(&mut model, &corpus, &corpus, dir.path())?;
    print!("{}", evaluate(&corpus, &model, EvalMode::Clause, false)?.to_table());
    println!("with gold emotions:");
    print!("{}", evaluate(&corpus, &model, EvalMode::Clause, true)?.to_table());
    Ok(())
}
