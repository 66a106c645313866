//! The transformer adapter end to end, offline: write a tiny random BERT with
//! a word-piece vocabulary, fine-tune it jointly with the heads, and reload
//! the checkpoint.
//!
//! cargo run --release --example pretrained_smoke -- [steps] [lr]
//!
//! For a real model, point `encoder.model_id` at a directory holding
//! `config.json`, `tokenizer.json` and `model.safetensors`, or at a name
//! under `$ECSP_CACHE`.

use ecsp::encoder::pretrained::write_random_model;
use ecsp::encoder::EncoderKind;
use ecsp::evaluation::{evaluate, EvalMode};
use ecsp::synthetic::{generate, SyntheticConfig, CATEGORIES};
use ecsp::{load_checkpoint, train, EtcModel, Extractor, RunConfig};

fn main() -> ecsp::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(600, |s| s.parse().expect("steps"));
    let lr: f64 = args.next().map_or(5e-3, |s| s.parse().expect("lr"));

    let corpus = generate(&SyntheticConfig {
        num_documents: 16,
        seed: 1,
        ..SyntheticConfig::default()
    });
    let mut vocab: Vec<String> = corpus.iter().flat_map(|d| d.tokens.clone()).collect();
    vocab.sort();
    vocab.dedup();
    let words: Vec<&str> = vocab.iter().map(String::as_str).collect();
    let tmp = tempfile::tempdir().expect("temp dir");
    let model_dir = tmp.path().join("tiny-bert");
    write_random_model(&model_dir, &words, 32, 0)?;

    let mut config = RunConfig::toy(32);
    config.encoder.kind = EncoderKind::Pretrained;
    config.encoder.model_id = model_dir.to_string_lossy().into_owned();
    config.encoder.max_positions = 64;
    config.span.max_len = 8;
    config.train.total_steps = Some(steps);
    config.train.peak_lr = lr;
    config.train.batch_size = 4;
    config.train.dropout = 0.0;
    config.train.dev_fraction = 0.0;

    let mut model = EtcModel::new(config, CATEGORIES.iter().map(|c| c.to_string()).collect())?;
    let out = tmp.path().join("checkpoint");
    let outcome = train(&mut model, &corpus, &corpus, &out)?;
    println!("best train ECSP F1 {:.4} at step {}", outcome.best_dev_f1, outcome.best_step);
    print!("{}", evaluate(&corpus, &model, EvalMode::Span, false)?.to_table());

    let reloaded = load_checkpoint(&out)?;
    let doc = corpus.iter().next().expect("non-empty corpus");
    assert_eq!(reloaded.predict(doc)?, model.predict(doc)?);
    println!("reloaded checkpoint reproduces predictions for {}", doc.doc_id);
    Ok(())
}
