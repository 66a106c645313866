//! The transformer adapter trained end to end on a tiny random model.
#![cfg(feature = "pretrained")]

use ecsp::encoder::pretrained::write_random_model;
use ecsp::encoder::EncoderKind;
use ecsp::evaluation::{evaluate, EvalMode, Task};
use ecsp::synthetic::{generate, SyntheticConfig};
use ecsp::{load_checkpoint, train, EtcModel, Extractor, RunConfig};

#[test]
fn tiny_bert_memorizes_a_small_corpus_and_reloads() {
    let corpus = generate(&SyntheticConfig {
        num_documents: 16,
        seed: 1,
        ..SyntheticConfig::default()
    });
    let mut vocab: Vec<String> = corpus.iter().flat_map(|d| d.tokens.clone()).collect();
    vocab.sort();
    vocab.dedup();
    let words: Vec<&str> = vocab.iter().map(String::as_str).collect();
    let tmp = tempfile::tempdir().unwrap();
    let model_dir = tmp.path().join("tiny-bert");
    write_random_model(&model_dir, &words, 32, 0).unwrap();

    let mut config = RunConfig::toy(32);
    config.encoder.kind = EncoderKind::Pretrained;
    config.encoder.model_id = model_dir.to_string_lossy().into_owned();
    config.span.max_len = 8;
    config.train.total_steps = Some(600);
    config.train.peak_lr = 5e-3;
    config.train.batch_size = 4;
    config.train.dropout = 0.0;
    config.train.dev_fraction = 0.0;

    let mut model = EtcModel::new(config, corpus.categories()).unwrap();
    let out = tmp.path().join("checkpoint");
    train(&mut model, &corpus, &corpus, &out).unwrap();
    let report = evaluate(&corpus, &model, EvalMode::Span, false).unwrap();
    assert_eq!(report.f1(Task::Ecsp), Some(1.0), "{}", report.to_table());

    let reloaded = load_checkpoint(&out).unwrap();
    assert_eq!(reloaded.encoder.id(), model_dir.to_string_lossy());
    for doc in &corpus {
        assert_eq!(reloaded.predict(doc).unwrap(), model.predict(doc).unwrap());
    }
}
