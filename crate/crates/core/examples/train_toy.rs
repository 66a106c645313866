//! Train the extract-then-classify model with the toy encoder on a synthetic
//! corpus and score it on held-out documents.
//!
//! cargo run --release --example train_toy -- [steps] [lr]

use ecsp::corpus::dev_split;
use ecsp::evaluation::{evaluate_all, Task};
use ecsp::synthetic::{generate, SyntheticConfig};
use ecsp::{train, EtcModel, RunConfig};

fn main() -> ecsp::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(2000, |s| s.parse().expect("steps"));
    let lr: f64 = args.next().map_or(1e-2, |s| s.parse().expect("lr"));

    let corpus = generate(&SyntheticConfig {
        num_documents: 120,
        seed: 7,
        ..SyntheticConfig::default()
    });
    let (train_docs, test_docs) = dev_split(&corpus, 0.25, 1);
    let (train_set, dev_set) = dev_split(&train_docs, 0.15, 2);

    let mut config = RunConfig::toy(64);
    config.span.max_len = 8;
    config.train.total_steps = Some(steps);
    config.train.peak_lr = lr;
    config.train.batch_size = 4;
    config.train.eval_interval_steps = Some(100);

    let mut model = EtcModel::new(config, corpus.categories())?;
    let out = std::env::temp_dir().join("ecsp-train-toy");
    let outcome = train(&mut model, &train_set, &dev_set, &out)?;
    println!(
        "best dev ECSP F1 {:.4} at step {} ({} steps run)",
        outcome.best_dev_f1, outcome.best_step, outcome.steps_run
    );

    let report = evaluate_all(&test_docs, &model)?;
    print!("{}", report.to_table());
    println!("test ECSP F1 = {:.2}", 100.0 * report.f1(Task::Ecsp).unwrap_or(0.0));
    Ok(())
}
