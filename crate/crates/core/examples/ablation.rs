//! Localized-context ablation: the same run with and without the features of
//! the text between the two spans.
//!
//! cargo run --release --example ablation -- [steps]

use ecsp::corpus::dev_split;
use ecsp::evaluation::{evaluate_all, Task};
use ecsp::synthetic::{generate, SyntheticConfig};
use ecsp::{train, EtcModel, RunConfig};

fn main() -> ecsp::Result<()> {
    let steps: usize = std::env::args().nth(1).map_or(1500, |s| s.parse().expect("steps"));
    let corpus = generate(&SyntheticConfig {
        num_documents: 100,
        max_pairs: 3,
        seed: 21,
        ..SyntheticConfig::default()
    });
    let (train_docs, test_docs) = dev_split(&corpus, 0.25, 0);

    println!("{:<10} {:>8} {:>8} {:>8}", "LC", "ECSPE", "ECSP", "ECPE_c");
    for use_lc in [true, false] {
        let mut config = RunConfig::toy(48);
        config.span.max_len = 8;
        config.pair.use_localized_context = use_lc;
        config.train.total_steps = Some(steps);
        config.train.peak_lr = 1e-2;
        config.train.batch_size = 4;
        config.train.eval_interval_steps = Some(100);

        let dir = tempfile::tempdir().expect("temp dir");
        let mut model = EtcModel::new(config, corpus.categories())?;
        train(&mut model, &train_docs, &train_docs, dir.path())?;
        let report = evaluate_all(&test_docs, &model)?;
        let f1 = |t| 100.0 * report.f1(t).unwrap_or(0.0);
        println!(
            "{:<10} {:>8.2} {:>8.2} {:>8.2}",
            if use_lc { "with" } else { "without" },
            f1(Task::Ecspe),
            f1(Task::Ecsp),
            f1(Task::EcpeClause)
        );
    }
    Ok(())
}
