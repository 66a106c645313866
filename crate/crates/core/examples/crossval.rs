//! k-fold cross-validation with parallel folds; the mean report does not
//! depend on the number of jobs.
//!
//! cargo run --release --example crossval -- [folds] [jobs]

use ecsp::crossval::crossval;
use ecsp::synthetic::{generate, SyntheticConfig};
use ecsp::RunConfig;

fn main() -> ecsp::Result<()> {
    let mut args = std::env::args().skip(1);
    let folds: usize = args.next().map_or(5, |s| s.parse().expect("folds"));
    let jobs: usize = args.next().map_or(2, |s| s.parse().expect("jobs"));

    let corpus = generate(&SyntheticConfig {
        num_documents: 80,
        seed: 13,
        ..SyntheticConfig::default()
    });
    let mut config = RunConfig::toy(64);
    config.span.max_len = 8;
    config.train.total_steps = Some(2000);
    config.train.peak_lr = 1e-2;
    config.train.batch_size = 4;
    config.train.eval_interval_steps = Some(100);

    let dir = tempfile::tempdir().expect("temp dir");
    let report = crossval(&corpus, &config, folds, jobs, dir.path())?;
    for fold in &report.folds {
        println!(
            "fold {}: best dev F1 {:.4} at step {}",
            fold.fold_index, fold.best_dev_f1, fold.best_step
        );
    }
    for (fold, error) in &report.failures {
        println!("fold {fold} failed: {error}");
    }
    println!("mean over {} folds:", report.folds.len());
    print!("{}", report.mean.to_table());
    Ok(())
}
