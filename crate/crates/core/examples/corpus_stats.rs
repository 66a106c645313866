//! Corpus statistics and length coverage, as printed by `ecsp stats`.
//!
//! cargo run --example corpus_stats -- [corpus.jsonl] [max_len]
//!
//! Without a path, a synthetic corpus is used.

use ecsp::cli::stats_table;
use ecsp::corpus::{corpus_stats, length_coverage, load_corpus};
use ecsp::synthetic::{generate, SyntheticConfig};

fn main() -> ecsp::Result<()> {
    let mut args = std::env::args().skip(1);
    let corpus = match args.next() {
        Some(path) => load_corpus(path)?,
        None => generate(&SyntheticConfig::default()),
    };
    let max_len: usize = args.next().map_or(20, |s| s.parse().expect("max_len"));

    let stats = corpus_stats(&corpus);
    print!("{}", stats_table(&stats, max_len));

    // How much of the gold supervision a span cap of L keeps.
    for l in [1, 2, 4, 8, 16] {
        println!("L = {l:>2}: {:6.2}%", 100.0 * length_coverage(&stats, l));
    }
    Ok(())
}
