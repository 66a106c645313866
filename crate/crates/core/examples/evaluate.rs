//! Scoring: a gold echo scores 100 everywhere, an empty extractor 0, and a
//! perturbed echo shows how exact span matching and clause relaxation differ.
//!
//! cargo run --example evaluate

use ecsp::evaluation::{evaluate, evaluate_predictions, EvalMode};
use ecsp::model::{EmptyExtractor, GoldEcho};
use ecsp::synthetic::{generate, SyntheticConfig};
use ecsp::{Extractor, Prediction, SpanRef};

fn main() -> ecsp::Result<()> {
    let corpus = generate(&SyntheticConfig {
        num_documents: 40,
        seed: 5,
        ..SyntheticConfig::default()
    });

    println!("gold echo, span mode");
    print!("{}", evaluate(&corpus, &GoldEcho, EvalMode::Span, false)?.to_table());
    println!("\nempty extractor, span mode");
    print!("{}", evaluate(&corpus, &EmptyExtractor, EvalMode::Span, false)?.to_table());

    // Trim the first token off every cause: exact span matching fails, but
    // the spans still sit in the same clauses.
    let shifted: Vec<Prediction> = corpus
        .iter()
        .map(|d| {
            let mut p = GoldEcho.predict(d)?;
            for pair in &mut p.pairs {
                if pair.cause.len() > 1 {
                    pair.cause = SpanRef::new(pair.cause.start + 1, pair.cause.end);
                }
            }
            p.causes = p.pairs.iter().map(|x| x.cause).collect();
            Ok(p)
        })
        .collect::<ecsp::Result<_>>()?;
    for mode in [EvalMode::Span, EvalMode::Clause] {
        println!("\ntrimmed causes, {mode:?} mode");
        print!("{}", evaluate_predictions(&corpus, &shifted, None, mode)?.to_table());
    }

    println!("\ngold emotions supplied (clause mode)");
    print!("{}", evaluate(&corpus, &GoldEcho, EvalMode::Clause, true)?.to_table());
    Ok(())
}
