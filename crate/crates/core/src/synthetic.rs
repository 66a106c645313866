//! Seeded generator of small annotated corpora with learnable structure.
//!
//! Emotion spans are one or two words from a per-category lexicon; a cause
//! span starts at a cue word and runs to the end of its clause, in a clause
//! adjacent to the emotion clause. Everything else is filler.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Document, GoldPair, SpanRef};

pub const CATEGORIES: [&str; 4] = ["anger", "fear", "happiness", "sadness"];

const LEXICON: [&[&str]; 4] = [
    &["furious", "angry", "enraged", "irritated"],
    &["afraid", "scared", "terrified", "nervous"],
    &["happy", "glad", "delighted", "cheerful"],
    &["sad", "gloomy", "heartbroken", "miserable"],
];

const CUES: [&str; 3] = ["because", "after", "when"];
const FILLERS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_documents: usize,
    pub min_clauses: usize,
    pub max_clauses: usize,
    /// Each pair occupies two clauses.
    pub max_pairs: usize,
    /// Filler tokens per clause, excluding annotated material and punctuation.
    pub min_clause_words: usize,
    pub max_clause_words: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_documents: 50,
            min_clauses: 3,
            max_clauses: 5,
            max_pairs: 2,
            min_clause_words: 2,
            max_clause_words: 5,
            seed: 0,
        }
    }
}

fn filler(rng: &mut ChaCha8Rng) -> String {
    format!("w{}", rng.random_range(0..FILLERS))
}

fn fillers(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n).map(|_| filler(rng)).collect()
}

/// # Panics
/// If `min_clauses < 2` or `min_clauses > max_clauses`.
pub fn generate(config: &SyntheticConfig) -> Corpus {
    assert!(
        config.min_clauses >= 2 && config.min_clauses <= config.max_clauses,
        "clause bounds must satisfy 2 <= min <= max"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let documents = (0..config.num_documents)
        .map(|i| generate_document(config, &format!("syn-{i:05}"), &mut rng))
        .collect();
    Corpus::new(documents).expect("generated documents are valid")
}

fn generate_document(config: &SyntheticConfig, doc_id: &str, rng: &mut ChaCha8Rng) -> Document {
    let num_clauses = rng.random_range(config.min_clauses..=config.max_clauses);
    let max_pairs = config.max_pairs.min(num_clauses / 2).max(1);
    let num_pairs = rng.random_range(1..=max_pairs);

    // Choose disjoint (emotion clause, cause clause) blocks of adjacent clauses.
    enum Role {
        Filler,
        Emotion(usize, usize),
        Cause(usize),
    }
    let mut roles: Vec<Role> = (0..num_clauses).map(|_| Role::Filler).collect();
    let mut placed = 0;
    let mut attempts = 0;
    while placed < num_pairs && attempts < 100 {
        attempts += 1;
        let first = rng.random_range(0..num_clauses - 1);
        if !matches!(roles[first], Role::Filler) || !matches!(roles[first + 1], Role::Filler) {
            continue;
        }
        let category = rng.random_range(0..CATEGORIES.len());
        if rng.random_bool(0.5) {
            roles[first] = Role::Emotion(category, placed);
            roles[first + 1] = Role::Cause(placed);
        } else {
            roles[first] = Role::Cause(placed);
            roles[first + 1] = Role::Emotion(category, placed);
        }
        placed += 1;
    }

    let mut tokens: Vec<String> = Vec::new();
    let mut clauses = Vec::new();
    let mut emotions: Vec<(usize, SpanRef, usize)> = Vec::new();
    let mut causes: Vec<(usize, SpanRef)> = Vec::new();
    let words = |rng: &mut ChaCha8Rng| rng.random_range(config.min_clause_words..=config.max_clause_words);
    for (c, role) in roles.iter().enumerate() {
        let start = tokens.len();
        match role {
            Role::Filler => {
                let n = words(rng).max(1);
                tokens.extend(fillers(rng, n));
            }
            Role::Emotion(category, block) => {
                let n = words(rng);
                let before = rng.random_range(0..=n);
                tokens.extend(fillers(rng, before));
                let span_start = tokens.len();
                let len = rng.random_range(1..=2);
                for _ in 0..len {
                    tokens.push(LEXICON[*category].choose(rng).expect("non-empty").to_string());
                }
                emotions.push((*block, SpanRef::new(span_start, tokens.len() - 1), *category));
                tokens.extend(fillers(rng, n - before));
            }
            Role::Cause(block) => {
                let n = words(rng);
                let lead = rng.random_range(0..=n.min(2));
                tokens.extend(fillers(rng, lead));
                let span_start = tokens.len();
                tokens.push(CUES.choose(rng).expect("non-empty").to_string());
                tokens.extend(fillers(rng, (n - lead).clamp(1, 6)));
                causes.push((*block, SpanRef::new(span_start, tokens.len() - 1)));
            }
        }
        tokens.push(if c + 1 == num_clauses { "." } else { "," }.to_string());
        clauses.push(SpanRef::new(start, tokens.len() - 1));
    }

    let pairs = emotions
        .iter()
        .map(|&(block, emotion, category)| {
            let cause = causes
                .iter()
                .find(|(b, _)| *b == block)
                .map(|&(_, span)| span)
                .expect("every block has a cause clause");
            GoldPair {
                emotion,
                cause,
                category: CATEGORIES[category].to_string(),
            }
        })
        .collect();
    Document {
        doc_id: doc_id.to_string(),
        tokens,
        clauses,
        pairs,
    }
}
