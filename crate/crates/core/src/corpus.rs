//! Documents, gold emotion-cause pairs, corpus statistics and fold splitting.
//!
//! The on-disk format is JSON lines, one document per line, with inclusive
//! token offsets:
//!
//! ```text
//! {"doc_id": "d1", "tokens": ["a","b","c"],
//!  "clauses": [{"start":0,"end":1},{"start":2,"end":2}],
//!  "pairs": [{"emotion":{"start":0,"end":0},"cause":{"start":2,"end":2},"category":"fear"}]}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// An inclusive token range `start..=end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpanRef {
    pub start: usize,
    pub end: usize,
}

/// Clauses use the same inclusive range representation as spans.
pub type ClauseSpan = SpanRef;

impl SpanRef {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    /// Number of tokens covered. Always at least one for a valid span.
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn overlaps(&self, other: &SpanRef) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn shifted(&self, offset: usize) -> SpanRef {
        SpanRef::new(self.start + offset, self.end + offset)
    }
}

impl std::fmt::Display for SpanRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GoldPair {
    pub emotion: SpanRef,
    pub cause: SpanRef,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub clauses: Vec<ClauseSpan>,
    #[serde(default)]
    pub pairs: Vec<GoldPair>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Checks the token, clause and span invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(Error::invalid_doc(&self.doc_id, "document has no tokens"));
        }
        if self.clauses.is_empty() {
            return Err(Error::invalid_doc(&self.doc_id, "document has no clauses"));
        }
        let mut expected_start = 0;
        for (i, clause) in self.clauses.iter().enumerate() {
            if clause.start > clause.end {
                return Err(Error::invalid_doc(
                    &self.doc_id,
                    format!("clause {i} has start {} > end {}", clause.start, clause.end),
                ));
            }
            if clause.start != expected_start {
                return Err(Error::invalid_doc(
                    &self.doc_id,
                    format!(
                        "clauses not a partition: clause {i} starts at {} but {} was expected",
                        clause.start, expected_start
                    ),
                ));
            }
            expected_start = clause.end + 1;
        }
        if expected_start != n {
            return Err(Error::invalid_doc(
                &self.doc_id,
                format!("clauses not a partition: they cover {expected_start} of {n} tokens"),
            ));
        }
        for pair in &self.pairs {
            if pair.category.is_empty() {
                return Err(Error::invalid_doc(&self.doc_id, "pair with empty category"));
            }
            for span in [pair.emotion, pair.cause] {
                if span.start > span.end || span.end >= n {
                    return Err(Error::invalid_doc(
                        &self.doc_id,
                        Error::SpanOutOfRange {
                            start: span.start,
                            end: span.end,
                            len: n,
                        }
                        .to_string(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Distinct gold emotion spans, in ascending order.
    pub fn emotion_spans(&self) -> Vec<SpanRef> {
        let set: BTreeSet<SpanRef> = self.pairs.iter().map(|p| p.emotion).collect();
        set.into_iter().collect()
    }

    /// Distinct gold cause spans, in ascending order.
    pub fn cause_spans(&self) -> Vec<SpanRef> {
        let set: BTreeSet<SpanRef> = self.pairs.iter().map(|p| p.cause).collect();
        set.into_iter().collect()
    }

    /// Index of the clause containing `token`.
    pub fn clause_of(&self, token: usize) -> Option<usize> {
        self.clauses
            .binary_search_by(|c| {
                if c.end < token {
                    std::cmp::Ordering::Less
                } else if c.start > token {
                    std::cmp::Ordering::Greater
                } else {
                    std::cmp::Ordering::Equal
                }
            })
            .ok()
    }
}

/// A validated collection of documents with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::new();
        for doc in &documents {
            doc.validate()?;
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(Error::invalid_doc(&doc.doc_id, "duplicate doc_id"));
            }
        }
        Ok(Self { documents })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.documents.iter()
    }

    /// Sorted category vocabulary found in the gold pairs.
    pub fn categories(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .documents
            .iter()
            .flat_map(|d| d.pairs.iter().map(|p| p.category.as_str()))
            .collect();
        set.into_iter().map(str::to_string).collect()
    }

    /// Documents whose ids are in `ids`, in corpus order.
    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> Corpus {
        let wanted: HashSet<&str> = ids.iter().map(AsRef::as_ref).collect();
        Corpus {
            documents: self
                .documents
                .iter()
                .filter(|d| wanted.contains(d.doc_id.as_str()))
                .cloned()
                .collect(),
        }
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Document;
    type IntoIter = std::slice::Iter<'a, Document>;

    fn into_iter(self) -> Self::IntoIter {
        self.documents.iter()
    }
}

const DOC_KEYS: &[&str] = &["doc_id", "tokens", "clauses", "pairs"];
const SPAN_KEYS: &[&str] = &["start", "end"];
const PAIR_KEYS: &[&str] = &["emotion", "cause", "category"];

fn check_keys(value: &Value, allowed: &[&str], what: &str) -> std::result::Result<(), String> {
    if let Value::Object(map) = value {
        if let Some(key) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(format!("unknown key `{key}` in {what}"));
        }
    }
    Ok(())
}

fn check_strict(value: &Value) -> std::result::Result<(), String> {
    check_keys(value, DOC_KEYS, "document")?;
    if let Some(Value::Array(clauses)) = value.get("clauses") {
        for c in clauses {
            check_keys(c, SPAN_KEYS, "clause")?;
        }
    }
    if let Some(Value::Array(pairs)) = value.get("pairs") {
        for p in pairs {
            check_keys(p, PAIR_KEYS, "pair")?;
            for role in ["emotion", "cause"] {
                if let Some(span) = p.get(role) {
                    check_keys(span, SPAN_KEYS, role)?;
                }
            }
        }
    }
    Ok(())
}

/// Parses one JSON line into a validated document.
pub fn parse_document(line: &str, line_no: usize, lenient: bool) -> Result<Document> {
    let value: Value = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
        line: line_no,
        message: e.to_string(),
    })?;
    if !lenient {
        check_strict(&value).map_err(|message| Error::MalformedLine {
            line: line_no,
            message,
        })?;
    }
    let doc: Document = serde_json::from_value(value).map_err(|e| Error::MalformedLine {
        line: line_no,
        message: e.to_string(),
    })?;
    doc.validate()?;
    Ok(doc)
}

/// Reads a JSONL corpus from any reader. Blank lines are skipped.
pub fn read_corpus<R: BufRead>(reader: R, lenient: bool) -> Result<Corpus> {
    let mut documents = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::MalformedLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        documents.push(parse_document(&line, i + 1, lenient)?);
    }
    Corpus::new(documents)
}

/// Loads a corpus in strict mode: unknown keys are rejected.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    load_corpus_with(path, false)
}

pub fn load_corpus_with(path: impl AsRef<Path>, lenient: bool) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), lenient)
}

pub fn write_corpus(path: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for doc in corpus {
        let line = serde_json::to_string(doc).expect("documents always serialize");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Corpus counts in the layout of the usual corpus-details table.
///
/// Annotations are the distinct emotion spans plus the distinct cause spans
/// of each document. The `*_by_max_length` maps are cumulative: the entry for
/// `l` counts annotations of at most `l` tokens, for every `l` from 1 to the
/// longest annotation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub num_documents: usize,
    pub num_clauses: usize,
    pub num_pairs: usize,
    pub num_emotions: usize,
    pub num_causes: usize,
    /// Number of documents keyed by their count of distinct cause spans.
    pub num_cause_docs_by_count: BTreeMap<usize, usize>,
    pub num_annotations: usize,
    pub max_annotation_length: usize,
    pub annotations_by_max_length: BTreeMap<usize, usize>,
    pub emotions_by_max_length: BTreeMap<usize, usize>,
    pub causes_by_max_length: BTreeMap<usize, usize>,
}

impl CorpusStats {
    /// Annotations no longer than `max_len` tokens.
    pub fn annotations_up_to(&self, max_len: usize) -> usize {
        cumulative_at(&self.annotations_by_max_length, max_len, self.max_annotation_length)
    }

    pub fn cause_docs(&self, count: usize) -> usize {
        self.num_cause_docs_by_count.get(&count).copied().unwrap_or(0)
    }
}

fn cumulative_at(map: &BTreeMap<usize, usize>, max_len: usize, longest: usize) -> usize {
    if max_len == 0 {
        return 0;
    }
    map.get(&max_len.min(longest)).copied().unwrap_or(0)
}

fn cumulative(lengths: &[usize], longest: usize) -> BTreeMap<usize, usize> {
    let mut histogram = vec![0usize; longest + 1];
    for &l in lengths {
        histogram[l] += 1;
    }
    let mut running = 0;
    (1..=longest)
        .map(|l| {
            running += histogram[l];
            (l, running)
        })
        .collect()
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut emotion_lengths = Vec::new();
    let mut cause_lengths = Vec::new();
    let mut cause_docs: BTreeMap<usize, usize> = BTreeMap::new();
    let mut num_clauses = 0;
    let mut num_pairs = 0;
    for doc in corpus {
        num_clauses += doc.clauses.len();
        num_pairs += doc.pairs.len();
        let emotions = doc.emotion_spans();
        let causes = doc.cause_spans();
        emotion_lengths.extend(emotions.iter().map(SpanRef::len));
        cause_lengths.extend(causes.iter().map(SpanRef::len));
        *cause_docs.entry(causes.len()).or_default() += 1;
    }
    let all: Vec<usize> = emotion_lengths.iter().chain(&cause_lengths).copied().collect();
    let longest = all.iter().copied().max().unwrap_or(0);
    CorpusStats {
        num_documents: corpus.len(),
        num_clauses,
        num_pairs,
        num_emotions: emotion_lengths.len(),
        num_causes: cause_lengths.len(),
        num_cause_docs_by_count: cause_docs,
        num_annotations: all.len(),
        max_annotation_length: longest,
        annotations_by_max_length: cumulative(&all, longest),
        emotions_by_max_length: cumulative(&emotion_lengths, longest),
        causes_by_max_length: cumulative(&cause_lengths, longest),
    }
}

/// Fraction of annotations no longer than `max_len` tokens; 0 when there are none.
pub fn length_coverage(stats: &CorpusStats, max_len: usize) -> f64 {
    if stats.num_annotations == 0 {
        return 0.0;
    }
    stats.annotations_up_to(max_len) as f64 / stats.num_annotations as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Seeded shuffle followed by round-robin assignment of documents to `k` test folds.
///
/// Ids inside each fold keep corpus order.
pub fn kfold_split(corpus: &Corpus, k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty corpus".into()));
    }
    if k > corpus.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the corpus size {}",
            corpus.len()
        )));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0usize; corpus.len()];
    for (position, &doc) in order.iter().enumerate() {
        fold_of[doc] = position % k;
    }
    Ok((0..k)
        .map(|fold| {
            let (test, train): (Vec<_>, Vec<_>) =
                corpus.iter().enumerate().partition(|(i, _)| fold_of[*i] == fold);
            FoldSplit {
                fold_index: fold,
                train_ids: train.into_iter().map(|(_, d)| d.doc_id.clone()).collect(),
                test_ids: test.into_iter().map(|(_, d)| d.doc_id.clone()).collect(),
            }
        })
        .collect())
}

/// Splits off a seeded development subset of `fraction` of the documents (at
/// least one). A fraction of 0, or a single-document corpus, returns the whole
/// corpus as both train and dev.
pub fn dev_split(corpus: &Corpus, fraction: f64, seed: u64) -> (Corpus, Corpus) {
    if fraction <= 0.0 || corpus.len() < 2 {
        return (corpus.clone(), corpus.clone());
    }
    let n_dev = ((corpus.len() as f64 * fraction).ceil() as usize).clamp(1, corpus.len() - 1);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_de75));
    let dev: HashSet<usize> = order[..n_dev].iter().copied().collect();
    let (dev_docs, train_docs): (Vec<_>, Vec<_>) = corpus
        .documents
        .iter()
        .cloned()
        .enumerate()
        .partition(|(i, _)| dev.contains(i));
    (
        Corpus {
            documents: train_docs.into_iter().map(|(_, d)| d).collect(),
        },
        Corpus {
            documents: dev_docs.into_iter().map(|(_, d)| d).collect(),
        },
    )
}

/// Maps doc ids to their position in the corpus.
pub fn doc_index(corpus: &Corpus) -> HashMap<&str, usize> {
    corpus
        .iter()
        .enumerate()
        .map(|(i, d)| (d.doc_id.as_str(), i))
        .collect()
}
