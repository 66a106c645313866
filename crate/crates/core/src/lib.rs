//! Span-based emotion-cause span-pair extraction with an extract-then-classify model.
//!
//! A document's candidate spans are classified as emotion, cause or neither;
//! every predicted emotion is then paired with every predicted cause and the
//! pair is classified into an emotion category or rejected. See `examples/`
//! for runnable walkthroughs of each stage.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod crossval;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod nn;
pub mod pairing;
pub mod params;
pub mod spans;
pub mod synthetic;
pub mod training;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::RunConfig;
pub use corpus::{load_corpus, Corpus, Document, GoldPair, SpanRef};
pub use error::{Error, Result};
pub use evaluation::{evaluate, EvalMode, EvalReport, Task};
pub use model::{EtcModel, ExtractedPair, Extractor, Prediction};
pub use training::train;
