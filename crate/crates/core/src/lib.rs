//! Corpus synthesis and correction-pipeline toolkit for grammatical error
//! correction: realistic error generation, edit extraction, an n-gram
//! language model, a context-aware spellchecker, byte-pair encoding,
//! post-processing search, evaluation scoring, and the copy-augmented
//! output-distribution kernel.

pub mod align;
pub mod copymix;
pub mod corpus;
pub mod distance;
pub mod error;
pub mod evalstats;
pub mod lexicon;
pub mod lm;
pub mod noise;
pub mod postprocess;
pub mod registry;
pub mod rng;
pub mod spellcheck;
pub mod subword;

pub use error::{Error, Result};
