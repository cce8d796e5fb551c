//! Tokenization, the transformer text encoder, query–product matching and
//! the semantic similarity scorer.

mod encoder;
mod matching;
mod semantic;
mod vocab;

pub use encoder::{EncoderCosineScorer, TextEncoder, TextEncoderConfig};
pub use matching::{match_cross, match_dot, match_rows, MatchingMode};
pub use semantic::{
    cosine, hash_embedding, product_document, HashNgramScorer, ScorerVariant, SemanticScorer, SemanticScorerConfig,
};
pub use vocab::{words, Vocabulary, CLS_ID, DEFAULT_MAX_VOCAB, PAD_ID, UNK_ID};
