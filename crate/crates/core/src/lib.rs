//! Transformer sequence tagging at desk scale: WordPiece tokenization,
//! corpus cleaning, a BERT-style encoder, masked-language-model and
//! replaced-token-detection pretraining, BiRNN/attention tagging heads,
//! evaluation, benchmarking and checkpoints.

pub mod batch;
pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod conll;
pub mod corpus;
pub mod electra;
pub mod encoder;
mod error;
pub mod eval;
pub mod grid;
pub mod heads;
pub mod mlm;
pub mod nn;
pub mod synthetic;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};

/// The guide in `book/`, compiled so that its snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/tokenizer.md")]
    mod tokenizer {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/encoder.md")]
    mod encoder {}
    #[doc = include_str!("../../../book/src/pretraining.md")]
    mod pretraining {}
    #[doc = include_str!("../../../book/src/tagging.md")]
    mod tagging {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
