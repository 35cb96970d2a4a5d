//! Corpus preparation and vocabulary adaptation for continued pretraining
//! of a language model on a new language.
//!
//! The guide in `book/` walks through each module; its code blocks are
//! compiled as doctests of this crate.

pub mod alignment;
pub mod dedup;
pub mod document;
pub mod embedding;
pub mod filters;
pub mod fluency;
pub mod io;
pub mod parallel;
pub mod pipeline;
pub mod schedule;
pub mod stats;
pub mod synth;
pub mod tokenizer;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/documents.md")]
    mod documents {}
    #[doc = include_str!("../../../book/src/filtering.md")]
    mod filtering {}
    #[doc = include_str!("../../../book/src/fluency.md")]
    mod fluency {}
    #[doc = include_str!("../../../book/src/dedup.md")]
    mod dedup {}
    #[doc = include_str!("../../../book/src/parallel.md")]
    mod parallel {}
    #[doc = include_str!("../../../book/src/tokenizer.md")]
    mod tokenizer {}
    #[doc = include_str!("../../../book/src/embeddings.md")]
    mod embeddings {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/alignment.md")]
    mod alignment {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}
