//! Multi-document news headline generation.
//!
//! `no_std` core (with `alloc`): a small reverse-mode autodiff engine, a
//! WordPiece-style tokenizer, a Transformer encoder-decoder, article-level
//! attention (uniform, referee, self-voting), beam search, the title-selection
//! labeler, extractive baselines, and ROUGE / relative-length evaluation.
//! File formats and the command line live in the `nhnet` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attention;
pub mod distant;
pub mod autodiff;
pub mod baselines;
pub mod corpus;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pretrain;
pub mod rng;
pub mod tensor;
pub mod tokenizer;
pub mod transformer;

pub use autodiff::{Reduction, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{ParameterStore, Tensor};
