//! Context-aware item representations for next-basket recommendation.
//!
//! Items are treated as tokens, baskets as sentences and a user's purchase
//! history as a document. A transformer encoder is pre-trained with masked
//! item prediction and next-basket prediction, then fine-tuned to score
//! candidate items against a user's history through candidate-conditioned
//! attention pooling and a user embedding.
//!
//! Everything runs on a small `f64` tensor library with tape-based
//! reverse-mode differentiation ([`autograd`]) so gradients can be checked
//! against finite differences ([`gradcheck`]).
//!
//! Runnable walkthroughs live in `examples/`; `cargo run --example <name>`.

pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod finetune;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod pretrain;
pub mod tensor;

pub use error::{Error, Result};
