//! Corpus construction and evaluation toolkit for neural decompilation.
//!
//! The pipeline pairs each function's compiler-emitted assembly with the
//! source lines its debug directives point at, normalizes the source,
//! trains separate subword tokenizers for both sides, and produces
//! length-filtered, split and batched datasets. Decompilation backends are
//! scored by token-level normalized edit distance.

pub mod asm;
pub mod backend;
pub mod dataset;
pub mod diagnostics;
pub mod lang;
pub mod metrics;
pub mod pipeline;
pub mod tokenizer;

pub use diagnostics::Diagnostics;
