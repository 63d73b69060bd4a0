//! Desk-scale laboratory for adapter-based multilingual semantic textual
//! relatedness (STR).
//!
//! The crate covers the full experimental loop: corpus ingestion with
//! provenance tracking, whitespace tokenization and pair encoding, a small
//! dense-tensor autodiff core, a toy transformer encoder with swappable
//! language/task adapter stacks, regression and masked-language-model
//! training (including two-phase warmup on translated data), mock and HTTP
//! translation clients for augmentation, zero-shot cross-lingual transfer
//! with source-selection metrics and a data-leakage guard, and Spearman-based
//! evaluation with band analysis and k-fold cross-validation.

pub mod augmentation;
pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod evaluation;
pub mod model;
pub mod synth;
pub mod text;
pub mod training;
pub mod transfer;

pub use autodiff::{AdamHyper, AdamState, Parameter, Tape, Tensor};
pub use corpus::{Corpus, Provenance, SentencePair, Split};
pub use evaluation::EvalReport;
pub use model::{EncoderConfig, ModelGraph, TuningMode};
pub use text::{TokenSequence, TokenizeOptions, Vocabulary};
pub use training::{MaskPolicy, TrainConfig, TrainLog};
