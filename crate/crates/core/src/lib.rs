//! Two-stage trait scoring: a directional Siamese ranker trained on
//! label-derived comparisons, transferred into an absolute scorer, and
//! evaluated under a fold-rotated protocol with quadratic weighted kappa.
//!
//! Module map:
//!
//! - [`dataset`]: documents, fold maps, synthetic corpora, document-level splits
//! - [`features`]: hashed n-gram featurizer
//! - [`netcore`]: trunk, heads, losses, manual gradients, AdamW, early stopping
//! - [`pairgen`]: coverage + bucketed fill pairing policy
//! - [`stage1`]: pairwise ranker training and its artifact
//! - [`stage2`]: absolute scorer variants (baseline, warm-start, fusion)
//! - [`metrics`]: QWK, Pearson, Spearman
//! - [`protocol`]: the full variant matrix and the aggregate tables
//! - [`config`]: plain-text key/value configuration

#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod dataset;
pub mod error;
pub mod features;
pub mod metrics;
pub mod netcore;
pub mod pairgen;
pub mod protocol;
pub mod seed;
pub mod stage1;
pub mod stage2;

pub use error::{Error, Result};
