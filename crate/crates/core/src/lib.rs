//! Open-set active learning over precomputed vision-language embeddings.
//!
//! The crate simulates pool-based annotation where the unlabeled pool mixes
//! in-distribution (ID) and out-of-distribution (OOD) samples. Its main
//! strategy first filters the pool with a zero-shot purity test built from
//! "yes"/"no" prompt embeddings (reweighted by labeled-ID prototypes, with a
//! self-tuned temperature) and then ranks the surviving samples by least
//! confidence of a linear probe.
//!
//! | module       | contents                                                      |
//! |--------------|---------------------------------------------------------------|
//! | [`embed`]    | EMB1 files, manifests, open-set pools, oracle annotation      |
//! | [`synth`]    | Gaussian-cluster embeddings with matching prompt embeddings   |
//! | [`purity`]   | ID/OOD scoring, visual weighting, temperature tuning          |
//! | [`probe`]    | linear softmax probe trained with SGD                         |
//! | [`strategy`] | RANDOM, CONF, CORESET and CLIPNAL query selection             |
//! | [`sim`]      | the round loop, precision and AUBC                            |
//! | [`report`]   | `rounds.csv`, `summary.json`, `aggregate.csv`, score dumps    |
//!
//! Row-wise work goes through [`par`], which uses rayon when the default
//! `parallel` feature is enabled and plain iterators otherwise.

pub mod config;
pub mod embed;
pub mod error;
pub mod math;
pub mod par;
pub mod probe;
pub mod purity;
pub mod report;
pub mod sim;
pub mod strategy;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
