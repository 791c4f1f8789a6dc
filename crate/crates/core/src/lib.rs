//! Natural-language to keyword-query formulation by word selection.
//!
//! A sequence model reads a tokenized information need and emits a keep/drop
//! decision per token. It is pretrained by maximum likelihood on
//! (description, title) pairs and then fine-tuned with a score-function
//! policy gradient whose reward is the average precision of the generated
//! query under BM25 retrieval. The crate also carries the retrieval engine,
//! dataset tooling and the cross-validated evaluation protocol used to
//! compare against the usual baselines.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below are the double-precision instantiations used by the tools.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod numgrad;
pub mod scalar;
pub mod search;
pub mod stats;
pub mod textproc;
pub mod trainers;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Param64 = numgrad::Param<f64>;
pub type GatedCell64 = numgrad::GatedCell<f64>;
pub type SelectionModel64 = model::SelectionModel<f64>;
pub type SelectionModel32 = model::SelectionModel<f32>;
pub type NlExpression64 = model::NlExpression<f64>;
pub type PairSet64 = dataset::PairSet<f64>;
