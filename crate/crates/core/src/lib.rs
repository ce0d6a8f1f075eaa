//! Dynamic hierarchical Dirichlet process topic models for scoring how
//! unusual each document of a sequence is, given the ones before it.
//!
//! The pipeline: optical flow → visual-word [`corpus`] → batch Gibbs
//! training ([`sampler::batch_fit`]) → online inference and
//! [`abnormality`] scores → ROC/AUC ([`eval`]). [`synth`] produces the
//! synthetic bar corpora used to check the whole chain.

pub mod abnormality;
pub mod config;
pub mod corpus;
pub mod crf;
pub mod error;
pub mod eval;
pub mod math;
pub mod parallel;
pub mod sampler;
pub mod snapshot;
pub mod synth;

pub use crate::crf::{CrfState, Hyperparameters, ModelKind};
pub use crate::error::{Error, Result};
pub use crate::sampler::{batch_fit, online_infer, SamplerConfig};
pub use crate::snapshot::ModelSnapshot;
