//! Tree-structured data augmentation search and forest weighting.
//!
//! The crate is organised around two procedures:
//!
//! * [`search::search_tree`] grows a probabilistic binary tree of transforms top-down,
//!   scoring each candidate node by density matching: one model is trained per node and
//!   candidates are ranked by that model's loss on augmented validation data.
//! * [`forest::learn_forest`] searches one tree per group and then alternates weighted SGD
//!   with mirror-descent updates of the group weights, driven by an implicit gradient
//!   through the inner optimum.
//!
//! Everything runs at desk scale: models are small logistic / one-hidden-layer networks
//! with exact gradients ([`model`]), transforms act on 2-D vectors or small graphs
//! ([`transforms`]), and [`oracle`] holds brute-force checks for the search, the implicit
//! gradient and the inverse Hessian-vector product.

pub mod cli;
pub mod data;
pub mod error;
pub mod forest;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod search;
pub mod seed;
pub mod transforms;

pub use error::{Error, Result};
