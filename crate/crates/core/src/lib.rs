//! Simultaneous-equations toolkit for log-linear demand and supply:
//! simulation, partialing out controls, GMM and continuous-updating
//! estimation, weak-instrument robust inference, tariff counterfactuals,
//! and d-separation on the causal graph.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod counterfactual;
pub mod dag;
pub mod dataset;
pub mod error;
pub mod format;
pub mod harness;
pub mod gmm;
pub mod linalg;
pub mod optim;
pub mod partialing;
pub mod rng;
pub mod stats;
pub mod structural;
pub mod weak_id;

pub use dataset::{Dataset, MarketObservation};
pub use error::{Error, ErrorClass, Result};
pub use gmm::{GmmFit, Theta, ThetaBox};
pub use structural::{ShifterSpec, StructuralParams};
