//! Bagging-ensemble model selection for three-class student performance
//! prediction.
//!
//! The crate covers the whole modelling path: grade ingestion and target
//! banding ([`dataset`]), eight base classifiers behind one scoring interface
//! ([`learners`]), ranking metrics and the thresholded three-class decision
//! rule ([`metrics`]), Gini-filtered baggings ([`bagging`]), exhaustive
//! ensemble enumeration with significance gating ([`ensemble`]), grid-search
//! tuning ([`tuning`]), permutation importance ([`importance`]) and an
//! end-to-end driver ([`pipeline`]).
//!
//! Every stochastic step is seeded through [`seed::mix`], so a run is a pure
//! function of its inputs and configuration.

pub mod bagging;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod importance;
pub mod learners;
pub mod metrics;
pub mod pipeline;
pub mod seed;
pub mod tuning;

pub use dataset::{ClassLabel, FeatureMatrix, Samples};
pub use error::{Error, Result};
pub use learners::{ClassScores, HyperParams, LearnerKind, TrainedModel};
