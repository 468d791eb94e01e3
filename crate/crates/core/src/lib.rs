//! Website-fingerprinting attack workbench.
//!
//! The pipeline runs from raw packet traces ([`traces`]) through feature
//! extraction ([`features`]) and dataset assembly ([`dataset`]) to a dilated
//! causal ResNet classifier ([`model`], [`training`]) whose direction and
//! timing variants are combined post-training ([`ensemble`]) and scored in
//! closed- and open-world settings ([`metrics`]). [`defense`] simulates a
//! constant-rate padding defense and [`synthgen`] produces seeded synthetic
//! corpora.

pub mod commands;
pub mod dataset;
pub mod defense;
pub mod ensemble;
pub mod features;
pub mod metrics;
pub mod model;
pub mod synthgen;
pub mod traces;
pub mod training;
