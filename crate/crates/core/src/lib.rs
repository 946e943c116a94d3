//! Entity-anchored ICD-10-CM code ranking.

pub mod anchor;
pub mod corpus;
pub mod metrics;
pub mod models;
pub mod nnkit;
pub mod ontology;
pub mod train;
