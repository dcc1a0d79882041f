//! Build sentence/commonsense-path datasets from a knowledge graph and a
//! sentence corpus, train a conditional path generator, decode diverse paths,
//! and evaluate paths and path-attention QA scoring.

pub mod corpus;
pub mod embed;
pub mod generate;
pub mod kg;
pub mod metrics;
pub mod pairing;
pub mod qafuse;
pub mod seeding;

pub use kg::{Entity, KnowledgeGraph, Path, Relation};
