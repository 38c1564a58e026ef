//! Analysis toolkit for cognitive-bias scores of instruction-tuned language
//! models: scoring raw responses, separating seed noise from real bias, and
//! attributing bias profiles to pretraining versus instruction data.

pub mod attribution;
pub mod cli;
pub mod harness;
pub mod ingest;
pub mod model;
pub mod randomness;
pub mod report;
pub mod rng;
pub mod scoring;
pub mod stats;
pub mod synthetic;
