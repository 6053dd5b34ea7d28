//! Trace-driven simulator for block-level LLM prefix-cache eviction.

pub mod cache;
pub mod experiment;
pub mod learners;
pub mod metrics;
pub mod policies;
pub mod predictor;
pub mod saecache;
pub mod sim;
pub mod timing;
pub mod types;
pub mod workload;
