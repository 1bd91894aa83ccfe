//! Egocentric spatial reasoning toolkit: scene graphs built from first-person
//! observations, progressive spatial analysis over them, the structured
//! chain-of-thought format, GRPO reward math, a synthetic scene simulator,
//! an LLM data-generation pipeline and a benchmark scoring harness.

pub mod question;
pub mod scene_graph;
pub mod sim;
pub mod psa;
pub mod cot;
pub mod reward;
pub mod eval;
pub mod pipeline;
pub mod config;
pub mod jsonl;
