//! Difficulty-aware routing for LLM code generation.
//!
//! Tasks are labelled `Simple` or `Complex` by a classifier model. Simple
//! tasks get direct few-shot sampling; complex ones get a two-stage
//! intention-guided chain of thought. Candidates are executed by an external
//! runner, scored with the unbiased pass@k estimator, and every model call is
//! charged to a token ledger so routed runs can be compared against
//! single-strategy baselines.

pub mod backend;
pub mod corpus;
pub mod evaluator;
pub mod generator;
pub mod ledger;
pub mod pipeline;
pub mod pool;
pub mod prompts;
pub mod report;
pub mod router;
pub mod sandbox;
