//! Claim verification over a multimodal evidence corpus: dense retrieval,
//! LLM-judged reranking, pairwise verification and evaluation.

pub mod corpus;
pub mod index;
pub mod metrics;
pub mod oracle;
pub mod rerank;
pub mod verify;
pub mod config;
pub mod pipeline;
pub mod report;
