//! Core library for co-auditing Solidity projects with an LLM backend.
//!
//! The pipeline goes: load a project and flatten it into one source unit
//! ([`ingest`]), parse a pragmatic Solidity subset ([`parser`]), build the
//! function call graph ([`callgraph`]), chunk code into per-function Code
//! Call Lists ([`ccl`]), render audit prompts ([`prompts`]), dispatch them
//! with record/replay ([`gateway`]), parse the structured responses
//! ([`audit`]), and score the results against ground truth ([`evalstats`]).

pub mod audit;
pub mod callgraph;
pub mod ccl;
pub mod evalstats;
pub mod gateway;
pub mod ingest;
pub mod parser;
pub mod prompts;

pub use parser::FunctionId;
