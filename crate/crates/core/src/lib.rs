//! Rule-driven screening of free-text patient records against trial
//! eligibility criteria.
//!
//! Documents flow through sectioner, segmenter, ner, context, temporal,
//! feature and document inference; patient inference then decides each
//! criterion. Every tier is driven by plain rule tables (see [`ruleset`]).

pub mod cli;
pub mod config;
pub mod context;
pub mod corpus;
pub mod demo;
pub mod eval;
pub mod inference;
pub mod matcher;
pub mod ner;
pub mod pipeline;
pub mod ruleset;
pub mod sectioner;
pub mod segmenter;
pub mod server;
pub mod temporal;
