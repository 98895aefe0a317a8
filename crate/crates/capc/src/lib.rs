//! Cap: a capability-typed language with flow-sensitive kill effects.
//!
//! The crate is organized as a pipeline: `syntax` (lex/parse) → `desugar`
//! (surface to kernel) → `anf` (Sigma-guided normalization) → `typer` +
//! `effects` (bidirectional checking, implicit resolution, kill tracking) →
//! `interp` (reference interpreter with runtime guards).

pub mod anf;
pub mod corpus;
pub mod fuzz;
pub mod desugar;
pub mod diag;
pub mod effects;
pub mod interp;
pub mod kernel;
pub mod pipeline;
pub mod span;
pub mod syntax;
pub mod typer;
pub mod types;
