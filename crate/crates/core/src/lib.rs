//! Call-graph driven selection of functions to instrument, plus a simulated
//! runtime that patches instrumentation sleds according to the selection.
//!
//! The pipeline: load a [`callgraph::CallGraph`], evaluate a selector
//! [`spec`] with [`selectors::evaluate`], compensate for inlined functions
//! ([`postprocess`]), write the result as an instrumentation configuration
//! ([`icformat`]), and apply it to a [`patchrt::RuntimeRegistry`] whose events
//! feed a measurement [`backends`] implementation.

pub mod backends;
pub mod bench;
pub mod callgraph;
pub mod cli;
pub mod icformat;
pub mod patchrt;
pub mod postprocess;
pub mod replay;
pub mod selectors;
pub mod spec;
pub mod trace;
