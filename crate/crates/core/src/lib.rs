//! Nested browser-use runtime for information-seeking agents.
//!
//! An outer ReAct loop drives four tools (`search`, `visit`, `click`, `fill`)
//! over semantic page snapshots; page-opening tools run an inner loop that
//! reads the page segment by segment and returns only goal-relevant content.

pub mod backend;
pub mod cli;
pub mod inner_loop;
pub mod metrics;
pub mod outer_loop;
pub mod pipeline;
pub mod policy;
pub mod prompts;
pub mod sandbox;
pub mod snapshot;
pub mod tokens;
pub mod toolkit;
