//! Facet-composable agent-based simulation engine.

pub mod diag;
pub mod expr;
pub mod facet;
pub mod flow;
pub mod policy;
pub mod sim;
pub mod scenario;
