//! Cluster geometry, message/coloring models, and cycle statistics for
//! random regular NAE-SAT.

pub mod bp_solver;
pub mod cycle_effects;
pub mod experiments;
pub mod frozen;
pub mod instance;
pub mod messages;
pub mod solutions;
#[cfg(test)]
mod testutil;
pub mod util;
pub mod weights;
