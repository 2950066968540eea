//! Simulation engine for cognitive networks: directed graphs of agents whose
//! fast signal propagation settles on an aggregate while slow, speed-limited
//! agent dynamics form feedback loops and stable patterns.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aco;
pub mod agent;
pub mod error;
pub mod export;
pub mod feedback;
pub mod graph;
pub mod market;
pub mod mlp;
pub mod pattern;
pub mod propagation;
pub mod scenario;
pub mod signal;
pub mod twoway;

pub use agent::{Agent, AgentModel, Network, Part, Port};
pub use error::{Error, Result};
pub use graph::{ArcId, DirectedGraph, EnvRole, VertexId};
pub use signal::{rho_on, rho_set, Signal, SignalSpace, SignalVector};
