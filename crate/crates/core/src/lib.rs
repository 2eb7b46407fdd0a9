//! Resilient consensus of linear multi-agent systems under attack:
//! graph analysis, agent dynamics, attack models, KL-based detection,
//! trust-based mitigation and a deterministic simulation engine.

pub mod attack;
pub mod detection;
pub mod dynamics;
pub mod graph;
pub mod linalg;
pub mod local;
pub mod mitigation;
pub mod sim;
pub mod stats;
