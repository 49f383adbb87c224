//! Distributed Nash-equilibrium seeking for noncooperative games whose players
//! are high-order nonlinear integrator chains communicating over
//! weight-unbalanced digraphs.
//!
//! Each player runs a consensus estimator of everybody's decision, an
//! auxiliary integrator, and a chain-stabilizing feedback that is either
//! state based or driven by a high-gain observer of its output. The crate
//! provides the graph certificates, gradient oracles and Nash solver used to
//! validate a setup, the closed-loop integrator, and two reference scenarios.

pub mod config;
pub mod control;
pub mod error;
pub mod game;
pub mod graph;
pub mod linalg;
pub mod report;
pub mod scenarios;
pub mod sim;
pub mod verify;

pub use control::{GainSet, ObserverSet, SeekerState};
pub use error::{Error, Result};
pub use game::{Game, MonotonicityReport};
pub use graph::{Digraph, GraphCertificate};
pub use sim::{ClosedLoop, InitialConditions, Mode, Plant, SimConfig, Trajectory};
