//! Flow-aware multi-agent path finding.
//!
//! Motion patterns of uncontrollable agents (people, forklifts, ...) are
//! learned as per-cell semi-wrapped velocity mixtures. Each mixture turns into
//! an extra cost on the edges of a guidance graph, so that the bounded
//! suboptimal MAPF solvers in [`solver`] and [`lifelong`] prefer moving with
//! the observed flow and avoid waiting inside it.

pub mod angle;
pub mod cliffmap;
pub mod error;
pub mod guidance;
pub mod lifelong;
pub mod solver;
pub mod trajectories;
pub mod uasim;
pub mod world;

pub use error::{Error, Result};
pub use guidance::{GuidanceGraph, HeuristicCache};
pub use solver::{CbsConfig, Solution, TimedPath};
pub use world::{Action, AgentTask, GridMap, Scenario, Vertex};
