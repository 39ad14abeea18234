//! Probabilistic architecture search over attributed DAGs.
//!
//! The crate is organized around a search loop: a learned auto-regressive
//! graph generator (or an RNN baseline) proposes candidate DAGs, random-graph
//! priors provide epsilon-greedy exploration, evaluators score candidates,
//! and a replay buffer of top architectures drives a reweighted REINFORCE
//! update of the generator.

pub mod engine;
pub mod error;
pub mod eval;
pub mod generator;
pub mod graph;
pub mod params;
pub mod priors;
pub mod rl;
pub mod space;
pub mod tensor;

pub use engine::{load_config, run_baseline, run_search, RunArtifacts, SearchConfig};
pub use error::{Error, Result};
pub use graph::{ArchGraph, GraphRecord, GraphStats, Roles};
pub use space::SpaceSpec;
