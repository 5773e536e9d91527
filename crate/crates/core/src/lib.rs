//! Non-reversible Markov chain Monte Carlo for districting plans.
//!
//! Plans are labelings of a [`PrecinctGraph`](graph::PrecinctGraph) into
//! districts, sampled from the Gibbs measure `exp(-J)` of a score `J`.
//! The crate provides the tempered single-node-flip sampler, the mixed
//! skew Metropolis-Hastings step with momentum variables, two flow
//! families built on it (center of mass and district to district), an
//! exact enumeration oracle for small instances and the diagnostics used
//! on the square lattice experiment.

pub mod diagnostics;
pub mod error;
pub mod flows;
pub mod graph;
pub mod harness;
pub mod model;
pub mod msmh;
pub mod neighborhood;
pub mod oracle;
pub mod plan;
pub mod score;
pub mod snf;

pub use error::{GraphError, PlanError, SamplerError};
pub use graph::{build_lattice, load_graph, PrecinctGraph};
pub use model::Model;
pub use neighborhood::{Move, Neighborhood, NeighborhoodBuilder};
pub use plan::{Flip, Plan, ValiditySpec};
pub use score::ScoreSpec;
