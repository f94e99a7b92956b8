//! Lagrangian decomposition of the capacitated vehicle routing problem into
//! bounded-width knapsack QUBOs.
//!
//! The pipeline runs in stages:
//!
//! * [`instance`] parses CVRPLIB files and generates synthetic instances.
//! * [`assign`] builds the Fisher–Jaikumar generalized assignment surrogate.
//! * [`dual`] relaxes the assign-once constraints into per-vehicle knapsacks.
//! * [`qubo`] encodes a knapsack as a binary quadratic model (tilted or Taylor penalty).
//! * [`subsolve`] solves knapsacks exactly or samples QUBOs with a noisy Gibbs sampler.
//! * [`primal`] repairs sampled selections into feasible assignments and routes them.
//! * [`control`] drives the outer multiplier loop and the curriculum reward diagnostic.
//! * [`hardware`], [`bandit`] and [`orchestrate`] model hardware-aware execution:
//!   descriptors, gate-budget screening, LinUCB configuration choice and a
//!   deterministic multi-backend failover simulator.
//!
//! Data-parallel inner loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise.

pub mod assign;
pub mod bandit;
pub mod control;
pub mod dual;
pub mod hardware;
pub mod instance;
pub mod orchestrate;
pub mod par;
pub mod primal;
pub mod qubo;
pub mod report;
pub mod subsolve;

pub use assign::{GapModel, SeedMode};
pub use dual::{DualState, KnapsackSub};
pub use instance::Instance;
pub use par::Execution;
pub use qubo::{PenaltyConfig, PenaltyKind, QuboModel};
