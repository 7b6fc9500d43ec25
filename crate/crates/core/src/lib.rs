//! Shared building blocks for random-horizon BSDE experiments.
//!
//! Time grids, weight processes, forward-SDE and domain descriptions, path
//! storage, generators, terminal data and the fixture catalogue live here so
//! that the simulation, solver and estimate crates agree on one vocabulary.

pub mod alpha;
pub mod ensemble;
pub mod error;
pub mod fixtures;
pub mod generator;
pub mod grid;
pub mod ragged;
pub mod reduce;
pub mod rng;
pub mod sde;
pub mod stats;
pub mod terminal;
pub mod weight;

pub use alpha::{AlphaInput, AlphaRule};
pub use ensemble::{PathEnsemble, PathView, TerminalKind, TerminalTime};
pub use error::{Error, Result};
pub use generator::{GeneratorSpec, Point};
pub use grid::{make_grid, TimeGrid};
pub use ragged::Ragged;
pub use sde::{DomainSpec, Membership, SdeSpec};
pub use terminal::{ExpFunctional, TerminalCondition};
pub use weight::{cumulative_weight, CoefficientTrace, WeightParams};
