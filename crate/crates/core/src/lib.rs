//! Additively coupled games: equilibrium analysis, robust (worst-case)
//! equilibria, distributed solvers, and benchmark scenarios.

pub mod bench;
pub mod error;
pub mod game;
pub mod models;
pub mod oracle;
pub mod robust;
pub mod solve;
pub mod vi;

pub use error::{GameError, Result};
pub use game::{
    CouplingModel, GameInstance, Partials, StrategyProfile, StrategySpace, SumBound,
    UtilityFamily, FEASIBILITY_TOL, STABILITY_GUARD,
};
