//! Approximate Nash social welfare maximization for multi-copy indivisible
//! goods under capped additive-concave utilities.
//!
//! The solver keeps an integral allocation, per-good prices and per-agent MBB
//! ratios, repairs price-envy along tight-graph improving paths, and raises
//! prices when no path exists. It terminates with a `4ε`-price-envy-free-up-
//! to-one-item allocation whose Nash social welfare is within
//! `(1+ε)·e^(e^(-1/(1+4ε)))` of optimal. Everything the solver touches is
//! exact rational arithmetic; certification re-derives the guarantee per run
//! from computable upper bounds.

// agents and goods are plain indices throughout; indexed loops over both
// sides of a pair read better than iterator chains here
#![allow(clippy::needless_range_loop)]

pub mod certify;
pub mod generators;
pub mod instance;
pub mod market;
pub mod numerics;
pub mod oracle;
pub mod solver;

pub use instance::{cap_and_round, stats, Instance, InstanceStats, ProblemView, RoundedInstance};
pub use numerics::{floor_log_ratio, next_power_up, PowerOfR, Rat};
pub use solver::{solve, SolveError, SolverOutput};
