//! Core algorithms for a controlled stochastic SIR system with a dynamic
//! transmission rate.
//!
//! The crate is organised around the four-component state
//! `(beta, S, I, R)`: transmission rate, susceptible, infected and removed
//! fractions of a percent-scaled population. On top of the model itself
//! ([`model`]) it provides an Euler–Maruyama ensemble simulator with
//! counter-based noise ([`sim`]), closed-form lock-down/vaccination controls
//! together with a transition-function ODE, a Feynman–Kac Monte Carlo check
//! and a drift steady-state finder ([`control`]), immunity-stratified random
//! networks with modularity-tracked rewiring ([`network`]) and total
//! variation distances on finite discrete distributions ([`measures`]).

// negated comparisons like `!(x > 0.0)` are used on purpose: they reject NaN
// along with the out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod error;
pub mod measures;
pub mod model;
pub mod network;
pub mod rng;
pub mod sim;

#[cfg(test)]
pub(crate) mod testutil;

pub use control::{
    ControlDiagnostics, FtildeTerms, LockdownControl, McConfig, SteadyState, SteadyStateMethod,
    TransitionFunction, VaccinationControl,
};
pub use error::{Error, Result};
pub use measures::{DiscreteDistribution, TvDistances};
pub use model::{
    Controls, GxxSign, IncidenceDenominator, ModelParams, StateComponent, StateVector, Temperature,
    Violation,
};
pub use network::{ImmunityLevel, ImmunityNetwork, UpdateRecord, UpdateTrace};
pub use sim::{ControlMode, Ensemble, EnsembleStats, SimConfig, SimPath};
