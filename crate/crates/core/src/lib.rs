//! Cumulant expansions of the Boltzmann machine log-partition function.
//!
//! A model on binary units `s_i ∈ {0, 1}` has energy
//! `H(s) = c + Σ_i b_i s_i + ½ Σ_{i≠j} w_ij s_i s_j` with weight `exp(H)`.
//! `log Z` is approximated by expanding around a tractable model: factorised
//! (independent units) or decimatable (sparse structures summed out exactly).
//! The expansion also yields moment estimators and a learning rule.

pub mod approx;
pub mod decimation;
pub mod error;
pub mod estimators;
pub mod exact;
pub mod expansion;
pub mod experiment;
pub mod format;
pub mod learning;
pub mod math;
pub mod meanfield;
pub mod model;

pub use approx::{approximate, ApproxFamily, Approximation};
pub use decimation::Structure;
pub use error::{Error, Result};
pub use estimators::{MomentEstimate, MomentMethod};
pub use expansion::{ExpansionEstimate, Order, TractableSurface};
pub use model::{BoltzmannModel, PatternSet, StateVector, Topology};
