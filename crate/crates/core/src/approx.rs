//! One entry point for "fit a tractable model, expand `log Z` to first and
//! second order" over both approximating families.

use crate::decimation::{self, structure_indices, ExtIndex, Structure};
use crate::error::{Error, Result};
use crate::expansion::TractableSurface;
use crate::meanfield::{self, Criterion, FactorisedParams, SolverConfig};
use crate::model::BoltzmannModel;

#[derive(Clone, Debug, PartialEq)]
pub enum ApproxFamily {
    Factorised,
    /// Tractable models on a decimatable structure over the target's nodes.
    Decimatable(Structure),
}

impl ApproxFamily {
    /// The family induced on a reduced model; `kept[k]` is the original
    /// index of reduced node `k`.
    pub fn restrict(&self, kept: &[usize]) -> ApproxFamily {
        match self {
            ApproxFamily::Factorised => ApproxFamily::Factorised,
            ApproxFamily::Decimatable(s) => ApproxFamily::Decimatable(s.restrict(kept)),
        }
    }

    /// Maps a parameter vector of this family onto the restricted family.
    pub fn restrict_theta(&self, theta: &[f64], kept: &[usize]) -> Vec<f64> {
        match self {
            ApproxFamily::Factorised => kept.iter().map(|&o| theta[o]).collect(),
            ApproxFamily::Decimatable(s) => {
                let full = structure_indices(s);
                let reduced = structure_indices(&s.restrict(kept));
                reduced
                    .iter()
                    .map(|ix| {
                        let orig = match *ix {
                            ExtIndex::Node(k) => ExtIndex::Node(kept[k]),
                            ExtIndex::Pair(a, b) => ExtIndex::Pair(kept[a], kept[b]),
                        };
                        full.iter().position(|f| *f == orig).map_or(0.0, |p| theta[p])
                    })
                    .collect()
            }
        }
    }
}

/// A fitted tractable model and the truncated expansions around it.
#[derive(Clone, Debug, PartialEq)]
pub struct Approximation {
    pub surface: TractableSurface,
    /// `log Z0 + ⟨ΔH⟩_0`, a lower bound at any parameters.
    pub first: f64,
    /// `first + ½ var_0(ΔH)`.
    pub second: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Parameters of the fitted model in the family's layout.
    pub theta: Vec<f64>,
    pub means: Vec<f64>,
    /// Row-major `Q0(s_i = s_j = 1)`; the diagonal holds the means.
    pub pair_probabilities: Vec<f64>,
}

impl Approximation {
    pub fn order(&self, k: u32) -> Result<f64> {
        match k {
            1 => Ok(self.first),
            2 => Ok(self.second),
            _ => Err(Error::InvalidArgument(format!("expansion order must be 1 or 2, got {k}"))),
        }
    }
}

fn from_surface(
    surface: TractableSurface,
    converged: bool,
    iterations: usize,
    theta: Vec<f64>,
    means: Vec<f64>,
    pair_probabilities: Vec<f64>,
) -> Approximation {
    let first = surface.log_z0 + surface.mean_delta_h;
    Approximation {
        surface,
        first,
        second: first + 0.5 * surface.var_delta_h,
        converged,
        iterations,
        theta,
        means,
        pair_probabilities,
    }
}

/// Fits the family by its bound fixed point, starting from `start` when
/// given and from `cfg.init` (with restarts) otherwise.
pub fn approximate_from(
    model: &BoltzmannModel,
    family: &ApproxFamily,
    cfg: &SolverConfig,
    start: Option<&[f64]>,
) -> Result<Approximation> {
    let n = model.n();
    match family {
        ApproxFamily::Factorised => {
            let report = match start {
                Some(theta) => {
                    let init = FactorisedParams::from_theta(theta.to_vec());
                    meanfield::solve_bound(model, &init, cfg)?
                }
                None => meanfield::solve(model, Criterion::Bound, cfg)?,
            };
            let surface = meanfield::factorised_surface(model, &report.params)?;
            let m = report.params.means();
            let mut pairs = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    pairs[i * n + j] = if i == j { m[i] } else { m[i] * m[j] };
                }
            }
            Ok(from_surface(
                surface,
                report.converged,
                report.iterations,
                report.params.theta().to_vec(),
                m.to_vec(),
                pairs,
            ))
        }
        ApproxFamily::Decimatable(structure) => {
            let state = match start {
                Some(theta) => decimation::solve_generalized_mf_from(model, structure, theta.to_vec(), cfg)?,
                None => decimation::solve_generalized_mf(model, structure, cfg)?,
            };
            let surface = decimation::decimatable_surface(model, &state)?;
            let (means, pairs) = decimation::tractable_moments(structure, &state.theta)?;
            Ok(from_surface(surface, state.converged, state.iterations, state.theta, means, pairs))
        }
    }
}

pub fn approximate(model: &BoltzmannModel, family: &ApproxFamily, cfg: &SolverConfig) -> Result<Approximation> {
    approximate_from(model, family, cfg, None)
}
