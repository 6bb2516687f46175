//! Moment estimates from ratios of approximate normalizers, and the error
//! metrics used to score approximations of `log Z`.
//!
//! Clamping unit `i` to one gives a reduced model whose normalizer is the
//! partial sum over `s_i = 1`, so `⟨s_i⟩ = Z(clamp i) / Z`. Both normalizers
//! are replaced by expansions of the same order, each around its own fitted
//! tractable model. Raw ratios may leave `[0, 1]`; they are flagged, and
//! clipped only on request.

use rayon::prelude::*;

use crate::approx::{approximate_from, ApproxFamily, Approximation};
use crate::error::{Error, Result};
use crate::exact::ExactSummary;
use crate::meanfield::SolverConfig;
use crate::model::{clamp_to_one, BoltzmannModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MomentMethod {
    /// The fitted tractable model's own moments.
    Variational,
    /// Ratios of first-order normalizer estimates.
    Ratio1,
    /// Ratios of second-order normalizer estimates.
    Ratio2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentConfig {
    pub family: ApproxFamily,
    pub solver: SolverConfig,
    /// Clip reported values to `[0, 1]`. Flags still describe the raw values.
    pub clamp_physical: bool,
    /// Start every reduced fit from the full model's fitted parameters
    /// instead of a fresh initialization.
    pub warm_start: bool,
}

impl Default for MomentConfig {
    fn default() -> Self {
        MomentConfig {
            family: ApproxFamily::Factorised,
            solver: SolverConfig::asynchronous(),
            clamp_physical: false,
            warm_start: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentEstimate {
    pub method: MomentMethod,
    pub means: Vec<f64>,
    /// Row-major `⟨s_i s_j⟩`, symmetric, with the means on the diagonal.
    pub correlations: Vec<f64>,
    /// Row-major; set where the raw value left `[0, 1]`.
    pub unphysical: Vec<bool>,
    /// Row-major; set where a fit behind the entry did not converge.
    pub nonconverged: Vec<bool>,
}

impl MomentEstimate {
    pub fn n(&self) -> usize {
        self.means.len()
    }

    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        self.correlations[i * self.n() + j]
    }

    pub fn any_nonconverged(&self) -> bool {
        self.nonconverged.iter().any(|&f| f)
    }

    /// Mean absolute errors of the means and of the off-diagonal
    /// correlations (`i < j`) against exact moments.
    pub fn mean_absolute_errors(&self, exact: &ExactSummary) -> Result<(f64, f64)> {
        let n = self.n();
        Error::check_len(exact.n(), n)?;
        if n == 0 {
            return Ok((0.0, 0.0));
        }
        let means = self
            .means
            .iter()
            .zip(&exact.means)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n as f64;
        let pairs = n * (n - 1) / 2;
        let mut corr = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                corr += (self.correlation(i, j) - exact.pair(i, j)).abs();
            }
        }
        Ok((means, if pairs == 0 { 0.0 } else { corr / pairs as f64 }))
    }
}

fn fit(
    model: &BoltzmannModel,
    cfg: &MomentConfig,
    family: &ApproxFamily,
    start: Option<&[f64]>,
) -> Result<Approximation> {
    approximate_from(model, family, &cfg.solver, start)
}

fn assemble(
    method: MomentMethod,
    n: usize,
    raw: impl Fn(usize, usize) -> (f64, bool),
    clamp_physical: bool,
) -> MomentEstimate {
    let mut correlations = vec![0.0; n * n];
    let mut unphysical = vec![false; n * n];
    let mut nonconverged = vec![false; n * n];
    for i in 0..n {
        for j in i..n {
            let (v, nc) = raw(i, j);
            let bad = !(0.0..=1.0).contains(&v);
            let shown = if clamp_physical { v.clamp(0.0, 1.0) } else { v };
            for (a, b) in [(i, j), (j, i)] {
                correlations[a * n + b] = shown;
                unphysical[a * n + b] = bad;
                nonconverged[a * n + b] = nc;
            }
        }
    }
    MomentEstimate {
        method,
        means: (0..n).map(|i| correlations[i * n + i]).collect(),
        correlations,
        unphysical,
        nonconverged,
    }
}

/// Estimates first and second moments of `model`.
///
/// For the ratio methods every singleton and pair is clamped in turn and the
/// reduced model refitted; the reduced model carries the clamped units'
/// contribution in its constant, so `⟨s_I⟩ = exp(log Z~(clamp I) - log Z~)`.
pub fn estimate_moments(model: &BoltzmannModel, method: MomentMethod, cfg: &MomentConfig) -> Result<MomentEstimate> {
    let n = model.n();
    if let ApproxFamily::Decimatable(s) = &cfg.family {
        Error::check_len(n, s.n())?;
    }
    let full = fit(model, cfg, &cfg.family, None)?;
    let order = match method {
        MomentMethod::Variational => {
            return Ok(assemble(
                method,
                n,
                |i, j| (full.pair_probabilities[i * n + j], !full.converged),
                cfg.clamp_physical,
            ));
        }
        MomentMethod::Ratio1 => 1,
        MomentMethod::Ratio2 => 2,
    };
    let log_z = full.order(order)?;

    let subsets: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let results: Vec<Result<(f64, bool)>> = subsets
        .par_iter()
        .map(|&(i, j)| {
            let nodes: &[usize] = if i == j { &[i] } else { &[i, j] };
            let reduced = clamp_to_one(model, nodes)?;
            let family = cfg.family.restrict(&reduced.original);
            let start = cfg.warm_start.then(|| cfg.family.restrict_theta(&full.theta, &reduced.original));
            let sub = fit(&reduced.model, cfg, &family, start.as_deref())?;
            Ok(((sub.order(order)? - log_z).exp(), !(sub.converged && full.converged)))
        })
        .collect();
    let mut table = vec![(0.0, false); n * n];
    for (&(i, j), r) in subsets.iter().zip(results) {
        table[i * n + j] = r?;
    }
    Ok(assemble(method, n, |i, j| table[i * n + j], cfg.clamp_physical))
}

/// The relative error of an approximation to `log Z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativeError {
    pub value: f64,
    /// `|exact| < 1e-6`; `value` is then the absolute error `exact - approx`.
    pub absolute_fallback: bool,
}

pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `(exact - approx) / exact`, or `exact - approx` when `|exact|` is below
/// [`RELATIVE_ERROR_FLOOR`]. Positive when the approximation is low.
pub fn relative_error(log_z_exact: f64, log_z_approx: f64) -> Result<RelativeError> {
    if !(log_z_exact.is_finite() && log_z_approx.is_finite()) {
        return Err(Error::NonFinite("relative error input"));
    }
    let diff = log_z_exact - log_z_approx;
    Ok(if log_z_exact.abs() < RELATIVE_ERROR_FLOOR {
        RelativeError { value: diff, absolute_fallback: true }
    } else {
        RelativeError { value: diff / log_z_exact, absolute_fallback: false }
    })
}

/// `|E_first| - |E_second|`; positive when the second-order estimate is closer.
pub fn paired_delta(log_z_exact: f64, log_z_first: f64, log_z_second: f64) -> Result<f64> {
    Ok(error_record(log_z_exact, log_z_first, log_z_second)?.paired_delta)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorRecord {
    pub e_first: f64,
    pub e_second: f64,
    pub paired_delta: f64,
    pub absolute_fallback: bool,
}

pub fn error_record(log_z_exact: f64, log_z_first: f64, log_z_second: f64) -> Result<ErrorRecord> {
    let a = relative_error(log_z_exact, log_z_first)?;
    let b = relative_error(log_z_exact, log_z_second)?;
    Ok(ErrorRecord {
        e_first: a.value,
        e_second: b.value,
        paired_delta: a.value.abs() - b.value.abs(),
        absolute_fallback: a.absolute_fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decimation::Structure;
    use crate::exact;
    use crate::math::logistic;
    use crate::model::{random_model, Topology};

    #[test]
    fn relative_error_cases() {
        assert_eq!(relative_error(3.0, 3.0).unwrap().value, 0.0);
        assert!((relative_error(10.0, 9.0).unwrap().value - 0.1).abs() < 1e-15);
        let r = relative_error(1e-9, 0.5).unwrap();
        assert!(r.absolute_fallback);
        assert_eq!(r.value, 1e-9 - 0.5);
        assert!(relative_error(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn paired_delta_cases() {
        assert_eq!(paired_delta(5.0, 4.0, 4.0).unwrap(), 0.0);
        assert!((paired_delta(5.0, 4.0, 4.8).unwrap() - 0.16).abs() < 1e-12);
        assert!(paired_delta(5.0, f64::INFINITY, 4.0).is_err());
    }

    #[test]
    fn zero_coupling_is_exact_for_every_method() {
        let mut m = BoltzmannModel::zeros(5);
        for i in 0..5 {
            m.set_bias(i, 0.4 * i as f64 - 1.0).unwrap();
        }
        for method in [MomentMethod::Variational, MomentMethod::Ratio1, MomentMethod::Ratio2] {
            let e = estimate_moments(&m, method, &MomentConfig::default()).unwrap();
            for i in 0..5 {
                let p = logistic(m.bias(i));
                assert!((e.means[i] - p).abs() < 1e-12, "{method:?}");
                for j in 0..5 {
                    let want = if i == j { p } else { p * logistic(m.bias(j)) };
                    assert!((e.correlation(i, j) - want).abs() < 1e-12, "{method:?}");
                }
            }
            assert!(!e.any_nonconverged());
        }
    }

    #[test]
    fn ratios_are_exact_for_supported_decimatable_targets() {
        let m = random_model(7, &Topology::Chain, 1.0, 8).unwrap();
        let cfg = MomentConfig {
            family: ApproxFamily::Decimatable(Structure::chain(7)),
            solver: SolverConfig { ridge: 0.0, ..SolverConfig::default() },
            ..MomentConfig::default()
        };
        let oracle = exact::enumerate(&m).unwrap();
        for method in [MomentMethod::Ratio1, MomentMethod::Ratio2, MomentMethod::Variational] {
            let e = estimate_moments(&m, method, &cfg).unwrap();
            let (a, b) = e.mean_absolute_errors(&oracle).unwrap();
            assert!(a < 1e-9 && b < 1e-9, "{method:?}: {a} {b}");
        }
    }

    #[test]
    fn estimates_are_symmetric_with_means_on_diagonal() {
        let m = random_model(6, &Topology::Full, 1.0, 2).unwrap();
        let e = estimate_moments(&m, MomentMethod::Ratio2, &MomentConfig::default()).unwrap();
        for i in 0..6 {
            assert_eq!(e.correlation(i, i), e.means[i]);
            for j in 0..6 {
                assert_eq!(e.correlation(i, j).to_bits(), e.correlation(j, i).to_bits());
                assert_eq!(e.unphysical[i * 6 + j], !(0.0..=1.0).contains(&e.correlation(i, j)));
            }
        }
    }

    #[test]
    fn warm_start_reaches_similar_estimates() {
        let m = random_model(6, &Topology::Full, 1.0, 3).unwrap();
        let cold = estimate_moments(&m, MomentMethod::Ratio2, &MomentConfig::default()).unwrap();
        let warm_cfg = MomentConfig { warm_start: true, ..MomentConfig::default() };
        let warm = estimate_moments(&m, MomentMethod::Ratio2, &warm_cfg).unwrap();
        for (a, b) in cold.correlations.iter().zip(&warm.correlations) {
            assert!((a - b).abs() < 0.05);
        }
    }

    #[test]
    fn clamp_physical_clips_but_keeps_flags() {
        let mut m = BoltzmannModel::zeros(4);
        for i in 0..4 {
            for j in (i + 1)..4 {
                m.set_coupling(i, j, 4.0).unwrap();
            }
            m.set_bias(i, -5.0).unwrap();
        }
        let raw = estimate_moments(&m, MomentMethod::Ratio2, &MomentConfig::default()).unwrap();
        let clipped_cfg = MomentConfig { clamp_physical: true, ..MomentConfig::default() };
        let clipped = estimate_moments(&m, MomentMethod::Ratio2, &clipped_cfg).unwrap();
        assert_eq!(raw.unphysical, clipped.unphysical);
        assert!(clipped.correlations.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
