//! Gradient ascent on a visible/hidden Boltzmann machine.
//!
//! Units `0..n_visible` are visible, the rest hidden. For each pattern the
//! hidden units are fitted by a factorised model of the conditional
//! distribution; the resulting lower bound on the pattern log-likelihood is
//! `S(m) + ⟨H⟩ - log Z`, and the update moves every parameter by
//! `eta * (clamped - free)` statistics.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{estimate_moments, MomentConfig, MomentMethod};
use crate::exact::{self, DEFAULT_ENUMERATION_CAP};
use crate::meanfield::{self, Criterion, SolverConfig};
use crate::model::{condition_on_visibles, random_model, BoltzmannModel, PatternSet, Topology};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FreeStatistics {
    /// `m_i m_j` from a factorised fit of the whole model.
    Factorised,
    /// Ratios of second-order normalizer estimates.
    Ratio2,
    /// Enumeration; for checks on small models.
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchMode {
    /// One update per pass, clamped statistics averaged over patterns.
    Batch,
    /// One update per pattern, patterns taken in order; one pass counts as one update.
    PerPattern,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearningConfig {
    pub n_visible: usize,
    pub n_hidden: usize,
    pub eta: f64,
    pub updates: usize,
    pub free_stats: FreeStatistics,
    pub batch_mode: BatchMode,
    pub init_sigma: f64,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl Default for LearningConfig {
    fn default() -> Self {
        LearningConfig {
            n_visible: 4,
            n_hidden: 3,
            eta: 0.05,
            updates: 200,
            free_stats: FreeStatistics::Factorised,
            batch_mode: BatchMode::Batch,
            init_sigma: 0.1,
            seed: 0,
            solver: SolverConfig::asynchronous(),
        }
    }
}

impl LearningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_visible == 0 {
            return Err(Error::InvalidArgument("n_visible must be >= 1".into()));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("eta must be finite and >= 0, got {}", self.eta)));
        }
        if !(self.init_sigma >= 0.0 && self.init_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("init_sigma must be finite and >= 0, got {}", self.init_sigma)));
        }
        self.solver.validate()
    }
}

/// Means and row-major second moments over all units.
#[derive(Clone, Debug, PartialEq)]
pub struct Statistics {
    pub means: Vec<f64>,
    pub correlations: Vec<f64>,
    pub converged: bool,
}

impl Statistics {
    fn from_means(means: Vec<f64>, converged: bool) -> Self {
        let n = means.len();
        let mut correlations = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                correlations[i * n + j] = if i == j { means[i] } else { means[i] * means[j] };
            }
        }
        Statistics { means, correlations, converged }
    }
}

/// Statistics under the visible units fixed to `pattern` and a factorised
/// fit of the hidden units, plus that fit's value of `S(m) + ⟨H⟩`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClampedStatistics {
    pub stats: Statistics,
    pub bound_numerator: f64,
}

pub fn clamped_statistics(
    model: &BoltzmannModel,
    n_visible: usize,
    pattern: &[u8],
    solver: &SolverConfig,
) -> Result<ClampedStatistics> {
    Error::check_len(n_visible, pattern.len())?;
    if n_visible > model.n() {
        return Err(Error::InvalidArgument(format!("{n_visible} visible units in a {}-unit model", model.n())));
    }
    let visible: Vec<usize> = (0..n_visible).collect();
    let reduced = condition_on_visibles(model, &visible, pattern)?;
    let report = meanfield::solve(&reduced.model, Criterion::Bound, solver)?;
    let hidden_means = report.params.means();
    let mut means: Vec<f64> = pattern.iter().map(|&v| f64::from(v)).collect();
    means.extend_from_slice(hidden_means);
    Ok(ClampedStatistics {
        bound_numerator: meanfield::bound_value(&reduced.model, hidden_means)?,
        stats: Statistics::from_means(means, report.converged),
    })
}

pub fn free_statistics(model: &BoltzmannModel, method: FreeStatistics, solver: &SolverConfig) -> Result<Statistics> {
    match method {
        FreeStatistics::Factorised => {
            let report = meanfield::solve(model, Criterion::Bound, solver)?;
            Ok(Statistics::from_means(report.params.means().to_vec(), report.converged))
        }
        FreeStatistics::Ratio2 => {
            let cfg = MomentConfig {
                solver: *solver,
                ..MomentConfig::default()
            };
            let e = estimate_moments(model, MomentMethod::Ratio2, &cfg)?;
            let converged = !e.any_nonconverged();
            Ok(Statistics {
                means: e.means,
                correlations: e.correlations,
                converged,
            })
        }
        FreeStatistics::Exact => {
            let s = exact::enumerate(model)?;
            let converged = true;
            Ok(Statistics {
                means: s.means,
                correlations: s.pair_moments,
                converged,
            })
        }
    }
}

/// Total likelihood bound over a pattern set with three choices of `log Z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundSummary {
    /// With exact `log Z`; `None` above the enumeration cap.
    pub exact: Option<f64>,
    /// With the factorised first-order bound on `log Z`.
    pub first: f64,
    /// With the second-order estimate at the same fit.
    pub second: f64,
    pub clamped_nonconverged: usize,
    pub free_converged: bool,
}

fn summarize(
    model: &BoltzmannModel,
    clamped: &[ClampedStatistics],
    solver: &SolverConfig,
) -> Result<BoundSummary> {
    let numerator: f64 = clamped.iter().map(|c| c.bound_numerator).sum();
    let count = clamped.len() as f64;
    let report = meanfield::solve(model, Criterion::Bound, solver)?;
    let est = meanfield::second_order_bound_criterion(model, &report.params)?;
    let first = est.log_z0 + est.term1;
    let exact = if model.n() <= DEFAULT_ENUMERATION_CAP {
        Some(numerator - count * exact::log_z(model)?)
    } else {
        None
    };
    Ok(BoundSummary {
        exact,
        first: numerator - count * first,
        second: numerator - count * est.total,
        clamped_nonconverged: clamped.iter().filter(|c| !c.stats.converged).count(),
        free_converged: report.converged,
    })
}

fn clamped_all(
    model: &BoltzmannModel,
    n_visible: usize,
    patterns: &PatternSet,
    solver: &SolverConfig,
) -> Result<Vec<ClampedStatistics>> {
    patterns
        .patterns()
        .par_iter()
        .map(|p| clamped_statistics(model, n_visible, p, solver))
        .collect()
}

/// The pattern-set bound with exact, first-order and second-order `log Z`.
/// Repeated patterns count once per occurrence.
pub fn bound_and_approximations(
    model: &BoltzmannModel,
    patterns: &PatternSet,
    solver: &SolverConfig,
) -> Result<BoundSummary> {
    let clamped = clamped_all(model, patterns.visible_count(), patterns, solver)?;
    summarize(model, &clamped, solver)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub update: usize,
    /// Bounds of the model before this update is applied.
    pub bounds: BoundSummary,
    /// Euclidean norm of `clamped - free` over biases and pairs `i < j`.
    pub grad_norm: f64,
    pub clamped_nonconverged: usize,
    pub free_nonconverged: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LearningTrace {
    pub records: Vec<TraceRecord>,
}

/// `clamped - free` over biases then pairs `i < j`.
fn gradient(n: usize, clamped: &Statistics, free: &Statistics) -> (Vec<f64>, Vec<f64>) {
    let db = (0..n).map(|i| clamped.means[i] - free.means[i]).collect();
    let mut dw = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = clamped.correlations[i * n + j] - free.correlations[i * n + j];
            dw[i * n + j] = d;
            dw[j * n + i] = d;
        }
    }
    (db, dw)
}

fn apply(model: &mut BoltzmannModel, eta: f64, db: &[f64], dw: &[f64]) -> Result<()> {
    let n = model.n();
    for i in 0..n {
        model.set_bias(i, model.bias(i) + eta * db[i])?;
        for j in (i + 1)..n {
            model.set_coupling(i, j, model.coupling(i, j) + eta * dw[i * n + j])?;
        }
    }
    Ok(())
}

fn norm(n: usize, db: &[f64], dw: &[f64]) -> f64 {
    let mut s: f64 = db.iter().map(|d| d * d).sum();
    for i in 0..n {
        for j in (i + 1)..n {
            s += dw[i * n + j] * dw[i * n + j];
        }
    }
    s.sqrt()
}

fn average(stats: &[Statistics]) -> Statistics {
    let k = stats.len() as f64;
    let mut out = Statistics {
        means: vec![0.0; stats[0].means.len()],
        correlations: vec![0.0; stats[0].correlations.len()],
        converged: stats.iter().all(|s| s.converged),
    };
    for s in stats {
        out.means.iter_mut().zip(&s.means).for_each(|(a, b)| *a += b / k);
        out.correlations.iter_mut().zip(&s.correlations).for_each(|(a, b)| *a += b / k);
    }
    out
}

/// Runs `config.updates` updates from a random initialization. Non-converged
/// solves inside an update are counted in the trace and the update is still
/// applied.
pub fn train(config: &LearningConfig, patterns: &PatternSet) -> Result<(BoltzmannModel, LearningTrace)> {
    config.validate()?;
    Error::check_len(config.n_visible, patterns.visible_count())?;
    if patterns.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one pattern".into()));
    }
    let n = config.n_visible + config.n_hidden;
    let mut model = random_model(n, &Topology::Full, config.init_sigma, config.seed)?;
    let solver = &config.solver;
    let mut trace = LearningTrace::default();

    for update in 0..config.updates {
        let clamped = clamped_all(&model, config.n_visible, patterns, solver)?;
        let bounds = summarize(&model, &clamped, solver)?;
        let clamped_nonconverged = bounds.clamped_nonconverged;

        let (grad_norm, free_nonconverged) = match config.batch_mode {
            BatchMode::Batch => {
                let stats: Vec<Statistics> = clamped.into_iter().map(|c| c.stats).collect();
                let data = average(&stats);
                let free = free_statistics(&model, config.free_stats, solver)?;
                let (db, dw) = gradient(n, &data, &free);
                apply(&mut model, config.eta, &db, &dw)?;
                (norm(n, &db, &dw), usize::from(!free.converged))
            }
            BatchMode::PerPattern => {
                let mut sum_b = vec![0.0; n];
                let mut sum_w = vec![0.0; n * n];
                let mut free_bad = 0;
                for (k, p) in patterns.patterns().iter().enumerate() {
                    let data = if k == 0 {
                        clamped[0].stats.clone()
                    } else {
                        clamped_statistics(&model, config.n_visible, p, solver)?.stats
                    };
                    let free = free_statistics(&model, config.free_stats, solver)?;
                    free_bad += usize::from(!free.converged);
                    let (db, dw) = gradient(n, &data, &free);
                    apply(&mut model, config.eta, &db, &dw)?;
                    sum_b.iter_mut().zip(&db).for_each(|(a, b)| *a += b);
                    sum_w.iter_mut().zip(&dw).for_each(|(a, b)| *a += b);
                }
                let k = patterns.len() as f64;
                sum_b.iter_mut().for_each(|v| *v /= k);
                sum_w.iter_mut().for_each(|v| *v /= k);
                (norm(n, &sum_b, &sum_w), free_bad)
            }
        };
        trace.records.push(TraceRecord {
            update,
            bounds,
            grad_norm,
            clamped_nonconverged,
            free_nonconverged,
        });
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solver() -> SolverConfig {
        SolverConfig {
            tol: 1e-13,
            ..SolverConfig::asynchronous()
        }
    }

    #[test]
    fn zero_weights_give_half_means() {
        let m = BoltzmannModel::zeros(7);
        let c = clamped_statistics(&m, 4, &[1, 0, 1, 1], &solver()).unwrap();
        assert_eq!(&c.stats.means[..4], &[1.0, 0.0, 1.0, 1.0]);
        assert!(c.stats.means[4..].iter().all(|&x| (x - 0.5).abs() < 1e-15));
        for method in [FreeStatistics::Factorised, FreeStatistics::Ratio2, FreeStatistics::Exact] {
            let f = free_statistics(&m, method, &solver()).unwrap();
            assert!(f.means.iter().all(|&x| (x - 0.5).abs() < 1e-12));
            assert!((f.correlations[1] - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_bound_is_exact() {
        let m = BoltzmannModel::zeros(7);
        let p = PatternSet::random(4, 10, 0.4, 1);
        let b = bound_and_approximations(&m, &p, &solver()).unwrap();
        let want = -10.0 * 4.0 * 2f64.ln();
        assert!((b.exact.unwrap() - want).abs() < 1e-10);
        assert!((b.first - want).abs() < 1e-10);
        assert!((b.second - want).abs() < 1e-10);
    }

    #[test]
    fn clamped_statistics_exact_without_hidden_couplings() {
        let mut m = random_model(6, &Topology::Full, 1.0, 4).unwrap();
        for i in 3..6 {
            for j in (i + 1)..6 {
                m.set_coupling(i, j, 0.0).unwrap();
            }
        }
        let pattern = [1, 0, 1];
        let c = clamped_statistics(&m, 3, &pattern, &solver()).unwrap();
        let reduced = condition_on_visibles(&m, &[0, 1, 2], &pattern).unwrap();
        let oracle = exact::enumerate(&reduced.model).unwrap();
        for k in 0..3 {
            assert!((c.stats.means[3 + k] - oracle.means[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_rate_keeps_model_and_flat_trace() {
        let cfg = LearningConfig {
            eta: 0.0,
            updates: 5,
            ..LearningConfig::default()
        };
        let p = PatternSet::random(4, 10, 0.4, 2);
        let (m, trace) = train(&cfg, &p).unwrap();
        assert_eq!(m, random_model(7, &Topology::Full, 0.1, 0).unwrap());
        assert_eq!(trace.records.len(), 5);
        let first = trace.records[0].bounds;
        assert!(trace.records.iter().all(|r| r.bounds == first));
    }

    #[test]
    fn per_pattern_mode_runs() {
        let cfg = LearningConfig {
            updates: 3,
            batch_mode: BatchMode::PerPattern,
            ..LearningConfig::default()
        };
        let p = PatternSet::random(4, 5, 0.4, 2);
        let (_, trace) = train(&cfg, &p).unwrap();
        assert_eq!(trace.records.len(), 3);
        assert!(trace.records.iter().all(|r| r.grad_norm.is_finite()));
    }

    #[test]
    fn batch_update_is_scaled_gradient_of_exact_bound() {
        // With exact free statistics and the clamped fits held fixed, the
        // update direction times the pattern count is the gradient of the
        // total bound.
        let model = random_model(6, &Topology::Full, 0.5, 9).unwrap();
        let patterns = PatternSet::random(3, 6, 0.4, 3);
        let solver = solver();
        let clamped = clamped_all(&model, 3, &patterns, &solver).unwrap();
        let stats: Vec<Statistics> = clamped.iter().map(|c| c.stats.clone()).collect();
        let data = average(&stats);
        let free = free_statistics(&model, FreeStatistics::Exact, &solver).unwrap();
        let (db, dw) = gradient(6, &data, &free);

        let fixed_bound = |m: &BoltzmannModel| -> f64 {
            let mut total = 0.0;
            for (c, p) in clamped.iter().zip(patterns.patterns()) {
                let reduced = condition_on_visibles(m, &[0, 1, 2], p).unwrap();
                total += meanfield::bound_value(&reduced.model, &c.stats.means[3..]).unwrap();
            }
            total - patterns.len() as f64 * exact::log_z(m).unwrap()
        };
        let h = 1e-5;
        let k = patterns.len() as f64;
        for i in 0..6 {
            let mut a = model.clone();
            let mut b = model.clone();
            a.set_bias(i, model.bias(i) + h).unwrap();
            b.set_bias(i, model.bias(i) - h).unwrap();
            let fd = (fixed_bound(&a) - fixed_bound(&b)) / (2.0 * h);
            assert!((fd - k * db[i]).abs() < 1e-5, "bias {i}");
            for j in (i + 1)..6 {
                let mut a = model.clone();
                let mut b = model.clone();
                a.set_coupling(i, j, model.coupling(i, j) + h).unwrap();
                b.set_coupling(i, j, model.coupling(i, j) - h).unwrap();
                let fd = (fixed_bound(&a) - fixed_bound(&b)) / (2.0 * h);
                assert!((fd - k * dw[i * 6 + j]).abs() < 1e-5, "pair {i},{j}");
            }
        }
    }
}
