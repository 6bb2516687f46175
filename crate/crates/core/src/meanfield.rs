//! Factorised approximations `H0 = Σ_i θ_i s_i`.
//!
//! Under a factorised `Q0` every moment is a product of the means
//! `m_i = logistic(θ_i)`, so the first-order bound, its gradient and the
//! variance of `ΔH` all have closed forms. The bound is maximised by the
//! fixed point `θ_i = bias_i + Σ_j coupling_ij m_j`; the TAP variant adds the
//! Onsager term `½ Σ_j coupling_ij² (1 - 2 m_i) m_j (1 - m_j)`.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::expansion::{self, ExpansionEstimate, Order, TractableSurface};
use crate::math::{logistic, logit, softplus, xlogx};
use crate::model::{rng_from_seed, BoltzmannModel};

/// Natural parameters and means of a factorised model; `means[i] = logistic(theta[i])`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorisedParams {
    theta: Vec<f64>,
    means: Vec<f64>,
}

impl FactorisedParams {
    pub fn from_theta(theta: Vec<f64>) -> Self {
        let means = theta.iter().map(|&t| logistic(t)).collect();
        FactorisedParams { theta, means }
    }

    pub fn from_means(means: Vec<f64>) -> Result<Self> {
        check_means(&means, false)?;
        let theta = means.iter().map(|&m| logit(m)).collect();
        Ok(FactorisedParams { theta, means })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn n(&self) -> usize {
        self.theta.len()
    }

    /// `log Z0 = Σ_i log(1 + e^{θ_i})`.
    pub fn log_z0(&self) -> f64 {
        self.theta.iter().map(|&t| softplus(t)).sum()
    }
}

fn check_means(m: &[f64], closed: bool) -> Result<()> {
    for (index, &value) in m.iter().enumerate() {
        let ok = if closed {
            (0.0..=1.0).contains(&value)
        } else {
            value > 0.0 && value < 1.0
        };
        if !ok {
            return Err(Error::MeanOutOfRange { index, value });
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    /// All units updated from the previous sweep's means.
    Sync,
    /// Units updated in index order, each seeing the latest means.
    Async,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Criterion {
    Bound,
    Tap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// `θ_i = bias_i`, exact when the couplings vanish.
    Bias,
    /// Means drawn uniformly from `(0.001, 0.999)`.
    Random { seed: u64 },
}

/// Settings shared by the factorised and generalized fixed-point solvers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub schedule: Schedule,
    /// Fraction of the proposed update applied per step, in `(0, 1]`.
    pub damping: f64,
    /// Convergence threshold on the largest change per sweep.
    pub tol: f64,
    pub max_iter: usize,
    pub init: Init,
    /// Number of starts; extra starts use random initializations and the
    /// start with the highest bound wins.
    pub restarts: usize,
    /// Added to the Fisher matrix diagonal by the generalized solver.
    pub ridge: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            schedule: Schedule::Sync,
            damping: 1.0,
            tol: 1e-10,
            max_iter: 10_000,
            init: Init::Bias,
            restarts: 1,
            ridge: 1e-10,
        }
    }
}

impl SolverConfig {
    /// Asynchronous coordinate ascent; converges on every instance we have
    /// seen and is the better choice when many sub-problems must all solve.
    pub fn asynchronous() -> Self {
        SolverConfig {
            schedule: Schedule::Async,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidArgument(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("restarts must be >= 1".into()));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::InvalidArgument(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointReport {
    pub params: FactorisedParams,
    pub converged: bool,
    /// Sweeps performed.
    pub iterations: usize,
    /// Largest absolute change of a mean in the final sweep.
    pub final_residual: f64,
    pub criterion: Criterion,
}

/// `S(m) = -Σ_i [m_i ln m_i + (1 - m_i) ln(1 - m_i)]`, with `0 ln 0 = 0`.
pub fn entropy(m: &[f64]) -> Result<f64> {
    check_means(m, true)?;
    Ok(-m.iter().map(|&x| xlogx(x) + xlogx(1.0 - x)).sum::<f64>())
}

/// `⟨H1⟩` under independent units with the given means.
fn mean_potential(model: &BoltzmannModel, m: &[f64]) -> f64 {
    let mut lin = 0.0;
    let mut quad = 0.0;
    for i in 0..model.n() {
        lin += model.bias(i) * m[i];
        let row = model.coupling_row(i);
        let mut f = 0.0;
        for j in 0..model.n() {
            f += row[j] * m[j];
        }
        quad += m[i] * f;
    }
    model.constant() + lin + 0.5 * quad
}

/// First-order lower bound `S(m) + ⟨H1⟩_m` on `log Z`.
pub fn bound_value(model: &BoltzmannModel, m: &[f64]) -> Result<f64> {
    Error::check_len(model.n(), m.len())?;
    Ok(entropy(m)? + mean_potential(model, m))
}

/// `bias_i + Σ_j coupling_ij m_j`.
fn mean_field(model: &BoltzmannModel, m: &[f64], i: usize) -> f64 {
    let row = model.coupling_row(i);
    let mut f = model.bias(i);
    for j in 0..model.n() {
        f += row[j] * m[j];
    }
    f
}

fn onsager(model: &BoltzmannModel, m: &[f64], i: usize) -> f64 {
    let row = model.coupling_row(i);
    let mut s = 0.0;
    for j in 0..model.n() {
        s += row[j] * row[j] * m[j] * (1.0 - m[j]);
    }
    0.5 * s * (1.0 - 2.0 * m[i])
}

/// `⟨ΔH⟩_0` for `ΔH = H1 - Σ θ_i s_i`.
pub fn mean_delta_h(model: &BoltzmannModel, params: &FactorisedParams) -> Result<f64> {
    Error::check_len(model.n(), params.n())?;
    let m = params.means();
    let linear: f64 = params.theta.iter().zip(m).map(|(t, x)| t * x).sum();
    Ok(mean_potential(model, m) - linear)
}

/// `var_0(ΔH) = ½ Σ_{ij} w_ij² p_i p_j + Σ_i (θ_i - w_i - Σ_j w_ij m_j)² p_i`
/// with `p_i = m_i (1 - m_i)`.
pub fn var_delta_h(model: &BoltzmannModel, params: &FactorisedParams) -> Result<f64> {
    Error::check_len(model.n(), params.n())?;
    let m = params.means();
    let p: Vec<f64> = m.iter().map(|&x| x * (1.0 - x)).collect();
    let mut pair = 0.0;
    let mut lin = 0.0;
    for i in 0..model.n() {
        let row = model.coupling_row(i);
        for j in 0..model.n() {
            pair += row[j] * row[j] * p[i] * p[j];
        }
        let r = params.theta[i] - mean_field(model, m, i);
        lin += r * r * p[i];
    }
    Ok(0.5 * pair + lin)
}

/// Gradient of `log Z0 + ⟨ΔH⟩_0` with respect to θ:
/// `p_k (bias_k + Σ_j coupling_kj m_j - θ_k)`.
pub fn bound_gradient(model: &BoltzmannModel, params: &FactorisedParams) -> Result<Vec<f64>> {
    Error::check_len(model.n(), params.n())?;
    let m = params.means();
    Ok((0..model.n())
        .map(|k| m[k] * (1.0 - m[k]) * (mean_field(model, m, k) - params.theta[k]))
        .collect())
}

/// `max_i |θ_i - bias_i - Σ_j coupling_ij m_j|`.
pub fn stationarity_residual(model: &BoltzmannModel, params: &FactorisedParams) -> Result<f64> {
    Error::check_len(model.n(), params.n())?;
    Ok((0..model.n())
        .map(|i| (params.theta[i] - mean_field(model, params.means(), i)).abs())
        .fold(0.0, f64::max))
}

pub fn factorised_surface(model: &BoltzmannModel, params: &FactorisedParams) -> Result<TractableSurface> {
    TractableSurface::new(params.log_z0(), mean_delta_h(model, params)?, var_delta_h(model, params)?)
}

/// One synchronous bound update `θ ← bias + W logistic(θ)`.
pub fn bound_step(model: &BoltzmannModel, theta: &[f64]) -> Result<Vec<f64>> {
    Error::check_len(model.n(), theta.len())?;
    let m: Vec<f64> = theta.iter().map(|&t| logistic(t)).collect();
    Ok((0..model.n()).map(|i| mean_field(model, &m, i)).collect())
}

pub fn initial_params(model: &BoltzmannModel, init: Init) -> FactorisedParams {
    match init {
        Init::Bias => FactorisedParams::from_theta(model.biases().to_vec()),
        Init::Random { seed } => {
            let mut rng = rng_from_seed(seed);
            let means = (0..model.n()).map(|_| rng.random_range(0.001..0.999)).collect();
            FactorisedParams::from_means(means).expect("means drawn inside (0, 1)")
        }
    }
}

fn iterate(
    model: &BoltzmannModel,
    init: &FactorisedParams,
    cfg: &SolverConfig,
    criterion: Criterion,
) -> Result<FixedPointReport> {
    cfg.validate()?;
    Error::check_len(model.n(), init.n())?;
    let n = model.n();
    let mut theta = init.theta.clone();
    let mut m = init.means.clone();
    let mut targets = vec![0.0; n];
    let mut residual = f64::INFINITY;

    let field = |m: &[f64], i: usize| match criterion {
        Criterion::Bound => mean_field(model, m, i),
        Criterion::Tap => mean_field(model, m, i) + onsager(model, m, i),
    };
    let apply = |theta: &mut [f64], m: &mut [f64], i: usize, target: f64| -> f64 {
        let old = m[i];
        if cfg.damping == 1.0 {
            theta[i] = target;
            m[i] = logistic(target);
        } else {
            let damped = (1.0 - cfg.damping) * old + cfg.damping * logistic(target);
            let t = logit(damped);
            theta[i] = if t.is_finite() { t } else { target };
            m[i] = logistic(theta[i]);
        }
        (m[i] - old).abs()
    };

    for it in 1..=cfg.max_iter {
        let mut change: f64 = 0.0;
        match cfg.schedule {
            Schedule::Sync => {
                for (i, t) in targets.iter_mut().enumerate() {
                    *t = field(&m, i);
                }
                for i in 0..n {
                    change = change.max(apply(&mut theta, &mut m, i, targets[i]));
                }
            }
            Schedule::Async => {
                for i in 0..n {
                    let t = field(&m, i);
                    change = change.max(apply(&mut theta, &mut m, i, t));
                }
            }
        }
        residual = change;
        if !residual.is_finite() {
            break;
        }
        if residual <= cfg.tol {
            return Ok(FixedPointReport {
                params: FactorisedParams { theta, means: m },
                converged: true,
                iterations: it,
                final_residual: residual,
                criterion,
            });
        }
    }
    Ok(FixedPointReport {
        params: FactorisedParams { theta, means: m },
        converged: false,
        iterations: cfg.max_iter,
        final_residual: residual,
        criterion,
    })
}

/// Iterates the bound fixed point `θ_i ← bias_i + Σ_j coupling_ij m_j` from `init`.
///
/// Damping mixes old and new means. With the asynchronous schedule and
/// damping 1 each update maximizes the bound in one coordinate, so the bound
/// never decreases; the synchronous schedule can oscillate.
pub fn solve_bound(model: &BoltzmannModel, init: &FactorisedParams, cfg: &SolverConfig) -> Result<FixedPointReport> {
    iterate(model, init, cfg, Criterion::Bound)
}

/// Iterates the TAP fixed point. Only the fixed-point residual is controlled.
pub fn solve_tap(model: &BoltzmannModel, init: &FactorisedParams, cfg: &SolverConfig) -> Result<FixedPointReport> {
    iterate(model, init, cfg, Criterion::Tap)
}

/// Runs `cfg.restarts` starts (the first from `cfg.init`, the rest random)
/// and keeps the converged start with the highest first-order bound.
pub fn solve(model: &BoltzmannModel, criterion: Criterion, cfg: &SolverConfig) -> Result<FixedPointReport> {
    cfg.validate()?;
    let base_seed = match cfg.init {
        Init::Random { seed } => seed,
        Init::Bias => 0,
    };
    let mut best: Option<(FixedPointReport, f64)> = None;
    for r in 0..cfg.restarts {
        let init = if r == 0 {
            initial_params(model, cfg.init)
        } else {
            initial_params(model, Init::Random { seed: base_seed.wrapping_add(r as u64) })
        };
        let report = iterate(model, &init, cfg, criterion)?;
        let value = bound_value(model, report.params.means())?;
        let better = match &best {
            None => true,
            Some((b, v)) => (report.converged, value) > (b.converged, *v),
        };
        if better {
            best = Some((report, value));
        }
    }
    Ok(best.expect("at least one restart").0)
}

/// Second-order estimate at a bound fixed point:
/// `bound + ¼ Σ_{ij} coupling_ij² m_i (1 - m_i) m_j (1 - m_j)` when the
/// fixed point holds; away from it the extra stationarity term is included
/// and a warning is logged.
pub fn second_order_bound_criterion(model: &BoltzmannModel, params: &FactorisedParams) -> Result<ExpansionEstimate> {
    let residual = stationarity_residual(model, params)?;
    if residual > 1e-6 * (1.0 + model.coupling_l1()) {
        log::warn!("second-order estimate taken away from the bound fixed point (residual {residual:.3e})");
    }
    let mut est = expansion::estimate(&factorised_surface(model, params)?, Order::Second);
    est.stationarity_residual = Some(residual);
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact;
    use crate::model::{random_model, Topology};
    use proptest::prelude::*;

    fn strong_model(seed: u64) -> BoltzmannModel {
        random_model(8, &Topology::Full, 1.0, seed).unwrap()
    }

    #[test]
    fn entropy_values() {
        assert!((entropy(&[0.5; 8]).unwrap() - 8.0 * 2f64.ln()).abs() < 1e-12);
        let e = entropy(&[0.3, 0.7]).unwrap();
        let direct = 2.0 * (-0.3 * 0.3f64.ln() - 0.7 * 0.7f64.ln());
        assert!((e - direct).abs() < 1e-15);
        assert!((e - 1.221728604109787).abs() < 1e-12);
        assert_eq!(entropy(&[0.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(entropy(&[1.2]), Err(Error::MeanOutOfRange { index: 0, .. })));
    }

    #[test]
    fn entropy_is_symmetric() {
        let m = [0.1, 0.35, 0.9, 0.02];
        let flipped: Vec<f64> = m.iter().map(|x| 1.0 - x).collect();
        assert!((entropy(&m).unwrap() - entropy(&flipped).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn bound_tight_without_couplings() {
        let m = random_model(6, &Topology::Custom(vec![]), 1.5, 9).unwrap();
        let means: Vec<f64> = m.biases().iter().map(|&b| logistic(b)).collect();
        let exact = exact::log_z(&m).unwrap();
        assert!((bound_value(&m, &means).unwrap() - exact).abs() < 1e-12);
    }

    #[test]
    fn bound_at_half_means() {
        let m = strong_model(4);
        let expected = 8.0 * 2f64.ln()
            + m.constant()
            + 0.5 * m.biases().iter().sum::<f64>()
            + 0.125 * m.coupling_matrix().iter().sum::<f64>();
        assert!((bound_value(&m, &[0.5; 8]).unwrap() - expected).abs() < 1e-12);
        assert!(bound_value(&m, &[0.5; 7]).is_err());
    }

    #[test]
    fn zero_coupling_solve_converges_in_one_sweep() {
        let m = random_model(5, &Topology::Custom(vec![]), 1.0, 2).unwrap();
        let r = solve(&m, Criterion::Bound, &SolverConfig::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.params.theta(), m.biases());
        let exact = exact::log_z(&m).unwrap();
        assert!((bound_value(&m, r.params.means()).unwrap() - exact).abs() < 1e-12);
    }

    #[test]
    fn two_node_symmetric_fixed_point() {
        // m* = logistic(m*) by scalar bisection.
        let (mut lo, mut hi) = (0.5f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if logistic(mid) > mid {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let star = 0.5 * (lo + hi);
        assert!((star - 0.659046).abs() < 1e-6);

        let mut m = BoltzmannModel::zeros(2);
        m.set_coupling(0, 1, 1.0).unwrap();
        let r = solve(&m, Criterion::Bound, &SolverConfig::default()).unwrap();
        assert!(r.converged);
        for &x in r.params.means() {
            assert!((x - star).abs() < 1e-9);
        }
    }

    #[test]
    fn converged_solution_is_stationary() {
        for seed in 0..30 {
            let m = strong_model(seed);
            let cfg = SolverConfig::asynchronous();
            let r = solve(&m, Criterion::Bound, &cfg).unwrap();
            assert!(r.converged);
            let res = stationarity_residual(&m, &r.params).unwrap();
            assert!(res <= 10.0 * cfg.tol * (1.0 + m.coupling_l1()), "seed {seed}: {res}");
            for g in bound_gradient(&m, &r.params).unwrap() {
                assert!(g.abs() < 1e-8);
            }
        }
    }

    #[test]
    fn async_undamped_bound_never_decreases() {
        for seed in 0..20 {
            let m = strong_model(100 + seed);
            let mut p = initial_params(&m, Init::Random { seed });
            let cfg = SolverConfig {
                max_iter: 1,
                ..SolverConfig::asynchronous()
            };
            let mut last = bound_value(&m, p.means()).unwrap();
            for _ in 0..50 {
                p = solve_bound(&m, &p, &cfg).unwrap().params;
                let v = bound_value(&m, p.means()).unwrap();
                assert!(v >= last - 1e-12, "seed {seed}: {v} < {last}");
                last = v;
            }
        }
    }

    #[test]
    fn damping_still_reaches_fixed_point() {
        let m = strong_model(7);
        let cfg = SolverConfig {
            damping: 0.5,
            ..SolverConfig::default()
        };
        let r = solve(&m, Criterion::Bound, &cfg).unwrap();
        assert!(r.converged);
        assert!(stationarity_residual(&m, &r.params).unwrap() < 1e-8);
    }

    #[test]
    fn restarts_never_lower_the_bound() {
        for seed in 0..10 {
            let m = random_model(8, &Topology::Full, 2.0, 500 + seed).unwrap();
            let one = solve(&m, Criterion::Bound, &SolverConfig::asynchronous()).unwrap();
            let many = solve(
                &m,
                Criterion::Bound,
                &SolverConfig {
                    restarts: 5,
                    ..SolverConfig::asynchronous()
                },
            )
            .unwrap();
            let b1 = bound_value(&m, one.params.means()).unwrap();
            let b5 = bound_value(&m, many.params.means()).unwrap();
            assert!(b5 >= b1 - 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let m = strong_model(1);
        for bad in [
            SolverConfig { damping: 0.0, ..Default::default() },
            SolverConfig { damping: 1.5, ..Default::default() },
            SolverConfig { tol: 0.0, ..Default::default() },
            SolverConfig { restarts: 0, ..Default::default() },
        ] {
            assert!(solve(&m, Criterion::Bound, &bad).is_err());
        }
    }

    #[test]
    fn non_convergence_is_reported_not_fatal() {
        let m = strong_model(3);
        let cfg = SolverConfig {
            max_iter: 2,
            tol: 1e-300,
            ..SolverConfig::default()
        };
        let r = solve(&m, Criterion::Bound, &cfg).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 2);
    }

    #[test]
    fn var_delta_h_fixed_point_identity_and_zero_case() {
        let m = strong_model(5);
        let r = solve(&m, Criterion::Bound, &SolverConfig::asynchronous()).unwrap();
        let pair_only: f64 = {
            let mm = r.params.means();
            let mut s = 0.0;
            for i in 0..8 {
                for j in 0..8 {
                    s += m.coupling(i, j).powi(2) * mm[i] * (1.0 - mm[i]) * mm[j] * (1.0 - mm[j]);
                }
            }
            0.5 * s
        };
        assert!((var_delta_h(&m, &r.params).unwrap() - pair_only).abs() < 1e-12);

        let z = random_model(4, &Topology::Custom(vec![]), 1.0, 8).unwrap();
        let at_bias = FactorisedParams::from_theta(z.biases().to_vec());
        assert_eq!(var_delta_h(&z, &at_bias).unwrap(), 0.0);
    }

    #[test]
    fn second_order_is_exact_without_couplings() {
        let m = random_model(5, &Topology::Custom(vec![]), 1.0, 13).unwrap();
        let r = solve(&m, Criterion::Bound, &SolverConfig::default()).unwrap();
        let est = second_order_bound_criterion(&m, &r.params).unwrap();
        assert_eq!(est.term2, 0.0);
        assert!((est.total - exact::log_z(&m).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn second_order_total_is_bound_plus_quarter_sum() {
        let m = strong_model(21);
        let r = solve(&m, Criterion::Bound, &SolverConfig::asynchronous()).unwrap();
        let mm = r.params.means();
        let mut quarter = 0.0;
        for i in 0..8 {
            for j in 0..8 {
                quarter += m.coupling(i, j).powi(2) * mm[i] * (1.0 - mm[i]) * mm[j] * (1.0 - mm[j]);
            }
        }
        let four_term = bound_value(&m, mm).unwrap() + 0.25 * quarter;
        let est = second_order_bound_criterion(&m, &r.params).unwrap();
        assert!((est.total - four_term).abs() < 1e-10);
        assert!(est.term2 >= 0.0);
        assert!(est.stationarity_residual.unwrap() < 1e-8);
    }

    #[test]
    fn tap_reduces_to_bound_without_couplings() {
        let m = random_model(5, &Topology::Custom(vec![]), 1.0, 14).unwrap();
        let a = solve(&m, Criterion::Bound, &SolverConfig::default()).unwrap();
        let b = solve(&m, Criterion::Tap, &SolverConfig::default()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(b.criterion, Criterion::Tap);
    }

    proptest! {
        #[test]
        fn params_round_trip(m in proptest::collection::vec(1e-6f64..(1.0 - 1e-6), 1..10)) {
            let p = FactorisedParams::from_means(m.clone()).unwrap();
            let back = FactorisedParams::from_theta(p.theta().to_vec());
            for (a, b) in back.means().iter().zip(&m) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn bound_is_below_exact(seed in any::<u64>(), sigma in 0.1f64..3.0, mseed in any::<u64>()) {
            let model = random_model(6, &Topology::Full, sigma, seed).unwrap();
            let p = initial_params(&model, Init::Random { seed: mseed });
            prop_assert!(bound_value(&model, p.means()).unwrap() <= exact::log_z(&model).unwrap() + 1e-9);
        }
    }
}
