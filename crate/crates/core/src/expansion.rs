//! Truncated cumulant expansion of `log Z1` around a tractable model.
//!
//! With `ΔH = H1 - H0`,
//!
//! ```text
//! log Z1 ≈ log Z0 + ⟨ΔH⟩_0 + ½ var_0(ΔH)
//! ```
//!
//! The first-order truncation is a lower bound on `log Z1`; the second-order
//! term is a nonnegative correction that no longer bounds. Any approximating
//! family only has to supply a [`TractableSurface`].

use crate::error::{Error, Result};
use crate::exact;
use crate::model::BoltzmannModel;

/// What the expansion needs to know about a `(Q0, Q1)` pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TractableSurface {
    pub log_z0: f64,
    pub mean_delta_h: f64,
    pub var_delta_h: f64,
}

impl TractableSurface {
    pub fn new(log_z0: f64, mean_delta_h: f64, var_delta_h: f64) -> Result<Self> {
        if !(log_z0.is_finite() && mean_delta_h.is_finite() && var_delta_h.is_finite()) {
            return Err(Error::NonFinite("tractable surface"));
        }
        // Rounding in covariance sums can leave a tiny negative variance.
        Ok(TractableSurface {
            log_z0,
            mean_delta_h,
            var_delta_h: var_delta_h.max(0.0),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    First = 1,
    Second = 2,
}

impl TryFrom<u32> for Order {
    type Error = Error;

    fn try_from(k: u32) -> Result<Self> {
        match k {
            1 => Ok(Order::First),
            2 => Ok(Order::Second),
            _ => Err(Error::InvalidArgument(format!("expansion order must be 1 or 2, got {k}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpansionEstimate {
    pub log_z0: f64,
    /// `⟨ΔH⟩_0`.
    pub term1: f64,
    /// `½ var_0(ΔH)`, reported at both orders.
    pub term2: f64,
    pub order: Order,
    pub total: f64,
    /// Fixed-point residual of the approximating model when the producer knows it.
    pub stationarity_residual: Option<f64>,
}

pub fn estimate(surface: &TractableSurface, order: Order) -> ExpansionEstimate {
    let term2 = 0.5 * surface.var_delta_h;
    let first = surface.log_z0 + surface.mean_delta_h;
    ExpansionEstimate {
        log_z0: surface.log_z0,
        term1: surface.mean_delta_h,
        term2,
        order,
        total: match order {
            Order::First => first,
            Order::Second => first + term2,
        },
        stationarity_residual: None,
    }
}

/// Exact remainder of a truncated expansion and the mean-value envelope it
/// should fall in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RemainderDiagnostic {
    /// `log Z1 - truncated total`, both computed exactly.
    pub remainder: f64,
    /// Smallest and largest `k_{order+1}(α) / (order+1)!` over the α-grid.
    pub envelope: (f64, f64),
    pub within_envelope: bool,
}

pub const REMAINDER_GRID_POINTS: usize = 101;

/// Enumeration-only check of the mean-value remainder.
///
/// The intermediate point of the remainder is existential, so the envelope
/// is sampled on a grid of [`REMAINDER_GRID_POINTS`] values of α in `[0, 1]`;
/// a remainder attained between grid points can fall just outside.
pub fn remainder_diagnostic(
    model0: &BoltzmannModel,
    model1: &BoltzmannModel,
    order: Order,
) -> Result<RemainderDiagnostic> {
    let k = order as u32;
    let mut truncated = exact::log_z(model0)?;
    let mut factorial = 1.0;
    for j in 1..=k {
        factorial *= f64::from(j);
        truncated += exact::interpolated_cumulant(model0, model1, 0.0, j)? / factorial;
    }
    let remainder = exact::log_z(model1)? - truncated;

    factorial *= f64::from(k + 1);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for g in 0..REMAINDER_GRID_POINTS {
        let alpha = g as f64 / (REMAINDER_GRID_POINTS - 1) as f64;
        let v = exact::interpolated_cumulant(model0, model1, alpha, k + 1)? / factorial;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let slack = 1e-12 * (1.0 + remainder.abs());
    Ok(RemainderDiagnostic {
        remainder,
        envelope: (lo, hi),
        within_envelope: remainder >= lo - slack && remainder <= hi + slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{random_model, Topology};

    #[test]
    fn identical_models_give_log_z0() {
        let s = TractableSurface::new(3.25, 0.0, 0.0).unwrap();
        assert_eq!(estimate(&s, Order::First).total, 3.25);
        assert_eq!(estimate(&s, Order::Second).total, 3.25);
    }

    #[test]
    fn second_order_adds_half_variance() {
        let s = TractableSurface::new(1.0, 0.5, 0.3).unwrap();
        let e1 = estimate(&s, Order::First);
        let e2 = estimate(&s, Order::Second);
        assert_eq!(e1.total, 1.5);
        assert!((e2.total - e1.total - 0.15).abs() < 1e-15);
        assert_eq!(e1.term2, e2.term2);
    }

    #[test]
    fn order_is_validated() {
        assert!(Order::try_from(0).is_err());
        assert!(Order::try_from(3).is_err());
        assert_eq!(Order::try_from(2).unwrap(), Order::Second);
    }

    #[test]
    fn surface_rejects_non_finite() {
        assert!(TractableSurface::new(f64::NAN, 0.0, 0.0).is_err());
        assert_eq!(TractableSurface::new(0.0, 0.0, -1e-18).unwrap().var_delta_h, 0.0);
    }

    #[test]
    fn remainder_vanishes_for_identical_models() {
        let m = random_model(4, &Topology::Full, 1.0, 3).unwrap();
        for order in [Order::First, Order::Second] {
            let d = remainder_diagnostic(&m, &m, order).unwrap();
            assert!(d.remainder.abs() < 1e-13);
            assert!(d.within_envelope);
        }
    }

    #[test]
    fn first_order_remainder_is_nonnegative() {
        for seed in 0..20 {
            let a = random_model(5, &Topology::Full, 1.0, seed).unwrap();
            let b = random_model(5, &Topology::Full, 1.0, seed + 1000).unwrap();
            let d = remainder_diagnostic(&a, &b, Order::First).unwrap();
            assert!(d.remainder >= -1e-12, "seed {seed}: {}", d.remainder);
            assert!(d.within_envelope, "seed {seed}: {d:?}");
        }
    }
}
