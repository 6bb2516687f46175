//! Brute-force enumeration over all `2^n` states.
//!
//! States are visited in Gray-code order so each step updates the potential
//! in `O(n)`; the running potential is recomputed from scratch every
//! [`RESYNC_INTERVAL`] steps to bound floating-point drift. Every quantity is
//! accumulated sequentially in a fixed order, so results are deterministic.

use crate::error::{Error, Result};
use crate::math::LogSumExp;
use crate::model::BoltzmannModel;

pub const DEFAULT_ENUMERATION_CAP: usize = 24;
const RESYNC_INTERVAL: u64 = 1024;

#[derive(Clone, Debug, PartialEq)]
pub struct ExactSummary {
    pub log_z: f64,
    /// `⟨s_i⟩`.
    pub means: Vec<f64>,
    /// Row-major `⟨s_i s_j⟩`; the diagonal holds the means.
    pub pair_moments: Vec<f64>,
}

impl ExactSummary {
    pub fn n(&self) -> usize {
        self.means.len()
    }

    pub fn pair(&self, i: usize, j: usize) -> f64 {
        self.pair_moments[i * self.n() + j]
    }
}

pub fn check_cap(n: usize, cap: usize) -> Result<()> {
    if n > cap || n > 63 {
        Err(Error::TooLarge { n, cap })
    } else {
        Ok(())
    }
}

/// Walks every state of a model in Gray-code order, yielding `(bits, H(bits))`.
struct GrayWalker<'a> {
    model: &'a BoltzmannModel,
    field: Vec<f64>,
    bits: u64,
    h: f64,
    step: u64,
    end: u64,
}

impl<'a> GrayWalker<'a> {
    fn new(model: &'a BoltzmannModel) -> Self {
        GrayWalker {
            model,
            field: model.biases().to_vec(),
            bits: 0,
            h: model.constant(),
            step: 0,
            end: 1u64 << model.n(),
        }
    }

    fn resync(&mut self) {
        self.h = self.model.potential_bits(self.bits);
        let n = self.model.n();
        for k in 0..n {
            let row = self.model.coupling_row(k);
            let mut f = self.model.bias(k);
            let mut rest = self.bits;
            while rest != 0 {
                let j = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                f += row[j];
            }
            self.field[k] = f;
        }
    }
}

impl Iterator for GrayWalker<'_> {
    type Item = (u64, f64);

    fn next(&mut self) -> Option<(u64, f64)> {
        if self.step == self.end {
            return None;
        }
        if self.step > 0 {
            let k = self.step.trailing_zeros() as usize;
            let row = self.model.coupling_row(k);
            if self.bits >> k & 1 == 0 {
                self.h += self.field[k];
                self.bits |= 1 << k;
                for (f, w) in self.field.iter_mut().zip(row) {
                    *f += w;
                }
            } else {
                self.bits &= !(1 << k);
                for (f, w) in self.field.iter_mut().zip(row) {
                    *f -= w;
                }
                self.h -= self.field[k];
            }
            if self.step % RESYNC_INTERVAL == 0 {
                self.resync();
            }
        }
        self.step += 1;
        Some((self.bits, self.h))
    }
}

pub fn log_z(model: &BoltzmannModel) -> Result<f64> {
    log_z_with_cap(model, DEFAULT_ENUMERATION_CAP)
}

pub fn log_z_with_cap(model: &BoltzmannModel, cap: usize) -> Result<f64> {
    check_cap(model.n(), cap)?;
    let mut acc = LogSumExp::new();
    for (_, h) in GrayWalker::new(model) {
        acc.push(h);
    }
    Ok(acc.value())
}

pub fn enumerate(model: &BoltzmannModel) -> Result<ExactSummary> {
    enumerate_with_cap(model, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_with_cap(model: &BoltzmannModel, cap: usize) -> Result<ExactSummary> {
    let log_z = log_z_with_cap(model, cap)?;
    let n = model.n();
    let mut means = vec![0.0; n];
    let mut pairs = vec![0.0; n * n];
    let mut active = Vec::with_capacity(n);
    for (bits, h) in GrayWalker::new(model) {
        let p = (h - log_z).exp();
        active.clear();
        let mut rest = bits;
        while rest != 0 {
            active.push(rest.trailing_zeros() as usize);
            rest &= rest - 1;
        }
        for (a, &i) in active.iter().enumerate() {
            means[i] += p;
            for &j in &active[a + 1..] {
                pairs[i * n + j] += p;
            }
        }
    }
    for i in 0..n {
        pairs[i * n + i] = means[i];
        for j in (i + 1)..n {
            pairs[j * n + i] = pairs[i * n + j];
        }
    }
    Ok(ExactSummary {
        log_z,
        means,
        pair_moments: pairs,
    })
}

/// `P(s_i = 1 for all i in nodes)` by enumeration.
pub fn joint_on_probability(model: &BoltzmannModel, nodes: &[usize]) -> Result<f64> {
    let mut mask = 0u64;
    for &i in nodes {
        model.check_index(i)?;
        mask |= 1 << i;
    }
    let log_z = log_z(model)?;
    let mut acc = LogSumExp::new();
    for (bits, h) in GrayWalker::new(model) {
        if bits & mask == mask {
            acc.push(h);
        }
    }
    Ok((acc.value() - log_z).exp())
}

/// `log Σ_s e^{(1-α) H0(s) + α H1(s)}`.
pub fn interpolated_log_z(model0: &BoltzmannModel, model1: &BoltzmannModel, alpha: f64) -> Result<f64> {
    log_z(&BoltzmannModel::lerp(model0, model1, alpha)?)
}

/// The `order`-th cumulant (1..=4) of `ΔH = H1 - H0` under the interpolated
/// distribution `Q_α ∝ e^{(1-α) H0 + α H1}`.
pub fn interpolated_cumulant(
    model0: &BoltzmannModel,
    model1: &BoltzmannModel,
    alpha: f64,
    order: u32,
) -> Result<f64> {
    if !(1..=4).contains(&order) {
        return Err(Error::InvalidArgument(format!("cumulant order must be 1..=4, got {order}")));
    }
    let mixed = BoltzmannModel::lerp(model0, model1, alpha)?;
    let delta = model1.difference(model0)?;
    let log_z = log_z(&mixed)?;

    let walk = || GrayWalker::new(&mixed).zip(GrayWalker::new(&delta));
    let mut mean = 0.0;
    for ((_, h), (_, d)) in walk() {
        mean += (h - log_z).exp() * d;
    }
    if order == 1 {
        return Ok(mean);
    }
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for ((_, h), (_, d)) in walk() {
        let p = (h - log_z).exp();
        let x = d - mean;
        let x2 = x * x;
        m2 += p * x2;
        m3 += p * x2 * x;
        m4 += p * x2 * x2;
    }
    Ok(match order {
        2 => m2,
        3 => m3,
        _ => m4 - 3.0 * m2 * m2,
    })
}

/// `KL(Q0 ‖ Q1) = Σ_s Q0(s) log(Q0(s) / Q1(s))`.
pub fn kl_divergence(model_q0: &BoltzmannModel, model_q1: &BoltzmannModel) -> Result<f64> {
    Error::check_len(model_q0.n(), model_q1.n())?;
    let lz0 = log_z(model_q0)?;
    let lz1 = log_z(model_q1)?;
    let mut kl = 0.0;
    for ((_, h0), (_, h1)) in GrayWalker::new(model_q0).zip(GrayWalker::new(model_q1)) {
        let log_q0 = h0 - lz0;
        let log_q1 = h1 - lz1;
        kl += log_q0.exp() * (log_q0 - log_q1);
    }
    Ok(kl.max(0.0))
}
