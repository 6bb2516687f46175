//! Brute-force reference computations, written directly from the energy
//! function and kept independent of the library's enumeration code.

#![allow(dead_code)]

use bmcumulant::BoltzmannModel;

pub fn energy(model: &BoltzmannModel, s: &[f64]) -> f64 {
    let n = model.n();
    let mut h = model.constant();
    for i in 0..n {
        h += model.bias(i) * s[i];
        for j in 0..n {
            if i != j {
                h += 0.5 * model.coupling(i, j) * s[i] * s[j];
            }
        }
    }
    h
}

pub fn states(n: usize) -> impl Iterator<Item = Vec<f64>> {
    (0u64..1 << n).map(move |k| (0..n).map(|i| ((k >> i) & 1) as f64).collect())
}

pub struct Reference {
    pub log_z: f64,
    pub means: Vec<f64>,
    pub pairs: Vec<Vec<f64>>,
}

pub fn reference(model: &BoltzmannModel) -> Reference {
    let n = model.n();
    let hs: Vec<(Vec<f64>, f64)> = states(n).map(|s| {
        let h = energy(model, &s);
        (s, h)
    }).collect();
    let top = hs.iter().map(|(_, h)| *h).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = hs.iter().map(|(_, h)| (h - top).exp()).sum();
    let mut means = vec![0.0; n];
    let mut pairs = vec![vec![0.0; n]; n];
    for (s, h) in &hs {
        let p = (h - top).exp() / z;
        for i in 0..n {
            means[i] += p * s[i];
            for j in 0..n {
                pairs[i][j] += p * s[i] * s[j];
            }
        }
    }
    Reference { log_z: top + z.ln(), means, pairs }
}

/// `⟨ΔH⟩` and `var(ΔH)` under independent units with the given means, where
/// `ΔH = H1 - Σ θ_i s_i`.
pub fn factorised_delta_moments(model: &BoltzmannModel, theta: &[f64], means: &[f64]) -> (f64, f64) {
    let n = model.n();
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for s in states(n) {
        let mut q = 1.0;
        for i in 0..n {
            q *= if s[i] == 1.0 { means[i] } else { 1.0 - means[i] };
        }
        let d = energy(model, &s) - theta.iter().zip(&s).map(|(t, x)| t * x).sum::<f64>();
        m1 += q * d;
        m2 += q * d * d;
    }
    (m1, m2 - m1 * m1)
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
