//! Boltzmann machines over binary units `s_i ∈ {0, 1}`.
//!
//! The potential is
//!
//! ```text
//! H(s) = constant + Σ_i bias_i s_i + ½ Σ_{i,j} coupling_ij s_i s_j
//! ```
//!
//! with a symmetric coupling matrix and zero diagonal, so every pair of
//! active units contributes its coupling exactly once. All clamping and
//! decimation formulas in this crate are written against that convention.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Random generator used for every seeded operation in the crate.
///
/// ChaCha20 seeded through `SeedableRng::seed_from_u64`, so a 64-bit seed
/// fully determines the stream on every platform.
pub type Rng = ChaCha20Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoltzmannModel {
    n: usize,
    bias: Vec<f64>,
    /// Row-major `n × n`, symmetric, zero diagonal.
    coupling: Vec<f64>,
    constant: f64,
}

impl BoltzmannModel {
    /// A model with all parameters zero.
    pub fn zeros(n: usize) -> Self {
        BoltzmannModel {
            n,
            bias: vec![0.0; n],
            coupling: vec![0.0; n * n],
            constant: 0.0,
        }
    }

    /// Builds a model from a bias vector and a row-major coupling matrix.
    pub fn from_parts(bias: Vec<f64>, coupling: Vec<f64>, constant: f64) -> Result<Self> {
        let n = bias.len();
        Error::check_len(n * n, coupling.len())?;
        for i in 0..n {
            if coupling[i * n + i] != 0.0 {
                return Err(Error::InvalidEdge(i, i));
            }
            for j in (i + 1)..n {
                if coupling[i * n + j] != coupling[j * n + i] {
                    return Err(Error::InvalidArgument(format!(
                        "coupling matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(BoltzmannModel {
            n,
            bias,
            coupling,
            constant,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn bias(&self, i: usize) -> f64 {
        self.bias[i]
    }

    pub fn biases(&self) -> &[f64] {
        &self.bias
    }

    #[inline]
    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        self.coupling[i * self.n + j]
    }

    /// Row `i` of the coupling matrix.
    #[inline]
    pub fn coupling_row(&self, i: usize) -> &[f64] {
        &self.coupling[i * self.n..(i + 1) * self.n]
    }

    /// The full row-major coupling matrix.
    pub fn coupling_matrix(&self) -> &[f64] {
        &self.coupling
    }

    #[inline]
    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn set_bias(&mut self, i: usize, value: f64) -> Result<()> {
        self.check_index(i)?;
        self.bias[i] = value;
        Ok(())
    }

    /// Sets `coupling_ij = coupling_ji = value`.
    pub fn set_coupling(&mut self, i: usize, j: usize, value: f64) -> Result<()> {
        self.check_index(i)?;
        self.check_index(j)?;
        if i == j {
            return Err(Error::InvalidEdge(i, j));
        }
        self.coupling[i * self.n + j] = value;
        self.coupling[j * self.n + i] = value;
        Ok(())
    }

    pub fn set_constant(&mut self, value: f64) {
        self.constant = value;
    }

    pub(crate) fn check_index(&self, i: usize) -> Result<()> {
        if i < self.n {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange { index: i, n: self.n })
        }
    }

    /// Nonzero couplings as `(i, j, w)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            ((i + 1)..self.n).filter_map(move |j| {
                let w = self.coupling(i, j);
                (w != 0.0).then_some((i, j, w))
            })
        })
    }

    pub fn potential(&self, s: &StateVector) -> Result<f64> {
        Error::check_len(self.n, s.len())?;
        let bits = s.as_slice();
        let mut h = self.constant;
        for i in 0..self.n {
            if bits[i] == 0 {
                continue;
            }
            h += self.bias[i];
            let row = self.coupling_row(i);
            for j in (i + 1)..self.n {
                if bits[j] == 1 {
                    h += row[j];
                }
            }
        }
        Ok(h)
    }

    /// Potential of the state whose bit `i` is unit `i`. Requires `n <= 64`.
    pub(crate) fn potential_bits(&self, bits: u64) -> f64 {
        let mut h = self.constant;
        let mut rest = bits;
        while rest != 0 {
            let i = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            h += self.bias[i];
            let row = self.coupling_row(i);
            let mut higher = rest;
            while higher != 0 {
                let j = higher.trailing_zeros() as usize;
                higher &= higher - 1;
                h += row[j];
            }
        }
        h
    }

    /// `(1 - alpha) * a + alpha * b`, parameter by parameter.
    pub fn lerp(a: &Self, b: &Self, alpha: f64) -> Result<Self> {
        Error::check_len(a.n, b.n)?;
        let mix = |x: f64, y: f64| (1.0 - alpha) * x + alpha * y;
        Ok(BoltzmannModel {
            n: a.n,
            bias: a.bias.iter().zip(&b.bias).map(|(&x, &y)| mix(x, y)).collect(),
            coupling: a
                .coupling
                .iter()
                .zip(&b.coupling)
                .map(|(&x, &y)| mix(x, y))
                .collect(),
            constant: mix(a.constant, b.constant),
        })
    }

    /// The model whose potential is `H_self - H_other`.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        Error::check_len(self.n, other.n)?;
        Ok(BoltzmannModel {
            n: self.n,
            bias: self.bias.iter().zip(&other.bias).map(|(x, y)| x - y).collect(),
            coupling: self
                .coupling
                .iter()
                .zip(&other.coupling)
                .map(|(x, y)| x - y)
                .collect(),
            constant: self.constant - other.constant,
        })
    }

    /// Relabels nodes so that new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        Error::check_len(self.n, perm.len())?;
        let mut seen = vec![false; self.n];
        for &p in perm {
            self.check_index(p)?;
            if std::mem::replace(&mut seen[p], true) {
                return Err(Error::DuplicateNode(p));
            }
        }
        let mut out = BoltzmannModel::zeros(self.n);
        out.constant = self.constant;
        for (k, &p) in perm.iter().enumerate() {
            out.bias[k] = self.bias[p];
            for (l, &q) in perm.iter().enumerate() {
                out.coupling[k * self.n + l] = self.coupling(p, q);
            }
        }
        Ok(out)
    }

    /// Sum of `|coupling_ij|` over ordered pairs.
    pub fn coupling_l1(&self) -> f64 {
        self.coupling.iter().map(|w| w.abs()).sum()
    }
}

/// A binary configuration of the units.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StateVector(Vec<u8>);

impl StateVector {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some((index, &value)) = bits.iter().enumerate().find(|(_, &b)| b > 1) {
            return Err(Error::NonBinaryState { index, value });
        }
        Ok(StateVector(bits))
    }

    #[cfg(test)]
    pub(crate) fn from_bits(bits: u64, n: usize) -> Self {
        StateVector((0..n).map(|i| ((bits >> i) & 1) as u8).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }
}

/// Training patterns over the visible units.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatternSet {
    visible_count: usize,
    patterns: Vec<Vec<u8>>,
}

impl PatternSet {
    pub fn new(visible_count: usize, patterns: Vec<Vec<u8>>) -> Result<Self> {
        for p in &patterns {
            Error::check_len(visible_count, p.len())?;
            if let Some((index, &value)) = p.iter().enumerate().find(|(_, &b)| b > 1) {
                return Err(Error::NonBinaryState { index, value });
            }
        }
        Ok(PatternSet {
            visible_count,
            patterns,
        })
    }

    /// `count` patterns whose entries are 1 independently with probability `p_on`.
    pub fn random(visible_count: usize, count: usize, p_on: f64, seed: u64) -> Self {
        use rand::Rng as _;
        let mut rng = rng_from_seed(seed);
        let patterns = (0..count)
            .map(|_| {
                (0..visible_count)
                    .map(|_| u8::from(rng.random::<f64>() < p_on))
                    .collect()
            })
            .collect();
        PatternSet {
            visible_count,
            patterns,
        }
    }

    pub fn visible_count(&self) -> usize {
        self.visible_count
    }

    pub fn patterns(&self) -> &[Vec<u8>] {
        &self.patterns
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Topology {
    Full,
    Chain,
    Custom(Vec<(usize, usize)>),
}

impl Topology {
    /// Unordered edge list with `i < j`, in drawing order.
    pub fn edges(&self, n: usize) -> Result<Vec<(usize, usize)>> {
        match self {
            Topology::Full => Ok((0..n)
                .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
                .collect()),
            Topology::Chain => Ok((1..n).map(|i| (i - 1, i)).collect()),
            Topology::Custom(list) => {
                let mut seen = std::collections::BTreeSet::new();
                let mut out = Vec::with_capacity(list.len());
                for &(a, b) in list {
                    if a == b || a >= n || b >= n {
                        return Err(Error::InvalidEdge(a, b));
                    }
                    let e = (a.min(b), a.max(b));
                    if !seen.insert(e) {
                        return Err(Error::InvalidEdge(a, b));
                    }
                    out.push(e);
                }
                Ok(out)
            }
        }
    }
}

/// Draws a model with i.i.d. `Normal(0, sigma²)` biases on every node and
/// couplings on the topology's edges; all other couplings are zero.
///
/// Biases are drawn first in node order, then couplings in edge order.
pub fn random_model(n: usize, topology: &Topology, sigma: f64, seed: u64) -> Result<BoltzmannModel> {
    if n == 0 {
        return Err(Error::InvalidArgument("a model needs at least one node".into()));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    let edges = topology.edges(n)?;
    let mut rng = rng_from_seed(seed);
    // `+ 0.0` turns the -0.0 produced by sigma = 0 into +0.0.
    let mut draw = || {
        let z: f64 = StandardNormal.sample(&mut rng);
        sigma * z + 0.0
    };
    let mut model = BoltzmannModel::zeros(n);
    for i in 0..n {
        model.bias[i] = draw();
    }
    for (i, j) in edges {
        let w = draw();
        model.coupling[i * n + j] = w;
        model.coupling[j * n + i] = w;
    }
    Ok(model)
}

/// A model on a subset of the original nodes.
///
/// Remaining nodes are renumbered in ascending original order;
/// `original[k]` is the original index of reduced node `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedModel {
    pub model: BoltzmannModel,
    pub original: Vec<usize>,
}

/// Removes the given nodes. Nodes fixed at 1 fold their bias, their mutual
/// couplings and their couplings to the survivors into the reduced model;
/// nodes fixed at 0 simply disappear.
fn fix_nodes(model: &BoltzmannModel, fixed: &[(usize, bool)]) -> Result<ReducedModel> {
    let n = model.n;
    let mut state = vec![None; n];
    for &(i, on) in fixed {
        model.check_index(i)?;
        if state[i].replace(on).is_some() {
            return Err(Error::DuplicateNode(i));
        }
    }
    let on: Vec<usize> = (0..n).filter(|&i| state[i] == Some(true)).collect();
    let original: Vec<usize> = (0..n).filter(|&i| state[i].is_none()).collect();

    let mut constant = model.constant;
    for (a, &i) in on.iter().enumerate() {
        constant += model.bias[i];
        for &j in &on[a + 1..] {
            constant += model.coupling(i, j);
        }
    }

    let m = original.len();
    let mut reduced = BoltzmannModel::zeros(m);
    reduced.constant = constant;
    for (k, &ok) in original.iter().enumerate() {
        let row = model.coupling_row(ok);
        let mut b = model.bias[ok];
        for &i in &on {
            b += row[i];
        }
        reduced.bias[k] = b;
        for (l, &ol) in original.iter().enumerate() {
            reduced.coupling[k * m + l] = row[ol];
        }
    }
    Ok(ReducedModel {
        model: reduced,
        original,
    })
}

/// Fixes every listed node at `s_i = 1` and returns the model on the rest.
///
/// The reduced normalizer equals the clamped partial sum of the original:
/// `log Z(reduced) = log Σ_{s: s_i = 1 ∀ i ∈ nodes} e^{H(s)}`. Each clamped
/// pair contributes its coupling once to the constant.
pub fn clamp_to_one(model: &BoltzmannModel, nodes: &[usize]) -> Result<ReducedModel> {
    let fixed: Vec<(usize, bool)> = nodes.iter().map(|&i| (i, true)).collect();
    fix_nodes(model, &fixed)
}

/// The model on the non-visible nodes whose distribution is the conditional
/// given `s_visible = values`.
pub fn condition_on_visibles(
    model: &BoltzmannModel,
    visible: &[usize],
    values: &[u8],
) -> Result<ReducedModel> {
    Error::check_len(visible.len(), values.len())?;
    let mut fixed = Vec::with_capacity(visible.len());
    for (idx, (&i, &v)) in visible.iter().zip(values).enumerate() {
        if v > 1 {
            return Err(Error::NonBinaryState { index: idx, value: v });
        }
        fixed.push((i, v == 1));
    }
    fix_nodes(model, &fixed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact;

    fn model_from(bias: &[f64], couplings: &[(usize, usize, f64)]) -> BoltzmannModel {
        let mut m = BoltzmannModel::zeros(bias.len());
        for (i, &b) in bias.iter().enumerate() {
            m.set_bias(i, b).unwrap();
        }
        for &(i, j, w) in couplings {
            m.set_coupling(i, j, w).unwrap();
        }
        m
    }

    #[test]
    fn zero_model_has_zero_potential() {
        let m = BoltzmannModel::zeros(5);
        let s = StateVector::new(vec![1, 0, 1, 1, 0]).unwrap();
        assert_eq!(m.potential(&s).unwrap(), 0.0);
    }

    #[test]
    fn pair_term_counted_once() {
        let m = model_from(&[1.0, 2.0], &[(0, 1, 3.0)]);
        let s = StateVector::new(vec![1, 1]).unwrap();
        assert_eq!(m.potential(&s).unwrap(), 6.0);
    }

    #[test]
    fn potential_rejects_bad_states() {
        let m = BoltzmannModel::zeros(3);
        assert!(matches!(
            m.potential(&StateVector::new(vec![1, 0]).unwrap()),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(StateVector::new(vec![0, 2]).is_err());
    }

    #[test]
    fn potential_matches_literal_double_sum() {
        let m = random_model(8, &Topology::Full, 1.0, 7).unwrap();
        for bits in [0u64, 0b1011_0110, 0xff, 0b0100_0001] {
            let s = StateVector::from_bits(bits, 8);
            let x = s.as_slice();
            // Independent ordering: full ½ Σ_{i,j} over all ordered pairs, columns outer.
            let mut pair = 0.0;
            for j in 0..8 {
                for i in 0..8 {
                    pair += m.coupling(i, j) * f64::from(x[i]) * f64::from(x[j]);
                }
            }
            let lin: f64 = (0..8).rev().map(|i| m.bias(i) * f64::from(x[i])).sum();
            let literal = m.constant() + lin + 0.5 * pair;
            assert!((m.potential(&s).unwrap() - literal).abs() < 1e-12);
            assert!((m.potential_bits(bits) - literal).abs() < 1e-12);
        }
    }

    #[test]
    fn sigma_zero_gives_zero_parameters() {
        let m = random_model(6, &Topology::Full, 0.0, 99).unwrap();
        assert!(m.biases().iter().all(|&b| b == 0.0 && b.is_sign_positive()));
        assert!(m.coupling_matrix().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn random_model_is_deterministic_and_respects_topology() {
        let a = random_model(8, &Topology::Full, 1.0, 42).unwrap();
        let b = random_model(8, &Topology::Full, 1.0, 42).unwrap();
        assert_eq!(a, b);
        let c = random_model(8, &Topology::Chain, 1.0, 42).unwrap();
        assert_eq!(c.edges().count(), 7);
        assert!(c.edges().all(|(i, j, _)| j == i + 1));
    }

    #[test]
    fn custom_topology_rejects_bad_edges() {
        for bad in [vec![(1, 1)], vec![(0, 9)], vec![(0, 1), (1, 0)]] {
            assert!(matches!(
                random_model(4, &Topology::Custom(bad), 1.0, 0),
                Err(Error::InvalidEdge(..))
            ));
        }
        let ok = random_model(4, &Topology::Custom(vec![(3, 0), (1, 2)]), 1.0, 0).unwrap();
        assert_eq!(ok.edges().count(), 2);
        assert!(ok.coupling(0, 3) != 0.0);
    }

    #[test]
    fn clamp_single_node_without_couplings() {
        let m = model_from(&[0.5, -1.0, 2.0], &[]);
        let r = clamp_to_one(&m, &[1]).unwrap();
        assert_eq!(r.model.constant(), -1.0);
        assert_eq!(r.model.biases(), &[0.5, 2.0]);
        assert_eq!(r.original, vec![0, 2]);
    }

    #[test]
    fn clamp_pair_adds_coupling_once() {
        let m = model_from(&[0.3, -0.7, 1.1], &[(0, 1, 2.0), (1, 2, -0.4), (0, 2, 0.9)]);
        let r = clamp_to_one(&m, &[0, 1]).unwrap();
        assert!((r.model.constant() - (0.3 - 0.7 + 2.0)).abs() < 1e-15);
        assert!((r.model.bias(0) - (1.1 + 0.9 - 0.4)).abs() < 1e-15);

        // Enumeration of the clamped partial sum fixes the convention.
        let states = (0..8u64).filter(|b| b & 0b011 == 0b011);
        let partial = crate::math::log_sum_exp(states.map(|b| m.potential_bits(b)));
        assert!((exact::log_z(&r.model).unwrap() - partial).abs() < 1e-12);
    }

    #[test]
    fn clamp_three_nodes_matches_partial_enumeration() {
        let m = random_model(3, &Topology::Full, 1.0, 3).unwrap();
        let r = clamp_to_one(&m, &[0]).unwrap();
        let partial = crate::math::log_sum_exp((0..8u64).filter(|b| b & 1 == 1).map(|b| m.potential_bits(b)));
        assert!((exact::log_z(&r.model).unwrap() - partial).abs() < 1e-12);
    }

    #[test]
    fn clamp_everything_leaves_constant() {
        let m = random_model(3, &Topology::Full, 1.0, 5).unwrap();
        let r = clamp_to_one(&m, &[2, 0, 1]).unwrap();
        assert_eq!(r.model.n(), 0);
        assert!((exact::log_z(&r.model).unwrap() - m.potential_bits(0b111)).abs() < 1e-12);
    }

    #[test]
    fn clamp_rejects_duplicates_and_out_of_range() {
        let m = BoltzmannModel::zeros(3);
        assert!(matches!(clamp_to_one(&m, &[1, 1]), Err(Error::DuplicateNode(1))));
        assert!(matches!(clamp_to_one(&m, &[3]), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn conditioning_on_zeros_keeps_hidden_parameters() {
        let m = random_model(5, &Topology::Full, 1.0, 11).unwrap();
        let r = condition_on_visibles(&m, &[0, 1], &[0, 0]).unwrap();
        assert_eq!(r.original, vec![2, 3, 4]);
        for (k, &o) in r.original.iter().enumerate() {
            assert_eq!(r.model.bias(k), m.bias(o));
            for (l, &p) in r.original.iter().enumerate() {
                assert_eq!(r.model.coupling(k, l), m.coupling(o, p));
            }
        }
        assert_eq!(r.model.constant(), 0.0);
    }

    #[test]
    fn conditioning_on_one_visible_shifts_hidden_biases() {
        let m = random_model(4, &Topology::Full, 1.0, 12).unwrap();
        let r = condition_on_visibles(&m, &[0], &[1]).unwrap();
        for (k, &o) in r.original.iter().enumerate() {
            assert!((r.model.bias(k) - (m.bias(o) + m.coupling(0, o))).abs() < 1e-15);
        }
    }

    #[test]
    fn conditioning_rejects_overlap() {
        let m = BoltzmannModel::zeros(4);
        assert!(condition_on_visibles(&m, &[0, 0], &[1, 0]).is_err());
        assert!(condition_on_visibles(&m, &[0], &[1, 0]).is_err());
        assert!(condition_on_visibles(&m, &[7], &[1]).is_err());
    }

    #[test]
    fn lerp_and_difference_are_parameterwise() {
        let a = random_model(4, &Topology::Full, 1.0, 1).unwrap();
        let b = random_model(4, &Topology::Full, 1.0, 2).unwrap();
        assert_eq!(BoltzmannModel::lerp(&a, &b, 0.0).unwrap(), a);
        let d = b.difference(&a).unwrap();
        let s = StateVector::new(vec![1, 1, 0, 1]).unwrap();
        let expected = b.potential(&s).unwrap() - a.potential(&s).unwrap();
        assert!((d.potential(&s).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn random_patterns_are_deterministic() {
        let p = PatternSet::random(4, 10, 0.4, 3);
        assert_eq!(p, PatternSet::random(4, 10, 0.4, 3));
        assert_eq!(p.len(), 10);
        assert!(PatternSet::new(3, vec![vec![1, 0]]).is_err());
    }
}
