//! Decimatable Boltzmann machines.
//!
//! A unit with at most two neighbours can be summed out exactly: with
//! `t = bias_v`, neighbour couplings `a`, `b` and `sp(x) = ln(1 + e^x)`,
//!
//! ```text
//! bias_2'   = bias_2   + sp(t + a) - sp(t)
//! bias_3'   = bias_3   + sp(t + b) - sp(t)
//! w_23'     = w_23     + sp(t) + sp(t + a + b) - sp(t + a) - sp(t + b)
//! constant' = constant + sp(t)
//! ```
//!
//! leaves `Z` unchanged. Repeating until no unit is left yields `log Z` as
//! the accumulated constant in time linear in `n`. Degree-1 and degree-0
//! eliminations are the same rule with absent couplings set to zero.
//!
//! Clamping units to one never raises a degree, so every marginal
//! `Q0(s_I = 1)` of a decimatable model is again a ratio of decimatable
//! normalizers. That is what makes the Fisher matrix of the generalized
//! mean-field iteration tractable.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::expansion::TractableSurface;
use crate::math::softplus;
use crate::meanfield::{Init, Schedule, SolverConfig};
use crate::model::{clamp_to_one, rng_from_seed, BoltzmannModel};

/// An undirected edge set over `n` nodes, edges stored as sorted `(i, j)`, `i < j`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Structure {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl Structure {
    /// Duplicate edges are merged; self-loops and out-of-range indices are rejected.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut list = Vec::new();
        for (a, b) in edges {
            if a == b || a >= n || b >= n {
                return Err(Error::InvalidEdge(a, b));
            }
            list.push((a.min(b), a.max(b)));
        }
        list.sort_unstable();
        list.dedup();
        Ok(Structure { n, edges: list })
    }

    /// No edges: the factorised family.
    pub fn empty(n: usize) -> Self {
        Structure { n, edges: Vec::new() }
    }

    pub fn chain(n: usize) -> Self {
        Structure {
            n,
            edges: (1..n).map(|i| (i - 1, i)).collect(),
        }
    }

    pub fn full(n: usize) -> Self {
        Structure {
            n,
            edges: (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect(),
        }
    }

    /// Edges carrying a nonzero coupling.
    pub fn of_model(model: &BoltzmannModel) -> Self {
        Structure {
            n: model.n(),
            edges: model.edges().map(|(i, j, _)| (i, j)).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.binary_search(&(i.min(j), i.max(j))).is_ok()
    }

    /// Whether every nonzero coupling of `model` lies on an edge.
    pub fn supports(&self, model: &BoltzmannModel) -> bool {
        model.n() == self.n && model.edges().all(|(i, j, _)| self.contains(i, j))
    }

    /// The structure induced on the kept nodes, renumbered as in
    /// [`crate::model::ReducedModel`]: reduced node `k` is original node `kept[k]`.
    pub fn restrict(&self, kept: &[usize]) -> Structure {
        let mut position = vec![usize::MAX; self.n];
        for (k, &o) in kept.iter().enumerate() {
            position[o] = k;
        }
        let edges = self
            .edges
            .iter()
            .filter_map(|&(i, j)| {
                let (a, b) = (position[i], position[j]);
                (a != usize::MAX && b != usize::MAX).then_some((a.min(b), a.max(b)))
            })
            .collect::<Vec<_>>();
        let mut s = Structure { n: kept.len(), edges };
        s.edges.sort_unstable();
        s
    }

    fn neighbour_sets(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }
}

/// Greedy minimum-degree order over the nodes outside `skip`, with fill-in
/// between the two neighbours of each degree-2 elimination. Ties go to the
/// lowest index.
fn order_excluding(structure: &Structure, skip: u64) -> Result<Vec<usize>> {
    let n = structure.n;
    let mut adj: Vec<Vec<usize>> = structure
        .neighbour_sets()
        .into_iter()
        .enumerate()
        .map(|(i, nb)| {
            if skip >> i & 1 == 1 {
                Vec::new()
            } else {
                nb.into_iter().filter(|&j| skip >> j & 1 == 0).collect()
            }
        })
        .collect();
    let mut alive: Vec<bool> = (0..n).map(|i| skip >> i & 1 == 0).collect();
    let mut remaining = alive.iter().filter(|&&a| a).count();
    let mut order = Vec::with_capacity(remaining);
    while remaining > 0 {
        let v = (0..n)
            .filter(|&i| alive[i])
            .min_by_key(|&i| (adj[i].len(), i))
            .expect("a live node remains");
        if adj[v].len() > 2 {
            return Err(Error::NotDecimatable { remaining });
        }
        let nbrs = std::mem::take(&mut adj[v]);
        for &u in &nbrs {
            adj[u].retain(|&x| x != v);
        }
        if let [a, b] = nbrs[..] {
            if !adj[a].contains(&b) {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        alive[v] = false;
        remaining -= 1;
        order.push(v);
    }
    Ok(order)
}

/// An order in which every node has degree at most 2 when it is eliminated,
/// or [`Error::NotDecimatable`].
pub fn elimination_order(structure: &Structure) -> Result<Vec<usize>> {
    if structure.n > 64 {
        return Err(Error::InvalidArgument("structures are limited to 64 nodes".into()));
    }
    order_excluding(structure, 0)
}

/// Parameter updates applied when one node is summed out.
#[derive(Clone, Debug, PartialEq)]
pub struct DecimationStep {
    pub node: usize,
    pub neighbours: Vec<usize>,
    /// Added to each neighbour's bias, in `neighbours` order.
    pub bias_deltas: Vec<f64>,
    /// Added to the coupling between the two neighbours (degree-2 only).
    pub coupling_delta: Option<f64>,
    pub constant_delta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecimationTrace {
    pub order: Vec<usize>,
    pub steps: Vec<DecimationStep>,
    pub final_log_z: f64,
}

impl DecimationTrace {
    /// Re-applies the recorded updates to `model` and returns the resulting
    /// constant, which is `final_log_z` exactly when the trace belongs to `model`.
    pub fn replay(&self, model: &BoltzmannModel) -> Result<f64> {
        let mut bias = model.biases().to_vec();
        let mut pair: HashMap<(usize, usize), f64> =
            model.edges().map(|(i, j, w)| ((i, j), w)).collect();
        let mut constant = model.constant();
        for (k, step) in self.steps.iter().enumerate() {
            if step.neighbours.len() != step.bias_deltas.len() {
                return Err(Error::InvalidOrder { step: k, reason: "malformed step".into() });
            }
            for (&u, &d) in step.neighbours.iter().zip(&step.bias_deltas) {
                *bias.get_mut(u).ok_or(Error::IndexOutOfRange { index: u, n: model.n() })? += d;
            }
            if let (Some(d), [a, b]) = (step.coupling_delta, &step.neighbours[..]) {
                *pair.entry(((*a).min(*b), (*a).max(*b))).or_insert(0.0) += d;
            }
            constant += step.constant_delta;
        }
        Ok(constant)
    }
}

/// Working copy of a sparse model during elimination.
struct Work {
    bias: Vec<f64>,
    constant: f64,
    adj: Vec<Vec<(usize, f64)>>,
}

impl Work {
    fn from_model(model: &BoltzmannModel) -> Self {
        let n = model.n();
        let mut adj = vec![Vec::new(); n];
        for (i, j, w) in model.edges() {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        Work {
            bias: model.biases().to_vec(),
            constant: model.constant(),
            adj,
        }
    }

    fn add_coupling(&mut self, a: usize, b: usize, delta: f64) {
        match self.adj[a].iter_mut().find(|(u, _)| *u == b) {
            Some(e) => {
                e.1 += delta;
                let w = e.1;
                if let Some(f) = self.adj[b].iter_mut().find(|(u, _)| *u == a) {
                    f.1 = w;
                }
            }
            None => {
                self.adj[a].push((b, delta));
                self.adj[b].push((a, delta));
            }
        }
    }

    /// Sums out `v`; `None` if its current degree exceeds 2.
    fn eliminate(&mut self, v: usize) -> Option<DecimationStep> {
        if self.adj[v].len() > 2 {
            return None;
        }
        let nbrs = std::mem::take(&mut self.adj[v]);
        for &(u, _) in &nbrs {
            self.adj[u].retain(|&(x, _)| x != v);
        }
        let t = self.bias[v];
        let base = softplus(t);
        self.constant += base;
        let mut step = DecimationStep {
            node: v,
            neighbours: nbrs.iter().map(|&(u, _)| u).collect(),
            bias_deltas: Vec::with_capacity(2),
            coupling_delta: None,
            constant_delta: base,
        };
        for &(u, w) in &nbrs {
            let d = softplus(t + w) - base;
            self.bias[u] += d;
            step.bias_deltas.push(d);
        }
        if let [(a, wa), (b, wb)] = nbrs[..] {
            let d = base + softplus(t + wa + wb) - softplus(t + wa) - softplus(t + wb);
            self.add_coupling(a, b, d);
            step.coupling_delta = Some(d);
        }
        Some(step)
    }
}

fn check_order(n: usize, order: &[usize]) -> Result<()> {
    if order.len() != n {
        return Err(Error::InvalidOrder {
            step: order.len().min(n),
            reason: format!("order lists {} nodes, model has {n}", order.len()),
        });
    }
    let mut seen = vec![false; n];
    for (k, &v) in order.iter().enumerate() {
        if v >= n || std::mem::replace(&mut seen[v], true) {
            return Err(Error::InvalidOrder {
                step: k,
                reason: format!("node {v} is out of range or repeated"),
            });
        }
    }
    Ok(())
}

/// Exact `log Z` by eliminating the nodes in `order`, with the full trace.
pub fn decimate_log_z(model: &BoltzmannModel, order: &[usize]) -> Result<DecimationTrace> {
    check_order(model.n(), order)?;
    let mut work = Work::from_model(model);
    let mut steps = Vec::with_capacity(order.len());
    for (k, &v) in order.iter().enumerate() {
        let step = work.eliminate(v).ok_or_else(|| Error::InvalidOrder {
            step: k,
            reason: format!("node {v} has degree {} > 2", work.adj[v].len()),
        })?;
        steps.push(step);
    }
    Ok(DecimationTrace {
        order: order.to_vec(),
        steps,
        final_log_z: work.constant,
    })
}

/// `log Z` of a decimatable model, ordering by its own nonzero couplings.
pub fn decimatable_log_z(model: &BoltzmannModel) -> Result<f64> {
    let order = elimination_order(&Structure::of_model(model))?;
    Ok(decimate_log_z(model, &order)?.final_log_z)
}

/// `Q(s_i = 1 for all i in nodes)` for a decimatable model whose `log Z` is known.
pub fn joint_on_probability(model: &BoltzmannModel, nodes: &[usize], log_z: f64) -> Result<f64> {
    let reduced = clamp_to_one(model, nodes)?;
    let clamped = decimatable_log_z(&reduced.model)?;
    Ok((clamped - log_z).exp())
}

/// An extended index: a bias `s_i` or a pair product `s_i s_j` (`i < j`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExtIndex {
    Node(usize),
    Pair(usize, usize),
}

impl ExtIndex {
    fn mask(self) -> u64 {
        match self {
            ExtIndex::Node(i) => 1 << i,
            ExtIndex::Pair(i, j) => (1 << i) | (1 << j),
        }
    }

    /// The target model's parameter on this index.
    pub fn weight(self, model: &BoltzmannModel) -> f64 {
        match self {
            ExtIndex::Node(i) => model.bias(i),
            ExtIndex::Pair(i, j) => model.coupling(i, j),
        }
    }
}

/// All extended indices: nodes in order, then pairs in lexicographic order.
pub fn extended_indices(n: usize) -> Vec<ExtIndex> {
    let mut v: Vec<ExtIndex> = (0..n).map(ExtIndex::Node).collect();
    v.extend((0..n).flat_map(|i| ((i + 1)..n).map(move |j| ExtIndex::Pair(i, j))));
    v
}

/// The parameters of a tractable model on `structure`: every bias, then
/// the structure's edges.
pub fn structure_indices(structure: &Structure) -> Vec<ExtIndex> {
    let mut v: Vec<ExtIndex> = (0..structure.n).map(ExtIndex::Node).collect();
    v.extend(structure.edges.iter().map(|&(i, j)| ExtIndex::Pair(i, j)));
    v
}

/// The model `Σ_{I ∈ Ψ} θ_I s_I`.
pub fn tractable_model(structure: &Structure, theta: &[f64]) -> Result<BoltzmannModel> {
    let idx = structure_indices(structure);
    Error::check_len(idx.len(), theta.len())?;
    let mut m = BoltzmannModel::zeros(structure.n);
    for (&ix, &t) in idx.iter().zip(theta) {
        match ix {
            ExtIndex::Node(i) => m.set_bias(i, t)?,
            ExtIndex::Pair(i, j) => m.set_coupling(i, j, t)?,
        }
    }
    Ok(m)
}

/// Elimination orders of a fixed structure with various node sets clamped.
struct OrderCache {
    structure: Structure,
    orders: HashMap<u64, Vec<usize>>,
}

impl OrderCache {
    fn new(structure: Structure) -> Result<Self> {
        if structure.n > 64 {
            return Err(Error::InvalidArgument("structures are limited to 64 nodes".into()));
        }
        let base = order_excluding(&structure, 0)?;
        let mut orders = HashMap::new();
        orders.insert(0, base);
        Ok(OrderCache { structure, orders })
    }

    fn order(&mut self, mask: u64) -> &[usize] {
        let structure = &self.structure;
        self.orders
            .entry(mask)
            .or_insert_with(|| order_excluding(structure, mask).expect("clamping preserves decimatability"))
    }
}

/// Memoized clamped normalizers of one tractable model.
///
/// Covariances are formed from conditional probabilities, switching to
/// complementary events (units clamped to zero) when the event is likely,
/// so that saturated units keep their relative precision.
struct Moments<'a> {
    cache: &'a mut OrderCache,
    bias: Vec<f64>,
    adj: Vec<Vec<(usize, f64)>>,
    log_z: f64,
    clamped: HashMap<(u64, u64), f64>,
}

impl<'a> Moments<'a> {
    fn new(cache: &'a mut OrderCache, theta: &[f64]) -> Self {
        let n = cache.structure.n;
        let bias = theta[..n].to_vec();
        let mut adj = vec![Vec::new(); n];
        for (&(i, j), &t) in cache.structure.edges.iter().zip(&theta[n..]) {
            adj[i].push((j, t));
            adj[j].push((i, t));
        }
        let mut me = Moments {
            cache,
            bias,
            adj,
            log_z: 0.0,
            clamped: HashMap::new(),
        };
        me.log_z = me.clamped_log_z(0, 0);
        me
    }

    /// `log` of the partial sum with units in `on` fixed to 1 and units in `off` to 0.
    fn clamped_log_z(&mut self, on: u64, off: u64) -> f64 {
        if let Some(&v) = self.clamped.get(&(on, off)) {
            return v;
        }
        let n = self.bias.len();
        let fixed = on | off;
        let mut work = Work {
            bias: self.bias.clone(),
            constant: 0.0,
            adj: vec![Vec::new(); n],
        };
        for i in 0..n {
            if on >> i & 1 == 1 {
                work.constant += self.bias[i];
                for &(j, t) in &self.adj[i] {
                    if on >> j & 1 == 1 {
                        if j > i {
                            work.constant += t;
                        }
                    } else {
                        work.bias[j] += t;
                    }
                }
            } else if off >> i & 1 == 0 {
                work.adj[i] = self.adj[i].iter().copied().filter(|&(j, _)| fixed >> j & 1 == 0).collect();
            }
        }
        for &v in self.cache.order(fixed) {
            work.eliminate(v).expect("cached order is valid");
        }
        self.clamped.insert((on, off), work.constant);
        work.constant
    }

    /// `Q0(all units in mask on)`.
    fn prob(&mut self, mask: u64) -> f64 {
        (self.clamped_log_z(mask, 0) - self.log_z).exp()
    }

    /// `Q0(all of event on | all of given on)`.
    fn cond(&mut self, event: u64, given: u64) -> f64 {
        (self.clamped_log_z(event | given, 0) - self.clamped_log_z(given, 0)).exp()
    }

    /// `Q0(not all of event on | all of given on)`, as a sum of disjoint
    /// events each with one unit clamped off; `event` and `given` are disjoint.
    fn cond_not(&mut self, event: u64, given: u64) -> f64 {
        let base = self.clamped_log_z(given, 0);
        let mut total = 0.0;
        let mut on = given;
        let mut rest = event;
        while rest != 0 {
            let bit = rest & rest.wrapping_neg();
            total += (self.clamped_log_z(on, bit) - base).exp();
            on |= bit;
            rest &= !bit;
        }
        total
    }

    /// `Cov(s_A, s_B) = Q0(B) (Q0(A | B) - Q0(A))`, taking as `A` the event
    /// closer to certain so the rounding error is small against both variances.
    fn cov(&mut self, a: ExtIndex, b: ExtIndex) -> f64 {
        let (mut a, mut b) = (a.mask(), b.mask());
        let spread = |me: &mut Self, m: u64| me.prob(m).min(me.cond_not(m, 0));
        let nested = b & !a == 0;
        if nested || (a & !b != 0 && spread(self, a) > spread(self, b)) {
            std::mem::swap(&mut a, &mut b);
        }
        let pb = self.prob(b);
        let extra = a & !b;
        if extra == 0 {
            return pb * self.cond_not(a, 0);
        }
        let pa = self.prob(a);
        if pa <= 0.5 {
            pb * (self.cond(extra, b) - pa)
        } else {
            pb * (self.cond_not(a, 0) - self.cond_not(extra, b))
        }
    }
}

/// State of the generalized mean-field iteration on a decimatable structure.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizedMFState {
    pub structure: Structure,
    /// `Ψ`: every bias, then the structure's edges.
    pub indices: Vec<ExtIndex>,
    pub theta: Vec<f64>,
    /// Row-major `|Ψ| × |Ψ|` covariance of the `s_I` under `Q0(θ)`, without ridge.
    pub fisher: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest parameter change in the final iteration.
    pub final_residual: f64,
}

impl GeneralizedMFState {
    pub fn model(&self) -> BoltzmannModel {
        tractable_model(&self.structure, &self.theta).expect("theta matches structure")
    }

    pub fn fisher_entry(&self, a: usize, b: usize) -> f64 {
        self.fisher[a * self.indices.len() + b]
    }
}

struct Problem<'t> {
    target: &'t BoltzmannModel,
    psi: Vec<ExtIndex>,
    all: Vec<ExtIndex>,
    weights: Vec<f64>,
}

impl<'t> Problem<'t> {
    fn new(target: &'t BoltzmannModel, structure: &Structure) -> Result<Self> {
        Error::check_len(structure.n, target.n())?;
        let all = extended_indices(target.n());
        let weights = all.iter().map(|ix| ix.weight(target)).collect();
        Ok(Problem {
            target,
            psi: structure_indices(structure),
            all,
            weights,
        })
    }

    fn initial_theta(&self, init: Init) -> Vec<f64> {
        let exact: Vec<f64> = self.psi.iter().map(|ix| ix.weight(self.target)).collect();
        match init {
            Init::Bias => exact,
            Init::Random { seed } => {
                let mut rng = rng_from_seed(seed);
                exact
                    .into_iter()
                    .map(|t| {
                        let z: f64 = rng.sample(StandardNormal);
                        t + z
                    })
                    .collect()
            }
        }
    }

    /// `Σ_K Cov(s_I, s_K) w_K` for `I = psi[a]`.
    fn rhs(&self, mom: &mut Moments, a: usize) -> f64 {
        let ia = self.psi[a];
        self.all
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w != 0.0)
            .map(|(&k, &w)| mom.cov(ia, k) * w)
            .sum()
    }

    fn fisher(&self, mom: &mut Moments) -> Vec<f64> {
        let p = self.psi.len();
        let mut f = vec![0.0; p * p];
        for a in 0..p {
            for b in a..p {
                let c = mom.cov(self.psi[a], self.psi[b]);
                f[a * p + b] = c;
                f[b * p + a] = c;
            }
        }
        f
    }

    /// One synchronous update `θ ← (F_ΨΨ + ridge)^{-1} F_{Ψ,all} w`.
    fn sync_target(&self, cache: &mut OrderCache, theta: &[f64], ridge: f64) -> Option<Vec<f64>> {
        let mut mom = Moments::new(cache, theta);
        let p = self.psi.len();
        let rhs: Vec<f64> = (0..p).map(|a| self.rhs(&mut mom, a)).collect();
        let mut f = self.fisher(&mut mom);
        for a in 0..p {
            f[a * p + a] += ridge;
        }
        solve_spd(p, f, rhs)
    }
}

fn solve_spd(p: usize, matrix: Vec<f64>, rhs: Vec<f64>) -> Option<Vec<f64>> {
    let a = DMatrix::from_row_slice(p, p, &matrix);
    let b = DVector::from_vec(rhs);
    let x = match a.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => a.lu().solve(&b)?,
    };
    x.iter().all(|v| v.is_finite()).then(|| x.iter().copied().collect())
}

/// One synchronous generalized mean-field update from `theta`.
///
/// With an empty structure the Fisher matrix is diagonal and this is the
/// factorised update `θ_i ← bias_i + Σ_j coupling_ij m_j`.
pub fn generalized_mf_step(
    target: &BoltzmannModel,
    structure: &Structure,
    theta: &[f64],
    ridge: f64,
) -> Result<Vec<f64>> {
    let problem = Problem::new(target, structure)?;
    Error::check_len(problem.psi.len(), theta.len())?;
    let mut cache = OrderCache::new(structure.clone())?;
    problem
        .sync_target(&mut cache, theta, ridge)
        .ok_or_else(|| Error::InvalidArgument("Fisher system is singular".into()))
}

/// Covariances `⟨ΔH s_J⟩_0 - ⟨ΔH⟩_0 ⟨s_J⟩_0` for every `J ∈ Ψ`; all vanish
/// at a fixed point.
pub fn stationarity_residuals(target: &BoltzmannModel, structure: &Structure, theta: &[f64]) -> Result<Vec<f64>> {
    let problem = Problem::new(target, structure)?;
    Error::check_len(problem.psi.len(), theta.len())?;
    let mut cache = OrderCache::new(structure.clone())?;
    let mut mom = Moments::new(&mut cache, theta);
    let p = problem.psi.len();
    Ok((0..p)
        .map(|a| {
            let own: f64 = (0..p).map(|b| mom.cov(problem.psi[a], problem.psi[b]) * theta[b]).sum();
            problem.rhs(&mut mom, a) - own
        })
        .collect())
}

/// Maximizes the first-order bound over tractable models on `structure`
/// by the fixed point `θ = F_ΨΨ^{-1} F_{Ψ,all} w`.
///
/// `cfg.ridge` is added to the diagonal of `F_ΨΨ`. Damping mixes old and new
/// parameters. A singular system ends the run as non-converged.
pub fn solve_generalized_mf(
    target: &BoltzmannModel,
    structure: &Structure,
    cfg: &SolverConfig,
) -> Result<GeneralizedMFState> {
    cfg.validate()?;
    let problem = Problem::new(target, structure)?;
    let base_seed = match cfg.init {
        Init::Random { seed } => seed,
        Init::Bias => 0,
    };
    let mut best: Option<(GeneralizedMFState, f64)> = None;
    for r in 0..cfg.restarts {
        let init = if r == 0 {
            cfg.init
        } else {
            Init::Random { seed: base_seed.wrapping_add(r as u64) }
        };
        let theta = problem.initial_theta(init);
        let state = run_generalized(&problem, structure, theta, cfg)?;
        let surface = decimatable_surface(target, &state)?;
        let bound = surface.log_z0 + surface.mean_delta_h;
        if best
            .as_ref()
            .is_none_or(|(b, v)| (state.converged, bound) > (b.converged, *v))
        {
            best = Some((state, bound));
        }
    }
    Ok(best.expect("at least one restart").0)
}

/// As [`solve_generalized_mf`] from an explicit starting point.
pub fn solve_generalized_mf_from(
    target: &BoltzmannModel,
    structure: &Structure,
    theta: Vec<f64>,
    cfg: &SolverConfig,
) -> Result<GeneralizedMFState> {
    cfg.validate()?;
    let problem = Problem::new(target, structure)?;
    Error::check_len(problem.psi.len(), theta.len())?;
    run_generalized(&problem, structure, theta, cfg)
}

fn run_generalized(
    problem: &Problem,
    structure: &Structure,
    mut theta: Vec<f64>,
    cfg: &SolverConfig,
) -> Result<GeneralizedMFState> {
    let mut cache = OrderCache::new(structure.clone())?;
    let p = problem.psi.len();
    let mut converged = false;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;

    'outer: for it in 1..=cfg.max_iter {
        iterations = it;
        let mut change: f64 = 0.0;
        match cfg.schedule {
            Schedule::Sync => {
                let Some(next) = problem.sync_target(&mut cache, &theta, cfg.ridge) else {
                    break 'outer;
                };
                for (t, x) in theta.iter_mut().zip(next) {
                    let step = cfg.damping * (x - *t);
                    *t += step;
                    change = change.max(step.abs());
                }
            }
            Schedule::Async => {
                for a in 0..p {
                    let mut mom = Moments::new(&mut cache, &theta);
                    let rhs = problem.rhs(&mut mom, a);
                    let mut off = 0.0;
                    for b in 0..p {
                        if b != a {
                            off += mom.cov(problem.psi[a], problem.psi[b]) * theta[b];
                        }
                    }
                    let diag = mom.cov(problem.psi[a], problem.psi[a]) + cfg.ridge;
                    let x = (rhs - off) / diag;
                    if !x.is_finite() {
                        break 'outer;
                    }
                    let step = cfg.damping * (x - theta[a]);
                    theta[a] += step;
                    change = change.max(step.abs());
                }
            }
        }
        residual = change;
        if !residual.is_finite() {
            break;
        }
        if residual <= cfg.tol {
            converged = true;
            break;
        }
    }

    let mut mom = Moments::new(&mut cache, &theta);
    let fisher = problem.fisher(&mut mom);
    Ok(GeneralizedMFState {
        structure: structure.clone(),
        indices: problem.psi.clone(),
        theta,
        fisher,
        converged,
        iterations,
        final_residual: residual,
    })
}

/// `log Z0`, `⟨ΔH⟩_0` and `var_0(ΔH)` for a tractable model on a decimatable
/// structure, from clamp-and-decimate moments of up to four units.
pub fn decimatable_surface(target: &BoltzmannModel, state: &GeneralizedMFState) -> Result<TractableSurface> {
    if !state.converged {
        log::warn!("expansion surface taken from a non-converged generalized mean-field state");
    }
    let problem = Problem::new(target, &state.structure)?;
    Error::check_len(problem.psi.len(), state.theta.len())?;
    let mut cache = OrderCache::new(state.structure.clone())?;
    let mut mom = Moments::new(&mut cache, &state.theta);

    // ΔH = constant + Σ_K c_K s_K over all extended indices.
    let mut coeff: Vec<(ExtIndex, f64)> = problem.all.iter().copied().zip(problem.weights.iter().copied()).collect();
    for (ix, t) in problem.psi.iter().zip(&state.theta) {
        let pos = coeff.iter().position(|(k, _)| k == ix).expect("Ψ indices are extended indices");
        coeff[pos].1 -= t;
    }
    coeff.retain(|&(_, c)| c != 0.0);

    let mut mean = target.constant();
    for &(k, c) in &coeff {
        mean += c * mom.prob(k.mask());
    }
    let mut var = 0.0;
    for (a, &(ka, ca)) in coeff.iter().enumerate() {
        var += ca * ca * mom.cov(ka, ka);
        for &(kb, cb) in &coeff[a + 1..] {
            var += 2.0 * ca * cb * mom.cov(ka, kb);
        }
    }
    TractableSurface::new(mom.log_z, mean, var)
}

/// Means and row-major pair probabilities `Q0(s_i = s_j = 1)` of a tractable
/// model on a decimatable structure.
pub fn tractable_moments(structure: &Structure, theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    Error::check_len(structure_indices(structure).len(), theta.len())?;
    let n = structure.n;
    let mut cache = OrderCache::new(structure.clone())?;
    let mut mom = Moments::new(&mut cache, theta);
    let means: Vec<f64> = (0..n).map(|i| mom.prob(1 << i)).collect();
    let mut pairs = vec![0.0; n * n];
    for i in 0..n {
        pairs[i * n + i] = means[i];
        for j in (i + 1)..n {
            let p = mom.prob((1 << i) | (1 << j));
            pairs[i * n + j] = p;
            pairs[j * n + i] = p;
        }
    }
    Ok((means, pairs))
}
