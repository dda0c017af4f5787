//! Exact squared prediction gap for tree ensembles.
//!
//! For a leaf `w`, the perturbed input reaches `w` iff every feature `q` tested
//! on the root-to-`w` path lands in an interval `I_{w,q}` built by intersecting
//! `(-inf, t)` for left turns and `[t, inf)` for right turns. Two leaves `u`, `v`
//! (possibly in different trees, possibly equal) are reached together iff
//! `x'_q ∈ I_{u,q} ∩ I_{v,q}` for every tested feature, so by independence
//!
//! ```text
//! Π(u,v) = Π_{q ∉ S} [x_q ∈ I_{u,q} ∩ I_{v,q}] · Π_{q ∈ S} Pr[l_q <= x_q + δ_q < r_q]
//! ```
//!
//! All `Π(u,v)` are produced by a pre-order walk over `u` that, at each leaf,
//! starts a second pre-order walk over `v`. Both walks share the interval
//! arrays, and moving to a child changes one interval and hence one factor,
//! so every visited pair costs O(1) and the whole table O(n²).
//!
//! `PG²(x,S) = E[(f(x') - f(x))²] = Σ_{u,v} y_u y_v Π(u,v) - 2c Σ_u y_u Π(u,u) + c²`
//! with `c = f(x)`.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::model::{Node, TreeEnsemble};
use crate::perturb::{Distribution, Endpoint, PerturbationSpec};

/// Relative slack under which a negative PG² is treated as rounding noise.
const NEGATIVE_ROUNDING_SLACK: f64 = 1e-9;

/// Upper bound on the number of offset combinations [`pg2_brute_force`] enumerates.
pub const BRUTE_FORCE_LIMIT: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExactOptions {
    /// Skip subtrees once the running product is exactly zero. Every pair
    /// below such a node has probability zero, so results are unchanged.
    pub prune_zero_products: bool,
}

/// Joint leaf probabilities `Π(u,v)` indexed by ensemble-wide leaf id.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafPairTable {
    num_leaves: usize,
    probs: Vec<f64>,
    tree_ranges: Vec<Range<usize>>,
}

impl LeafPairTable {
    pub fn num_leaves(&self) -> usize {
        self.num_leaves
    }

    /// `Pr[X_u = 1 ∧ X_v = 1]`.
    pub fn pair(&self, u: usize, v: usize) -> f64 {
        self.probs[u * self.num_leaves + v]
    }

    /// `Pr[X_u = 1]`, the diagonal of the table.
    pub fn leaf(&self, u: usize) -> f64 {
        self.pair(u, u)
    }

    /// Leaf ids belonging to tree `tree`.
    pub fn tree_leaves(&self, tree: usize) -> Range<usize> {
        self.tree_ranges[tree].clone()
    }

    /// Largest deviation from 1 over all per-tree leaf sums `Σ_u Pr[X_u]` and
    /// all cross-tree pair sums `Σ_{u∈T_i, v∈T_j} Π(u,v)` with `i != j`.
    pub fn normalization_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, ri) in self.tree_ranges.iter().enumerate() {
            let single: f64 = ri.clone().map(|u| self.leaf(u)).sum();
            worst = worst.max((single - 1.0).abs());
            for (j, rj) in self.tree_ranges.iter().enumerate() {
                if i == j {
                    continue;
                }
                let joint: f64 = ri
                    .clone()
                    .flat_map(|u| rj.clone().map(move |v| (u, v)))
                    .map(|(u, v)| self.pair(u, v))
                    .sum();
                worst = worst.max((joint - 1.0).abs());
            }
        }
        worst
    }

    /// The quadratic expansion
    /// `c² + Σ_{u≠v} y_u y_v Π(u,v) + Σ_u Π(u,u) · y_u · (y_u - 2c)`
    /// evaluated on this table with leaf values `values` and `c = f(x)`.
    pub fn expand_pg2(&self, values: &[f64], c: f64) -> f64 {
        let n = self.num_leaves;
        let mut cross = 0.0;
        let mut diagonal = 0.0;
        for u in 0..n {
            for v in 0..n {
                if u != v {
                    cross += values[u] * values[v] * self.pair(u, v);
                }
            }
            diagonal += self.leaf(u) * values[u] * (values[u] - 2.0 * c);
        }
        c * c + cross + diagonal
    }
}

/// Running product of the per-feature factors, with exact zeros counted
/// separately so a factor can be swapped out without dividing by zero.
#[derive(Debug, Clone, Copy)]
struct Product {
    nonzero: f64,
    zeros: u32,
}

impl Product {
    const ONE: Product = Product {
        nonzero: 1.0,
        zeros: 0,
    };

    fn value(self) -> f64 {
        if self.zeros > 0 {
            0.0
        } else {
            self.nonzero
        }
    }

    fn replace(mut self, old: f64, new: f64) -> Self {
        if old == 0.0 {
            self.zeros -= 1;
        } else {
            self.nonzero /= old;
        }
        if new == 0.0 {
            self.zeros += 1;
        } else {
            self.nonzero *= new;
        }
        self
    }
}

/// Interval endpoints and current factor per feature; shared by both walks.
/// Endpoints are indices into the feature's [`Axis`].
#[derive(Debug, Clone, PartialEq)]
struct TraversalState {
    lower: Vec<u32>,
    upper: Vec<u32>,
    factor: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Saved {
    lower: u32,
    upper: u32,
    factor: f64,
}

#[derive(Clone, Copy)]
struct LeafRef {
    id: usize,
    value: f64,
}

/// The values an interval endpoint of one feature can take: index 0 is
/// `-inf`, indices `1..=k` the sorted distinct thresholds on that feature in
/// the ensemble, `k + 1` is `+inf`.
struct Axis<'a> {
    /// Number of endpoint slots, `k + 2`.
    len: u32,
    noise: Option<(&'a Distribution, Vec<Endpoint>)>,
    /// Largest endpoint index whose value is `<= x[q]`.
    at_x: u32,
}

impl<'a> Axis<'a> {
    fn new(thresholds: &[f64], x: f64, noise: Option<&'a Distribution>) -> Self {
        let noise = noise.map(|dist| {
            let ends = std::iter::once(f64::NEG_INFINITY)
                .chain(thresholds.iter().map(|&t| t - x))
                .chain(std::iter::once(f64::INFINITY))
                .map(|v| dist.endpoint(v))
                .collect();
            (dist, ends)
        });
        Self {
            len: thresholds.len() as u32 + 2,
            noise,
            at_x: thresholds.partition_point(|&t| t <= x) as u32,
        }
    }

    /// The factor for interval `[lower, upper)`: its noise mass for a
    /// perturbed feature, the indicator `lower <= x < upper` otherwise.
    fn factor(&self, lower: u32, upper: u32) -> f64 {
        match &self.noise {
            Some((dist, ends)) => {
                if lower < upper {
                    dist.mass_between(&ends[lower as usize], &ends[upper as usize])
                } else {
                    0.0
                }
            }
            None => (lower <= self.at_x && self.at_x < upper) as u8 as f64,
        }
    }
}

struct PairWalk<'a> {
    ensemble: &'a TreeEnsemble,
    axes: Vec<Axis<'a>>,
    /// Endpoint index of every split node's threshold, per tree.
    ranks: Vec<Vec<u32>>,
    state: TraversalState,
    prune: bool,
}

impl<'a> PairWalk<'a> {
    fn new(
        ensemble: &'a TreeEnsemble,
        x: &'a [f64],
        features: &[usize],
        spec: &'a PerturbationSpec,
        options: &ExactOptions,
    ) -> Result<Self> {
        ensemble.check_input(x)?;
        let d = ensemble.num_features();
        let mut noise = vec![None; d];
        for &q in features {
            if q >= d {
                return Err(Error::validation(format!(
                    "perturbed feature {q} out of range for {d} features"
                )));
            }
            noise[q] = Some(spec.get(q).ok_or_else(|| {
                Error::validation(format!("no perturbation distribution for feature {q}"))
            })?);
        }

        let mut thresholds = vec![Vec::new(); d];
        for tree in ensemble.trees() {
            for node in tree.nodes() {
                if let Node::Split {
                    feature, threshold, ..
                } = *node
                {
                    thresholds[feature].push(threshold);
                }
            }
        }
        for t in &mut thresholds {
            t.sort_by(f64::total_cmp);
            t.dedup_by(|a, b| a == b);
        }
        let ranks = ensemble
            .trees()
            .iter()
            .map(|tree| {
                tree.nodes()
                    .iter()
                    .map(|node| match *node {
                        Node::Split {
                            feature, threshold, ..
                        } => thresholds[feature].partition_point(|&t| t < threshold) as u32 + 1,
                        Node::Leaf { .. } => 0,
                    })
                    .collect()
            })
            .collect();
        let axes: Vec<Axis> = (0..d)
            .map(|q| Axis::new(&thresholds[q], x[q], noise[q]))
            .collect();
        let state = Self::initial_state(&axes);
        Ok(Self {
            ensemble,
            axes,
            ranks,
            state,
            prune: options.prune_zero_products,
        })
    }

    fn initial_state(axes: &[Axis]) -> TraversalState {
        TraversalState {
            lower: vec![0; axes.len()],
            upper: axes.iter().map(|a| a.len - 1).collect(),
            factor: vec![1.0; axes.len()],
        }
    }

    /// True when every interval is back to `(-inf, inf)`.
    fn is_reset(&self) -> bool {
        self.state == Self::initial_state(&self.axes)
    }

    /// Narrows feature `q`'s interval for a step to the left (`x < t`) or
    /// right (`x >= t`) child of a split whose threshold has endpoint index
    /// `rank`, and updates the product.
    fn step(&mut self, q: usize, rank: u32, left: bool, prod: Product) -> (Saved, Product) {
        let saved = Saved {
            lower: self.state.lower[q],
            upper: self.state.upper[q],
            factor: self.state.factor[q],
        };
        if left {
            self.state.upper[q] = saved.upper.min(rank);
        } else {
            self.state.lower[q] = saved.lower.max(rank);
        }
        let f = self.axes[q].factor(self.state.lower[q], self.state.upper[q]);
        self.state.factor[q] = f;
        (saved, prod.replace(saved.factor, f))
    }

    fn restore(&mut self, q: usize, saved: Saved) {
        self.state.lower[q] = saved.lower;
        self.state.upper[q] = saved.upper;
        self.state.factor[q] = saved.factor;
    }

    /// Walks every tree in turn, fixing `u` at each of its leaves.
    fn run(&mut self, visit: &mut impl FnMut(usize, f64, usize, f64, f64)) {
        for t in 0..self.ensemble.num_trees() {
            self.outer(t, 0, Product::ONE, visit);
        }
    }

    fn outer(
        &mut self,
        tree: usize,
        node: usize,
        prod: Product,
        visit: &mut impl FnMut(usize, f64, usize, f64, f64),
    ) {
        if self.prune && prod.value() == 0.0 {
            return;
        }
        let ens = self.ensemble;
        let t = &ens.trees()[tree];
        match *t.node(node) {
            Node::Leaf { value } => {
                let u = LeafRef {
                    id: ens.leaf_id(tree, t.leaf_ordinal(node).expect("leaf")),
                    value,
                };
                for inner_tree in 0..ens.num_trees() {
                    self.inner(u, inner_tree, 0, prod, visit);
                }
            }
            Node::Split {
                feature,
                left,
                right,
                ..
            } => {
                let rank = self.ranks[tree][node];
                for (child, is_left) in [(left, true), (right, false)] {
                    let (saved, p) = self.step(feature, rank, is_left, prod);
                    self.outer(tree, child, p, visit);
                    self.restore(feature, saved);
                }
            }
        }
    }

    fn inner(
        &mut self,
        u: LeafRef,
        tree: usize,
        node: usize,
        prod: Product,
        visit: &mut impl FnMut(usize, f64, usize, f64, f64),
    ) {
        if self.prune && prod.value() == 0.0 {
            return;
        }
        let ens = self.ensemble;
        let t = &ens.trees()[tree];
        match *t.node(node) {
            Node::Leaf { value } => {
                let v = ens.leaf_id(tree, t.leaf_ordinal(node).expect("leaf"));
                visit(u.id, u.value, v, value, prod.value());
            }
            Node::Split {
                feature,
                left,
                right,
                ..
            } => {
                let rank = self.ranks[tree][node];
                for (child, is_left) in [(left, true), (right, false)] {
                    let (saved, p) = self.step(feature, rank, is_left, prod);
                    self.inner(u, tree, child, p, visit);
                    self.restore(feature, saved);
                }
            }
        }
    }
}

fn normalize_features(features: &[usize]) -> Vec<usize> {
    let mut s = features.to_vec();
    s.sort_unstable();
    s.dedup();
    s
}

/// Computes `Π(u,v)` for every ordered pair of leaves, including `u = v`
/// (which gives `Pr[X_u = 1]`) and pairs within one tree.
pub fn leaf_pair_probabilities(
    ensemble: &TreeEnsemble,
    x: &[f64],
    features: &[usize],
    spec: &PerturbationSpec,
) -> Result<LeafPairTable> {
    let features = normalize_features(features);
    let mut walk = PairWalk::new(ensemble, x, &features, spec, &ExactOptions::default())?;
    let n = ensemble.leaf_count();
    let mut probs = vec![0.0; n * n];
    walk.run(&mut |u, _, v, _, p| probs[u * n + v] = p);
    debug_assert!(walk.is_reset());
    // (u, v) and (v, u) multiply the same factors in a different order
    for u in 0..n {
        for v in u + 1..n {
            probs[v * n + u] = probs[u * n + v];
        }
    }

    let tree_ranges = (0..ensemble.num_trees())
        .map(|t| {
            let start = ensemble.leaf_id(t, 0);
            start..start + ensemble.trees()[t].leaf_count()
        })
        .collect();
    Ok(LeafPairTable {
        num_leaves: n,
        probs,
        tree_ranges,
    })
}

/// `PG²(x, S) = E[(f(x') - f(x))²]` computed exactly.
pub fn pg2_exact(
    ensemble: &TreeEnsemble,
    x: &[f64],
    features: &[usize],
    spec: &PerturbationSpec,
) -> Result<f64> {
    pg2_exact_with(ensemble, x, features, spec, &ExactOptions::default())
}

pub fn pg2_exact_with(
    ensemble: &TreeEnsemble,
    x: &[f64],
    features: &[usize],
    spec: &PerturbationSpec,
    options: &ExactOptions,
) -> Result<f64> {
    let features = normalize_features(features);
    let mut walk = PairWalk::new(ensemble, x, &features, spec, options)?;
    if features.is_empty() {
        return Ok(0.0);
    }

    // Each tree contributes exactly one active leaf, so subtracting the tree's
    // unperturbed output from its leaves leaves f(x') - f(x) unchanged and
    // turns the expansion into Σ_{u,v} y'_u y'_v Π(u,v) without the large
    // c² and -2c terms cancelling each other.
    let offsets: Vec<f64> = ensemble.trees().iter().map(|t| t.predict(x)).collect();
    let tree_of_leaf: Vec<usize> = ensemble
        .trees()
        .iter()
        .enumerate()
        .flat_map(|(t, tree)| std::iter::repeat_n(t, tree.leaf_count()))
        .collect();

    let mut total = 0.0;
    let mut magnitude = 0.0;
    walk.run(&mut |u, yu, v, yv, p| {
        let term = (yu - offsets[tree_of_leaf[u]]) * (yv - offsets[tree_of_leaf[v]]) * p;
        total += term;
        magnitude += term.abs();
    });
    finish_nonnegative(total, magnitude)
}

fn finish_nonnegative(total: f64, magnitude: f64) -> Result<f64> {
    if total >= 0.0 {
        Ok(total)
    } else if -total <= NEGATIVE_ROUNDING_SLACK * magnitude.max(f64::MIN_POSITIVE) {
        Ok(0.0)
    } else {
        Err(Error::NumericDomain(format!(
            "squared prediction gap evaluated to {total} (term magnitude {magnitude})"
        )))
    }
}

/// Reference PG² for all-discrete perturbations: enumerates every combination
/// of offsets over the perturbed features and averages the squared gap.
pub fn pg2_brute_force(
    ensemble: &TreeEnsemble,
    x: &[f64],
    features: &[usize],
    spec: &PerturbationSpec,
) -> Result<f64> {
    ensemble.check_input(x)?;
    let features = normalize_features(features);
    let d = ensemble.num_features();
    let mut supports = Vec::with_capacity(features.len());
    let mut combinations: u64 = 1;
    for &q in &features {
        if q >= d {
            return Err(Error::validation(format!(
                "perturbed feature {q} out of range for {d} features"
            )));
        }
        match spec.get(q) {
            Some(Distribution::Discrete(dist)) => {
                let points: Vec<(f64, f64)> = dist.points().collect();
                combinations = combinations.saturating_mul(points.len() as u64);
                supports.push(points);
            }
            Some(_) => {
                return Err(Error::validation(format!(
                    "brute force needs a discrete distribution for feature {q}"
                )))
            }
            None => {
                return Err(Error::validation(format!(
                    "no perturbation distribution for feature {q}"
                )))
            }
        }
    }
    if combinations > BRUTE_FORCE_LIMIT {
        return Err(Error::Capacity(format!(
            "{combinations} offset combinations exceed the brute-force limit of {BRUTE_FORCE_LIMIT}"
        )));
    }

    let c = ensemble.predict_unchecked(x);
    let mut digits = vec![0usize; features.len()];
    let mut xp = x.to_vec();
    let mut total = 0.0;
    loop {
        let mut weight = 1.0;
        for (k, &q) in features.iter().enumerate() {
            let (offset, p) = supports[k][digits[k]];
            xp[q] = x[q] + offset;
            weight *= p;
        }
        let gap = ensemble.predict_unchecked(&xp) - c;
        total += weight * gap * gap;

        // odometer increment
        let mut k = 0;
        loop {
            if k == digits.len() {
                return Ok(total);
            }
            digits[k] += 1;
            if digits[k] < supports[k].len() {
                break;
            }
            digits[k] = 0;
            k += 1;
        }
    }
}
