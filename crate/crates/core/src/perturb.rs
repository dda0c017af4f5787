//! Independent per-feature perturbation distributions.
//!
//! A perturbed input is `x'_i = x_i + δ_i` for features `i` in the perturbed
//! set and `x'_i = x_i` otherwise, with the `δ_i` independent and
//! `δ_i ~ D_i`. Each [`Distribution`] exposes its CDF in constant time, which is
//! all the exact algorithm needs, plus sampling and an inverse CDF for the
//! Monte Carlo and quasi-Monte Carlo estimators.

use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

use libm::erfc;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a discrete distribution.
const DISCRETE_MASS_TOLERANCE: f64 = 1e-12;

/// Noise distribution of a single feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionRepr", into = "DistributionRepr")]
pub enum Distribution {
    /// `N(0, sigma²)`.
    Gaussian { sigma: f64 },
    /// Uniform on `[-half_width, half_width]`.
    Uniform { half_width: f64 },
    /// Finitely many offsets with the given probabilities.
    Discrete(Discrete),
}

/// A finite distribution with strictly increasing offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct Discrete {
    offsets: Vec<f64>,
    probabilities: Vec<f64>,
    /// `cumulative[i]` is the mass of the first `i` points; the last entry is exactly 1.
    cumulative: Vec<f64>,
}

impl Discrete {
    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.offsets
            .iter()
            .copied()
            .zip(self.probabilities.iter().copied())
    }

    /// `Pr[δ <= v]`.
    fn cdf(&self, v: f64) -> f64 {
        self.cumulative[self.offsets.partition_point(|&o| o <= v)]
    }

    /// `Pr[δ < v]`.
    fn cdf_left(&self, v: f64) -> f64 {
        self.cumulative[self.offsets.partition_point(|&o| o < v)]
    }

    /// Index of the point selected by `u` in `[0, 1)`.
    fn index_for(&self, u: f64) -> usize {
        let i = self.cumulative[1..].partition_point(|&c| c <= u);
        i.min(self.offsets.len() - 1)
    }
}

impl Distribution {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::validation(format!(
                "gaussian sigma must be positive and finite, got {sigma}"
            )));
        }
        Ok(Distribution::Gaussian { sigma })
    }

    pub fn uniform(half_width: f64) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::validation(format!(
                "uniform half width must be positive and finite, got {half_width}"
            )));
        }
        Ok(Distribution::Uniform { half_width })
    }

    /// Builds a discrete distribution from `(offset, probability)` points.
    pub fn discrete(points: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let (offsets, probabilities): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
        if offsets.is_empty() {
            return Err(Error::validation(
                "discrete distribution needs at least one point",
            ));
        }
        if offsets.iter().any(|o| !o.is_finite()) {
            return Err(Error::validation("discrete offsets must be finite"));
        }
        if offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation(
                "discrete offsets must be strictly increasing",
            ));
        }
        if probabilities.iter().any(|p| !(*p >= 0.0 && *p <= 1.0)) {
            return Err(Error::validation(
                "discrete probabilities must lie in [0, 1]",
            ));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > DISCRETE_MASS_TOLERANCE {
            return Err(Error::validation(format!(
                "discrete probabilities sum to {total}, expected 1"
            )));
        }
        let mut cumulative = Vec::with_capacity(offsets.len() + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for p in &probabilities[..probabilities.len() - 1] {
            acc += p;
            cumulative.push(acc.min(1.0));
        }
        cumulative.push(1.0);
        Ok(Distribution::Discrete(Discrete {
            offsets,
            probabilities,
            cumulative,
        }))
    }

    pub fn is_continuous(&self) -> bool {
        !matches!(self, Distribution::Discrete(_))
    }

    /// `F(v) = Pr[δ <= v]`, defined on the extended reals.
    pub fn cdf(&self, v: f64) -> f64 {
        if v == f64::NEG_INFINITY {
            return 0.0;
        }
        if v == f64::INFINITY {
            return 1.0;
        }
        match self {
            Distribution::Gaussian { sigma } => standard_normal_cdf(v / sigma),
            Distribution::Uniform { half_width } => {
                ((v + half_width) / (2.0 * half_width)).clamp(0.0, 1.0)
            }
            Distribution::Discrete(d) => d.cdf(v),
        }
    }

    /// Left limit `Pr[δ < v]`; equals [`cdf`](Self::cdf) for continuous kinds.
    pub fn cdf_left(&self, v: f64) -> f64 {
        match self {
            Distribution::Discrete(d) if v.is_finite() => d.cdf_left(v),
            _ => self.cdf(v),
        }
    }

    /// `Pr[lo <= δ < hi]`; zero when the interval is empty.
    pub fn interval_mass(&self, lo: f64, hi: f64) -> f64 {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return 0.0;
        }
        self.mass_between(&self.endpoint(lo), &self.endpoint(hi))
    }

    /// Precomputes what [`mass_between`](Self::mass_between) needs about `v`,
    /// so repeated interval queries over a fixed set of endpoints cost no
    /// CDF evaluations.
    pub(crate) fn endpoint(&self, v: f64) -> Endpoint {
        match self {
            Distribution::Gaussian { sigma } => {
                let z = v / sigma;
                Endpoint {
                    z,
                    below: standard_normal_cdf(z),
                    above: standard_normal_sf(z),
                }
            }
            _ => Endpoint {
                z: v,
                below: self.cdf_left(v),
                above: f64::NAN,
            },
        }
    }

    /// `Pr[lo <= δ < hi]` for endpoints with `lo < hi`.
    pub(crate) fn mass_between(&self, lo: &Endpoint, hi: &Endpoint) -> f64 {
        match self {
            // Φ(b) - Φ(a) in whichever tail avoids cancellation
            Distribution::Gaussian { .. } => if lo.z >= 0.0 {
                lo.above - hi.above
            } else if hi.z <= 0.0 {
                hi.below - lo.below
            } else {
                1.0 - lo.below - hi.above
            }
            .max(0.0),
            _ => (hi.below - lo.below).max(0.0),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Distribution::Gaussian { sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                sigma * z
            }
            Distribution::Uniform { half_width } => rng.random_range(-half_width..=*half_width),
            Distribution::Discrete(d) => d.offsets[d.index_for(rng.random::<f64>())],
        }
    }

    /// Quantile function. For the discrete kind this is the generalized
    /// inverse: the smallest offset whose CDF is at least `u`.
    pub fn inverse_cdf(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::NumericDomain(format!(
                "inverse CDF argument must lie in (0, 1), got {u}"
            )));
        }
        Ok(match self {
            Distribution::Gaussian { sigma } => sigma * standard_normal_quantile(u),
            Distribution::Uniform { half_width } => half_width * (2.0 * u - 1.0),
            Distribution::Discrete(d) => {
                let i = d.cumulative[1..].partition_point(|&c| c < u);
                d.offsets[i.min(d.offsets.len() - 1)]
            }
        })
    }
}

/// A point on the noise axis with its CDF values cached: `below` is
/// `Pr[δ < v]` and, for the Gaussian, `above` is `Pr[δ >= v]` and `z` the
/// standardized value.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Endpoint {
    z: f64,
    below: f64,
    above: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum DistributionRepr {
    Gaussian { sigma: f64 },
    Uniform { half_width: f64 },
    Discrete { points: Vec<(f64, f64)> },
}

impl TryFrom<DistributionRepr> for Distribution {
    type Error = Error;

    fn try_from(repr: DistributionRepr) -> Result<Self> {
        match repr {
            DistributionRepr::Gaussian { sigma } => Distribution::gaussian(sigma),
            DistributionRepr::Uniform { half_width } => Distribution::uniform(half_width),
            DistributionRepr::Discrete { points } => Distribution::discrete(points),
        }
    }
}

impl From<Distribution> for DistributionRepr {
    fn from(d: Distribution) -> Self {
        match d {
            Distribution::Gaussian { sigma } => DistributionRepr::Gaussian { sigma },
            Distribution::Uniform { half_width } => DistributionRepr::Uniform { half_width },
            Distribution::Discrete(d) => DistributionRepr::Discrete {
                points: d.points().collect(),
            },
        }
    }
}

/// Per-feature noise: one distribution shared by every feature, or a list
/// indexed by feature.
///
/// Serialized as `{"all": <dist>}` or `{"per_feature": [<dist>, ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbationSpec {
    All(Distribution),
    PerFeature(Vec<Distribution>),
}

impl PerturbationSpec {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        Ok(PerturbationSpec::All(Distribution::gaussian(sigma)?))
    }

    pub fn get(&self, feature: usize) -> Option<&Distribution> {
        match self {
            PerturbationSpec::All(d) => Some(d),
            PerturbationSpec::PerFeature(ds) => ds.get(feature),
        }
    }

    /// Looks up the distribution of every feature in `features`.
    pub fn resolve(&self, features: &[usize]) -> Result<Vec<&Distribution>> {
        features
            .iter()
            .map(|&q| {
                self.get(q).ok_or_else(|| {
                    Error::validation(format!("no perturbation distribution for feature {q}"))
                })
            })
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::parse(format!("line {}, column {}", e.line(), e.column()), e))
    }
}

/// `Φ(z)` computed through `erfc` so both tails keep full relative precision.
pub fn standard_normal_cdf(z: f64) -> f64 {
    if z == f64::INFINITY {
        1.0
    } else if z == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * erfc(-z / SQRT_2)
    }
}

/// Upper tail `1 - Φ(z)`.
fn standard_normal_sf(z: f64) -> f64 {
    standard_normal_cdf(-z)
}

/// `Φ⁻¹(p)` for `p` in `(0, 1)`: Acklam's rational approximation refined by
/// one Halley step against the erfc-based CDF.
pub fn standard_normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x = if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - P_LOW {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        q * (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5])
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };

    // Halley refinement; the residual is taken in the tail that keeps precision.
    let e = if x > 0.0 {
        (1.0 - p) - standard_normal_sf(x)
    } else {
        standard_normal_cdf(x) - p
    };
    let u = e * (2.0 * PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}

/// Number of prime bases available to [`halton_point`].
pub const HALTON_MAX_DIM: usize = 1024;

fn primes() -> &'static [u64] {
    static PRIMES: OnceLock<Vec<u64>> = OnceLock::new();
    PRIMES.get_or_init(|| {
        let mut primes = Vec::with_capacity(HALTON_MAX_DIM);
        let mut candidate = 2u64;
        while primes.len() < HALTON_MAX_DIM {
            if primes
                .iter()
                .take_while(|&&p| p * p <= candidate)
                .all(|&p| !candidate.is_multiple_of(p))
            {
                primes.push(candidate);
            }
            candidate += 1;
        }
        primes
    })
}

/// Van der Corput radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let mut reversed: u128 = 0;
    let mut denom: u128 = 1;
    let b = base as u128;
    while index > 0 {
        reversed = reversed * b + (index % base) as u128;
        denom *= b;
        index /= base;
    }
    reversed as f64 / denom as f64
}

/// The first `dim` primes, i.e. the Halton bases for dimension `dim`.
pub fn halton_bases(dim: usize) -> Result<&'static [u64]> {
    if dim > HALTON_MAX_DIM {
        return Err(Error::Capacity(format!(
            "Halton dimension {dim} exceeds the prime table ({HALTON_MAX_DIM})"
        )));
    }
    Ok(&primes()[..dim])
}

/// Point `index` (starting at 1) of the unscrambled Halton sequence in
/// `[0, 1)^dim`, using the first `dim` primes as bases.
pub fn halton_point(index: u64, dim: usize) -> Result<Vec<f64>> {
    if index == 0 {
        return Err(Error::NumericDomain("Halton indices start at 1".into()));
    }
    Ok(halton_bases(dim)?
        .iter()
        .map(|&b| radical_inverse(index, b))
        .collect())
}
