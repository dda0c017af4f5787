//! Monte Carlo and quasi-Monte Carlo estimators of the prediction gap.
//!
//! Both estimators average a function of `f(x') - f(x)` over `iterations`
//! perturbed inputs. Monte Carlo draws each `δ_q` independently from a seeded
//! ChaCha stream; quasi-Monte Carlo takes Halton point `k` (for `k = 1..=i`)
//! in dimension `|S|` and maps coordinate `j` through the inverse CDF of the
//! `j`-th smallest feature in `S`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TreeEnsemble;
use crate::perturb::{halton_bases, radical_inverse, Distribution, PerturbationSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMethod {
    Mc,
    Qmc,
}

impl SamplingMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplingMethod::Mc => "mc",
            SamplingMethod::Qmc => "qmc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EstimatorConfig {
    pub method: SamplingMethod,
    pub iterations: u64,
    /// Monte Carlo seed; ignored by QMC.
    pub seed: u64,
    /// Stream selector so independent queries sharing a seed use disjoint
    /// random sequences (e.g. the query index in a benchmark).
    pub stream: u64,
}

impl EstimatorConfig {
    pub fn mc(iterations: u64, seed: u64) -> Self {
        Self {
            method: SamplingMethod::Mc,
            iterations,
            seed,
            stream: 0,
        }
    }

    pub fn qmc(iterations: u64) -> Self {
        Self {
            method: SamplingMethod::Qmc,
            iterations,
            seed: 0,
            stream: 0,
        }
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }
}

/// Monte Carlo / QMC estimate of `PG²(x, S)`.
pub fn pg2_sampled(
    ensemble: &TreeEnsemble,
    x: &[f64],
    features: &[usize],
    spec: &PerturbationSpec,
    config: &EstimatorConfig,
) -> Result<f64> {
    estimate(ensemble, x, features, spec, config, |g| g * g)
}

/// Monte Carlo / QMC estimate of the absolute prediction gap `E|f(x') - f(x)|`.
pub fn pg_abs_sampled(
    ensemble: &TreeEnsemble,
    x: &[f64],
    features: &[usize],
    spec: &PerturbationSpec,
    config: &EstimatorConfig,
) -> Result<f64> {
    estimate(ensemble, x, features, spec, config, f64::abs)
}

fn estimate(
    ensemble: &TreeEnsemble,
    x: &[f64],
    features: &[usize],
    spec: &PerturbationSpec,
    config: &EstimatorConfig,
    loss: impl Fn(f64) -> f64,
) -> Result<f64> {
    ensemble.check_input(x)?;
    if config.iterations == 0 {
        return Err(Error::validation("estimator needs at least one iteration"));
    }
    let mut features = features.to_vec();
    features.sort_unstable();
    features.dedup();
    if let Some(&q) = features.iter().find(|&&q| q >= ensemble.num_features()) {
        return Err(Error::validation(format!(
            "perturbed feature {q} out of range for {} features",
            ensemble.num_features()
        )));
    }
    let dists: Vec<&Distribution> = spec.resolve(&features)?;
    if features.is_empty() {
        return Ok(0.0);
    }

    let c = ensemble.predict_unchecked(x);
    let mut xp = x.to_vec();
    let mut total = 0.0;
    match config.method {
        SamplingMethod::Mc => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(config.stream);
            for _ in 0..config.iterations {
                for (&q, dist) in features.iter().zip(&dists) {
                    xp[q] = x[q] + dist.sample(&mut rng);
                }
                total += loss(ensemble.predict_unchecked(&xp) - c);
            }
        }
        SamplingMethod::Qmc => {
            let bases = halton_bases(features.len())?;
            for k in 1..=config.iterations {
                for ((&q, dist), &base) in features.iter().zip(&dists).zip(bases) {
                    xp[q] = x[q] + dist.inverse_cdf(radical_inverse(k, base))?;
                }
                total += loss(ensemble.predict_unchecked(&xp) - c);
            }
        }
    }
    Ok(total / config.iterations as f64)
}
