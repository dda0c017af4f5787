//! Aggregate faithfulness metrics built on the exact PG² computation, plus
//! the error measures used to compare rankings and estimators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exact::pg2_exact;
use crate::model::TreeEnsemble;
use crate::perturb::PerturbationSpec;
use crate::ranking::Ranking;

/// Number of draws used for the feature-randomization expectation by default.
pub const DEFAULT_RANDOMIZATION_SAMPLES: usize = 100;

/// `Σ_{k=1..d} PG²(x, π[1..k])`, the un-normalized PGI².
pub fn pgi2_sum(
    ensemble: &TreeEnsemble,
    x: &[f64],
    ranking: &Ranking,
    spec: &PerturbationSpec,
) -> Result<f64> {
    check_ranking(ensemble, ranking)?;
    (1..=ranking.len())
        .map(|k| pg2_exact(ensemble, x, ranking.prefix(k), spec))
        .sum()
}

/// `PGI²(x, π) = (1/d) Σ_{k=1..d} PG²(x, π[1..k])`.
pub fn pgi2(
    ensemble: &TreeEnsemble,
    x: &[f64],
    ranking: &Ranking,
    spec: &PerturbationSpec,
) -> Result<f64> {
    Ok(pgi2_sum(ensemble, x, ranking, spec)? / ranking.len() as f64)
}

/// Mean PGI² over a dataset with one ranking per instance.
pub fn mean_pgi2(
    ensemble: &TreeEnsemble,
    dataset: &Dataset,
    rankings: &[Ranking],
    spec: &PerturbationSpec,
) -> Result<f64> {
    aligned(dataset, rankings)?;
    let values = dataset
        .instances()
        .par_iter()
        .zip(rankings)
        .map(|(x, r)| pgi2(ensemble, x, r, spec))
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Normalized mean absolute error `Σ|y - ŷ| / Σ|y|`.
pub fn nmae(truth: &[f64], estimates: &[f64]) -> Result<f64> {
    if truth.len() != estimates.len() {
        return Err(Error::validation(format!(
            "NMAE inputs differ in length ({} vs {})",
            truth.len(),
            estimates.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::validation("NMAE needs at least one value"));
    }
    let denom: f64 = truth.iter().map(|y| y.abs()).sum();
    if denom == 0.0 {
        return Err(Error::NumericDomain(
            "NMAE is undefined when every true value is zero".into(),
        ));
    }
    let num: f64 = truth
        .iter()
        .zip(estimates)
        .map(|(y, e)| (y - e).abs())
        .sum();
    Ok(num / denom)
}

/// Feature-randomization prediction: the mean of `f(X)` where `X` agrees
/// with `x` on `keep` and every other feature is drawn independently and
/// uniformly (with replacement) from that column of `dataset`.
pub fn xi_random_with_rng<R: Rng + ?Sized>(
    ensemble: &TreeEnsemble,
    x: &[f64],
    keep: &[usize],
    dataset: &Dataset,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    ensemble.check_input(x)?;
    if dataset.is_empty() {
        return Err(Error::validation(
            "feature randomization needs a non-empty dataset",
        ));
    }
    if dataset.num_features() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: dataset.num_features(),
        });
    }
    if samples == 0 {
        return Err(Error::validation(
            "feature randomization needs at least one sample",
        ));
    }
    let mut kept = vec![false; x.len()];
    for &q in keep {
        *kept
            .get_mut(q)
            .ok_or_else(|| Error::validation(format!("kept feature {q} out of range")))? = true;
    }
    let randomized: Vec<usize> = (0..x.len()).filter(|&q| !kept[q]).collect();
    let base = ensemble.predict_unchecked(x);
    if randomized.is_empty() {
        return Ok(base);
    }
    let rows = dataset.instances();
    let mut xp = x.to_vec();
    let mut deviation = 0.0;
    for _ in 0..samples {
        for &q in &randomized {
            xp[q] = rows[rng.random_range(0..rows.len())][q];
        }
        deviation += ensemble.predict_unchecked(&xp) - base;
    }
    Ok(base + deviation / samples as f64)
}

pub fn xi_random(
    ensemble: &TreeEnsemble,
    x: &[f64],
    keep: &[usize],
    dataset: &Dataset,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    xi_random_with_rng(
        ensemble,
        x,
        keep,
        dataset,
        samples,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
}

/// What [`randomization_rmse`] compares the randomized predictions against.
#[derive(Debug, Clone, Copy)]
pub enum RmseReference<'a> {
    /// The model's own prediction on the untouched instance.
    Prediction,
    /// Ground-truth labels aligned with the dataset rows.
    Labels(&'a [f64]),
}

/// RMSE over the dataset of `ξ_random(x, [d] \ π(x)[1..k])`, i.e. with the
/// top `k` features of each instance's ranking randomized.
///
/// Instance `i` draws from ChaCha stream `i` under `seed`, so the result does
/// not depend on how instances are scheduled.
pub fn randomization_rmse(
    ensemble: &TreeEnsemble,
    dataset: &Dataset,
    rankings: &[Ranking],
    k: usize,
    samples: usize,
    seed: u64,
    reference: RmseReference<'_>,
) -> Result<f64> {
    aligned(dataset, rankings)?;
    if let RmseReference::Labels(labels) = reference {
        if labels.len() != dataset.len() {
            return Err(Error::validation(format!(
                "{} labels for {} instances",
                labels.len(),
                dataset.len()
            )));
        }
    }
    let d = ensemble.num_features();
    let squared = dataset
        .instances()
        .par_iter()
        .zip(rankings)
        .enumerate()
        .map(|(i, (x, ranking))| {
            if k > ranking.len() {
                return Err(Error::validation(format!(
                    "k = {k} exceeds {} features",
                    ranking.len()
                )));
            }
            let removed = ranking.prefix(k);
            let keep: Vec<usize> = (0..d).filter(|q| !removed.contains(q)).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let xi = xi_random_with_rng(ensemble, x, &keep, dataset, samples, &mut rng)?;
            let target = match reference {
                RmseReference::Prediction => ensemble.predict_unchecked(x),
                RmseReference::Labels(labels) => labels[i],
            };
            Ok((xi - target).powi(2))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((squared.iter().sum::<f64>() / squared.len() as f64).sqrt())
}

fn check_ranking(ensemble: &TreeEnsemble, ranking: &Ranking) -> Result<()> {
    if ranking.len() != ensemble.num_features() {
        return Err(Error::DimensionMismatch {
            expected: ensemble.num_features(),
            actual: ranking.len(),
        });
    }
    if ranking.is_empty() {
        return Err(Error::validation("PGI² needs at least one feature"));
    }
    Ok(())
}

fn aligned(dataset: &Dataset, rankings: &[Ranking]) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::validation("dataset is empty"));
    }
    if rankings.len() != dataset.len() {
        return Err(Error::validation(format!(
            "{} rankings for {} instances",
            rankings.len(),
            dataset.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Tree;

    const CANONICAL_PG2: f64 = 0.158_655_253_931_457_05;

    fn stump(d: usize) -> TreeEnsemble {
        TreeEnsemble::new(
            vec![Tree::split(0, 0.0, Tree::leaf(0.0), Tree::leaf(1.0))],
            d,
        )
        .unwrap()
    }

    fn gaussian() -> PerturbationSpec {
        PerturbationSpec::gaussian(1.0).unwrap()
    }

    #[test]
    fn pgi2_examples() {
        let r1 = Ranking::identity(1);
        let one = pgi2(&stump(1), &[-1.0], &r1, &gaussian()).unwrap();
        assert_eq!(
            one,
            pg2_exact(&stump(1), &[-1.0], &[0], &gaussian()).unwrap()
        );

        let constant = TreeEnsemble::new(vec![Tree::leaf(4.0)], 3).unwrap();
        assert_eq!(
            pgi2(
                &constant,
                &[0.0, 1.0, 2.0],
                &Ranking::identity(3),
                &gaussian()
            )
            .unwrap(),
            0.0
        );

        let two = pgi2(&stump(2), &[-1.0, 0.3], &Ranking::identity(2), &gaussian()).unwrap();
        assert!((two - CANONICAL_PG2).abs() < 1e-12, "{two}");
        assert!(pgi2(&stump(2), &[-1.0, 0.3], &Ranking::identity(3), &gaussian()).is_err());
    }

    #[test]
    fn mean_pgi2_examples() {
        let ens = stump(1);
        let r = vec![Ranking::identity(1)];
        let single = Dataset::from_rows(vec![vec![-1.0]]).unwrap();
        let expected = pgi2(&ens, &[-1.0], &r[0], &gaussian()).unwrap();
        assert_eq!(mean_pgi2(&ens, &single, &r, &gaussian()).unwrap(), expected);

        let pair = Dataset::from_rows(vec![vec![-1.0], vec![0.5]]).unwrap();
        let r2 = vec![Ranking::identity(1); 2];
        let b = pgi2(&ens, &[0.5], &r2[1], &gaussian()).unwrap();
        assert_eq!(
            mean_pgi2(&ens, &pair, &r2, &gaussian()).unwrap(),
            (expected + b) / 2.0
        );
        assert!(mean_pgi2(&ens, &pair, &r, &gaussian()).is_err());

        let constant = TreeEnsemble::new(vec![Tree::leaf(4.0)], 1).unwrap();
        assert_eq!(mean_pgi2(&constant, &pair, &r2, &gaussian()).unwrap(), 0.0);
    }

    #[test]
    fn nmae_examples() {
        assert_eq!(nmae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((nmae(&[1.0, 2.0], &[2.0, 2.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(nmae(&[0.0, 1.0], &[0.5, 1.0]).unwrap(), 0.5);
        assert!(matches!(
            nmae(&[0.0, 0.0], &[1.0, 1.0]),
            Err(Error::NumericDomain(_))
        ));
        assert!(nmae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn xi_random_examples() {
        let ens = stump(2);
        let data = Dataset::from_rows(vec![
            vec![-1.0, 0.0],
            vec![-0.5, 1.0],
            vec![0.5, 2.0],
            vec![2.0, 3.0],
        ])
        .unwrap();
        let x = [-3.0, 7.0];
        assert_eq!(xi_random(&ens, &x, &[0, 1], &data, 100, 1).unwrap(), 0.0);

        let constant = TreeEnsemble::new(vec![Tree::leaf(0.1)], 2).unwrap();
        assert_eq!(xi_random(&constant, &x, &[], &data, 100, 1).unwrap(), 0.1);

        // half of column 0 is at or above the threshold
        let xi = xi_random(&ens, &x, &[], &data, 10_000, 4).unwrap();
        // 5 binomial standard errors: 5·0.5/100
        assert!((xi - 0.5).abs() < 0.025, "{xi}");

        let empty = Dataset::from_rows(vec![]).unwrap();
        assert!(xi_random(&ens, &x, &[], &empty, 10, 1).is_err());
    }

    #[test]
    fn randomization_rmse_examples() {
        let ens = stump(2);
        let rows = vec![
            vec![-1.0, 0.0],
            vec![-0.5, 1.0],
            vec![0.5, 2.0],
            vec![2.0, 3.0],
        ];
        let data = Dataset::from_rows(rows.clone()).unwrap();
        let first = vec![Ranking::new(vec![0, 1]).unwrap(); 4];
        let inert_first = vec![Ranking::new(vec![1, 0]).unwrap(); 4];

        let zero =
            randomization_rmse(&ens, &data, &first, 0, 50, 3, RmseReference::Prediction).unwrap();
        assert_eq!(zero, 0.0);
        let inert = randomization_rmse(
            &ens,
            &data,
            &inert_first,
            1,
            50,
            3,
            RmseReference::Prediction,
        )
        .unwrap();
        assert_eq!(inert, 0.0);

        let constant = TreeEnsemble::new(vec![Tree::leaf(2.0)], 2).unwrap();
        for k in 0..=2 {
            assert_eq!(
                randomization_rmse(
                    &constant,
                    &data,
                    &first,
                    k,
                    20,
                    3,
                    RmseReference::Prediction
                )
                .unwrap(),
                0.0
            );
        }

        // enumeration over the empirical column: ξ(x) → p = Pr[column ≥ 0] = 1/2
        let p = rows.iter().filter(|r| r[0] >= 0.0).count() as f64 / rows.len() as f64;
        let expected = (rows
            .iter()
            .map(|r| (p - if r[0] < 0.0 { 0.0 } else { 1.0 }).powi(2))
            .sum::<f64>()
            / rows.len() as f64)
            .sqrt();
        let got = randomization_rmse(&ens, &data, &first, 1, 20_000, 3, RmseReference::Prediction)
            .unwrap();
        assert!((got - expected).abs() < 0.02, "{got} vs {expected}");

        let labels = [0.0, 0.0, 1.0, 1.0];
        let vs_labels = randomization_rmse(
            &ens,
            &data,
            &first,
            0,
            10,
            3,
            RmseReference::Labels(&labels),
        )
        .unwrap();
        assert_eq!(vs_labels, 0.0);
        assert!(randomization_rmse(
            &ens,
            &data,
            &first,
            1,
            10,
            3,
            RmseReference::Labels(&labels[..2])
        )
        .is_err());
    }

    #[test]
    fn seeded_metrics_are_deterministic() {
        let ens = stump(2);
        let data = Dataset::from_rows((0..30).map(|i| vec![i as f64 / 10.0 - 1.5, 0.0]).collect())
            .unwrap();
        let ranks = vec![Ranking::identity(2); 30];
        let a =
            randomization_rmse(&ens, &data, &ranks, 1, 25, 8, RmseReference::Prediction).unwrap();
        let b =
            randomization_rmse(&ens, &data, &ranks, 1, 25, 8, RmseReference::Prediction).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
