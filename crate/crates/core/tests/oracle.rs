//! The exact leaf-pair algorithm against exhaustive enumeration over discrete
//! perturbations.

use prediction_gap::exact::{leaf_pair_probabilities, pg2_brute_force, pg2_exact};
use prediction_gap::synthetic::SyntheticEnsemble;
use prediction_gap::{Distribution, PerturbationSpec, TreeEnsemble};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRID: f64 = 0.25;

fn on_grid(rng: &mut impl Rng, half_range: f64) -> f64 {
    (rng.random_range(-half_range..=half_range) / GRID).round() * GRID
}

/// Random discrete distribution with `k` distinct grid offsets.
fn random_discrete(rng: &mut impl Rng, k: usize) -> Distribution {
    let mut offsets: Vec<f64> = Vec::new();
    while offsets.len() < k {
        let o = on_grid(rng, 1.5);
        if !offsets.contains(&o) {
            offsets.push(o);
        }
    }
    offsets.sort_by(f64::total_cmp);
    let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    Distribution::discrete(
        offsets
            .into_iter()
            .zip(weights.into_iter().map(|w| w / total)),
    )
    .unwrap()
}

struct Trial {
    ensemble: TreeEnsemble,
    x: Vec<f64>,
    features: Vec<usize>,
    spec: PerturbationSpec,
}

fn random_trial(
    seed: u64,
    max_trees: usize,
    max_depth: usize,
    max_d: usize,
    max_points: usize,
) -> Trial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(1..=max_d);
    let cfg = SyntheticEnsemble {
        num_trees: rng.random_range(1..=max_trees),
        max_depth: rng.random_range(0..=max_depth),
        num_features: d,
        split_probability: 0.8,
        threshold_scale: 1.0,
        leaf_scale: 2.0,
        threshold_grid: Some(GRID),
    };
    let ensemble = cfg.generate(&mut rng);
    let x = (0..d).map(|_| on_grid(&mut rng, 1.0)).collect();
    let features = (0..d).filter(|_| rng.random_bool(0.5)).collect();
    let spec = PerturbationSpec::PerFeature(
        (0..d)
            .map(|_| {
                let k = rng.random_range(1..=max_points);
                random_discrete(&mut rng, k)
            })
            .collect(),
    );
    Trial {
        ensemble,
        x,
        features,
        spec,
    }
}

fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

#[test]
fn exact_matches_enumeration_on_small_ensembles() {
    for seed in 0..1000 {
        let t = random_trial(seed, 3, 3, 4, 3);
        let exact = pg2_exact(&t.ensemble, &t.x, &t.features, &t.spec).unwrap();
        let brute = pg2_brute_force(&t.ensemble, &t.x, &t.features, &t.spec).unwrap();
        assert!(
            relative_error(exact, brute) <= 1e-9,
            "seed {seed}: exact {exact} vs enumeration {brute}"
        );
    }
}

#[test]
fn leaf_probabilities_are_normalized() {
    for seed in 0..300 {
        let t = random_trial(10_000 + seed, 5, 4, 6, 4);
        let table = leaf_pair_probabilities(&t.ensemble, &t.x, &t.features, &t.spec).unwrap();
        assert!(table.normalization_error() <= 1e-9, "seed {seed}");
        for u in 0..table.num_leaves() {
            for v in 0..table.num_leaves() {
                let p = table.pair(u, v);
                assert!((0.0..=1.0 + 1e-12).contains(&p));
                assert_eq!(p, table.pair(v, u), "Π must be symmetric");
            }
        }
    }
}

#[test]
fn gaussian_table_matches_direct_interval_products() {
    // Π(u, v) for a single pair recomputed from the root-to-leaf paths.
    use prediction_gap::model::Node;

    fn paths(ens: &TreeEnsemble) -> Vec<Vec<(usize, f64, bool)>> {
        fn walk(
            t: &prediction_gap::Tree,
            i: usize,
            path: &mut Vec<(usize, f64, bool)>,
            out: &mut Vec<Vec<(usize, f64, bool)>>,
        ) {
            match *t.node(i) {
                Node::Leaf { .. } => out.push(path.clone()),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    path.push((feature, threshold, true));
                    walk(t, left, path, out);
                    path.pop();
                    path.push((feature, threshold, false));
                    walk(t, right, path, out);
                    path.pop();
                }
            }
        }
        let mut out = Vec::new();
        for t in ens.trees() {
            walk(t, 0, &mut Vec::new(), &mut out);
        }
        out
    }

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let ens = SyntheticEnsemble {
        split_probability: 0.85,
        ..SyntheticEnsemble::complete(4, 4, 3)
    }
    .generate(&mut rng);
    let x = [0.2, -0.4, 0.9];
    let spec = PerturbationSpec::gaussian(0.6).unwrap();
    let dist = Distribution::gaussian(0.6).unwrap();
    let features = [0usize, 2];
    let table = leaf_pair_probabilities(&ens, &x, &features, &spec).unwrap();
    let leaf_paths = paths(&ens);
    for (u, pu) in leaf_paths.iter().enumerate() {
        for (v, pv) in leaf_paths.iter().enumerate() {
            let mut lo = [f64::NEG_INFINITY; 3];
            let mut hi = [f64::INFINITY; 3];
            for &(q, t, left) in pu.iter().chain(pv) {
                if left {
                    hi[q] = hi[q].min(t);
                } else {
                    lo[q] = lo[q].max(t);
                }
            }
            let mut expected = 1.0;
            for q in 0..3 {
                expected *= if features.contains(&q) {
                    if lo[q] < hi[q] {
                        dist.cdf(hi[q] - x[q]) - dist.cdf(lo[q] - x[q])
                    } else {
                        0.0
                    }
                } else if lo[q] <= x[q] && x[q] < hi[q] {
                    1.0
                } else {
                    0.0
                };
            }
            let got = table.pair(u, v);
            assert!(
                (got - expected).abs() <= 1e-12,
                "Π({u},{v}) = {got}, expected {expected}"
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn exact_matches_enumeration_proptest(seed in any::<u64>()) {
        let t = random_trial(seed, 5, 4, 6, 4);
        let exact = pg2_exact(&t.ensemble, &t.x, &t.features, &t.spec).unwrap();
        let brute = pg2_brute_force(&t.ensemble, &t.x, &t.features, &t.spec).unwrap();
        prop_assert!(relative_error(exact, brute) <= 1e-9, "exact {} vs enumeration {}", exact, brute);
    }
}
