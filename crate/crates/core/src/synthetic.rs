//! Random tree ensembles for tests, benchmarks and fixtures.

use rand::Rng;

use crate::model::{Tree, TreeEnsemble};

/// Shape parameters for [`SyntheticEnsemble::generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEnsemble {
    pub num_trees: usize,
    pub max_depth: usize,
    pub num_features: usize,
    /// Chance that a node above `max_depth` splits; 1.0 gives complete trees.
    pub split_probability: f64,
    /// Thresholds are uniform on `[-threshold_scale, threshold_scale]`.
    pub threshold_scale: f64,
    /// Leaf values are uniform on `[-leaf_scale, leaf_scale]`.
    pub leaf_scale: f64,
    /// Rounds thresholds to multiples of this step so that inputs and offsets
    /// drawn from the same grid can land exactly on a threshold.
    pub threshold_grid: Option<f64>,
}

impl SyntheticEnsemble {
    pub fn complete(num_trees: usize, depth: usize, num_features: usize) -> Self {
        Self {
            num_trees,
            max_depth: depth,
            num_features,
            split_probability: 1.0,
            threshold_scale: 1.5,
            leaf_scale: 1.0,
            threshold_grid: None,
        }
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> TreeEnsemble {
        assert!(
            self.num_features > 0,
            "synthetic ensembles need at least one feature"
        );
        let trees = (0..self.num_trees)
            .map(|_| self.tree(rng, self.max_depth))
            .collect();
        TreeEnsemble::new(trees, self.num_features).expect("generated trees are valid")
    }

    fn tree<R: Rng + ?Sized>(&self, rng: &mut R, depth_left: usize) -> Tree {
        if depth_left == 0 || !rng.random_bool(self.split_probability) {
            return Tree::leaf(rng.random_range(-self.leaf_scale..=self.leaf_scale));
        }
        let feature = rng.random_range(0..self.num_features);
        let mut threshold = rng.random_range(-self.threshold_scale..=self.threshold_scale);
        if let Some(step) = self.threshold_grid {
            threshold = (threshold / step).round() * step;
        }
        let left = self.tree(rng, depth_left - 1);
        let right = self.tree(rng, depth_left - 1);
        Tree::split(feature, threshold, left, right)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn complete_trees_have_full_size() {
        let ens = SyntheticEnsemble::complete(3, 4, 5).generate(&mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(ens.node_count(), 3 * 31);
        assert_eq!(ens.leaf_count(), 3 * 16);
        assert!(ens.trees().iter().all(|t| t.depth() == 4));
    }

    #[test]
    fn grid_thresholds() {
        let cfg = SyntheticEnsemble {
            threshold_grid: Some(0.25),
            split_probability: 0.7,
            ..SyntheticEnsemble::complete(5, 3, 2)
        };
        let ens = cfg.generate(&mut ChaCha8Rng::seed_from_u64(2));
        for t in ens.trees() {
            for n in t.nodes() {
                if let crate::model::Node::Split { threshold, .. } = n {
                    assert_eq!((threshold / 0.25).fract(), 0.0);
                }
            }
        }
    }
}
