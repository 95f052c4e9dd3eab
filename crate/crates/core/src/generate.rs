//! Seeded random tree ensembles for stress tests.
//!
//! Thresholds are drawn from a small shared pool so that different trees
//! split on identical values; coincident endpoints are the geometric edge
//! case the sweep has to get right.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::interval::Interval;
use crate::model::{AggregationKind, AggregationRule, EnsembleModel, TreeNode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomModelSpec {
    /// Inclusive range of the number of trees.
    pub trees: (usize, usize),
    /// Inclusive range of tree depths.
    pub depth: (usize, usize),
    /// Inclusive range of the feature count.
    pub dims: (usize, usize),
    /// Score columns; only used by softmax models.
    pub classes: usize,
    pub seed: u64,
    pub aggregation: AggregationKind,
    /// Number of distinct threshold values, shared by every feature.
    pub threshold_pool: usize,
    /// Probability that a node below the root stops splitting early.
    pub early_leaf: f64,
    pub base_score: f64,
}

impl Default for RandomModelSpec {
    fn default() -> Self {
        RandomModelSpec {
            trees: (1, 8),
            depth: (1, 3),
            dims: (1, 4),
            classes: 2,
            seed: 0,
            aggregation: AggregationKind::LogisticSum,
            threshold_pool: 16,
            early_leaf: 0.1,
            base_score: 0.0,
        }
    }
}

impl RandomModelSpec {
    pub fn validate(&self) -> Result<(), String> {
        let ranges = [("trees", self.trees), ("depth", self.depth), ("dims", self.dims)];
        for (name, (lo, hi)) in ranges {
            if lo > hi {
                return Err(format!("{name} range [{lo}, {hi}] is empty"));
            }
        }
        if self.trees.0 == 0 || self.dims.0 == 0 {
            return Err("models need at least one tree and one feature".into());
        }
        if self.threshold_pool == 0 {
            return Err("threshold pool must not be empty".into());
        }
        if self.aggregation == AggregationKind::SoftmaxSum && self.classes < 2 {
            return Err("softmax models need at least two classes".into());
        }
        Ok(())
    }

    /// Threshold values `k / 2` centered on zero.
    pub fn pool(&self) -> Vec<f64> {
        let half = (self.threshold_pool / 2) as i64;
        (0..self.threshold_pool as i64)
            .map(|k| (k - half) as f64 * 0.5)
            .collect()
    }
}

/// Generates the trees of a random model; the same spec always yields the
/// same trees.
pub fn generate_trees(spec: &RandomModelSpec) -> (Vec<TreeNode>, usize) {
    spec.validate().expect("invalid random model spec");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dims = rng.random_range(spec.dims.0..=spec.dims.1);
    let num_trees = rng.random_range(spec.trees.0..=spec.trees.1);
    let pool = spec.pool();
    let trees = (0..num_trees)
        .map(|_| {
            let depth = rng.random_range(spec.depth.0..=spec.depth.1);
            let mut path = vec![Interval::FULL; dims];
            grow(&mut rng, spec, &pool, &mut path, 0, depth)
        })
        .collect();
    (trees, dims)
}

fn grow(
    rng: &mut ChaCha8Rng,
    spec: &RandomModelSpec,
    pool: &[f64],
    path: &mut [Interval],
    depth: usize,
    max_depth: usize,
) -> TreeNode {
    let stop = depth >= max_depth || (depth > 0 && rng.random_bool(spec.early_leaf));
    if !stop {
        for _ in 0..4 {
            let f = rng.random_range(0..path.len());
            let iv = path[f];
            let inside: Vec<f64> = pool.iter().copied().filter(|&t| iv.lo < t && t < iv.hi).collect();
            if inside.is_empty() {
                continue;
            }
            let t = inside[rng.random_range(0..inside.len())];
            path[f] = iv.below(t);
            let left = grow(rng, spec, pool, path, depth + 1, max_depth);
            path[f] = iv.at_or_above(t);
            let right = grow(rng, spec, pool, path, depth + 1, max_depth);
            path[f] = iv;
            return TreeNode::split(f, t, left, right);
        }
    }
    // multiples of 1/8 keep sums exact and make score ties likely
    TreeNode::leaf(rng.random_range(-8i32..=8) as f64 / 8.0)
}

/// Builds a random model from `spec`.
pub fn generate_model(spec: &RandomModelSpec) -> EnsembleModel {
    let (trees, dims) = generate_trees(spec);
    let classes = match spec.aggregation {
        AggregationKind::SoftmaxSum => spec.classes,
        _ => 1,
    };
    EnsembleModel::from_trees(
        &trees,
        dims,
        classes,
        AggregationRule::new(spec.aggregation, spec.base_score),
        None,
    )
    .expect("generated trees are consistent")
}

/// Random point around the model's thresholds; a quarter of the
/// coordinates land exactly on a threshold.
pub fn random_point(model: &EnsembleModel, rng: &mut impl Rng) -> Vec<f64> {
    (0..model.dims)
        .map(|d| {
            let mut ends: Vec<f64> = model
                .leaves
                .iter()
                .flat_map(|l| [l.intervals[d].lo, l.intervals[d].hi])
                .filter(|v| v.is_finite())
                .collect();
            if ends.is_empty() {
                return rng.random_range(-4.0..4.0);
            }
            if rng.random_bool(0.25) {
                return ends[rng.random_range(0..ends.len())];
            }
            ends.sort_by(f64::total_cmp);
            let (lo, hi) = (ends[0] - 1.0, ends[ends.len() - 1] + 1.0);
            rng.random_range(lo..hi)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::to_canonical_json;

    #[test]
    fn same_seed_same_model() {
        let spec = RandomModelSpec {
            seed: 42,
            ..RandomModelSpec::default()
        };
        assert_eq!(
            to_canonical_json(&generate_model(&spec)),
            to_canonical_json(&generate_model(&spec))
        );
        let other = RandomModelSpec { seed: 43, ..spec };
        assert_ne!(
            to_canonical_json(&generate_model(&other)),
            to_canonical_json(&generate_model(&RandomModelSpec { seed: 42, ..other.clone() }))
        );
    }

    #[test]
    fn depth_one_gives_stumps() {
        for seed in 0..20 {
            let spec = RandomModelSpec {
                seed,
                depth: (1, 1),
                ..RandomModelSpec::default()
            };
            let (trees, _) = generate_trees(&spec);
            for tree in &trees {
                match tree {
                    TreeNode::Split { left, right, .. } => {
                        assert!(matches!(**left, TreeNode::Leaf { .. }));
                        assert!(matches!(**right, TreeNode::Leaf { .. }));
                    }
                    TreeNode::Leaf { .. } => panic!("root should split"),
                }
            }
        }
    }

    #[test]
    fn rejects_empty_ranges() {
        let spec = RandomModelSpec {
            trees: (3, 2),
            ..RandomModelSpec::default()
        };
        assert!(spec.validate().is_err());
    }
}
