//! Random forest with Gini splits, bootstrap sampling, and random feature
//! subsets. Unlike the logistic models, single-class training data is fine:
//! every tree collapses to a constant leaf.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LearnError, SparseVec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Features examined per split; defaults to sqrt(dim) when None.
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 25,
            max_depth: 8,
            features_per_split: None,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    /// Class distribution [p_negative, p_positive]; sums to 1.
    Leaf { dist: [f64; 2] },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<TreeNode>,
    pub dim: usize,
    pub config: ForestConfig,
}

fn value_at(x: &SparseVec, feature: usize) -> f64 {
    x.binary_search_by_key(&feature, |&(i, _)| i)
        .map(|pos| x[pos].1)
        .unwrap_or(0.0)
}

fn gini(counts: [usize; 2]) -> f64 {
    let total = (counts[0] + counts[1]) as f64;
    if total == 0.0 {
        return 0.0;
    }
    let p0 = counts[0] as f64 / total;
    let p1 = counts[1] as f64 / total;
    1.0 - p0 * p0 - p1 * p1
}

fn leaf(indices: &[usize], y: &[bool]) -> TreeNode {
    let positives = indices.iter().filter(|&&i| y[i]).count();
    let total = indices.len().max(1) as f64;
    TreeNode::Leaf {
        dist: [
            (indices.len() - positives) as f64 / total,
            positives as f64 / total,
        ],
    }
}

fn build_tree(
    x: &[SparseVec],
    y: &[bool],
    indices: &[usize],
    dim: usize,
    depth: usize,
    config: &ForestConfig,
    rng: &mut ChaCha8Rng,
) -> TreeNode {
    let positives = indices.iter().filter(|&&i| y[i]).count();
    let pure = positives == 0 || positives == indices.len();
    if depth >= config.max_depth || indices.len() < 2 || pure {
        return leaf(indices, y);
    }

    let m = config
        .features_per_split
        .unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize)
        .clamp(1, dim);
    let mut features: Vec<usize> = (0..dim).collect();
    features.shuffle(rng);
    features.truncate(m);

    let parent_counts = [indices.len() - positives, positives];
    let parent_gini = gini(parent_counts);
    let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
    for &feature in &features {
        let mut values: Vec<f64> = indices.iter().map(|&i| value_at(&x[i], feature)).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.dedup();
        for pair in values.windows(2) {
            let threshold = (pair[0] + pair[1]) / 2.0;
            let mut left = [0usize; 2];
            let mut right = [0usize; 2];
            for &i in indices {
                let side = if value_at(&x[i], feature) <= threshold {
                    &mut left
                } else {
                    &mut right
                };
                side[usize::from(y[i])] += 1;
            }
            let n = indices.len() as f64;
            let weighted = (left[0] + left[1]) as f64 / n * gini(left)
                + (right[0] + right[1]) as f64 / n * gini(right);
            let gain = parent_gini - weighted;
            if gain > 1e-12 && best.map(|(g, _, _)| gain > g).unwrap_or(true) {
                best = Some((gain, feature, threshold));
            }
        }
    }

    let Some((_, feature, threshold)) = best else {
        return leaf(indices, y);
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
        .iter()
        .partition(|&&i| value_at(&x[i], feature) <= threshold);
    TreeNode::Split {
        feature,
        threshold,
        left: Box::new(build_tree(x, y, &left_idx, dim, depth + 1, config, rng)),
        right: Box::new(build_tree(x, y, &right_idx, dim, depth + 1, config, rng)),
    }
}

/// Trains `n_trees` trees on bootstrap samples. Deterministic given the seed.
pub fn train_forest(
    x: &[SparseVec],
    y: &[bool],
    dim: usize,
    config: &ForestConfig,
) -> Result<ForestModel, LearnError> {
    if x.len() != y.len() {
        return Err(LearnError::LengthMismatch {
            labels: y.len(),
            examples: x.len(),
        });
    }
    if x.len() < 2 {
        return Err(LearnError::TooFewExamples {
            need: 2,
            got: x.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trees = Vec::with_capacity(config.n_trees);
    for _ in 0..config.n_trees {
        let sample: Vec<usize> = (0..x.len()).map(|_| rng.gen_range(0..x.len())).collect();
        trees.push(build_tree(x, y, &sample, dim, 0, config, &mut rng));
    }
    Ok(ForestModel {
        trees,
        dim,
        config: *config,
    })
}

fn tree_vote(node: &TreeNode, x: &SparseVec) -> bool {
    match node {
        TreeNode::Leaf { dist } => dist[1] > dist[0],
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            if value_at(x, *feature) <= *threshold {
                tree_vote(left, x)
            } else {
                tree_vote(right, x)
            }
        }
    }
}

impl ForestModel {
    pub fn votes(&self, x: &SparseVec) -> (usize, usize) {
        let positive = self.trees.iter().filter(|t| tree_vote(t, x)).count();
        (self.trees.len() - positive, positive)
    }

    /// Majority of tree votes; ties go negative.
    pub fn predict(&self, x: &SparseVec) -> bool {
        let (negative, positive) = self.votes(x);
        positive > negative
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::dense_to_sparse;

    #[test]
    fn all_negative_training_predicts_negative() {
        let x: Vec<SparseVec> = (0..20)
            .map(|i| dense_to_sparse(&[i as f64, (i * 3 % 7) as f64]))
            .collect();
        let y = vec![false; 20];
        let model = train_forest(&x, &y, 2, &ForestConfig::default()).unwrap();
        for probe in &x {
            assert!(!model.predict(probe));
        }
        assert!(!model.predict(&dense_to_sparse(&[999.0, -5.0])));
    }

    #[test]
    fn stump_fits_separable_data() {
        let x: Vec<SparseVec> = (0..10)
            .map(|i| dense_to_sparse(&[if i < 5 { 0.0 } else { 1.0 }]))
            .collect();
        let y: Vec<bool> = (0..10).map(|i| i >= 5).collect();
        let config = ForestConfig {
            n_trees: 5,
            max_depth: 1,
            features_per_split: Some(1),
            seed: 4,
        };
        let model = train_forest(&x, &y, 1, &config).unwrap();
        let correct = x
            .iter()
            .zip(&y)
            .filter(|(xi, &yi)| model.predict(xi) == yi)
            .count();
        assert_eq!(correct, 10);
    }

    #[test]
    fn deterministic_given_seed() {
        let x: Vec<SparseVec> = (0..30)
            .map(|i| dense_to_sparse(&[(i % 5) as f64, (i % 3) as f64, i as f64 / 7.0]))
            .collect();
        let y: Vec<bool> = (0..30).map(|i| (i % 5) >= 2).collect();
        let a = train_forest(&x, &y, 3, &ForestConfig::default()).unwrap();
        let b = train_forest(&x, &y, 3, &ForestConfig::default()).unwrap();
        assert_eq!(a, b);
        let probes: Vec<SparseVec> = (0..10)
            .map(|i| dense_to_sparse(&[i as f64, (i % 4) as f64, 0.5]))
            .collect();
        for p in &probes {
            assert_eq!(a.predict(p), b.predict(p));
        }
    }

    #[test]
    fn leaf_distributions_sum_to_one() {
        fn check(node: &TreeNode) {
            match node {
                TreeNode::Leaf { dist } => {
                    assert!((dist[0] + dist[1] - 1.0).abs() < 1e-12);
                }
                TreeNode::Split { left, right, .. } => {
                    check(left);
                    check(right);
                }
            }
        }
        let x: Vec<SparseVec> = (0..40)
            .map(|i| dense_to_sparse(&[(i % 7) as f64, (i % 2) as f64]))
            .collect();
        let y: Vec<bool> = (0..40).map(|i| i % 3 == 0).collect();
        let model = train_forest(&x, &y, 2, &ForestConfig::default()).unwrap();
        for tree in &model.trees {
            check(tree);
        }
    }

    #[test]
    fn too_few_examples_rejected() {
        assert!(matches!(
            train_forest(&[vec![(0, 1.0)]], &[true], 1, &ForestConfig::default()),
            Err(LearnError::TooFewExamples { .. })
        ));
    }
}
