//! CART classification trees on dense numeric features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ForestError, Result};

/// One node of a flattened tree. Leaves have `feature == -1` and child
/// indices of -1; internal nodes send `x[feature] < threshold` left.
/// `counts` are the class-0 and class-1 sample counts reaching the node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub feature: i64,
    pub threshold: f64,
    pub left: i64,
    pub right: i64,
    pub counts: [u64; 2],
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.feature < 0
    }

    /// Class-1 fraction of the samples at this node.
    pub fn probability(&self) -> f64 {
        let total = self.counts[0] + self.counts[1];
        if total == 0 {
            0.0
        } else {
            self.counts[1] as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

/// Gini impurity `1 - Σ p_c²`.
pub fn gini(counts: &[u64]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(ForestError::EmptyNode);
    }
    let t = total as f64;
    Ok(1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>())
}

/// Hyperparameters that shape a single tree.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_features: usize,
}

struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

/// `Σ c²/n` summed over children; maximizing it minimizes weighted Gini.
fn purity(counts: [u64; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    ((counts[0] * counts[0] + counts[1] * counts[1]) as f64) / n
}

impl Tree {
    /// Grows a tree on `sample`, a multiset of row indices into the
    /// column-major `columns`.
    pub(crate) fn grow<R: Rng>(
        columns: &[Vec<f64>],
        labels: &[u8],
        sample: Vec<usize>,
        params: &GrowParams,
        rng: &mut R,
    ) -> Tree {
        let mut tree = Tree { nodes: Vec::new() };
        tree.grow_node(columns, labels, sample, 0, params, rng);
        tree
    }

    fn grow_node<R: Rng>(
        &mut self,
        columns: &[Vec<f64>],
        labels: &[u8],
        sample: Vec<usize>,
        depth: usize,
        params: &GrowParams,
        rng: &mut R,
    ) -> usize {
        let mut counts = [0u64; 2];
        for &i in &sample {
            counts[labels[i] as usize] += 1;
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            feature: -1,
            threshold: 0.0,
            left: -1,
            right: -1,
            counts,
        });

        let pure = counts[0] == 0 || counts[1] == 0;
        let too_small = sample.len() < 2 * params.min_samples_leaf;
        let too_deep = params.max_depth.is_some_and(|d| depth >= d);
        if pure || too_small || too_deep {
            return id;
        }

        let Some(split) = best_split(columns, labels, &sample, counts, params, rng) else {
            return id;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = sample
            .into_iter()
            .partition(|&i| columns[split.feature][i] < split.threshold);
        let l = self.grow_node(columns, labels, left, depth + 1, params, rng);
        let r = self.grow_node(columns, labels, right, depth + 1, params, rng);
        let node = &mut self.nodes[id];
        node.feature = split.feature as i64;
        node.threshold = split.threshold;
        node.left = l as i64;
        node.right = r as i64;
        id
    }

    /// Index of the leaf `row` lands in.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            if node.is_leaf() {
                return i;
            }
            i = if row[node.feature as usize] < node.threshold {
                node.left as usize
            } else {
                node.right as usize
            };
        }
    }

    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        self.nodes[self.leaf_index(row)].probability()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            let n = &nodes[i];
            if n.is_leaf() {
                0
            } else {
                1 + walk(nodes, n.left as usize).max(walk(nodes, n.right as usize))
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Feature indices used by internal nodes, ascending and deduplicated.
    pub fn features_used(&self) -> Vec<usize> {
        let mut used: Vec<usize> = self
            .nodes
            .iter()
            .filter(|n| !n.is_leaf())
            .map(|n| n.feature as usize)
            .collect();
        used.sort_unstable();
        used.dedup();
        used
    }

    /// Structural checks for a deserialized tree: children come after their
    /// parent, every node is reachable exactly once, features are in range.
    pub fn validate(&self, n_features: usize) -> std::result::Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if node.is_leaf() {
                if node.feature != -1 || node.left != -1 || node.right != -1 {
                    return Err(format!("leaf {i} is malformed"));
                }
                continue;
            }
            if node.feature as usize >= n_features {
                return Err(format!(
                    "node {i} references feature {} of {n_features}",
                    node.feature
                ));
            }
            if !node.threshold.is_finite() {
                return Err(format!("node {i} has a non-finite threshold"));
            }
            for child in [node.left, node.right] {
                if child <= i as i64 || child as usize >= self.nodes.len() {
                    return Err(format!("node {i} has invalid child {child}"));
                }
                parents[child as usize] += 1;
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return Err("nodes do not form a tree".into());
        }
        Ok(())
    }
}

/// Best Gini split over `max_features` features sampled without
/// replacement. Features are scanned in ascending index order and
/// thresholds in ascending order; only a strictly better score replaces
/// the incumbent, so ties go to the lower feature, then lower threshold.
fn best_split<R: Rng>(
    columns: &[Vec<f64>],
    labels: &[u8],
    sample: &[usize],
    counts: [u64; 2],
    params: &GrowParams,
    rng: &mut R,
) -> Option<Split> {
    let p = columns.len();
    let mut features = rand::seq::index::sample(rng, p, params.max_features.min(p)).into_vec();
    features.sort_unstable();

    let parent = purity(counts);
    let min_leaf = params.min_samples_leaf as u64;
    let n = sample.len() as u64;
    let mut best: Option<Split> = None;
    let mut pairs: Vec<(f64, u8)> = Vec::with_capacity(sample.len());
    for f in features {
        pairs.clear();
        pairs.extend(sample.iter().map(|&i| (columns[f][i], labels[i])));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = [0u64; 2];
        for k in 0..pairs.len() - 1 {
            left[pairs[k].1 as usize] += 1;
            let (a, b) = (pairs[k].0, pairs[k + 1].0);
            if a == b {
                continue;
            }
            let n_left = k as u64 + 1;
            if n_left < min_leaf || n - n_left < min_leaf {
                continue;
            }
            let right = [counts[0] - left[0], counts[1] - left[1]];
            let score = purity(left) + purity(right);
            if score <= parent * (1.0 + 1e-12) {
                continue;
            }
            if best.as_ref().map_or(true, |s| score > s.score) {
                let mid = a + (b - a) / 2.0;
                let threshold = if mid > a { mid } else { b };
                best = Some(Split {
                    feature: f,
                    threshold,
                    score,
                });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn params(min_leaf: usize) -> GrowParams {
        GrowParams {
            max_depth: None,
            min_samples_leaf: min_leaf,
            max_features: 1,
        }
    }

    #[test]
    fn gini_values() {
        assert_eq!(gini(&[10, 0]).unwrap(), 0.0);
        assert_eq!(gini(&[5, 5]).unwrap(), 0.5);
        assert!((gini(&[2, 6]).unwrap() - 0.375).abs() < 1e-15);
        assert!(gini(&[0, 0]).is_err());
    }

    #[test]
    fn one_dimensional_threshold_is_midpoint() {
        let x = vec![vec![1.0, 2.0, 4.0, 5.0]];
        let y = vec![0, 0, 1, 1];
        let tree = Tree::grow(&x, &y, vec![0, 1, 2, 3], &params(1), &mut stream(0, Purpose::Tree, 0));
        assert_eq!(tree.nodes.len(), 3);
        assert_eq!(tree.nodes[0].feature, 0);
        assert_eq!(tree.nodes[0].threshold, 3.0);
        assert_eq!(tree.depth(), 1);
        assert_eq!(tree.predict_proba(&[2.5]), 0.0);
        assert_eq!(tree.predict_proba(&[3.0]), 1.0);
    }

    #[test]
    fn single_class_is_one_leaf() {
        let x = vec![vec![1.0, 2.0, 3.0]];
        let tree = Tree::grow(&x, &[1, 1, 1], vec![0, 1, 2], &params(1), &mut stream(0, Purpose::Tree, 0));
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.predict_proba(&[0.0]), 1.0);
    }

    #[test]
    fn adjacent_floats_split_correctly() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let x = vec![vec![a, b]];
        let tree = Tree::grow(&x, &[0, 1], vec![0, 1], &params(1), &mut stream(0, Purpose::Tree, 0));
        assert_eq!(tree.predict_proba(&[a]), 0.0);
        assert_eq!(tree.predict_proba(&[b]), 1.0);
    }

    #[test]
    fn min_leaf_blocks_small_children() {
        let x = vec![vec![1.0, 2.0, 4.0, 5.0]];
        let tree = Tree::grow(&x, &[0, 0, 1, 1], vec![0, 1, 2, 3], &params(3), &mut stream(0, Purpose::Tree, 0));
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.predict_proba(&[0.0]), 0.5);
    }

    #[test]
    fn validate_rejects_cycles_and_range() {
        let leaf = Node { feature: -1, threshold: 0.0, left: -1, right: -1, counts: [1, 0] };
        let mut t = Tree {
            nodes: vec![
                Node { feature: 0, threshold: 0.5, left: 1, right: 2, counts: [1, 1] },
                leaf.clone(),
                leaf,
            ],
        };
        assert!(t.validate(1).is_ok());
        assert!(t.validate(0).is_err());
        t.nodes[0].right = 1;
        assert!(t.validate(1).is_err());
    }
}
