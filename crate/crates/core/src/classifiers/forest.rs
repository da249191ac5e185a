//! Random forest of Gini-split decision trees.
//!
//! Each tree sees a bootstrap sample of the training rows, considers
//! `floor(sqrt(d))` randomly drawn non-constant features per split, and grows
//! until its leaves are pure or hold fewer than two rows.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        votes_valid: bool,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn votes_valid(&self, x: &[f64]) -> bool {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { votes_valid } => return *votes_valid,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
}

/// SplitMix64 step, used to derive independent per-task seeds.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gini(valid: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = valid as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    max_features: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let valid = idx.iter().filter(|&&i| self.y[i]).count();
        // ties vote imposter
        self.nodes.push(Node::Leaf {
            votes_valid: 2 * valid > idx.len(),
        });
        self.nodes.len() - 1
    }

    /// Best (weighted child impurity, threshold) for one feature, if it has
    /// at least two distinct values.
    fn best_split(&self, idx: &[usize], feature: usize) -> Option<(f64, f64)> {
        let mut order: Vec<(f64, bool)> = idx
            .iter()
            .map(|&i| (self.x[i][feature], self.y[i]))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        if order[0].0 == order[order.len() - 1].0 {
            return None;
        }
        let n = order.len();
        let total_valid = order.iter().filter(|p| p.1).count();
        let mut left_valid = 0;
        let mut best: Option<(f64, f64)> = None;
        for k in 1..n {
            left_valid += usize::from(order[k - 1].1);
            let (lo, hi) = (order[k - 1].0, order[k].0);
            if lo == hi {
                continue;
            }
            let imp = (k as f64 * gini(left_valid, k)
                + (n - k) as f64 * gini(total_valid - left_valid, n - k))
                / n as f64;
            if best.is_none_or(|(b, _)| imp < b) {
                let mid = lo + (hi - lo) / 2.0;
                let threshold = if mid < hi { mid } else { lo };
                best = Some((imp, threshold));
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>) -> usize {
        let valid = idx.iter().filter(|&&i| self.y[i]).count();
        if idx.len() < 2 || valid == 0 || valid == idx.len() {
            return self.leaf(&idx);
        }

        let d = self.x[0].len();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(&mut self.rng);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut examined = 0;
        for f in features {
            if examined == self.max_features {
                break;
            }
            if let Some((imp, thr)) = self.best_split(&idx, f) {
                examined += 1;
                if best.is_none_or(|(b, _, _)| imp < b) {
                    best = Some((imp, f, thr));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return self.leaf(&idx);
        };

        let (l, r): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { votes_valid: false });
        let left = self.grow(l);
        let right = self.grow(r);
        self.nodes[at] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }
}

impl RandomForest {
    pub fn fit(x: &[Vec<f64>], y: &[bool], n_estimators: usize, seed: u64) -> RandomForest {
        let d = x[0].len();
        let max_features = ((d as f64).sqrt().floor() as usize).max(1);
        let trees = (0..n_estimators)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
                let n = x.len();
                let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let mut b = Builder {
                    x,
                    y,
                    max_features,
                    rng,
                    nodes: Vec::new(),
                };
                b.grow(sample);
                Tree { nodes: b.nodes }
            })
            .collect();
        RandomForest { trees }
    }

    /// Fraction of trees voting valid.
    pub fn score(&self, x: &[f64]) -> f64 {
        let votes = self.trees.iter().filter(|t| t.votes_valid(x)).count();
        votes as f64 / self.trees.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_tree_separates_line() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let f = RandomForest::fit(&x, &y, 25, 3);
        assert_eq!(f.score(&[-5.0]), 0.0);
        assert_eq!(f.score(&[30.0]), 1.0);
    }

    #[test]
    fn unsplittable_node_is_leaf() {
        let x = vec![vec![1.0], vec![1.0], vec![1.0]];
        let y = vec![true, false, false];
        let f = RandomForest::fit(&x, &y, 5, 1);
        for t in &f.trees {
            assert!(matches!(t.nodes[..], [Node::Leaf { .. }]));
        }
    }

    #[test]
    fn tie_leaf_votes_imposter() {
        let mut b = Builder {
            x: &[vec![0.0], vec![0.0]],
            y: &[true, false],
            max_features: 1,
            rng: ChaCha8Rng::seed_from_u64(0),
            nodes: vec![],
        };
        b.grow(vec![0, 1]);
        assert_eq!(b.nodes, vec![Node::Leaf { votes_valid: false }]);
    }

    #[test]
    fn seeds_differ_per_stream() {
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}
