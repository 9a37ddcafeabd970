//! Bagged CART regression trees.
//!
//! Every feature is considered at every split and trees grow until leaves
//! are pure. A split sends `x <= t` left where `t` is the largest value seen
//! on the left side, so the fitted partition depends only on the order of
//! each feature's values.

use rand::Rng;
use rayon::prelude::*;

use super::EstimatorSpec;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::geo::{derive_seed, seeded_rng};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    id = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    /// Grows a tree on rows with nonzero `weights`. `order[f]` lists all
    /// rows sorted by feature `f`, ties by row index.
    fn grow(cols: &[Vec<f64>], y: &[f64], order: &[Vec<u32>], weights: &[u32]) -> Tree {
        let k = cols.len();
        let mut lists: Vec<Vec<u32>> =
            order.iter().map(|o| o.iter().copied().filter(|&r| weights[r as usize] > 0).collect()).collect();
        let m = if k > 0 { lists[0].len() } else { weights.iter().filter(|&&w| w > 0).count() };
        let rows: Vec<u32> = if k > 0 {
            Vec::new()
        } else {
            (0..weights.len() as u32).filter(|&r| weights[r as usize] > 0).collect()
        };
        let mut goes_left = vec![false; y.len()];
        let mut scratch: Vec<u32> = Vec::with_capacity(m);
        let mut nodes = vec![Node::Leaf(0.0)];
        // (node id, range start, range end)
        let mut stack = vec![(0usize, 0usize, m)];
        while let Some((id, lo, hi)) = stack.pop() {
            let members: &[u32] = if k > 0 { &lists[0][lo..hi] } else { &rows[lo..hi] };
            let (mut w_tot, mut s_tot) = (0.0, 0.0);
            let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
            for &r in members {
                let (w, v) = (f64::from(weights[r as usize]), y[r as usize]);
                w_tot += w;
                s_tot += w * v;
                y_min = y_min.min(v);
                y_max = y_max.max(v);
            }
            if y_min == y_max {
                nodes[id] = Node::Leaf(y_min);
                continue;
            }

            let mut best: Option<(f64, usize, f64, usize)> = None;
            for f in 0..k {
                let list = &lists[f][lo..hi];
                let col = &cols[f];
                let (mut w_l, mut s_l) = (0.0, 0.0);
                for p in 0..list.len() - 1 {
                    let r = list[p] as usize;
                    let w = f64::from(weights[r]);
                    w_l += w;
                    s_l += w * y[r];
                    let (a, b) = (col[r], col[list[p + 1] as usize]);
                    if a < b {
                        let s_r = s_tot - s_l;
                        let score = s_l * s_l / w_l + s_r * s_r / (w_tot - w_l);
                        if best.is_none_or(|(bs, ..)| score > bs) {
                            best = Some((score, f, a, p + 1));
                        }
                    }
                }
            }
            let Some((_, feature, threshold, n_left)) = best else {
                nodes[id] = Node::Leaf(s_tot / w_tot);
                continue;
            };

            for &r in &lists[feature][lo..hi] {
                goes_left[r as usize] = cols[feature][r as usize] <= threshold;
            }
            for list in &mut lists {
                scratch.clear();
                let seg = &mut list[lo..hi];
                let mut write = 0;
                for i in 0..seg.len() {
                    let r = seg[i];
                    if goes_left[r as usize] {
                        seg[write] = r;
                        write += 1;
                    } else {
                        scratch.push(r);
                    }
                }
                debug_assert_eq!(write, n_left);
                seg[write..].copy_from_slice(&scratch);
            }

            let left = nodes.len();
            nodes.push(Node::Leaf(0.0));
            nodes.push(Node::Leaf(0.0));
            nodes[id] = Node::Split { feature, threshold, left, right: left + 1 };
            stack.push((left + 1, lo + n_left, hi));
            stack.push((left, lo, lo + n_left));
        }
        Tree { nodes }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    trees: Vec<Tree>,
    n_features: usize,
}

impl ForestModel {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Per-row mean of the tree outputs, computed as an offset from the
    /// first tree so that identical outputs average to themselves exactly.
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.k() != self.n_features {
            return Err(Error::invalid(format!("forest has {} features, input has {}", self.n_features, x.k())));
        }
        let t = self.trees.len() as f64;
        Ok((0..x.n())
            .into_par_iter()
            .map(|i| {
                let row = x.row(i);
                let first = self.trees[0].predict_row(row);
                let offset: f64 = self.trees[1..].iter().map(|tr| tr.predict_row(row) - first).sum();
                first + offset / t
            })
            .collect())
    }
}

/// Fits `spec.rf_trees` trees in parallel; tree `t` draws its bootstrap from
/// `derive_seed(spec.seed, t)`, so results do not depend on scheduling.
pub fn fit_random_forest(x: &FeatureMatrix, y: &[f64], spec: &EstimatorSpec) -> Result<ForestModel> {
    let n = x.n();
    if y.len() != n {
        return Err(Error::invalid(format!("{} responses for {n} rows", y.len())));
    }
    if n < 2 {
        return Err(Error::invalid("random forest needs at least 2 rows"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite response"));
    }
    if spec.rf_trees == 0 {
        return Err(Error::Config("rf_trees must be at least 1".into()));
    }
    let cols: Vec<Vec<f64>> = (0..x.k()).map(|j| x.column(j)).collect();
    let order: Vec<Vec<u32>> = cols
        .iter()
        .map(|c| {
            let mut o: Vec<u32> = (0..n as u32).collect();
            o.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]).then(a.cmp(&b)));
            o
        })
        .collect();
    let trees = (0..spec.rf_trees)
        .into_par_iter()
        .map(|t| {
            let weights = if spec.rf_bootstrap {
                let mut rng = seeded_rng(derive_seed(spec.seed, t as u64));
                let mut w = vec![0u32; n];
                for _ in 0..n {
                    w[rng.random_range(0..n)] += 1;
                }
                w
            } else {
                vec![1u32; n]
            };
            Tree::grow(&cols, y, &order, &weights)
        })
        .collect();
    Ok(ForestModel { trees, n_features: x.k() })
}
