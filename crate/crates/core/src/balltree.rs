//! Ball tree over points on the sphere with the haversine metric.
//!
//! Nodes are split with the farthest-pair heuristic: starting from the
//! node's first point, find the point farthest from it (pivot A), then the
//! point farthest from A (pivot B), and send every point to the nearer
//! pivot. No coordinate axes are involved, only metric evaluations.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geo::{haversine, GeoPoint};

pub const LEAF_SIZE: usize = 32;

/// Slack on triangle-inequality pruning bounds, in kilometers. Final
/// membership is always decided by a direct distance evaluation.
const PRUNE_SLACK_KM: f64 = 1e-9;

#[derive(Debug, Clone)]
struct Node {
    center: GeoPoint,
    radius: f64,
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct BallTree {
    points: Vec<GeoPoint>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn centroid(points: &[GeoPoint], ids: &[usize]) -> GeoPoint {
    let mut acc = [0.0; 3];
    for &i in ids {
        let v = points[i].to_unit_vector();
        for k in 0..3 {
            acc[k] += v[k];
        }
    }
    GeoPoint::from_unit_vector(acc)
}

fn farthest(points: &[GeoPoint], ids: &[usize], from: GeoPoint) -> usize {
    let mut best = 0;
    let mut best_d = -1.0;
    for (pos, &i) in ids.iter().enumerate() {
        let d = haversine(from, points[i]);
        if d > best_d {
            best_d = d;
            best = pos;
        }
    }
    best
}

impl BallTree {
    pub fn new(points: Vec<GeoPoint>) -> Self {
        let mut tree = BallTree { order: (0..points.len()).collect(), points, nodes: Vec::new() };
        if !tree.points.is_empty() {
            tree.build(0, tree.points.len());
        }
        tree
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let ids = &self.order[start..end];
        let center = centroid(&self.points, ids);
        let radius = ids.iter().map(|&i| haversine(center, self.points[i])).fold(0.0, f64::max);
        let node_id = self.nodes.len();
        self.nodes.push(Node { center, radius, start, end, children: None });
        if end - start <= LEAF_SIZE {
            return node_id;
        }

        let seed = self.points[ids[0]];
        let a = self.points[ids[farthest(&self.points, ids, seed)]];
        let b = self.points[ids[farthest(&self.points, ids, a)]];
        let (mut left, mut right): (Vec<usize>, Vec<usize>) =
            ids.iter().partition(|&&i| haversine(a, self.points[i]) <= haversine(b, self.points[i]));
        if left.is_empty() || right.is_empty() {
            // coincident points cannot be separated
            return node_id;
        }
        let mid = start + left.len();
        left.append(&mut right);
        self.order[start..end].copy_from_slice(&left);

        let l = self.build(start, mid);
        let r = self.build(mid, end);
        self.nodes[node_id].children = Some((l, r));
        node_id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[GeoPoint] {
        &self.points
    }

    /// Number of points `x` with `haversine(h, x) < r`.
    pub fn count_within(&self, h: GeoPoint, r: f64) -> usize {
        let mut singles = 0;
        let mut bulk = 0;
        self.visit_within(h, r, &mut |_| singles += 1, &mut |s, e| bulk += e - s);
        singles + bulk
    }

    /// Indices of points with `haversine(h, x) < r`, ascending.
    pub fn within(&self, h: GeoPoint, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        let mut ranges = Vec::new();
        self.visit_within(h, r, &mut |i| out.push(i), &mut |s, e| ranges.push((s, e)));
        for (s, e) in ranges {
            out.extend_from_slice(&self.order[s..e]);
        }
        out.sort_unstable();
        out
    }

    fn all_within(&self, node: &Node, h: GeoPoint, r: f64) -> bool {
        // the slack bound is conservative; confirm so results stay exact
        self.order[node.start..node.end].iter().all(|&i| haversine(h, self.points[i]) < r)
    }

    /// Calls `on_point` for single accepted points and `on_range` for whole
    /// nodes (as positions into `order`) that lie entirely inside the ball.
    fn visit_within(
        &self,
        h: GeoPoint,
        r: f64,
        on_point: &mut dyn FnMut(usize),
        on_range: &mut dyn FnMut(usize, usize),
    ) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = vec![0];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            let dc = haversine(h, node.center);
            if dc - node.radius > r + PRUNE_SLACK_KM {
                continue;
            }
            if dc + node.radius < r - PRUNE_SLACK_KM && self.all_within(node, h, r) {
                on_range(node.start, node.end);
                continue;
            }
            match node.children {
                Some((a, b)) => {
                    stack.push(b);
                    stack.push(a);
                }
                None => {
                    for &i in &self.order[node.start..node.end] {
                        if haversine(h, self.points[i]) < r {
                            on_point(i);
                        }
                    }
                }
            }
        }
    }

    /// The `k` nearest points to `h` ordered by distance then index, skipping
    /// the point at index `exclude` if given.
    pub fn nearest(&self, h: GeoPoint, k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.nearest_in(0, h, k, exclude, &mut heap);
        heap.into_sorted_vec().into_iter().map(|c| (c.index, c.dist)).collect()
    }

    fn nearest_in(&self, id: usize, h: GeoPoint, k: usize, exclude: Option<usize>, heap: &mut BinaryHeap<Candidate>) {
        let node = &self.nodes[id];
        let lower = haversine(h, node.center) - node.radius - PRUNE_SLACK_KM;
        if heap.len() == k && lower > heap.peek().map_or(f64::INFINITY, |c| c.dist) {
            return;
        }
        match node.children {
            Some((a, b)) => {
                let da = haversine(h, self.nodes[a].center);
                let db = haversine(h, self.nodes[b].center);
                let (first, second) = if da <= db { (a, b) } else { (b, a) };
                self.nearest_in(first, h, k, exclude, heap);
                self.nearest_in(second, h, k, exclude, heap);
            }
            None => {
                for &i in &self.order[node.start..node.end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let c = Candidate { dist: haversine(h, self.points[i]), index: i };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
        }
    }

    /// Checks that every node's ball contains all points below it and that
    /// every point is stored exactly once.
    pub fn check_invariants(&self) -> bool {
        let mut seen = vec![false; self.points.len()];
        for &i in &self.order {
            if std::mem::replace(&mut seen[i], true) {
                return false;
            }
        }
        seen.iter().all(|&s| s)
            && self.nodes.iter().all(|n| {
                self.order[n.start..n.end].iter().all(|&i| haversine(n.center, self.points[i]) <= n.radius)
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::seeded_rng;
    use rand::Rng;

    fn random_points(n: usize, seed: u64) -> Vec<GeoPoint> {
        let mut rng = seeded_rng(seed);
        (0..n)
            .map(|_| GeoPoint::new(51.3 + 0.4 * rng.random::<f64>(), -0.5 + 0.6 * rng.random::<f64>()).unwrap())
            .collect()
    }

    #[test]
    fn empty_tree() {
        let t = BallTree::new(Vec::new());
        let h = GeoPoint::new(0.0, 0.0).unwrap();
        assert_eq!(t.count_within(h, 10.0), 0);
        assert!(t.nearest(h, 3, None).is_empty());
        assert!(t.check_invariants());
    }

    #[test]
    fn radius_queries_match_linear_scan() {
        let pts = random_points(3000, 5);
        let t = BallTree::new(pts.clone());
        assert!(t.check_invariants());
        let mut rng = seeded_rng(6);
        for _ in 0..50 {
            let h = GeoPoint::new(51.3 + 0.4 * rng.random::<f64>(), -0.5 + 0.6 * rng.random::<f64>()).unwrap();
            let r = 0.1 + 10.0 * rng.random::<f64>();
            let brute: Vec<usize> = (0..pts.len()).filter(|&i| haversine(h, pts[i]) < r).collect();
            assert_eq!(t.within(h, r), brute);
            assert_eq!(t.count_within(h, r), brute.len());
        }
    }

    #[test]
    fn knn_matches_linear_scan() {
        let pts = random_points(800, 9);
        let t = BallTree::new(pts.clone());
        for q in [0usize, 17, 400, 799] {
            let mut brute: Vec<(usize, f64)> =
                (0..pts.len()).filter(|&j| j != q).map(|j| (j, haversine(pts[q], pts[j]))).collect();
            brute.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            brute.truncate(7);
            assert_eq!(t.nearest(pts[q], 7, Some(q)), brute);
        }
    }

    #[test]
    fn coincident_points_are_a_leaf() {
        let p = GeoPoint::new(10.0, 10.0).unwrap();
        let t = BallTree::new(vec![p; 100]);
        assert!(t.check_invariants());
        assert_eq!(t.count_within(p, 1e-6), 100);
        let nn = t.nearest(p, 3, Some(0));
        assert_eq!(nn.iter().map(|x| x.0).collect::<Vec<_>>(), vec![1, 2, 3]);
    }
}
