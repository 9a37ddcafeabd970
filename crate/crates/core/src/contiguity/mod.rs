//! Spatial contiguity matrices: construction by k nearest neighbors, by
//! distance radius or by Delaunay triangulation, plus row normalization.

mod delaunay;
mod mtx;

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

use crate::balltree::BallTree;
use crate::error::{Error, Result};
use crate::geo::GeoPoint;

pub use delaunay::{project_azimuthal, triangulate, DelaunayReport};
pub use mtx::{read_matrix_market, write_matrix_market};

/// Sparse n×n neighbor matrix in compressed-row layout.
///
/// Diagonal entries are never stored and column indices are strictly
/// increasing within each row.
#[derive(Debug, Clone)]
pub struct SparseContiguity {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    weights: Vec<f64>,
    /// Eigenvalues as (re, im) pairs, filled on first log-determinant use.
    pub(crate) spectrum: OnceLock<Vec<(f64, f64)>>,
}

impl PartialEq for SparseContiguity {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.row_ptr == other.row_ptr && self.col_idx == other.col_idx && self.weights == other.weights
    }
}

impl SparseContiguity {
    /// Builds from `(row, col, weight)` triplets. Duplicate positions,
    /// diagonal entries and negative or non-finite weights are rejected.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut weights = Vec::with_capacity(triplets.len());
        let mut prev: Option<(usize, usize)> = None;
        for &(i, j, w) in &triplets {
            if i >= n || j >= n {
                return Err(Error::invalid(format!("entry ({i}, {j}) outside {n}x{n}")));
            }
            if i == j {
                return Err(Error::invalid(format!("diagonal entry at row {i}")));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::invalid(format!("weight {w} at ({i}, {j}) must be finite and nonnegative")));
            }
            if prev == Some((i, j)) {
                return Err(Error::invalid(format!("duplicate entry ({i}, {j})")));
            }
            prev = Some((i, j));
            row_ptr[i + 1] += 1;
            col_idx.push(j);
            weights.push(w);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self { n, row_ptr, col_idx, weights, spectrum: OnceLock::new() })
    }

    fn from_neighbor_lists(lists: Vec<Vec<usize>>) -> Self {
        let n = lists.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for mut l in lists {
            l.sort_unstable();
            l.dedup();
            col_idx.extend(l);
            row_ptr.push(col_idx.len());
        }
        let weights = vec![1.0; col_idx.len()];
        Self { n, row_ptr, col_idx, weights, spectrum: OnceLock::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Column indices and weights of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.weights[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, w) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| w[k])
    }

    /// All stored entries as `(row, col, weight)`.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            let (c, w) = self.row(i);
            c.iter().zip(w).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).1.iter().sum()).collect()
    }

    /// `W·x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "vector length must match matrix order");
        (0..self.n)
            .map(|i| {
                let (c, w) = self.row(i);
                c.iter().zip(w).map(|(&j, &v)| v * x[j]).sum()
            })
            .collect()
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        (0..self.n).map(|i| self.row(i).1.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// True when every nonempty row sums to one within `tol`.
    pub fn is_row_normalized(&self, tol: f64) -> bool {
        (0..self.n).all(|i| {
            let (c, w) = self.row(i);
            c.is_empty() || (w.iter().sum::<f64>() - 1.0).abs() <= tol
        })
    }

    pub fn is_symmetric_pattern(&self) -> bool {
        self.triplets().all(|(i, j, _)| self.row(j).0.binary_search(&i).is_ok())
    }

    pub fn empty_rows(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.row_ptr[i] == self.row_ptr[i + 1]).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
        }
        d
    }

    /// SHA-256 over the canonical Matrix Market rendering.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(mtx::render(self).as_bytes());
        hex::encode(h.finalize())
    }

    /// Places this matrix's rows and columns at `positions` inside a larger
    /// `n`×`n` matrix; all other rows stay empty.
    pub fn embed(&self, positions: &[usize], n: usize) -> Result<Self> {
        if positions.len() != self.n {
            return Err(Error::invalid(format!("{} positions for order {}", positions.len(), self.n)));
        }
        let t = self.triplets().map(|(i, j, v)| (positions[i], positions[j], v)).collect();
        Self::from_triplets(n, t)
    }
}

/// W[i,j] = 1 iff j is among the k nearest neighbors of i (haversine, ties
/// to the lower index).
pub fn build_knn(points: &[GeoPoint], k: usize) -> Result<SparseContiguity> {
    let n = points.len();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("k = {k} must satisfy 0 < k < n = {n}")));
    }
    let tree = BallTree::new(points.to_vec());
    let lists = (0..n)
        .map(|i| tree.nearest(points[i], k, Some(i)).into_iter().map(|(j, _)| j).collect())
        .collect();
    Ok(SparseContiguity::from_neighbor_lists(lists))
}

/// W[i,j] = 1 iff `haversine(i, j) < r_w` and i ≠ j. Always symmetric.
pub fn build_radius(points: &[GeoPoint], r_w: f64) -> Result<SparseContiguity> {
    if !(r_w > 0.0 && r_w.is_finite()) {
        return Err(Error::invalid(format!("radius {r_w} must be positive")));
    }
    let tree = BallTree::new(points.to_vec());
    let lists = (0..points.len())
        .map(|i| tree.within(points[i], r_w).into_iter().filter(|&j| j != i).collect())
        .collect();
    Ok(SparseContiguity::from_neighbor_lists(lists))
}

/// W[i,j] = 1 iff (i, j) is an edge of the Delaunay triangulation of the
/// points projected about their centroid.
pub fn build_delaunay(points: &[GeoPoint]) -> Result<SparseContiguity> {
    build_delaunay_with_report(points).map(|(w, _)| w)
}

/// As [`build_delaunay`], also reporting how many duplicate coordinates
/// were folded onto a representative before triangulating.
pub fn build_delaunay_with_report(points: &[GeoPoint]) -> Result<(SparseContiguity, DelaunayReport)> {
    let (edges, report) = delaunay::delaunay_edges(points)?;
    let mut lists = vec![Vec::new(); points.len()];
    for (a, b) in edges {
        lists[a].push(b);
        lists[b].push(a);
    }
    Ok((SparseContiguity::from_neighbor_lists(lists), report))
}

/// Scales every nonempty row to unit sum.
pub fn row_normalize(w: &SparseContiguity) -> SparseContiguity {
    let mut out = w.clone();
    out.spectrum = OnceLock::new();
    for i in 0..w.n {
        let r = w.row_ptr[i]..w.row_ptr[i + 1];
        let s: f64 = w.weights[r.clone()].iter().sum();
        if s > 0.0 {
            for v in &mut out.weights[r] {
                *v /= s;
            }
        }
    }
    out
}

/// How to build W from point locations, written `knn:K`, `radius:KM` or
/// `delaunay` on the command line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WSpec {
    Knn(usize),
    Radius(f64),
    Delaunay,
}

impl WSpec {
    /// Builds the binary matrix and row-normalizes it.
    pub fn build(&self, points: &[GeoPoint]) -> Result<SparseContiguity> {
        let w = match *self {
            WSpec::Knn(k) => build_knn(points, k)?,
            WSpec::Radius(r) => build_radius(points, r)?,
            WSpec::Delaunay => build_delaunay(points)?,
        };
        Ok(row_normalize(&w))
    }
}

impl FromStr for WSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("bad W spec {s:?} (expected knn:K, radius:KM or delaunay)"));
        match s.split_once(':') {
            None if s.eq_ignore_ascii_case("delaunay") => Ok(WSpec::Delaunay),
            Some((kind, arg)) if kind.eq_ignore_ascii_case("knn") => {
                let k: usize = arg.parse().map_err(|_| bad())?;
                if k == 0 {
                    return Err(bad());
                }
                Ok(WSpec::Knn(k))
            }
            Some((kind, arg)) if kind.eq_ignore_ascii_case("radius") => {
                let r: f64 = arg.parse().map_err(|_| bad())?;
                if !(r > 0.0 && r.is_finite()) {
                    return Err(bad());
                }
                Ok(WSpec::Radius(r))
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for WSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WSpec::Knn(k) => write!(f, "knn:{k}"),
            WSpec::Radius(r) => write!(f, "radius:{r}"),
            WSpec::Delaunay => f.write_str("delaunay"),
        }
    }
}

/// Neighbor lists, one line per row, for diagnostics.
pub fn describe(w: &SparseContiguity) -> String {
    let mut s = String::new();
    for i in 0..w.n() {
        let _ = writeln!(s, "{i}: {:?}", w.row(i).0);
    }
    s
}
