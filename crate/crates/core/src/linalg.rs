//! Dense least squares on top of faer and a small sparse LU for diagonally
//! dominant systems of the form `I - rho W`.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use faer::prelude::*;
use faer::Mat;

use crate::contiguity::SparseContiguity;
use crate::error::{Error, Result};

/// Relative threshold on |R_jj| below which a column counts as dependent.
const RANK_TOL: f64 = 1e-10;

/// Row-major `n`×`k` slice into a faer matrix.
pub(crate) fn mat_from_rows(data: &[f64], n: usize, k: usize) -> Mat<f64> {
    Mat::from_fn(n, k, |i, j| data[i * k + j])
}

/// Least-squares solution of `X B = RHS` by Householder QR. `names` label
/// the columns of `X` in the rank-deficiency error.
pub(crate) fn least_squares(x: &Mat<f64>, rhs: &Mat<f64>, names: &[String]) -> Result<Mat<f64>> {
    let (n, k) = (x.nrows(), x.ncols());
    if n < k {
        return Err(Error::RankDeficient { columns: names.iter().skip(n).cloned().collect() });
    }
    let qr = x.qr();
    let r = qr.thin_R();
    let scale = (0..k).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    let dependent: Vec<String> = (0..k)
        .filter(|&j| !(r[(j, j)].abs() > RANK_TOL * scale.max(f64::MIN_POSITIVE)))
        .map(|j| names.get(j).cloned().unwrap_or_else(|| format!("#{j}")))
        .collect();
    if !dependent.is_empty() {
        return Err(Error::RankDeficient { columns: dependent });
    }
    Ok(qr.solve_lstsq(rhs))
}

/// Reverse Cuthill–McKee ordering of the symmetrized pattern of `w`.
fn rcm_order(w: &SparseContiguity) -> Vec<usize> {
    let n = w.n();
    let mut adj = vec![Vec::new(); n];
    for (i, j, _) in w.triplets() {
        adj[i].push(j);
        adj[j].push(i);
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (adj[i].len(), i));
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            next.sort_by_key(|&u| (adj[u].len(), u));
            for u in next {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// LU factors of `P (I - rho W) Pᵀ` without pivoting. Rows of `I - rho W`
/// are strictly diagonally dominant for |rho| < 1 and row-normalized `W`,
/// where elimination without pivoting is stable.
#[derive(Debug, Clone)]
pub struct SparseLu {
    perm: Vec<usize>,
    /// Strictly lower part of L (unit diagonal implied), per permuted row.
    lower: Vec<Vec<(usize, f64)>>,
    /// Upper part of U, diagonal first, per permuted row.
    upper: Vec<Vec<(usize, f64)>>,
}

impl SparseLu {
    pub fn factor(w: &SparseContiguity, rho: f64) -> Result<Self> {
        let n = w.n();
        let perm = rcm_order(w);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }

        let mut lower = Vec::with_capacity(n);
        let mut upper: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        let mut work = vec![0.0; n];
        let mut present = vec![false; n];
        for (i, &old) in perm.iter().enumerate() {
            let mut pattern = vec![i];
            work[i] = 1.0;
            present[i] = true;
            let mut pending = BinaryHeap::new();
            let (cols, vals) = w.row(old);
            for (&c, &v) in cols.iter().zip(vals) {
                let j = inv[c];
                if !present[j] {
                    present[j] = true;
                    pattern.push(j);
                    if j < i {
                        pending.push(Reverse(j));
                    }
                }
                work[j] -= rho * v;
            }

            let mut l_row = Vec::new();
            while let Some(Reverse(j)) = pending.pop() {
                let (_, pivot) = upper[j][0];
                let factor = work[j] / pivot;
                work[j] = 0.0;
                if factor == 0.0 {
                    continue;
                }
                l_row.push((j, factor));
                for &(k, u) in &upper[j][1..] {
                    if !present[k] {
                        present[k] = true;
                        pattern.push(k);
                        if k < i {
                            pending.push(Reverse(k));
                        }
                    }
                    work[k] -= factor * u;
                }
            }

            let pivot = work[i];
            let scale = 1.0 + rho.abs() * w.row(old).1.iter().map(|v| v.abs()).sum::<f64>();
            if !(pivot.abs() > 1e-13 * scale) {
                return Err(Error::numeric(format!(
                    "I - rho W is singular to working precision at rho = {rho} (pivot {pivot:e})"
                )));
            }
            let mut u_row = vec![(i, pivot)];
            pattern.sort_unstable();
            for &k in &pattern {
                if k > i && work[k] != 0.0 {
                    u_row.push((k, work[k]));
                }
                work[k] = 0.0;
                present[k] = false;
            }
            lower.push(l_row);
            upper.push(u_row);
        }
        Ok(Self { perm, lower, upper })
    }

    /// ln |det(I - rho W)|.
    pub fn log_abs_det(&self) -> f64 {
        self.upper.iter().map(|r| r[0].1.abs().ln()).sum()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.perm.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let s: f64 = self.lower[i].iter().map(|&(j, l)| l * y[j]).sum();
            y[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.upper[i];
            let s: f64 = row[1..].iter().map(|&(k, u)| u * y[k]).sum();
            y[i] = (y[i] - s) / row[0].1;
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}
