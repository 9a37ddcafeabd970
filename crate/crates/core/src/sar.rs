//! Spatial auto-regressive model `y = rho W y + X beta + eps`: maximum
//! likelihood fit, reduced-form prediction and the power-series solver.

use std::fmt::Write as _;

use faer::{Mat, Side};

use crate::contiguity::SparseContiguity;
use crate::error::{Error, Result};
use crate::linalg::{least_squares, mat_from_rows, SparseLu};

/// Largest order for which the log-determinant uses a dense spectrum.
pub const DENSE_SPECTRUM_MAX_N: usize = 5000;

const GRID_POINTS: usize = 50;
const EDGE_GAP: f64 = 1e-6;
const GOLDEN_WIDTH: f64 = 1e-8;
const ROW_SUM_TOL: f64 = 1e-9;

/// Regressors with a leading all-ones intercept column, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    names: Vec<String>,
    data: Vec<f64>,
    n: usize,
}

impl DesignMatrix {
    /// `names` and each row include the intercept column.
    pub fn new(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let k = names.len();
        if k == 0 {
            return Err(Error::invalid("design matrix needs at least the intercept column"));
        }
        for name in &names {
            if name.is_empty() || name.contains(['=', '\n', '\r', ',']) {
                return Err(Error::invalid(format!("bad column name {name:?}")));
            }
        }
        let mut data = Vec::with_capacity(rows.len() * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::invalid(format!("row {i} has {} values, expected {k}", row.len())));
            }
            if row[0] != 1.0 {
                return Err(Error::invalid(format!("row {i}: first column must be the intercept 1.0")));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite entry at row {i}, column {}", names[j])));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { names, data, n: rows.len() })
    }

    /// Prepends an `intercept` column to the given regressors.
    pub fn with_intercept(names: &[&str], rows: &[Vec<f64>]) -> Result<Self> {
        let all_names = std::iter::once("intercept").chain(names.iter().copied()).map(String::from).collect();
        let full: Vec<Vec<f64>> =
            rows.iter().map(|r| std::iter::once(1.0).chain(r.iter().copied()).collect()).collect();
        Self::new(all_names, &full)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.k();
        &self.data[i * k..(i + 1) * k]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.k() + j]
    }

    /// Copy with column `j` (not the intercept) multiplied by `c`.
    pub fn scale_column(&self, j: usize, c: f64) -> Result<Self> {
        if j == 0 || j >= self.k() || !c.is_finite() || c == 0.0 {
            return Err(Error::invalid(format!("cannot scale column {j} by {c}")));
        }
        let mut out = self.clone();
        let k = self.k();
        for i in 0..self.n {
            out.data[i * k + j] *= c;
        }
        Ok(out)
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.k());
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { names: self.names.clone(), data, n: idx.len() }
    }

    /// `X·beta`.
    pub fn mul(&self, beta: &[f64]) -> Vec<f64> {
        assert_eq!(beta.len(), self.k(), "coefficient count must match columns");
        (0..self.n).map(|i| self.row(i).iter().zip(beta).map(|(x, b)| x * b).sum()).collect()
    }

    pub(crate) fn to_mat(&self) -> Mat<f64> {
        mat_from_rows(&self.data, self.n, self.k())
    }
}

/// A fitted SAR model. `w_checksum` identifies the contiguity matrix used
/// for fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct SarModel {
    pub rho: f64,
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub loglik: f64,
    pub column_names: Vec<String>,
    pub n: usize,
    /// Open interval searched for rho.
    pub rho_bounds: (f64, f64),
    pub w_checksum: String,
}

impl SarModel {
    /// Flat `key=value` rendering. Floats use round-trip formatting.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "rho={}", self.rho);
        let _ = writeln!(s, "sigma2={}", self.sigma2);
        let _ = writeln!(s, "loglik={}", self.loglik);
        let _ = writeln!(s, "n={}", self.n);
        let _ = writeln!(s, "rho_lower={}", self.rho_bounds.0);
        let _ = writeln!(s, "rho_upper={}", self.rho_bounds.1);
        for (i, (name, b)) in self.column_names.iter().zip(&self.beta).enumerate() {
            let _ = writeln!(s, "beta[{i}].{name}={b}");
        }
        let _ = writeln!(s, "w_checksum={}", self.w_checksum);
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut rho = None;
        let mut sigma2 = None;
        let mut loglik = None;
        let mut n = None;
        let mut lower = None;
        let mut upper = None;
        let mut checksum = None;
        let mut betas: Vec<(usize, String, f64)> = Vec::new();
        let num = |key: &str, v: &str| -> Result<f64> {
            v.parse().map_err(|_| Error::invalid(format!("model field {key}: bad number {v:?}")))
        };
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) =
                line.split_once('=').ok_or_else(|| Error::invalid(format!("model line without '=': {line:?}")))?;
            match key {
                "rho" => rho = Some(num(key, value)?),
                "sigma2" => sigma2 = Some(num(key, value)?),
                "loglik" => loglik = Some(num(key, value)?),
                "rho_lower" => lower = Some(num(key, value)?),
                "rho_upper" => upper = Some(num(key, value)?),
                "n" => n = Some(value.parse().map_err(|_| Error::invalid(format!("model field n: {value:?}")))?),
                "w_checksum" => checksum = Some(value.to_string()),
                _ => {
                    let rest = key
                        .strip_prefix("beta[")
                        .and_then(|r| r.split_once("]."))
                        .ok_or_else(|| Error::invalid(format!("unknown model field {key:?}")))?;
                    let idx = rest.0.parse().map_err(|_| Error::invalid(format!("bad beta index in {key:?}")))?;
                    betas.push((idx, rest.1.to_string(), num(key, value)?));
                }
            }
        }
        betas.sort_by_key(|b| b.0);
        if betas.iter().enumerate().any(|(i, b)| b.0 != i) {
            return Err(Error::invalid("beta indices must be 0..k without gaps"));
        }
        let missing = |f: &str| Error::invalid(format!("model is missing {f}"));
        Ok(Self {
            rho: rho.ok_or_else(|| missing("rho"))?,
            sigma2: sigma2.ok_or_else(|| missing("sigma2"))?,
            loglik: loglik.ok_or_else(|| missing("loglik"))?,
            n: n.ok_or_else(|| missing("n"))?,
            rho_bounds: (lower.ok_or_else(|| missing("rho_lower"))?, upper.ok_or_else(|| missing("rho_upper"))?),
            w_checksum: checksum.ok_or_else(|| missing("w_checksum"))?,
            column_names: betas.iter().map(|b| b.1.clone()).collect(),
            beta: betas.iter().map(|b| b.2).collect(),
        })
    }
}

/// Diagonal `d` with `d_i W_ij = d_j W_ji` for all `i, j`, if one exists.
/// Then `D^{1/2} W D^{-1/2}` is symmetric and similar to `W`.
fn symmetrizer(w: &SparseContiguity) -> Option<Vec<f64>> {
    if !w.is_symmetric_pattern() {
        return None;
    }
    let n = w.n();
    let mut d = vec![0.0; n];
    let mut stack = Vec::new();
    for root in 0..n {
        if d[root] != 0.0 {
            continue;
        }
        d[root] = 1.0;
        stack.push(root);
        while let Some(i) = stack.pop() {
            let (cols, vals) = w.row(i);
            for (&j, &wij) in cols.iter().zip(vals) {
                let wji = w.get(j, i);
                if wij <= 0.0 || wji <= 0.0 {
                    return None;
                }
                let dj = d[i] * wij / wji;
                if d[j] == 0.0 {
                    d[j] = dj;
                    stack.push(j);
                } else if (d[j] - dj).abs() > 1e-10 * d[j] {
                    return None;
                }
            }
        }
    }
    Some(d)
}

fn compute_spectrum(w: &SparseContiguity) -> Result<Vec<(f64, f64)>> {
    let n = w.n();
    let fail = |e: &dyn std::fmt::Debug| Error::numeric(format!("eigenvalue computation failed: {e:?}"));
    if let Some(d) = symmetrizer(w) {
        let s = Mat::from_fn(n, n, |i, j| {
            let v = w.get(i, j);
            if v == 0.0 {
                0.0
            } else {
                v * (d[i] / d[j]).sqrt()
            }
        });
        let ev = s.self_adjoint_eigenvalues(Side::Lower).map_err(|e| fail(&e))?;
        return Ok(ev.into_iter().map(|l| (l, 0.0)).collect());
    }
    let dense = Mat::from_fn(n, n, |i, j| w.get(i, j));
    let ev = dense.eigenvalues().map_err(|e| fail(&e))?;
    Ok(ev.into_iter().map(|c| (c.re, c.im)).collect())
}

/// Eigenvalues of `w` as `(re, im)`, computed once and cached on `w`.
pub fn spectrum(w: &SparseContiguity) -> Result<&[(f64, f64)]> {
    if let Some(s) = w.spectrum.get() {
        return Ok(s);
    }
    let s = compute_spectrum(w)?;
    if s.iter().any(|(re, im)| !re.is_finite() || !im.is_finite()) {
        return Err(Error::numeric("eigenvalue computation produced non-finite values"));
    }
    // a concurrent caller may have won the race with an identical result
    let _ = w.spectrum.set(s);
    Ok(w.spectrum.get().expect("spectrum was just set"))
}

/// Interval `(rho_min, 1)` on which `I - rho W` is nonsingular, as used by
/// the likelihood search (before the 1e-6 inset).
pub fn admissible_interval(w: &SparseContiguity) -> Result<(f64, f64)> {
    if w.n() > DENSE_SPECTRUM_MAX_N {
        return Ok((-1.0 + EDGE_GAP, 1.0));
    }
    let lambda_min = spectrum(w)?
        .iter()
        .filter(|(_, im)| im.abs() <= 1e-10)
        .map(|&(re, _)| re)
        .fold(f64::INFINITY, f64::min);
    let lower = if lambda_min < 0.0 { 1.0 / lambda_min } else { -1.0 + EDGE_GAP };
    Ok((lower, 1.0))
}

/// `ln |det(I - rho W)|`, from the cached spectrum for `n <= 5000` and from
/// a sparse LU factorization otherwise.
pub fn log_det_term(w: &SparseContiguity, rho: f64) -> Result<f64> {
    if !rho.is_finite() {
        return Err(Error::invalid(format!("rho must be finite, got {rho}")));
    }
    if rho == 0.0 {
        return Ok(0.0);
    }
    if w.n() > DENSE_SPECTRUM_MAX_N {
        return Ok(SparseLu::factor(w, rho)?.log_abs_det());
    }
    let mut total = 0.0;
    for &(re, im) in spectrum(w)? {
        let a = 1.0 - rho * re;
        let b = rho * im;
        let m2 = a * a + b * b;
        if m2 == 0.0 {
            return Err(Error::numeric(format!("I - rho W is singular at rho = {rho}")));
        }
        total += 0.5 * m2.ln();
    }
    Ok(total)
}

/// The SAR log-likelihood profiled over `beta` and `sigma2`.
#[derive(Debug)]
pub struct ConcentratedLikelihood<'a> {
    w: &'a SparseContiguity,
    n: f64,
    e0: Vec<f64>,
    ed: Vec<f64>,
    beta0: Vec<f64>,
    betad: Vec<f64>,
}

impl<'a> ConcentratedLikelihood<'a> {
    pub fn new(x: &DesignMatrix, y: &[f64], w: &'a SparseContiguity) -> Result<Self> {
        let n = x.n();
        if y.len() != n || w.n() != n {
            return Err(Error::invalid(format!(
                "dimension mismatch: X has {n} rows, y has {}, W has order {}",
                y.len(),
                w.n()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite response at row {i}")));
        }
        if !w.is_row_normalized(ROW_SUM_TOL) {
            return Err(Error::invalid("W must be row-normalized"));
        }
        let wy = w.mul_vec(y);
        let rhs = Mat::from_fn(n, 2, |i, j| if j == 0 { y[i] } else { wy[i] });
        let xm = x.to_mat();
        let coef = least_squares(&xm, &rhs, x.names())?;
        let fitted = &xm * &coef;
        Ok(Self {
            w,
            n: n as f64,
            e0: (0..n).map(|i| y[i] - fitted[(i, 0)]).collect(),
            ed: (0..n).map(|i| wy[i] - fitted[(i, 1)]).collect(),
            beta0: (0..x.k()).map(|j| coef[(j, 0)]).collect(),
            betad: (0..x.k()).map(|j| coef[(j, 1)]).collect(),
        })
    }

    /// `e(rho)ᵀe(rho)` for `e(rho) = e0 - rho ed`, summed directly since the
    /// expanded quadratic cancels badly for near-exact fits.
    pub fn sse(&self, rho: f64) -> f64 {
        self.e0.iter().zip(&self.ed).map(|(a, b)| (a - rho * b) * (a - rho * b)).sum()
    }

    pub fn beta(&self, rho: f64) -> Vec<f64> {
        self.beta0.iter().zip(&self.betad).map(|(b0, bd)| b0 - rho * bd).collect()
    }

    /// `-(n/2) ln(e'e/n) + ln|I - rho W|`.
    pub fn eval(&self, rho: f64) -> Result<f64> {
        let sse = self.sse(rho);
        if sse <= 0.0 {
            return Err(Error::numeric(format!("zero residual variance at rho = {rho}")));
        }
        Ok(-0.5 * self.n * (sse / self.n).ln() + log_det_term(self.w, rho)?)
    }
}

/// Maximum-likelihood fit by a coarse grid over the admissible interval
/// followed by golden-section refinement around the best grid point.
pub fn fit_sar_ml(x: &DesignMatrix, y: &[f64], w: &SparseContiguity) -> Result<SarModel> {
    let lik = ConcentratedLikelihood::new(x, y, w)?;
    let (rho_min, rho_max) = admissible_interval(w)?;
    let lo = rho_min + EDGE_GAP;
    let hi = rho_max - EDGE_GAP;

    let grid: Vec<f64> =
        (0..GRID_POINTS).map(|i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64).collect();
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &r) in grid.iter().enumerate() {
        let v = lik.eval(r)?;
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(GRID_POINTS - 1)];
    let (mut rho, mut val) = golden_max(&lik, a, b)?;
    if best_val > val {
        rho = grid[best];
        val = best_val;
    }
    if rho - lo < 10.0 * GOLDEN_WIDTH || hi - rho < 10.0 * GOLDEN_WIDTH {
        return Err(Error::BoundaryOptimum { rho, lower: lo, upper: hi });
    }

    let n = x.n() as f64;
    let sigma2 = lik.sse(rho) / n;
    if !(sigma2 > 0.0) {
        return Err(Error::numeric("fitted residual variance is zero"));
    }
    let log_det = val + 0.5 * n * sigma2.ln();
    let loglik = -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * n * sigma2.ln() - 0.5 * n + log_det;
    Ok(SarModel {
        rho,
        beta: lik.beta(rho),
        sigma2,
        loglik,
        column_names: x.names().to_vec(),
        n: x.n(),
        rho_bounds: (rho_min, rho_max),
        w_checksum: w.checksum(),
    })
}

fn golden_max(lik: &ConcentratedLikelihood<'_>, mut a: f64, mut b: f64) -> Result<(f64, f64)> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = lik.eval(c)?;
    let mut fd = lik.eval(d)?;
    while b - a > GOLDEN_WIDTH {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = lik.eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = lik.eval(d)?;
        }
    }
    let m = 0.5 * (a + b);
    Ok((m, lik.eval(m)?))
}

/// Reduced-form prediction: solves `(I - rho W_all) y = X_all beta`.
pub fn predict(model: &SarModel, x_all: &DesignMatrix, w_all: &SparseContiguity) -> Result<Vec<f64>> {
    if x_all.k() != model.beta.len() {
        return Err(Error::invalid(format!(
            "design has {} columns, model has {} coefficients",
            x_all.k(),
            model.beta.len()
        )));
    }
    if w_all.n() != x_all.n() {
        return Err(Error::invalid(format!("W has order {}, X has {} rows", w_all.n(), x_all.n())));
    }
    if !w_all.is_row_normalized(ROW_SUM_TOL) {
        return Err(Error::invalid("W must be row-normalized"));
    }
    let b = x_all.mul(&model.beta);
    if model.rho == 0.0 {
        return Ok(b);
    }
    Ok(SparseLu::factor(w_all, model.rho)?.solve(&b))
}

/// Contiguity over all points that keeps only train-train links: `w_train`
/// is placed at `train_positions` and every other row is empty.
pub fn train_only_contiguity(
    w_train: &SparseContiguity,
    train_positions: &[usize],
    n_all: usize,
) -> Result<SparseContiguity> {
    w_train.embed(train_positions, n_all)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSolution {
    pub x: Vec<f64>,
    /// Number of terms summed, counting `b` itself.
    pub terms: usize,
    /// False when `max_terms` was reached before the tolerance.
    pub converged: bool,
}

/// `sum_i rho^i W^i b`, stopping before the first term whose ∞-norm is below
/// `tol` or once `max_terms` terms are summed.
pub fn solve_power_series(
    rho: f64,
    w: &SparseContiguity,
    b: &[f64],
    tol: f64,
    max_terms: usize,
) -> Result<SeriesSolution> {
    if b.len() != w.n() {
        return Err(Error::invalid(format!("b has {} entries, W has order {}", b.len(), w.n())));
    }
    if !(tol > 0.0) || max_terms == 0 {
        return Err(Error::invalid("tol must be positive and max_terms at least 1"));
    }
    // a row-normalized W has norm 1 up to rounding
    let w_norm = w.inf_norm();
    let w_norm = if (w_norm - 1.0).abs() <= ROW_SUM_TOL { 1.0 } else { w_norm };
    let norm = rho.abs() * w_norm;
    if !(norm < 1.0) {
        return Err(Error::SeriesDivergent { norm });
    }
    let mut x = b.to_vec();
    let mut term = b.to_vec();
    let mut terms = 1;
    let mut converged = false;
    while terms < max_terms {
        term = w.mul_vec(&term);
        term.iter_mut().for_each(|t| *t *= rho);
        if term.iter().fold(0.0f64, |m, t| m.max(t.abs())) < tol {
            converged = true;
            break;
        }
        x.iter_mut().zip(&term).for_each(|(xi, t)| *xi += t);
        terms += 1;
    }
    Ok(SeriesSolution { x, terms, converged })
}
