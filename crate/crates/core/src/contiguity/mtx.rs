//! Matrix Market coordinate format for contiguity matrices.

use std::fmt::Write as _;
use std::path::Path;

use super::SparseContiguity;
use crate::error::{Error, Result};

const BANNER: &str = "%%MatrixMarket matrix coordinate real general";

pub(crate) fn render(w: &SparseContiguity) -> String {
    let mut s = String::with_capacity(32 * w.nnz() + 64);
    s.push_str(BANNER);
    s.push('\n');
    let _ = writeln!(s, "{} {} {}", w.n(), w.n(), w.nnz());
    for (i, j, v) in w.triplets() {
        let _ = writeln!(s, "{} {} {}", i + 1, j + 1, v);
    }
    s
}

/// Writes `w` with 1-based indices. Values use the shortest decimal form
/// that reads back to the same `f64`.
pub fn write_matrix_market(w: &SparseContiguity, path: &Path) -> Result<()> {
    std::fs::write(path, render(w)).map_err(|e| Error::io(path, e))
}

pub fn read_matrix_market(path: &Path) -> Result<SparseContiguity> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let banner = lines.next().map(|(_, l)| l.trim().to_ascii_lowercase());
    if banner.as_deref() != Some(&BANNER.to_ascii_lowercase()) {
        return Err(Error::parse(path, 1, format!("expected banner {BANNER:?}")));
    }
    let mut lines = lines.filter(|(_, l)| !l.trim_start().starts_with('%') && !l.trim().is_empty());
    let (size_line, size) = lines.next().ok_or_else(|| Error::parse(path, 2, "missing size line"))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(path, size_line + 1, "size line must be three integers"))?;
    let &[rows, cols, nnz] = dims.as_slice() else {
        return Err(Error::parse(path, size_line + 1, "size line must be three integers"));
    };
    if rows != cols {
        return Err(Error::parse(path, size_line + 1, format!("matrix must be square, got {rows}x{cols}")));
    }

    let mut triplets = Vec::with_capacity(nnz);
    for (ln, line) in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::parse(path, ln + 1, format!("malformed entry {line:?}"));
        if f.len() != 3 {
            return Err(bad());
        }
        let i: usize = f[0].parse().map_err(|_| bad())?;
        let j: usize = f[1].parse().map_err(|_| bad())?;
        let v: f64 = f[2].parse().map_err(|_| bad())?;
        if i == 0 || j == 0 {
            return Err(Error::parse(path, ln + 1, "indices are 1-based"));
        }
        triplets.push((i - 1, j - 1, v));
    }
    if triplets.len() != nnz {
        return Err(Error::parse(path, size_line + 1, format!("declared {nnz} entries, found {}", triplets.len())));
    }
    SparseContiguity::from_triplets(rows, triplets)
        .map_err(|e| Error::parse(path, size_line + 1, e.to_string()))
}
