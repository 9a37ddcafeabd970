//! Incremental Bowyer–Watson triangulation.
//!
//! The super-triangle is handled symbolically: a single vertex at infinity
//! closes every hull edge into a "ghost" triangle, so no finite bounding
//! triangle can clip hull edges. A point lies inside the circumcircle of
//! ghost triangle (a, b, ∞) when it is strictly left of a→b, or on the line
//! strictly between a and b.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::geo::{GeoPoint, EARTH_RADIUS_KM};

const INF: usize = usize::MAX;

/// Tolerance on orientation and in-circle determinants, in normalized
/// coordinates (points scaled into a unit box).
const DET_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DelaunayReport {
    /// Points folded onto an earlier point with identical coordinates.
    pub duplicates: usize,
}

/// Azimuthal equidistant projection about the spherical centroid of
/// `points`, in kilometers.
pub fn project_azimuthal(points: &[GeoPoint]) -> Vec<[f64; 2]> {
    let mut acc = [0.0; 3];
    for p in points {
        let v = p.to_unit_vector();
        for k in 0..3 {
            acc[k] += v[k];
        }
    }
    let center = GeoPoint::from_unit_vector(acc);
    let (phi1, lam0) = (center.lat().to_radians(), center.lon().to_radians());
    points
        .iter()
        .map(|p| {
            let (phi, lam) = (p.lat().to_radians(), p.lon().to_radians());
            let dl = lam - lam0;
            let cos_c = (phi1.sin() * phi.sin() + phi1.cos() * phi.cos() * dl.cos()).clamp(-1.0, 1.0);
            let c = cos_c.acos();
            let k = if c < 1e-12 { 1.0 } else { c / c.sin() };
            let x = k * phi.cos() * dl.sin();
            let y = k * (phi1.cos() * phi.sin() - phi1.sin() * phi.cos() * dl.cos());
            [EARTH_RADIUS_KM * x, EARTH_RADIUS_KM * y]
        })
        .collect()
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Positive when `d` is inside the circumcircle of counter-clockwise (a, b, c).
fn in_circle(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> f64 {
    let (adx, ady) = (a[0] - d[0], a[1] - d[1]);
    let (bdx, bdy) = (b[0] - d[0], b[1] - d[1]);
    let (cdx, cdy) = (c[0] - d[0], c[1] - d[1]);
    let ad = adx * adx + ady * ady;
    let bd = bdx * bdx + bdy * bdy;
    let cd = cdx * cdx + cdy * cdy;
    adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx)
}

/// Z-order key on a 16-bit grid, for locality of insertion.
fn morton(x: f64, y: f64) -> u32 {
    fn spread(mut v: u32) -> u32 {
        v &= 0xFFFF;
        v = (v | (v << 8)) & 0x00FF_00FF;
        v = (v | (v << 4)) & 0x0F0F_0F0F;
        v = (v | (v << 2)) & 0x3333_3333;
        (v | (v << 1)) & 0x5555_5555
    }
    let q = |t: f64| (t.clamp(0.0, 1.0) * 65535.0) as u32;
    spread(q(x)) | (spread(q(y)) << 1)
}

struct Mesh<'a> {
    pts: &'a [[f64; 2]],
    tris: Vec<[usize; 3]>,
    alive: Vec<bool>,
    /// Directed edge -> triangle owning it.
    edges: HashMap<(usize, usize), usize>,
}

impl Mesh<'_> {
    fn add(&mut self, t: [usize; 3]) -> usize {
        let id = self.tris.len();
        for k in 0..3 {
            self.edges.insert((t[k], t[(k + 1) % 3]), id);
        }
        self.tris.push(t);
        self.alive.push(true);
        id
    }

    fn remove(&mut self, id: usize) {
        let t = self.tris[id];
        for k in 0..3 {
            self.edges.remove(&(t[k], t[(k + 1) % 3]));
        }
        self.alive[id] = false;
    }

    fn conflicts(&self, id: usize, p: usize) -> bool {
        let [a, b, c] = self.tris[id];
        let q = self.pts[p];
        if c == INF {
            let (pa, pb) = (self.pts[a], self.pts[b]);
            let o = orient(pa, pb, q);
            if o > DET_TOL {
                return true;
            }
            if o < -DET_TOL {
                return false;
            }
            // on the hull line: inside only strictly between a and b
            let dot = (q[0] - pa[0]) * (pb[0] - pa[0]) + (q[1] - pa[1]) * (pb[1] - pa[1]);
            let len2 = (pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2);
            return dot > 0.0 && dot < len2;
        }
        in_circle(self.pts[a], self.pts[b], self.pts[c], q) > DET_TOL
    }

    fn find_conflict(&self, p: usize) -> Option<usize> {
        (0..self.tris.len()).rev().find(|&id| self.alive[id] && self.conflicts(id, p))
    }

    fn insert(&mut self, p: usize) -> Result<()> {
        let start = self
            .find_conflict(p)
            .ok_or_else(|| Error::numeric("triangulation: inserted point conflicts with no triangle"))?;
        let mut bad = HashSet::from([start]);
        let mut stack = vec![start];
        while let Some(id) = stack.pop() {
            let t = self.tris[id];
            for k in 0..3 {
                let (u, v) = (t[k], t[(k + 1) % 3]);
                if let Some(&nb) = self.edges.get(&(v, u)) {
                    if !bad.contains(&nb) && self.conflicts(nb, p) {
                        bad.insert(nb);
                        stack.push(nb);
                    }
                }
            }
        }

        let mut boundary = Vec::new();
        let mut bad_sorted: Vec<usize> = bad.iter().copied().collect();
        bad_sorted.sort_unstable();
        for &id in &bad_sorted {
            let t = self.tris[id];
            for k in 0..3 {
                let (u, v) = (t[k], t[(k + 1) % 3]);
                let twin_bad = self.edges.get(&(v, u)).is_some_and(|nb| bad.contains(nb));
                if !twin_bad {
                    boundary.push((u, v));
                }
            }
        }
        for &id in &bad_sorted {
            self.remove(id);
        }
        for (u, v) in boundary {
            let t = if u == INF {
                [v, p, INF]
            } else if v == INF {
                [p, u, INF]
            } else {
                [u, v, p]
            };
            self.add(t);
        }
        Ok(())
    }
}

/// Delaunay triangles (counter-clockwise index triples) of distinct planar
/// points. Fails when fewer than three points are given or all are collinear.
pub fn triangulate(points: &[[f64; 2]]) -> Result<Vec<[usize; 3]>> {
    let n = points.len();
    if n < 3 {
        return Err(Error::invalid(format!("triangulation needs at least 3 distinct points, got {n}")));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let scale = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    if !(scale > 0.0) {
        return Err(Error::invalid("all points coincide"));
    }
    let pts: Vec<[f64; 2]> = points.iter().map(|p| [(p[0] - lo[0]) / scale, (p[1] - lo[1]) / scale]).collect();

    // seed triangle: first point, farthest from it, then the point farthest
    // from the line through both
    let a = 0;
    let dist2 = |i: usize, j: usize| (pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2);
    let b = (0..n).max_by(|&i, &j| dist2(a, i).total_cmp(&dist2(a, j)).then(j.cmp(&i))).expect("n >= 3");
    let c = (0..n)
        .max_by(|&i, &j| {
            orient(pts[a], pts[b], pts[i]).abs().total_cmp(&orient(pts[a], pts[b], pts[j]).abs()).then(j.cmp(&i))
        })
        .expect("n >= 3");
    let area = orient(pts[a], pts[b], pts[c]);
    if area.abs() <= DET_TOL {
        return Err(Error::invalid("all points are collinear"));
    }
    let seed = if area > 0.0 { [a, b, c] } else { [a, c, b] };

    let mut mesh = Mesh { pts: &pts, tris: Vec::new(), alive: Vec::new(), edges: HashMap::new() };
    mesh.add(seed);
    for k in 0..3 {
        mesh.add([seed[(k + 1) % 3], seed[k], INF]);
    }

    let mut rest: Vec<usize> = (0..n).filter(|i| !seed.contains(i)).collect();
    rest.sort_by_key(|&i| (morton(pts[i][0], pts[i][1]), i));
    for p in rest {
        mesh.insert(p)?;
    }

    Ok(mesh
        .tris
        .iter()
        .zip(&mesh.alive)
        .filter(|(t, &alive)| alive && t[2] != INF)
        .map(|(t, _)| *t)
        .collect())
}

/// Undirected edges `(i, j)` with `i < j` over the original point indices.
/// Duplicate coordinates are triangulated once; copies inherit the
/// representative's neighbors.
pub(crate) fn delaunay_edges(points: &[GeoPoint]) -> Result<(Vec<(usize, usize)>, DelaunayReport)> {
    let mut rep_of: HashMap<(u64, u64), usize> = HashMap::new();
    let mut group = Vec::with_capacity(points.len());
    let mut uniques = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let key = (p.lat().to_bits(), p.lon().to_bits());
        let u = *rep_of.entry(key).or_insert_with(|| {
            uniques.push(i);
            uniques.len() - 1
        });
        group.push(u);
    }
    let report = DelaunayReport { duplicates: points.len() - uniques.len() };
    let unique_pts: Vec<GeoPoint> = uniques.iter().map(|&i| points[i]).collect();
    let planar = project_azimuthal(&unique_pts);
    let tris = triangulate(&planar)?;

    let mut unique_edges = HashSet::new();
    for t in tris {
        for k in 0..3 {
            let (u, v) = (t[k], t[(k + 1) % 3]);
            unique_edges.insert((u.min(v), u.max(v)));
        }
    }
    let mut members = vec![Vec::new(); uniques.len()];
    for (i, &g) in group.iter().enumerate() {
        members[g].push(i);
    }
    let mut edges = Vec::new();
    for (u, v) in unique_edges {
        for &a in &members[u] {
            for &b in &members[v] {
                edges.push((a.min(b), a.max(b)));
            }
        }
    }
    edges.sort_unstable();
    Ok((edges, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::seeded_rng;
    use rand::Rng;
    use std::collections::BTreeSet;

    /// Brute-force oracle: a triangle belongs to the triangulation iff no
    /// other point lies strictly inside its circumcircle.
    fn oracle_edges(pts: &[[f64; 2]]) -> BTreeSet<(usize, usize)> {
        let n = pts.len();
        let mut out = BTreeSet::new();
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let (a, b, c) = (pts[i], pts[j], pts[k]);
                    let d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]));
                    if d.abs() < 1e-12 {
                        continue;
                    }
                    let sq = |p: [f64; 2]| p[0] * p[0] + p[1] * p[1];
                    let ux = (sq(a) * (b[1] - c[1]) + sq(b) * (c[1] - a[1]) + sq(c) * (a[1] - b[1])) / d;
                    let uy = (sq(a) * (c[0] - b[0]) + sq(b) * (a[0] - c[0]) + sq(c) * (b[0] - a[0])) / d;
                    let r2 = (a[0] - ux).powi(2) + (a[1] - uy).powi(2);
                    let empty = (0..n)
                        .filter(|&m| m != i && m != j && m != k)
                        .all(|m| (pts[m][0] - ux).powi(2) + (pts[m][1] - uy).powi(2) >= r2);
                    if empty {
                        out.extend([(i, j), (j, k), (i, k)]);
                    }
                }
            }
        }
        out
    }

    fn edge_set(tris: &[[usize; 3]]) -> BTreeSet<(usize, usize)> {
        tris.iter()
            .flat_map(|t| (0..3).map(move |k| (t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3]))))
            .collect()
    }

    #[test]
    fn single_triangle() {
        let tris = triangulate(&[[0.0, 0.0], [1.0, 0.0], [0.2, 0.7]]).unwrap();
        assert_eq!(tris.len(), 1);
        assert_eq!(edge_set(&tris).len(), 3);
    }

    #[test]
    fn perturbed_square_has_one_diagonal() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.1]];
        let edges = edge_set(&triangulate(&pts).unwrap());
        assert_eq!(edges.len(), 5);
        assert_eq!(edges, oracle_edges(&pts));
    }

    #[test]
    fn collinear_input_is_rejected() {
        let pts: Vec<[f64; 2]> = (0..6).map(|i| [i as f64, 2.0 * i as f64]).collect();
        assert!(triangulate(&pts).is_err());
        assert!(triangulate(&pts[..2]).is_err());
    }

    #[test]
    fn matches_oracle_on_random_sets() {
        let mut rng = seeded_rng(99);
        for _ in 0..30 {
            let n = rng.random_range(3..=40);
            let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
            assert_eq!(edge_set(&triangulate(&pts).unwrap()), oracle_edges(&pts));
        }
    }

    #[test]
    fn triangles_are_counter_clockwise() {
        let mut rng = seeded_rng(5);
        let pts: Vec<[f64; 2]> = (0..200).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
        let tris = triangulate(&pts).unwrap();
        assert!(tris.iter().all(|t| orient(pts[t[0]], pts[t[1]], pts[t[2]]) > 0.0));
        // Euler: T = 2n - 2 - h
        let hull = edge_set(&tris).len() * 2 - 3 * tris.len();
        assert_eq!(tris.len(), 2 * pts.len() - 2 - hull);
    }

    #[test]
    fn duplicates_inherit_neighbors() {
        let p = |a: f64, b: f64| GeoPoint::new(a, b).unwrap();
        let pts = vec![p(0.0, 0.0), p(0.0, 0.01), p(0.01, 0.005), p(0.0, 0.01)];
        let (edges, report) = delaunay_edges(&pts).unwrap();
        assert_eq!(report.duplicates, 1);
        assert!(edges.contains(&(0, 3)));
        assert!(edges.contains(&(2, 3)));
        assert!(!edges.contains(&(1, 3)));
        assert_eq!(edges.len(), 5);
    }
}
