//! Static report files: a log-log scatter of predicted against true prices
//! (SVG) and a heat map of mean price per lat/lon cell (PNG).

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geo::GeoPoint;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 56.0;

/// Log10 axis range covering both series, padded and snapped to whole
/// decades so nearby inputs share a frame.
fn log_range(truth: &[f64], pred: &[f64]) -> (f64, f64) {
    let logs = truth.iter().chain(pred).map(|v| v.log10());
    let (lo, hi) = logs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = (lo.floor(), hi.ceil());
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Renders the scatter. Both axes share one range so a perfect predictor
/// falls on the diagonal. Pairs with a nonpositive value are omitted and
/// their count is printed in the plot.
pub fn scatter_svg(truth: &[f64], pred: &[f64], title: &str) -> Result<String> {
    if truth.is_empty() {
        return Err(Error::invalid("no points to plot"));
    }
    if truth.len() != pred.len() {
        return Err(Error::invalid(format!("{} truths for {} predictions", truth.len(), pred.len())));
    }
    // a log axis cannot show nonpositive values; such pairs are left out and counted
    let ok = |v: f64| v > 0.0 && v.is_finite();
    let total = truth.len();
    let (truth, pred): (Vec<f64>, Vec<f64>) = truth.iter().zip(pred).filter(|(t, p)| ok(**t) && ok(**p)).unzip();
    let omitted = total - truth.len();
    if truth.is_empty() {
        return Err(Error::invalid("no pair with positive finite prices to plot"));
    }
    let (lo, hi) = log_range(&truth, &pred);
    let span = SIZE - 2.0 * MARGIN;
    let px = |v: f64| MARGIN + (v.log10() - lo) / (hi - lo) * span;
    let py = |v: f64| SIZE - px(v);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, SIZE / 2.0, xml_escape(title));
    let (a, b) = (MARGIN, SIZE - MARGIN);
    let _ = writeln!(s, r#"<rect x="{a}" y="{a}" width="{span}" height="{span}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line class="diagonal" x1="{a}" y1="{b}" x2="{b}" y2="{a}" stroke="grey" stroke-dasharray="4 3"/>"#);
    let decades = (hi - lo).round() as i32;
    for k in 0..=decades {
        let t = MARGIN + f64::from(k) / f64::from(decades.max(1)) * span;
        let label = format!("1e{}", lo as i32 + k);
        let _ = writeln!(s, r#"<text x="{t:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#, b + 16.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#, a - 4.0, SIZE - t + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">true price</text>"#, SIZE / 2.0, SIZE - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">predicted price</text>"#,
        SIZE / 2.0,
        SIZE / 2.0
    );
    if omitted > 0 {
        let _ = writeln!(
            s,
            r#"<text class="omitted" x="{}" y="{}" text-anchor="end">{omitted} of {total} points not shown (nonpositive)</text>"#,
            SIZE - MARGIN - 4.0,
            MARGIN + 14.0
        );
    }
    for (t, p) in truth.iter().zip(&pred) {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="steelblue" fill-opacity="0.6"/>"#, px(*t), py(*p));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Mean price per cell over the bounding box of the points. Cells without
/// listings are `None`. Row 0 is the northernmost.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceGrid {
    pub cols: usize,
    pub rows: usize,
    pub cells: Vec<Option<f64>>,
}

impl PriceGrid {
    /// `cells_long` cells along the longer side (measured in kilometers);
    /// the shorter side gets proportionally fewer, at least one.
    pub fn build(points: &[GeoPoint], prices: &[f64], cells_long: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("no listings for the heat map"));
        }
        if points.len() != prices.len() {
            return Err(Error::invalid(format!("{} points for {} prices", points.len(), prices.len())));
        }
        if cells_long == 0 {
            return Err(Error::invalid("heat map needs at least one cell"));
        }
        let lat = |p: &GeoPoint| p.lat();
        let lon = |p: &GeoPoint| p.lon();
        let (la0, la1) = min_max(points.iter().map(lat));
        let (lo0, lo1) = min_max(points.iter().map(lon));
        let mid = (0.5 * (la0 + la1)).to_radians().cos();
        let (h, w) = (la1 - la0, (lo1 - lo0) * mid);
        let (cols, rows) = if w >= h {
            (cells_long, ((cells_long as f64 * h / w.max(f64::MIN_POSITIVE)).round() as usize).clamp(1, cells_long))
        } else {
            (((cells_long as f64 * w / h).round() as usize).clamp(1, cells_long), cells_long)
        };
        let mut sum = vec![0.0; cols * rows];
        let mut count = vec![0usize; cols * rows];
        let cell = |v: f64, a: f64, b: f64, k: usize| {
            if b > a {
                (((v - a) / (b - a) * k as f64) as usize).min(k - 1)
            } else {
                0
            }
        };
        for (p, price) in points.iter().zip(prices) {
            let c = cell(p.lon(), lo0, lo1, cols);
            let r = rows - 1 - cell(p.lat(), la0, la1, rows);
            sum[r * cols + c] += price;
            count[r * cols + c] += 1;
        }
        let cells = sum.iter().zip(&count).map(|(s, &n)| (n > 0).then(|| s / n as f64)).collect();
        Ok(Self { cols, rows, cells })
    }

    /// Moran's I of the occupied cells under rook adjacency.
    pub fn morans_i(&self) -> Option<f64> {
        let vals: Vec<f64> = self.cells.iter().flatten().copied().collect();
        if vals.len() < 2 {
            return None;
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let den: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum();
        let mut num = 0.0;
        let mut links = 0usize;
        for r in 0..self.rows {
            for c in 0..self.cols {
                let Some(a) = self.cells[r * self.cols + c] else { continue };
                for (dr, dc) in [(0i64, 1i64), (1, 0), (0, -1), (-1, 0)] {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr < 0 || cc < 0 || rr >= self.rows as i64 || cc >= self.cols as i64 {
                        continue;
                    }
                    if let Some(b) = self.cells[rr as usize * self.cols + cc as usize] {
                        num += (a - mean) * (b - mean);
                        links += 1;
                    }
                }
            }
        }
        if links == 0 || den == 0.0 {
            return None;
        }
        Some(vals.len() as f64 / links as f64 * num / den)
    }
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
}

/// Anchors of a perceptually ordered dark-blue to yellow ramp.
const RAMP: [[u8; 3]; 5] = [[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]];

fn ramp(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - i as f64;
    let mix = |a: u8, b: u8| (f64::from(a) + f * (f64::from(b) - f64::from(a))).round() as u8;
    [mix(RAMP[i][0], RAMP[i + 1][0]), mix(RAMP[i][1], RAMP[i + 1][1]), mix(RAMP[i][2], RAMP[i + 1][2])]
}

/// RGBA pixels, `scale` pixels per cell, colored by log mean price; empty
/// cells are transparent.
pub fn heatmap_rgba(grid: &PriceGrid, scale: usize) -> (u32, u32, Vec<u8>) {
    let logs: Vec<f64> = grid.cells.iter().flatten().map(|v| v.ln()).collect();
    let (lo, hi) = min_max(logs.iter().copied());
    let (w, h) = (grid.cols * scale, grid.rows * scale);
    let mut px = vec![0u8; w * h * 4];
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let Some(v) = grid.cells[r * grid.cols + c] else { continue };
            let t = if hi > lo { (v.ln() - lo) / (hi - lo) } else { 0.5 };
            let [cr, cg, cb] = ramp(t);
            for y in r * scale..(r + 1) * scale {
                for x in c * scale..(c + 1) * scale {
                    let o = (y * w + x) * 4;
                    px[o..o + 4].copy_from_slice(&[cr, cg, cb, 255]);
                }
            }
        }
    }
    (w as u32, h as u32, px)
}

pub fn write_png(path: &Path, width: u32, height: u32, rgba: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width, height);
    enc.set_color(png::ColorType::Rgba);
    enc.set_depth(png::BitDepth::Eight);
    let to_err = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut w = enc.write_header().map_err(to_err)?;
    w.write_image_data(rgba).map_err(to_err)?;
    w.finish().map_err(to_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circles(svg: &str) -> Vec<(f64, f64)> {
        svg.lines()
            .filter(|l| l.starts_with("<circle"))
            .map(|l| {
                let attr = |name: &str| {
                    let start = l.find(&format!("{name}=\"")).unwrap() + name.len() + 2;
                    l[start..].split('"').next().unwrap().parse::<f64>().unwrap()
                };
                (attr("cx"), attr("cy"))
            })
            .collect()
    }

    #[test]
    fn identical_series_lie_on_the_diagonal() {
        let v = [120_000.0, 350_000.0, 2_500_000.0, 80_000.0];
        let svg = scatter_svg(&v, &v, "perfect").unwrap();
        let pts = circles(&svg);
        assert_eq!(pts.len(), 4);
        for (x, y) in pts {
            // the diagonal runs from (M, S−M) to (S−M, M): x + y = S
            assert!((x + y - SIZE).abs() < 0.011, "{x} {y}");
        }
    }

    #[test]
    fn scatter_rejects_bad_input() {
        assert!(scatter_svg(&[], &[], "t").is_err());
        assert!(scatter_svg(&[1.0], &[1.0, 2.0], "t").is_err());
        assert!(scatter_svg(&[1.0, 2.0], &[-1.0, 0.0], "t").is_err());
    }

    #[test]
    fn nonpositive_pairs_are_counted_not_drawn() {
        let svg = scatter_svg(&[1.0e5, 2.0e5, 3.0e5], &[1.0e5, -5.0, 3.0e5], "t").unwrap();
        assert_eq!(circles(&svg).len(), 2);
        assert!(svg.contains("1 of 3 points not shown"));
    }

    #[test]
    fn title_is_escaped() {
        let svg = scatter_svg(&[1.0], &[2.0], "a<b & c").unwrap();
        assert!(svg.contains("a&lt;b &amp; c"));
    }

    #[test]
    fn grid_averages_cells() {
        let p = |a: f64, b: f64| GeoPoint::new(a, b).unwrap();
        let points = [p(0.0, 0.0), p(0.0, 0.001), p(1.0, 1.0)];
        let g = PriceGrid::build(&points, &[10.0, 20.0, 40.0], 2).unwrap();
        assert_eq!((g.cols, g.rows), (2, 2));
        // south-west cell is the bottom-left
        assert_eq!(g.cells[2], Some(15.0));
        assert_eq!(g.cells[1], Some(40.0));
        assert_eq!(g.cells[0], None);
        assert!(PriceGrid::build(&[], &[], 4).is_err());
    }

    #[test]
    fn morans_i_signs() {
        // smooth gradient: strongly positive
        let smooth = PriceGrid { cols: 4, rows: 4, cells: (0..16).map(|i| Some(f64::from(i % 4 + i / 4))).collect() };
        assert!(smooth.morans_i().unwrap() > 0.5);
        // checkerboard: exactly −1
        let checker = PriceGrid { cols: 4, rows: 4, cells: (0..16).map(|i| Some(f64::from((i % 4 + i / 4) % 2))).collect() };
        assert!((checker.morans_i().unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), RAMP[0]);
        assert_eq!(ramp(1.0), RAMP[4]);
        assert_eq!(ramp(0.5), RAMP[2]);
    }

    #[test]
    fn png_has_the_grid_size() {
        let g = PriceGrid { cols: 3, rows: 2, cells: vec![Some(1.0), None, Some(2.0), Some(3.0), Some(4.0), None] };
        let (w, h, px) = heatmap_rgba(&g, 5);
        assert_eq!((w, h), (15, 10));
        assert_eq!(px.len(), 15 * 10 * 4);
        // empty cell transparent
        assert_eq!(px[(5 + 2) * 4 + 3], 0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.png");
        write_png(&path, w, h, &px).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
    }
}
