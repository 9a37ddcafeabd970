//! Per-zoom deep-feature stores, GEOFEAT files, feature fusion and the zoom
//! ablation harness.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{Dataset, SplitTag, ATTRIBUTE_NAMES};
use crate::error::{Error, Result};
use crate::geo::{derive_seed, ZoomLevel};
use crate::poi::PoiBlock;
use crate::regress::{repeated_eval, EstimatorSpec, EvalReport};
use crate::sar::DesignMatrix;

pub const GEOFEAT_MAGIC: &str = "#GEOFEAT";
pub const GEOFEAT_VERSION: &str = "v1";

/// Dense row-major feature block without an intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    names: Vec<String>,
    data: Vec<f64>,
    n: usize,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, data: Vec<f64>, n: usize) -> Result<Self> {
        if data.len() != n * names.len() {
            return Err(Error::invalid(format!(
                "{} values do not fill {n} rows of {} columns",
                data.len(),
                names.len()
            )));
        }
        if let Some(p) = data.iter().position(|v| !v.is_finite()) {
            let k = names.len();
            return Err(Error::invalid(format!("non-finite feature at row {}, column {}", p / k, names[p % k])));
        }
        Ok(Self { names, data, n })
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let k = names.len();
        if let Some(i) = rows.iter().position(|r| r.len() != k) {
            return Err(Error::invalid(format!("row {i} has {} values, expected {k}", rows[i].len())));
        }
        Self::new(names, rows.concat(), rows.len())
    }

    /// `n` rows and no columns.
    pub fn empty(n: usize) -> Self {
        Self { names: Vec::new(), data: Vec::new(), n }
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

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.k());
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { names: self.names.clone(), data, n: idx.len() }
    }

    /// Columns of `self` followed by columns of `other`.
    pub fn hconcat(&self, other: &FeatureMatrix) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::invalid(format!("cannot join {} rows with {} rows", self.n, other.n)));
        }
        let mut names = self.names.clone();
        names.extend_from_slice(&other.names);
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        for i in 0..self.n {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Self { names, data, n: self.n })
    }

    /// Copy with `f` applied to every entry of column `j`.
    pub fn map_column(&self, j: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let mut out = self.clone();
        let k = self.k();
        for i in 0..self.n {
            out.data[i * k + j] = f(out.data[i * k + j]);
        }
        Self::new(out.names, out.data, out.n)
    }

    /// Same regressors with a leading intercept.
    pub fn to_design(&self) -> Result<DesignMatrix> {
        let refs: Vec<&str> = self.names.iter().map(String::as_str).collect();
        let rows: Vec<Vec<f64>> = (0..self.n).map(|i| self.row(i).to_vec()).collect();
        DesignMatrix::with_intercept(&refs, &rows)
    }
}

/// Per-column mean and standard deviation; zero-variance columns get unit
/// scale so they map to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ColumnScaler {
    pub fn fit(x: &FeatureMatrix) -> Self {
        let n = x.n().max(1) as f64;
        let mut mean = vec![0.0; x.k()];
        let mut std = vec![0.0; x.k()];
        for j in 0..x.k() {
            let m = (0..x.n()).map(|i| x.get(i, j)).sum::<f64>() / n;
            let v = (0..x.n()).map(|i| (x.get(i, j) - m).powi(2)).sum::<f64>() / n;
            mean[j] = m;
            std[j] = if v > 0.0 { v.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn apply(&self, x: &FeatureMatrix) -> FeatureMatrix {
        let k = x.k();
        let data = x.data.iter().enumerate().map(|(p, v)| (v - self.mean[p % k]) / self.std[p % k]).collect();
        FeatureMatrix { names: x.names.clone(), data, n: x.n }
    }
}

/// Deep-feature vectors of one zoom level keyed by listing id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    zoom: ZoomLevel,
    dim: usize,
    ids: Vec<String>,
    data: Vec<f64>,
    index: HashMap<String, usize>,
}

impl FeatureStore {
    pub fn new(zoom: ZoomLevel, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        Ok(Self { zoom, dim, ids: Vec::new(), data: Vec::new(), index: HashMap::new() })
    }

    pub fn insert(&mut self, id: &str, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::invalid(format!("vector for {id:?} has dim {}, store has {}", v.len(), self.dim)));
        }
        if id.is_empty() || id.contains([',', '\n', '\r']) {
            return Err(Error::invalid(format!("bad listing id {id:?}")));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("non-finite feature for {id:?}")));
        }
        if self.index.contains_key(id) {
            return Err(Error::invalid(format!("duplicate feature vector for {id:?}")));
        }
        self.index.insert(id.to_string(), self.ids.len());
        self.ids.push(id.to_string());
        self.data.extend_from_slice(v);
        Ok(())
    }

    pub fn zoom(&self) -> ZoomLevel {
        self.zoom
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids in insertion order.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&p| &self.data[p * self.dim..(p + 1) * self.dim])
    }
}

fn parse_header(line: &str) -> std::result::Result<(ZoomLevel, usize), String> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(GEOFEAT_MAGIC) {
        return Err(format!("not a GEOFEAT file (header {line:?})"));
    }
    match parts.next() {
        Some(GEOFEAT_VERSION) => {}
        Some(v) => return Err(format!("unknown GEOFEAT version {v:?}")),
        None => return Err("missing GEOFEAT version".into()),
    }
    let mut zoom = None;
    let mut dim = None;
    for p in parts {
        match p.split_once('=') {
            Some(("zoom", v)) => zoom = v.parse::<u8>().ok(),
            Some(("dim", v)) => dim = v.parse::<usize>().ok(),
            _ => return Err(format!("unexpected header field {p:?}")),
        }
    }
    let zoom = zoom.ok_or("header needs zoom=<15..20>")?;
    let zoom = ZoomLevel::new(zoom).map_err(|e| e.to_string())?;
    let dim = dim.filter(|&d| d > 0).ok_or("header needs dim=<positive integer>")?;
    Ok((zoom, dim))
}

pub fn load_features(path: &Path) -> Result<FeatureStore> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or_default();
    let (zoom, dim) = parse_header(header.trim_start_matches('\u{feff}')).map_err(|m| Error::parse(path, 1, m))?;
    let mut store = FeatureStore::new(zoom, dim)?;
    let mut v = Vec::with_capacity(dim);
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or_default();
        v.clear();
        for f in fields {
            v.push(f.trim().parse::<f64>().map_err(|_| Error::parse(path, i + 1, format!("bad number {f:?}")))?);
        }
        if v.len() != dim {
            return Err(Error::parse(path, i + 1, format!("row has dim {}, header declares {dim}", v.len())));
        }
        store.insert(id, &v).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
    }
    Ok(store)
}

/// Writes the store in insertion order. Values use shortest round-trip
/// formatting, so loading reproduces them bit for bit.
pub fn save_features(store: &FeatureStore, path: &Path) -> Result<()> {
    let mut s = format!("{GEOFEAT_MAGIC} {GEOFEAT_VERSION} zoom={} dim={}\n", store.zoom, store.dim);
    for id in &store.ids {
        s.push_str(id);
        for x in store.get(id).expect("stored id") {
            let _ = write!(s, ",{x:?}");
        }
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Which sources go into the fused feature block.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionSpec {
    pub use_ha: bool,
    pub zooms: Vec<ZoomLevel>,
    pub use_poi: bool,
    /// Standardize every column with statistics of the train rows.
    pub standardize: bool,
}

impl FusionSpec {
    pub fn new(use_ha: bool, zooms: &[ZoomLevel], use_poi: bool) -> Result<Self> {
        let mut z = zooms.to_vec();
        z.sort();
        z.dedup();
        if !use_ha && z.is_empty() && !use_poi {
            return Err(Error::Config("fusion needs at least one feature source".into()));
        }
        Ok(Self { use_ha, zooms: z, use_poi, standardize: false })
    }

    /// Parses a `+`-joined list such as `HA+DF(18,19,20)+POI` or `HA+DF`.
    /// A bare `DF` means all zooms.
    pub fn parse(s: &str) -> Result<Self> {
        let mut use_ha = false;
        let mut use_poi = false;
        let mut zooms = Vec::new();
        for part in s.split('+').map(str::trim) {
            let upper = part.to_ascii_uppercase();
            if upper == "HA" {
                use_ha = true;
            } else if upper == "POI" {
                use_poi = true;
            } else if upper == "DF" {
                zooms.extend(ZoomLevel::all());
            } else if let Some(list) = upper.strip_prefix("DF(").and_then(|r| r.strip_suffix(')')) {
                for z in list.split(',') {
                    let v: u8 = z.trim().parse().map_err(|_| Error::Config(format!("bad zoom {z:?} in {s:?}")))?;
                    zooms.push(ZoomLevel::new(v).map_err(|e| Error::Config(e.to_string()))?);
                }
            } else {
                return Err(Error::Config(format!("unknown feature source {part:?} in {s:?}")));
            }
        }
        Self::new(use_ha, &zooms, use_poi)
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.use_ha {
            parts.push("HA".to_string());
        }
        if !self.zooms.is_empty() {
            let z: Vec<String> = self.zooms.iter().map(ToString::to_string).collect();
            parts.push(format!("DF({})", z.join(",")));
        }
        if self.use_poi {
            parts.push("POI".to_string());
        }
        parts.join("+")
    }
}

/// Builds `x_feat`: house attributes, then deep features by ascending zoom,
/// then POI counts in tag order. Rows follow listing order.
pub fn fuse(d: &Dataset, spec: &FusionSpec, stores: &[FeatureStore], poi: Option<&PoiBlock>) -> Result<FeatureMatrix> {
    if !spec.use_ha && spec.zooms.is_empty() && !spec.use_poi {
        return Err(Error::Config("fusion needs at least one feature source".into()));
    }
    let n = d.len();
    let mut missing: Vec<String> = Vec::new();
    let mut note_missing = |id: &str| {
        if !missing.iter().any(|m| m == id) {
            missing.push(id.to_string());
        }
    };

    let mut out = FeatureMatrix::empty(n);
    if spec.use_ha {
        let rows: Vec<Vec<f64>> = d.listings().iter().map(|l| l.attributes().to_vec()).collect();
        out = out.hconcat(&FeatureMatrix::from_rows(ATTRIBUTE_NAMES.iter().map(|s| s.to_string()).collect(), &rows)?)?;
    }
    let mut zooms = spec.zooms.clone();
    zooms.sort();
    for z in zooms {
        let store = stores
            .iter()
            .find(|s| s.zoom() == z)
            .ok_or_else(|| Error::invalid(format!("no feature store for zoom {z}")))?;
        let dim = store.dim();
        let mut data = Vec::with_capacity(n * dim);
        for l in d.listings() {
            match store.get(&l.id) {
                Some(v) => data.extend_from_slice(v),
                None => {
                    note_missing(&l.id);
                    data.extend(std::iter::repeat_n(0.0, dim));
                }
            }
        }
        let names = (0..dim).map(|i| format!("z{z}_{i}")).collect();
        out = out.hconcat(&FeatureMatrix::new(names, data, n)?)?;
    }
    if spec.use_poi {
        let block = poi.ok_or_else(|| Error::invalid("POI features requested but no POI block given"))?;
        let lookup = block.by_id();
        let mut data = Vec::with_capacity(n * block.tags.len());
        for l in d.listings() {
            match lookup.get(l.id.as_str()) {
                Some(row) => data.extend(row.iter().map(|&c| f64::from(c))),
                None => {
                    note_missing(&l.id);
                    data.extend(std::iter::repeat_n(0.0, block.tags.len()));
                }
            }
        }
        let names = block.tags.iter().map(|t| format!("poi_{t}")).collect();
        out = out.hconcat(&FeatureMatrix::new(names, data, n)?)?;
    }
    if !missing.is_empty() {
        return Err(Error::MissingFeatures { ids: missing });
    }
    if spec.standardize {
        let train = d.indices(SplitTag::Train);
        let reference = if train.is_empty() { out.clone() } else { out.select(&train) };
        out = ColumnScaler::fit(&reference).apply(&out);
    }
    Ok(out)
}

/// Train and test rows of `x` with their prices.
pub fn train_test(d: &Dataset, x: &FeatureMatrix) -> Result<(FeatureMatrix, Vec<f64>, FeatureMatrix, Vec<f64>)> {
    let train = d.indices(SplitTag::Train);
    let test = d.indices(SplitTag::Test);
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid("dataset needs both train and test rows"));
    }
    let prices = d.prices();
    Ok((
        x.select(&train),
        train.iter().map(|&i| prices[i]).collect(),
        x.select(&test),
        test.iter().map(|&i| prices[i]).collect(),
    ))
}

/// `{20}, {19,20}, …, {15..20}`.
pub fn zoom_suffix_sets() -> Vec<Vec<ZoomLevel>> {
    let all = ZoomLevel::all();
    (0..all.len()).rev().map(|s| all[s..].to_vec()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub zooms: Vec<ZoomLevel>,
    pub report: EvalReport,
}

/// Evaluates `HA + DF(set)` (or `DF(set)` alone when `use_ha` is false) for
/// each zoom set with `n_runs` repetitions. Cell `c` draws its seeds from
/// `derive_seed(spec.seed, c)`.
pub fn ablate_zooms(
    d: &Dataset,
    stores: &[FeatureStore],
    spec: &EstimatorSpec,
    sets: &[Vec<ZoomLevel>],
    use_ha: bool,
    n_runs: usize,
) -> Result<Vec<AblationRow>> {
    sets.par_iter()
        .enumerate()
        .map(|(c, zooms)| {
            let fusion = FusionSpec::new(use_ha, zooms, false)?;
            let x = fuse(d, &fusion, stores, None)?;
            let (xtr, ytr, xte, yte) = train_test(d, &x)?;
            let cell_spec = EstimatorSpec { seed: derive_seed(spec.seed, c as u64), ..spec.clone() };
            let report = repeated_eval(&xtr, &ytr, &xte, &yte, &cell_spec, n_runs)?;
            Ok(AblationRow { zooms: fusion.zooms, report })
        })
        .collect()
}

pub fn render_ablation(rows: &[AblationRow], use_ha: bool) -> String {
    let label = |r: &AblationRow| {
        let z: Vec<String> = r.zooms.iter().map(ToString::to_string).collect();
        format!("{}DF ({})", if use_ha { "HA + " } else { "" }, z.join(", "))
    };
    let width = rows.iter().map(|r| label(r).len()).max().unwrap_or(0).max(8);
    let mut s = format!("{:<width$}  {:>24}  {:>17}\n", "features", "RMSE", "R2");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<width$}  {:>11.2} ± {:>10.2}  {:>7.4} ± {:>7.4}",
            label(r),
            r.report.rmse_mean,
            r.report.rmse_std,
            r.report.r2_mean,
            r.report.r2_std
        );
    }
    s
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("zooms,rmse_mean,rmse_std,r2_mean,r2_std,n_runs\n");
    for r in rows {
        let z: Vec<String> = r.zooms.iter().map(ToString::to_string).collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            z.join(" "),
            r.report.rmse_mean,
            r.report.rmse_std,
            r.report.r2_mean,
            r.report.r2_std,
            r.report.n_runs
        );
    }
    s
}

/// Loads every `*.geofeat` file in `dir`, keyed by zoom.
pub fn load_feature_dir(dir: &Path) -> Result<Vec<FeatureStore>> {
    let mut by_zoom = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<_> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths.into_iter().filter(|p| p.extension().is_some_and(|e| e == "geofeat")) {
        let store = load_features(&p)?;
        if by_zoom.insert(store.zoom(), store).is_some() {
            return Err(Error::invalid(format!("two feature files for the same zoom in {}", dir.display())));
        }
    }
    Ok(by_zoom.into_values().collect())
}

/// Conventional file name for a zoom's store.
pub fn feature_file_name(z: ZoomLevel) -> String {
    format!("zoom{z}.geofeat")
}
