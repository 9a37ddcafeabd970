//! Flat `key = value` experiment configuration with flag overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::contiguity::WSpec;
use crate::dataset::Status;
use crate::error::{Error, Result};
use crate::features::FusionSpec;
use crate::geo::ZoomLevel;
use crate::regress::{EstimatorKind, EstimatorSpec, DEFAULT_RUNS};

/// Environment variable holding the tile URL template.
pub const TILE_URL_ENV: &str = "GEOPRICE_TILE_URL";

/// Which contiguity the SAR predictor solves against for test rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SarPredictW {
    /// W over train and test points together.
    Combined,
    /// Train-train links only; test rows have no neighbors.
    TrainOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    /// Raw listings read by `ingest` (and written by `synth`).
    pub listings: PathBuf,
    /// Clean dataset read by every downstream command.
    pub dataset: PathBuf,
    pub poi: PathBuf,
    /// Tag universe file; `None` means the built-in 86 tags.
    pub tags: Option<PathBuf>,
    pub features_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub seed: u64,
    pub status: Status,
    pub prune_frac: f64,
    pub test_frac: f64,
    pub w: WSpec,
    pub sar_use_poi: bool,
    pub sar_predict_w: SarPredictW,
    pub poi_radius_km: f64,
    pub fusion: FusionSpec,
    pub estimator: EstimatorSpec,
    pub runs: usize,
    pub tile_url: Option<String>,
    /// Requests per second across all workers.
    pub rate_limit: f64,
    pub workers: usize,
    pub image_px: u32,
    pub cache_only: bool,
    pub synth_n: usize,
    pub synth_n_poi: usize,
    pub synth_dim: usize,
    /// Heat-map grid cells along the longer side.
    pub heatmap_cells: usize,
}

const KEYS: &[&str] = &[
    "out_dir",
    "listings",
    "dataset",
    "poi",
    "tags",
    "features_dir",
    "cache_dir",
    "seed",
    "status",
    "prune_frac",
    "test_frac",
    "w",
    "sar_features",
    "sar_predict_w",
    "poi_radius_km",
    "fusion",
    "zooms",
    "standardize",
    "estimator",
    "rf_trees",
    "rf_bootstrap",
    "mlp_hidden",
    "mlp_learning_rate",
    "mlp_batch_size",
    "mlp_patience",
    "mlp_max_epochs",
    "runs",
    "tile_url",
    "rate_limit",
    "workers",
    "image_px",
    "cache_only",
    "synth_n",
    "synth_n_poi",
    "synth_dim",
    "heatmap_cells",
];

/// Raw key/value pairs; later inserts win.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
    base_dir: PathBuf,
}

impl ConfigMap {
    /// Parses `key = value` lines. Blank lines and `#` comments are skipped;
    /// unknown and repeated keys are errors. Relative paths resolve against
    /// the file's directory. An unreadable file is a configuration error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base).map_err(|(line, msg)| Error::Config(format!("{}:{line}: {msg}", path.display())))
    }

    pub fn parse(text: &str, base_dir: PathBuf) -> std::result::Result<Self, (usize, String)> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or((i + 1, format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err((i + 1, format!("unknown key {k:?}")));
            }
            if values.insert(k.to_string(), v.to_string()).is_some() {
                return Err((i + 1, format!("key {k:?} given twice")));
            }
        }
        Ok(Self { values, base_dir })
    }

    /// Applies a `key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(Error::Config(format!("unknown key {k:?}")));
        }
        self.values.insert(k.to_string(), v.trim().to_string());
        Ok(())
    }

    fn get(&self, k: &str) -> Option<&str> {
        self.values.get(k).map(String::as_str)
    }

    fn path(&self, k: &str) -> Option<PathBuf> {
        self.get(k).map(|v| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                self.base_dir.join(p)
            }
        })
    }

    fn parsed<T: std::str::FromStr>(&self, k: &str, default: T) -> Result<T> {
        match self.get(k) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for {k}"))),
        }
    }

    fn flag(&self, k: &str, default: bool) -> Result<bool> {
        match self.get(k) {
            None => Ok(default),
            Some("true" | "yes" | "1") => Ok(true),
            Some("false" | "no" | "0") => Ok(false),
            Some(v) => Err(Error::Config(format!("bad boolean {v:?} for {k}"))),
        }
    }

    pub fn resolve(&self) -> Result<PipelineConfig> {
        let out_dir = self.path("out_dir").ok_or_else(|| Error::Config("out_dir is required".into()))?;
        let seed: u64 = match self.get("seed") {
            None => return Err(Error::Config("seed is required".into())),
            Some(_) => self.parsed("seed", 0)?,
        };
        let or_out = |k: &str, name: &str| self.path(k).unwrap_or_else(|| out_dir.join(name));

        let mut fusion = match self.get("fusion") {
            Some(s) => FusionSpec::parse(s)?,
            None => FusionSpec::parse("HA+DF")?,
        };
        if let Some(z) = self.get("zooms") {
            let zooms = parse_zooms(z)?;
            if fusion.zooms.is_empty() {
                return Err(Error::Config("zooms given but fusion has no DF block".into()));
            }
            fusion.zooms = zooms;
        }
        fusion.standardize = self.flag("standardize", false)?;

        let kind: EstimatorKind = self.get("estimator").unwrap_or("rf").parse()?;
        let mut estimator = EstimatorSpec::new(kind, seed);
        estimator.rf_trees = self.parsed("rf_trees", estimator.rf_trees)?;
        estimator.rf_bootstrap = self.flag("rf_bootstrap", estimator.rf_bootstrap)?;
        if let Some(h) = self.get("mlp_hidden") {
            estimator.mlp_hidden = parse_hidden(h)?;
        }
        estimator.mlp.learning_rate = self.parsed("mlp_learning_rate", estimator.mlp.learning_rate)?;
        estimator.mlp.batch_size = self.parsed("mlp_batch_size", estimator.mlp.batch_size)?;
        estimator.mlp.patience = self.parsed("mlp_patience", estimator.mlp.patience)?;
        estimator.mlp.max_epochs = self.parsed("mlp_max_epochs", estimator.mlp.max_epochs)?;
        estimator.validate().map_err(as_config)?;

        let sar_use_poi = match self.get("sar_features").unwrap_or("HA").to_ascii_uppercase().as_str() {
            "HA" => false,
            "HA+POI" => true,
            other => return Err(Error::Config(format!("sar_features must be HA or HA+POI, got {other:?}"))),
        };
        let sar_predict_w = match self.get("sar_predict_w").unwrap_or("combined") {
            "combined" => SarPredictW::Combined,
            "train-only" => SarPredictW::TrainOnly,
            other => return Err(Error::Config(format!("sar_predict_w must be combined or train-only, got {other:?}"))),
        };

        let cfg = PipelineConfig {
            listings: or_out("listings", "listings.csv"),
            dataset: or_out("dataset", "dataset.csv"),
            poi: or_out("poi", "poi.csv"),
            tags: self.path("tags"),
            features_dir: or_out("features_dir", "features"),
            cache_dir: or_out("cache_dir", "tiles"),
            seed,
            status: self.get("status").unwrap_or("sale").parse().map_err(as_config)?,
            prune_frac: self.parsed("prune_frac", 0.02)?,
            test_frac: self.parsed("test_frac", 0.1)?,
            w: self.get("w").unwrap_or("knn:10").parse()?,
            sar_use_poi,
            sar_predict_w,
            poi_radius_km: self.parsed("poi_radius_km", crate::poi::DEFAULT_POI_RADIUS_KM)?,
            fusion,
            estimator,
            runs: self.parsed("runs", DEFAULT_RUNS)?,
            tile_url: self.get("tile_url").map(str::to_string),
            rate_limit: self.parsed("rate_limit", 2.0)?,
            workers: self.parsed("workers", 4)?,
            image_px: self.parsed("image_px", 600)?,
            cache_only: self.flag("cache_only", false)?,
            synth_n: self.parsed("synth_n", 2000)?,
            synth_n_poi: self.parsed("synth_n_poi", 10_000)?,
            synth_dim: self.parsed("synth_dim", crate::synth::SYNTH_FEATURE_DIM)?,
            heatmap_cells: self.parsed("heatmap_cells", 48)?,
            out_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

/// `15,16,20` or `15-20`.
pub fn parse_zooms(s: &str) -> Result<Vec<ZoomLevel>> {
    let bad = || Error::Config(format!("bad zoom list {s:?}"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once('-') {
            let (a, b): (u8, u8) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            if a > b {
                return Err(bad());
            }
            for z in a..=b {
                out.push(ZoomLevel::new(z).map_err(as_config)?);
            }
        } else {
            out.push(ZoomLevel::new(part.parse().map_err(|_| bad())?).map_err(as_config)?);
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// `500,100` or `(500, 100)`.
fn parse_hidden(s: &str) -> Result<(usize, usize)> {
    let t = s.trim().trim_start_matches('(').trim_end_matches(')');
    let bad = || Error::Config(format!("mlp_hidden must be two widths, got {s:?}"));
    let (a, b) = t.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

impl PipelineConfig {
    fn validate(&self) -> Result<()> {
        let positive = |k: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{k} must be positive, got {v}")))
            }
        };
        positive("rate_limit", self.rate_limit)?;
        positive("poi_radius_km", self.poi_radius_km)?;
        if !(0.0..0.5).contains(&self.prune_frac) {
            return Err(Error::Config(format!("prune_frac {} outside [0, 0.5)", self.prune_frac)));
        }
        if !(self.test_frac > 0.0 && self.test_frac < 1.0) {
            return Err(Error::Config(format!("test_frac {} outside (0, 1)", self.test_frac)));
        }
        if self.runs == 0 || self.workers == 0 || self.image_px == 0 || self.heatmap_cells == 0 {
            return Err(Error::Config("runs, workers, image_px and heatmap_cells must be at least 1".into()));
        }
        Ok(())
    }

    /// Template from the config, else from [`TILE_URL_ENV`].
    pub fn tile_template(&self) -> Option<String> {
        self.tile_url.clone().or_else(|| std::env::var(TILE_URL_ENV).ok())
    }

    pub fn tag_universe(&self) -> Result<Vec<String>> {
        match &self.tags {
            Some(p) => crate::poi::read_tag_file(p),
            None => Ok(crate::poi::DEFAULT_TAGS.iter().map(|t| t.to_string()).collect()),
        }
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}
