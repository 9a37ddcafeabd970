//! One function per pipeline step. Every step reads and writes files under
//! the configured output directory so steps can run as separate processes.
//!
//! | step          | reads                                   | writes |
//! |---------------|-----------------------------------------|--------|
//! | synth         |                                         | listings.csv, poi.csv, tags.txt, features/, truth.txt |
//! | ingest        | `listings`                              | ingested.csv, ingest_report.txt |
//! | prune         | ingested.csv                            | `dataset` |
//! | split         | `dataset`                               | splits.csv |
//! | build-w       | `dataset`, splits.csv                   | w_all.mtx, w_train.mtx |
//! | fit-sar       | `dataset`, splits.csv, w_*.mtx          | sar_model.txt, predictions_sar.csv |
//! | poi-index     | `poi`, `tags`                           | poi_index.txt |
//! | featurize     | `dataset`, `poi`, `tags`                | poi_features.csv |
//! | fuse          | `dataset`, splits.csv, features, POI    | fused.csv |
//! | train         | `dataset`, splits.csv, fused.csv        | predictions_<est>.csv, runs_<est>.csv |
//! | evaluate      | predictions_*.csv, runs_*.csv           | evaluation.txt, evaluation.csv |
//! | ablate-zooms  | `dataset`, splits.csv, features         | ablation.txt, ablation.csv |
//! | fetch-tiles   | `dataset`                               | `cache_dir`/… and manifest.csv |
//! | report        | `dataset`, predictions_*.csv            | scatter_<label>.svg, heatmap.png, report.txt |

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::contiguity::{read_matrix_market, write_matrix_market, SparseContiguity};
use crate::dataset::{ingest_listings, prune_outliers, read_splits, split, write_listings, write_splits, Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::features::{
    ablate_zooms, ablation_csv, fuse, load_feature_dir, render_ablation, train_test, zoom_suffix_sets, FeatureMatrix,
};
use crate::geo::{derive_seed, ZoomLevel};
use crate::poi::{build_index, featurize_dataset, read_poi_csv, PoiBlock, PoiIndex};
use crate::regress::{fit, r2, rmse, EstimatorKind, EstimatorSpec, EvalReport};
use crate::sar::{fit_sar_ml, predict, train_only_contiguity, DesignMatrix};
use crate::synth::{gen_city, CityConfig};

use super::config::{PipelineConfig, SarPredictW};
use super::report::{heatmap_rgba, scatter_svg, write_png, PriceGrid};
use super::tiles::{fetch_tiles, FetchOptions, TileRequest, TileStatus, MANIFEST_NAME};

pub const INGESTED: &str = "ingested.csv";
pub const SPLITS: &str = "splits.csv";
pub const W_ALL: &str = "w_all.mtx";
pub const W_TRAIN: &str = "w_train.mtx";
pub const SAR_MODEL: &str = "sar_model.txt";
pub const POI_INDEX: &str = "poi_index.txt";
pub const POI_FEATURES: &str = "poi_features.csv";
pub const FUSED: &str = "fused.csv";
pub const PREDICTIONS_PREFIX: &str = "predictions_";
pub const RUNS_PREFIX: &str = "runs_";
pub const HEATMAP: &str = "heatmap.png";

/// Pixels per heat-map cell.
const HEATMAP_SCALE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Ingest,
    Prune,
    Split,
    BuildW,
    FitSar,
    PoiIndex,
    Featurize,
    Fuse,
    Train,
    Evaluate,
    AblateZooms,
    FetchTiles,
    Report,
}

impl Command {
    pub const ALL: [Command; 14] = [
        Command::Synth,
        Command::Ingest,
        Command::Prune,
        Command::Split,
        Command::BuildW,
        Command::FitSar,
        Command::PoiIndex,
        Command::Featurize,
        Command::Fuse,
        Command::Train,
        Command::Evaluate,
        Command::AblateZooms,
        Command::FetchTiles,
        Command::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Ingest => "ingest",
            Command::Prune => "prune",
            Command::Split => "split",
            Command::BuildW => "build-w",
            Command::FitSar => "fit-sar",
            Command::PoiIndex => "poi-index",
            Command::Featurize => "featurize",
            Command::Fuse => "fuse",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::AblateZooms => "ablate-zooms",
            Command::FetchTiles => "fetch-tiles",
            Command::Report => "report",
        }
    }

    /// Runs the step and returns a short human-readable summary.
    pub fn run(self, cfg: &PipelineConfig) -> Result<String> {
        std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
        match self {
            Command::Synth => cmd_synth(cfg),
            Command::Ingest => cmd_ingest(cfg),
            Command::Prune => cmd_prune(cfg),
            Command::Split => cmd_split(cfg),
            Command::BuildW => cmd_build_w(cfg),
            Command::FitSar => cmd_fit_sar(cfg),
            Command::PoiIndex => cmd_poi_index(cfg),
            Command::Featurize => cmd_featurize(cfg),
            Command::Fuse => cmd_fuse(cfg),
            Command::Train => cmd_train(cfg),
            Command::Evaluate => cmd_evaluate(cfg),
            Command::AblateZooms => cmd_ablate_zooms(cfg),
            Command::FetchTiles => cmd_fetch_tiles(cfg),
            Command::Report => cmd_report(cfg),
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown command {s:?}")))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn load_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    Ok(ingest_listings(&cfg.dataset, cfg.status)?.0)
}

/// Dataset with the tags from `splits.csv`; every listing must be tagged.
fn load_split_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    let path = cfg.out(SPLITS);
    if !path.exists() {
        return Err(Error::invalid(format!("{} not found; run split first", path.display())));
    }
    let d = load_dataset(cfg)?.with_split_map(&read_splits(&path)?)?;
    let untagged = d.indices(SplitTag::None);
    if let Some(&i) = untagged.first() {
        return Err(Error::invalid(format!(
            "{} listing(s) have no split tag (first {:?}); rerun split",
            untagged.len(),
            d.listings()[i].id
        )));
    }
    Ok(d)
}

fn load_poi_index(cfg: &PipelineConfig) -> Result<PoiIndex> {
    build_index(&read_poi_csv(&cfg.poi)?, &cfg.tag_universe()?)
}

fn cmd_synth(cfg: &PipelineConfig) -> Result<String> {
    let mut city_cfg = CityConfig::new(cfg.synth_n, cfg.synth_n_poi, cfg.seed);
    city_cfg.dim = cfg.synth_dim;
    city_cfg.tags = cfg.tag_universe()?;
    let city = gen_city(&city_cfg)?;
    let files = city.write(&cfg.out_dir)?;
    Ok(format!(
        "synthetic city: {} listings, {} POIs, {} zoom levels of {}-d features in {}",
        city.listings.len(),
        city.pois.len(),
        city.features.len(),
        city_cfg.dim,
        files.listings.parent().unwrap_or(Path::new(".")).display()
    ))
}

fn cmd_ingest(cfg: &PipelineConfig) -> Result<String> {
    let (d, report) = ingest_listings(&cfg.listings, cfg.status)?;
    write_listings(d.listings(), &cfg.out(INGESTED))?;
    let mut s = format!(
        "{} data rows: {} kept ({}), {} other status, {} malformed\n",
        report.data_rows,
        d.len(),
        cfg.status,
        report.filtered_out,
        report.malformed.len()
    );
    for m in &report.malformed {
        let _ = writeln!(s, "line {}: {}", m.line, m.reason);
    }
    write_text(&cfg.out("ingest_report.txt"), &s)?;
    Ok(s.lines().next().unwrap_or_default().to_string())
}

fn cmd_prune(cfg: &PipelineConfig) -> Result<String> {
    let (d, _) = ingest_listings(&cfg.out(INGESTED), cfg.status)?;
    let pruned = prune_outliers(&d, cfg.prune_frac)?;
    write_listings(pruned.listings(), &cfg.dataset)?;
    Ok(format!("pruned {} of {} listings (frac {})", d.len() - pruned.len(), d.len(), cfg.prune_frac))
}

fn cmd_split(cfg: &PipelineConfig) -> Result<String> {
    let d = split(&load_dataset(cfg)?, cfg.test_frac, cfg.seed)?;
    write_splits(&d, &cfg.out(SPLITS))?;
    Ok(format!("{} train, {} test", d.indices(SplitTag::Train).len(), d.indices(SplitTag::Test).len()))
}

fn cmd_build_w(cfg: &PipelineConfig) -> Result<String> {
    let d = load_split_dataset(cfg)?;
    let points = d.locations();
    let train = d.indices(SplitTag::Train);
    let w_all = cfg.w.build(&points)?;
    let w_train = cfg.w.build(&train.iter().map(|&i| points[i]).collect::<Vec<_>>())?;
    write_matrix_market(&w_all, &cfg.out(W_ALL))?;
    write_matrix_market(&w_train, &cfg.out(W_TRAIN))?;
    Ok(format!(
        "{}: W_all {} x {} ({} links, {} isolated), W_train {} x {} ({} links)",
        cfg.w,
        w_all.n(),
        w_all.n(),
        w_all.nnz(),
        w_all.empty_rows().len(),
        w_train.n(),
        w_train.n(),
        w_train.nnz()
    ))
}

/// Reads a contiguity written by `build-w`, or builds it when absent.
fn contiguity_for(cfg: &PipelineConfig, name: &str, points: &[crate::geo::GeoPoint]) -> Result<SparseContiguity> {
    let path = cfg.out(name);
    if !path.exists() {
        return cfg.w.build(points);
    }
    let w = read_matrix_market(&path)?;
    if w.n() != points.len() {
        return Err(Error::invalid(format!(
            "{} has order {} but the dataset gives {}; rerun build-w",
            path.display(),
            w.n(),
            points.len()
        )));
    }
    Ok(w)
}

/// Intercept, house attributes and optionally POI counts. POI columns that
/// are constant over the train rows carry no information and are dropped.
fn sar_design(cfg: &PipelineConfig, d: &Dataset, train: &[usize]) -> Result<(DesignMatrix, Vec<String>)> {
    let mut names: Vec<String> = crate::dataset::ATTRIBUTE_NAMES.iter().map(|s| s.to_string()).collect();
    let mut rows: Vec<Vec<f64>> = d.listings().iter().map(|l| l.attributes().to_vec()).collect();
    let mut dropped = Vec::new();
    if cfg.sar_use_poi {
        let block = poi_block(cfg, d)?;
        let lookup = block.by_id();
        let counts: Vec<&[u32]> = d
            .listings()
            .iter()
            .map(|l| lookup.get(l.id.as_str()).copied().ok_or_else(|| l.id.clone()))
            .collect::<std::result::Result<_, _>>()
            .map_err(|id| Error::MissingFeatures { ids: vec![id] })?;
        for (t, tag) in block.tags.iter().enumerate() {
            let first = counts[train[0]][t];
            if train.iter().all(|&i| counts[i][t] == first) {
                dropped.push(tag.clone());
                continue;
            }
            names.push(format!("poi_{tag}"));
            for (row, c) in rows.iter_mut().zip(&counts) {
                row.push(f64::from(c[t]));
            }
        }
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Ok((DesignMatrix::with_intercept(&refs, &rows)?, dropped))
}

/// POI counts from `featurize` when present and matching the radius,
/// otherwise computed on the fly.
fn poi_block(cfg: &PipelineConfig, d: &Dataset) -> Result<PoiBlock> {
    let path = cfg.out(POI_FEATURES);
    if path.exists() {
        let block = PoiBlock::read(&path)?;
        if block.radius_km == cfg.poi_radius_km {
            return Ok(block);
        }
    }
    featurize_dataset(d, cfg.poi_radius_km, &load_poi_index(cfg)?)
}

fn write_predictions(path: &Path, d: &Dataset, pred: &[f64]) -> Result<()> {
    let mut s = String::from("id,split,truth,prediction\n");
    for ((l, t), p) in d.listings().iter().zip(d.splits()).zip(pred) {
        let _ = writeln!(s, "{},{t},{:?},{p:?}", l.id, l.price);
    }
    write_text(path, &s)
}

fn cmd_fit_sar(cfg: &PipelineConfig) -> Result<String> {
    let d = load_split_dataset(cfg)?;
    let points = d.locations();
    let train = d.indices(SplitTag::Train);
    let train_points: Vec<_> = train.iter().map(|&i| points[i]).collect();
    let w_train = contiguity_for(cfg, W_TRAIN, &train_points)?;
    let (x_all, dropped) = sar_design(cfg, &d, &train)?;
    let prices = d.prices();
    let y_train: Vec<f64> = train.iter().map(|&i| prices[i]).collect();
    let model = fit_sar_ml(&x_all.select(&train), &y_train, &w_train)?;

    let w_pred = match cfg.sar_predict_w {
        SarPredictW::Combined => contiguity_for(cfg, W_ALL, &points)?,
        SarPredictW::TrainOnly => train_only_contiguity(&w_train, &train, d.len())?,
    };
    let pred = predict(&model, &x_all, &w_pred)?;
    write_text(&cfg.out(SAR_MODEL), &model.to_kv())?;
    write_predictions(&cfg.out(&format!("{PREDICTIONS_PREFIX}sar.csv")), &d, &pred)?;

    let mut s = format!("rho = {:.4}, sigma2 = {:.4e}, loglik = {:.2}", model.rho, model.sigma2, model.loglik);
    if !dropped.is_empty() {
        let _ = write!(s, "; dropped {} POI column(s) constant on train rows", dropped.len());
    }
    Ok(s)
}

fn cmd_poi_index(cfg: &PipelineConfig) -> Result<String> {
    let index = load_poi_index(cfg)?;
    let mut s = String::from("tag,count\n");
    for (t, c) in index.tags().iter().zip(index.counts()) {
        let _ = writeln!(s, "{t},{c}");
    }
    write_text(&cfg.out(POI_INDEX), &s)?;
    let empty = index.counts().iter().filter(|&&c| c == 0).count();
    Ok(format!("{} POIs over {} tags ({} tags without POIs)", index.len(), index.tags().len(), empty))
}

fn cmd_featurize(cfg: &PipelineConfig) -> Result<String> {
    let d = load_dataset(cfg)?;
    let block = featurize_dataset(&d, cfg.poi_radius_km, &load_poi_index(cfg)?)?;
    block.write(&cfg.out(POI_FEATURES))?;
    Ok(format!("{} listings x {} tags at r = {} km", block.ids.len(), block.tags.len(), block.radius_km))
}

fn fused_matrix(cfg: &PipelineConfig, d: &Dataset) -> Result<FeatureMatrix> {
    let stores = if cfg.fusion.zooms.is_empty() { Vec::new() } else { load_feature_dir(&cfg.features_dir)? };
    let block = if cfg.fusion.use_poi { Some(poi_block(cfg, d)?) } else { None };
    fuse(d, &cfg.fusion, &stores, block.as_ref())
}

fn write_fused(path: &Path, d: &Dataset, x: &FeatureMatrix) -> Result<()> {
    let mut s = format!("id,{}\n", x.names().join(","));
    for (i, l) in d.listings().iter().enumerate() {
        s.push_str(&l.id);
        for v in x.row(i) {
            let _ = write!(s, ",{v:?}");
        }
        s.push('\n');
    }
    write_text(path, &s)
}

/// Reads `fused.csv` and checks its rows follow the dataset order.
fn read_fused(path: &Path, d: &Dataset) -> Result<FeatureMatrix> {
    if !path.exists() {
        return Err(Error::invalid(format!("{} not found; run fuse first", path.display())));
    }
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or_default();
    let mut cols = header.split(',');
    if cols.next() != Some("id") {
        return Err(Error::parse(path, 1, "header must start with id"));
    }
    let names: Vec<String> = cols.map(String::from).collect();
    let mut data = Vec::with_capacity(d.len() * names.len());
    let mut n = 0;
    for (i, line) in lines.filter(|(_, l)| !l.is_empty()) {
        let mut f = line.split(',');
        let id = f.next().unwrap_or_default();
        match d.listings().get(n) {
            Some(l) if l.id == id => {}
            _ => return Err(Error::parse(path, i + 1, format!("row {id:?} does not match the dataset; rerun fuse"))),
        }
        let before = data.len();
        for v in f {
            data.push(v.parse::<f64>().map_err(|_| Error::parse(path, i + 1, format!("bad number {v:?}")))?);
        }
        if data.len() - before != names.len() {
            return Err(Error::parse(path, i + 1, format!("expected {} values", names.len())));
        }
        n += 1;
    }
    if n != d.len() {
        return Err(Error::invalid(format!("{} has {n} rows, dataset has {}; rerun fuse", path.display(), d.len())));
    }
    FeatureMatrix::new(names, data, n)
}

fn cmd_fuse(cfg: &PipelineConfig) -> Result<String> {
    let d = load_split_dataset(cfg)?;
    let x = fused_matrix(cfg, &d)?;
    write_fused(&cfg.out(FUSED), &d, &x)?;
    Ok(format!("{}: {} rows x {} columns", cfg.fusion.label(), x.n(), x.k()))
}

/// Fits `cfg.runs` models with seeds `derive_seed(seed, run)`, scoring each
/// on the test rows. `predictions_<est>.csv` holds the per-row mean over runs.
fn cmd_train(cfg: &PipelineConfig) -> Result<String> {
    let d = load_split_dataset(cfg)?;
    let x = read_fused(&cfg.out(FUSED), &d)?;
    let (xtr, ytr, _, yte) = train_test(&d, &x)?;
    let test = d.indices(SplitTag::Test);
    let spec = &cfg.estimator;
    let mut sum = vec![0.0; d.len()];
    let mut runs = String::from("run,seed,rmse,r2\n");
    let (mut rmses, mut r2s) = (Vec::new(), Vec::new());
    let fits = if spec.kind == EstimatorKind::Linear { 1 } else { cfg.runs };
    for run in 0..fits {
        let seed = derive_seed(spec.seed, run as u64);
        let pred = fit(&xtr, &ytr, &EstimatorSpec { seed, ..spec.clone() })?.predict(&x)?;
        let pte: Vec<f64> = test.iter().map(|&i| pred[i]).collect();
        let (a, b) = (rmse(&yte, &pte)?, r2(&yte, &pte)?);
        let _ = writeln!(runs, "{run},{seed},{a:?},{b:?}");
        rmses.push(a);
        r2s.push(b);
        for (s, p) in sum.iter_mut().zip(&pred) {
            *s += p;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / fits as f64).collect();
    let label = spec.kind.to_string();
    write_predictions(&cfg.out(&format!("{PREDICTIONS_PREFIX}{label}.csv")), &d, &mean)?;
    write_text(&cfg.out(&format!("{RUNS_PREFIX}{label}.csv")), &runs)?;
    let report = EvalReport::from_runs(rmses, r2s)?;
    Ok(format!(
        "{label} on {} ({} runs): RMSE {:.2} ± {:.2}, R2 {:.4} ± {:.4}",
        cfg.fusion.label(),
        report.n_runs,
        report.rmse_mean,
        report.rmse_std,
        report.r2_mean,
        report.r2_std
    ))
}

/// One `predictions_<label>.csv` file.
struct Predictions {
    label: String,
    split: Vec<SplitTag>,
    truth: Vec<f64>,
    prediction: Vec<f64>,
}

impl Predictions {
    fn test_pairs(&self) -> (Vec<f64>, Vec<f64>) {
        let idx = self.split.iter().enumerate().filter(|(_, t)| **t == SplitTag::Test).map(|(i, _)| i);
        idx.map(|i| (self.truth[i], self.prediction[i])).unzip()
    }
}

fn read_predictions(path: &Path, label: String) -> Result<Predictions> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l) != Some("id,split,truth,prediction") {
        return Err(Error::parse(path, 1, "expected header id,split,truth,prediction"));
    }
    let mut p = Predictions { label, split: Vec::new(), truth: Vec::new(), prediction: Vec::new() };
    for (i, line) in lines.filter(|(_, l)| !l.is_empty()) {
        let f: Vec<&str> = line.rsplitn(4, ',').collect();
        if f.len() != 4 {
            return Err(Error::parse(path, i + 1, "expected 4 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(path, i + 1, format!("bad number {s:?}")));
        p.prediction.push(num(f[0])?);
        p.truth.push(num(f[1])?);
        p.split.push(f[2].parse().map_err(|e: Error| Error::parse(path, i + 1, e.to_string()))?);
    }
    Ok(p)
}

/// Every `predictions_*.csv` in the output directory, sorted by label.
fn all_predictions(cfg: &PipelineConfig) -> Result<Vec<(PathBuf, Predictions)>> {
    let entries = std::fs::read_dir(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let mut paths: Vec<(PathBuf, String)> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| {
            let name = p.file_name()?.to_str()?;
            let label = name.strip_prefix(PREDICTIONS_PREFIX)?.strip_suffix(".csv")?.to_string();
            Some((p, label))
        })
        .collect();
    paths.sort_by(|a, b| a.1.cmp(&b.1));
    paths.into_iter().map(|(p, label)| Ok((p.clone(), read_predictions(&p, label)?))).collect()
}

/// Per-run metrics from `runs_<label>.csv`.
fn read_runs(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = read_text(path)?;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(path, i + 1, format!("bad number {s:?}")));
        if f.len() != 4 {
            return Err(Error::parse(path, i + 1, "expected run,seed,rmse,r2"));
        }
        a.push(num(f[2])?);
        b.push(num(f[3])?);
    }
    Ok((a, b))
}

/// Scores every prediction file on its test rows. Repeated-run estimators
/// report the mean and spread of their per-run metrics; single fits (SAR,
/// linear) are scored directly.
fn cmd_evaluate(cfg: &PipelineConfig) -> Result<String> {
    let preds = all_predictions(cfg)?;
    if preds.is_empty() {
        return Err(Error::invalid(format!("no {PREDICTIONS_PREFIX}*.csv in {}", cfg.out_dir.display())));
    }
    let mut rows = Vec::new();
    for (_, p) in &preds {
        let runs_path = cfg.out(&format!("{RUNS_PREFIX}{}.csv", p.label));
        let report = if runs_path.exists() {
            let (a, b) = read_runs(&runs_path)?;
            EvalReport::from_runs(a, b)?
        } else {
            let (y, yhat) = p.test_pairs();
            EvalReport::from_runs(vec![rmse(&y, &yhat)?], vec![r2(&y, &yhat)?])?
        };
        rows.push((p.label.clone(), report));
    }
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(9);
    let mut txt = format!("{:<width$}  {:>24}  {:>17}  {:>4}\n", "estimator", "RMSE", "R2", "runs");
    let mut csv = String::from("estimator,rmse_mean,rmse_std,r2_mean,r2_std,n_runs\n");
    for (label, r) in &rows {
        let _ = writeln!(
            txt,
            "{label:<width$}  {:>11.2} ± {:>10.2}  {:>7.4} ± {:>7.4}  {:>4}",
            r.rmse_mean, r.rmse_std, r.r2_mean, r.r2_std, r.n_runs
        );
        let _ = writeln!(csv, "{label},{:?},{:?},{:?},{:?},{}", r.rmse_mean, r.rmse_std, r.r2_mean, r.r2_std, r.n_runs);
    }
    write_text(&cfg.out("evaluation.txt"), &txt)?;
    write_text(&cfg.out("evaluation.csv"), &csv)?;
    Ok(txt.trim_end().to_string())
}

fn cmd_ablate_zooms(cfg: &PipelineConfig) -> Result<String> {
    let d = load_split_dataset(cfg)?;
    let stores = load_feature_dir(&cfg.features_dir)?;
    let rows = ablate_zooms(&d, &stores, &cfg.estimator, &zoom_suffix_sets(), cfg.fusion.use_ha, cfg.runs)?;
    let table = render_ablation(&rows, cfg.fusion.use_ha);
    write_text(&cfg.out("ablation.txt"), &table)?;
    write_text(&cfg.out("ablation.csv"), &ablation_csv(&rows))?;
    Ok(table.trim_end().to_string())
}

/// One request per listing and zoom of the fusion spec (all zooms when the
/// spec has no deep-feature block).
fn cmd_fetch_tiles(cfg: &PipelineConfig) -> Result<String> {
    let d = load_dataset(cfg)?;
    let zooms = if cfg.fusion.zooms.is_empty() { ZoomLevel::all() } else { cfg.fusion.zooms.clone() };
    let requests: Vec<TileRequest> = d
        .listings()
        .iter()
        .flat_map(|l| {
            zooms.iter().map(|z| TileRequest {
                id: l.id.clone(),
                lat: l.location.lat(),
                lon: l.location.lon(),
                zoom: z.value(),
                size: cfg.image_px,
            })
        })
        .collect();
    let opts = FetchOptions {
        rate_limit: cfg.rate_limit,
        workers: cfg.workers,
        cache_only: cfg.cache_only,
        ..FetchOptions::default()
    };
    let template = cfg.tile_template();
    let outcomes = fetch_tiles(&requests, template.as_deref(), &cfg.cache_dir, &opts)?;
    let count = |f: fn(&TileStatus) -> bool| outcomes.iter().filter(|o| f(&o.status)).count();
    let failed = count(|s| matches!(s, TileStatus::Failed(_)));
    let summary = format!(
        "{} requests: {} fetched, {} cached, {} duplicate, {} missing, {} failed",
        outcomes.len(),
        count(|s| *s == TileStatus::Fetched),
        count(|s| *s == TileStatus::Cached),
        count(|s| *s == TileStatus::Duplicate),
        count(|s| *s == TileStatus::Missing),
        failed
    );
    if failed > 0 {
        return Err(Error::invalid(format!(
            "{summary}; see {}",
            cfg.cache_dir.join(MANIFEST_NAME).display()
        )));
    }
    Ok(summary)
}

/// Scatter plots of the test rows of every prediction file, and the price
/// heat map of the dataset.
fn cmd_report(cfg: &PipelineConfig) -> Result<String> {
    let d = load_dataset(cfg)?;
    let grid = PriceGrid::build(&d.locations(), &d.prices(), cfg.heatmap_cells)?;
    let mut summary = String::new();
    for (_, p) in all_predictions(cfg)? {
        let (y, yhat) = p.test_pairs();
        let svg = scatter_svg(&y, &yhat, &format!("{}: predicted vs true price (test rows)", p.label))?;
        let path = cfg.out(&format!("scatter_{}.svg", p.label));
        write_text(&path, &svg)?;
        let _ = writeln!(summary, "scatter_{}.svg: {} test rows", p.label, y.len());
    }
    let (w, h, px) = heatmap_rgba(&grid, HEATMAP_SCALE);
    write_png(&cfg.out(HEATMAP), w, h, &px)?;
    let occupied = grid.cells.iter().filter(|c| c.is_some()).count();
    let _ = writeln!(summary, "{HEATMAP}: {} x {} cells, {occupied} occupied", grid.cols, grid.rows);
    match grid.morans_i() {
        Some(i) => {
            let _ = writeln!(summary, "Moran's I of cell mean prices (rook adjacency): {i:.4}");
        }
        None => summary.push_str("Moran's I undefined (fewer than two linked cells)\n"),
    }
    write_text(&cfg.out("report.txt"), &summary)?;
    Ok(summary.trim_end().to_string())
}
