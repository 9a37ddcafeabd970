//! Synthetic data with known ground truth: an exact SAR process for
//! parameter recovery, and a multi-scale "city" whose prices depend
//! nonlinearly on house attributes and on amenity fields at six spatial
//! scales, one per pseudo-zoom.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{Poisson, StandardNormal};
use rayon::prelude::*;

use crate::contiguity::{write_matrix_market, SparseContiguity, WSpec};
use crate::dataset::{write_listings, Dataset, Listing, Status};
use crate::error::{Error, Result};
use crate::features::{feature_file_name, save_features, FeatureStore};
use crate::geo::{derive_seed, km_per_degree, seeded_rng, zoom_side_km, GeoPoint, SeededRng, ZoomLevel};
use crate::linalg::SparseLu;
use crate::poi::{write_poi_csv, write_tag_file, PoiRecord, DEFAULT_TAGS};
use crate::sar::DesignMatrix;

/// Southwest corner of the unit-degree box used by [`gen_sar_data`].
pub const SAR_BOX_ORIGIN: (f64, f64) = (51.0, -0.5);

/// A realization of `y = ρWy + Xβ + ε`.
#[derive(Debug, Clone)]
pub struct SarData {
    pub points: Vec<GeoPoint>,
    pub x: DesignMatrix,
    pub y: Vec<f64>,
    /// Row-normalized.
    pub w: SparseContiguity,
    pub eps: Vec<f64>,
}

/// Draws points uniformly in a one-degree box, standard normal covariates
/// after the intercept and `ε ~ N(0, σ²)`, then solves `(I − ρW) y = Xβ + ε`
/// with a sparse LU and one step of iterative refinement.
pub fn gen_sar_data(n: usize, rho: f64, beta: &[f64], sigma: f64, w_spec: WSpec, seed: u64) -> Result<SarData> {
    if !(rho.abs() < 1.0) {
        return Err(Error::invalid(format!("|rho| = {} must be < 1", rho.abs())));
    }
    if beta.is_empty() || beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::invalid("beta must be nonempty and finite"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma {sigma} must be finite and nonnegative")));
    }
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 points, got {n}")));
    }
    let mut rng = seeded_rng(seed);
    let (lat0, lon0) = SAR_BOX_ORIGIN;
    let points = (0..n)
        .map(|_| {
            let lat = lat0 + rng.random::<f64>();
            let lon = lon0 + rng.random::<f64>();
            GeoPoint::new(lat, lon)
        })
        .collect::<Result<Vec<_>>>()?;
    let k = beta.len();
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (1..k).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let names: Vec<String> = (1..k).map(|j| format!("x{j}")).collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let x = DesignMatrix::with_intercept(&name_refs, &rows)?;
    let eps: Vec<f64> = (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();

    let w = w_spec.build(&points)?;
    let b: Vec<f64> = x.mul(beta).iter().zip(&eps).map(|(a, e)| a + e).collect();
    let lu = SparseLu::factor(&w, rho).map_err(|e| Error::numeric(format!("I - rho W singular: {e}")))?;
    let mut y = lu.solve(&b);
    let wy = w.mul_vec(&y);
    let r: Vec<f64> = (0..n).map(|i| b[i] - (y[i] - rho * wy[i])).collect();
    for (yi, d) in y.iter_mut().zip(lu.solve(&r)) {
        *yi += d;
    }
    Ok(SarData { points, x, y, w, eps })
}

/// Center of the synthetic city.
pub const CITY_CENTER: (f64, f64) = (51.5074, -0.1278);
/// The city is a square of this half-width around [`CITY_CENTER`].
pub const CITY_HALF_WIDTH_KM: f64 = 5.0;
/// Deep-feature dimension of synthetic stores.
pub const SYNTH_FEATURE_DIM: usize = 16;
/// Tile size that sets the field bandwidths and feature windows.
pub const CITY_TILE_PX: u32 = 600;

/// Weight of each scale's field in the price, coarsest first.
pub const FIELD_WEIGHTS: [f64; 6] = [1.2, 0.9, 0.6, 0.4, 0.3, 0.2];
/// Log-price coefficients for bedrooms, bathrooms, receptions and floors.
pub const ATTRIBUTE_COEFS: [f64; 4] = [0.25, 0.10, 0.08, 0.06];
pub const BASE_PRICE: f64 = 200_000.0;
/// Height and steepness of the location premium sigmoid.
pub const PREMIUM_HEIGHT: f64 = 3.0;
pub const PREMIUM_STEEPNESS: f64 = 2.5;

const BUMP_DENSITY: f64 = 0.5;
const CLUSTER_PROB: f64 = 0.9;
const CLUSTER_SPREAD: f64 = 0.6;
const CUTOFF_BANDWIDTHS: f64 = 6.0;
const PROBE_GRID: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct CityConfig {
    pub n: usize,
    pub n_poi: usize,
    pub seed: u64,
    pub dim: usize,
    /// Standard deviation of the log-normal price factor.
    pub price_noise: f64,
    /// Feature noise as a fraction of the window-mean standard deviation.
    pub feature_noise: f64,
    pub tags: Vec<String>,
}

impl CityConfig {
    pub fn new(n: usize, n_poi: usize, seed: u64) -> Self {
        Self {
            n,
            n_poi,
            seed,
            dim: SYNTH_FEATURE_DIM,
            price_noise: 0.1,
            feature_noise: 0.1,
            tags: DEFAULT_TAGS.iter().map(|t| t.to_string()).collect(),
        }
    }
}

/// Sum of isotropic Gaussian bumps on the local kilometer plane.
#[derive(Debug, Clone, PartialEq)]
pub struct BumpField {
    pub zoom: ZoomLevel,
    pub bandwidth_km: f64,
    pub centers: Vec<[f64; 2]>,
    pub amplitudes: Vec<f64>,
}

impl BumpField {
    pub fn value(&self, p: [f64; 2]) -> f64 {
        let h = self.bandwidth_km;
        let cut2 = (CUTOFF_BANDWIDTHS * h).powi(2);
        let mut s = 0.0;
        for (c, a) in self.centers.iter().zip(&self.amplitudes) {
            let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
            if d2 < cut2 {
                s += a * (-d2 / (2.0 * h * h)).exp();
            }
        }
        s
    }

    /// Mean over the axis-aligned square of side `side` centered at `p`,
    /// in closed form.
    pub fn window_mean(&self, p: [f64; 2], side: f64) -> f64 {
        let h = self.bandwidth_km;
        let k = std::f64::consts::SQRT_2 * h;
        let norm = (PI / 2.0).sqrt() * h / side;
        let reach = CUTOFF_BANDWIDTHS * h + side / 2.0;
        let axis = |q: f64, c: f64| norm * (libm::erf((q + side / 2.0 - c) / k) - libm::erf((q - side / 2.0 - c) / k));
        let mut s = 0.0;
        for (c, a) in self.centers.iter().zip(&self.amplitudes) {
            if (p[0] - c[0]).abs() < reach && (p[1] - c[1]).abs() < reach {
                s += a * axis(p[0], c[0]) * axis(p[1], c[1]);
            }
        }
        s
    }
}

/// Listings, fields, feature stores and POIs of one synthetic city.
///
/// Price model, with `f_s` the field of scale `s` at the house:
///
/// ```text
/// G     = Σ_s FIELD_WEIGHTS[s] · f_s
/// price = BASE_PRICE · exp(ATTRIBUTE_COEFS · HA)
///         · (1 + PREMIUM_HEIGHT · sigmoid(PREMIUM_STEEPNESS · (G − θ)))
///         · exp(price_noise · N(0, 1))
/// ```
///
/// where `θ` is the median of `G` over a regular probe grid covering the city.
/// The zoom-z feature vector is `tanh(a_k · (m + noise_k) + b_k)`, k = 1..dim,
/// where `m` is the mean of the zoom-z field over that zoom's tile footprint.
#[derive(Debug, Clone)]
pub struct SynthCity {
    pub config: CityConfig,
    pub listings: Dataset,
    /// One per zoom, coarsest first.
    pub fields: Vec<BumpField>,
    pub premium_center: f64,
    pub features: Vec<FeatureStore>,
    pub pois: Vec<PoiRecord>,
    /// Prices before the log-normal noise factor.
    pub noiseless_prices: Vec<f64>,
}

/// Local east/north kilometers about [`CITY_CENTER`].
pub fn to_local(p: GeoPoint) -> [f64; 2] {
    let k = km_per_degree();
    [(p.lon() - CITY_CENTER.1) * k * CITY_CENTER.0.to_radians().cos(), (p.lat() - CITY_CENTER.0) * k]
}

pub fn from_local(q: [f64; 2]) -> Result<GeoPoint> {
    let k = km_per_degree();
    GeoPoint::new(CITY_CENTER.0 + q[1] / k, CITY_CENTER.1 + q[0] / (k * CITY_CENTER.0.to_radians().cos()))
}

pub fn gen_nonlinear_city(n: usize, n_poi: usize, seed: u64) -> Result<SynthCity> {
    gen_city(&CityConfig::new(n, n_poi, seed))
}

/// Independent streams so changing one count does not reshuffle the rest.
const STREAM_FIELDS: u64 = 0;
const STREAM_LISTINGS: u64 = 1;
const STREAM_FEATURES: u64 = 2;
const STREAM_POIS: u64 = 3;

pub fn gen_city(cfg: &CityConfig) -> Result<SynthCity> {
    if cfg.n < 100 {
        return Err(Error::invalid(format!("city needs n >= 100, got {}", cfg.n)));
    }
    if cfg.dim == 0 || cfg.dim > 256 {
        return Err(Error::invalid(format!("feature dim {} outside 1..=256", cfg.dim)));
    }
    if !(cfg.price_noise >= 0.0 && cfg.feature_noise >= 0.0) {
        return Err(Error::invalid("noise levels must be nonnegative"));
    }
    if cfg.n_poi > 0 && cfg.tags.is_empty() {
        return Err(Error::invalid("POIs need a nonempty tag universe"));
    }
    let fields = gen_fields(&mut seeded_rng(derive_seed(cfg.seed, STREAM_FIELDS)));
    let premium_center = probe_median(&fields);

    let mut rng = seeded_rng(derive_seed(cfg.seed, STREAM_LISTINGS));
    let bedrooms_dist = Poisson::new(2.0).expect("positive rate");
    let half = CITY_HALF_WIDTH_KM;
    let mut local = Vec::with_capacity(cfg.n);
    let mut listings = Vec::with_capacity(cfg.n);
    let mut noiseless = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let q = [rng.random_range(-half..half), rng.random_range(-half..half)];
        let bedrooms = (bedrooms_dist.sample(&mut rng) as u32 + 1).min(6);
        let bathrooms = rng.random_range(1..=bedrooms);
        let receptions = rng.random_range(0..=3);
        let floors = rng.random_range(1..=3);
        let noise: f64 = rng.sample(StandardNormal);
        let ha = [bedrooms, bathrooms, receptions, floors].map(f64::from);
        let g: f64 = fields.iter().zip(FIELD_WEIGHTS).map(|(f, w)| w * f.value(q)).sum();
        let clean = ground_truth_price(ha, g, premium_center);
        noiseless.push(clean);
        listings.push(Listing {
            id: format!("L{i:05}"),
            location: from_local(q)?,
            price: clean * (cfg.price_noise * noise).exp(),
            bedrooms,
            bathrooms,
            receptions,
            floors,
            status: Status::Sale,
        });
        local.push(q);
    }

    let mut rng = seeded_rng(derive_seed(cfg.seed, STREAM_FEATURES));
    let mut features = Vec::with_capacity(fields.len());
    for field in &fields {
        let m: Vec<f64> = listings
            .par_iter()
            .zip(&local)
            .map(|(l, &q)| field.window_mean(q, zoom_side_km(field.zoom, l.location.lat(), CITY_TILE_PX)))
            .collect();
        let mean = m.iter().sum::<f64>() / m.len() as f64;
        let sd = (m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m.len() as f64).sqrt();
        let slopes: Vec<f64> = (0..cfg.dim)
            .map(|_| {
                let mag = rng.random_range(0.5..2.0);
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            })
            .collect();
        let offsets: Vec<f64> = (0..cfg.dim).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut store = FeatureStore::new(field.zoom, cfg.dim)?;
        let mut v = vec![0.0; cfg.dim];
        for (l, &mi) in listings.iter().zip(&m) {
            for k in 0..cfg.dim {
                let e: f64 = rng.sample(StandardNormal);
                v[k] = (slopes[k] * (mi + cfg.feature_noise * sd * e) + offsets[k]).tanh();
            }
            store.insert(&l.id, &v)?;
        }
        features.push(store);
    }

    let pois = gen_pois(fields.last().expect("six fields"), cfg, &mut seeded_rng(derive_seed(cfg.seed, STREAM_POIS)))?;
    Ok(SynthCity {
        config: cfg.clone(),
        listings: Dataset::new(listings)?,
        fields,
        premium_center,
        features,
        pois,
        noiseless_prices: noiseless,
    })
}

/// Noise-free price for attributes `ha` and weighted field sum `g`.
pub fn ground_truth_price(ha: [f64; 4], g: f64, premium_center: f64) -> f64 {
    let log_base: f64 = ha.iter().zip(ATTRIBUTE_COEFS).map(|(x, c)| x * c).sum();
    let premium = PREMIUM_HEIGHT / (1.0 + (-PREMIUM_STEEPNESS * (g - premium_center)).exp());
    BASE_PRICE * log_base.exp() * (1.0 + premium)
}

/// Bandwidth at scale s is the tile side at zoom 15 + s. The coarsest bumps
/// are uniform; finer bumps mostly cluster around coarse ones, so fine
/// amenities concentrate in desirable districts.
fn gen_fields(rng: &mut SeededRng) -> Vec<BumpField> {
    let mut fields: Vec<BumpField> = Vec::with_capacity(6);
    for z in ZoomLevel::all() {
        let h = zoom_side_km(z, CITY_CENTER.0, CITY_TILE_PX);
        let extent = CITY_HALF_WIDTH_KM + 3.0 * h;
        let count = (BUMP_DENSITY * (2.0 * extent).powi(2) / (PI * h * h)).ceil() as usize;
        let mut centers = Vec::with_capacity(count);
        for _ in 0..count {
            let c = match fields.first() {
                Some(root) if rng.random::<f64>() < CLUSTER_PROB => {
                    let parent = root.centers[rng.random_range(0..root.centers.len())];
                    let s = CLUSTER_SPREAD * root.bandwidth_km;
                    let dx: f64 = rng.sample(StandardNormal);
                    let dy: f64 = rng.sample(StandardNormal);
                    [parent[0] + s * dx, parent[1] + s * dy]
                }
                _ => [rng.random_range(-extent..extent), rng.random_range(-extent..extent)],
            };
            centers.push(c);
        }
        let amplitudes = (0..count).map(|_| rng.random_range(0.5..1.5)).collect();
        fields.push(BumpField { zoom: z, bandwidth_km: h, centers, amplitudes });
    }
    fields
}

fn probe_median(fields: &[BumpField]) -> f64 {
    let step = 2.0 * CITY_HALF_WIDTH_KM / PROBE_GRID as f64;
    let mut g: Vec<f64> = (0..PROBE_GRID * PROBE_GRID)
        .into_par_iter()
        .map(|c| {
            let q = [
                -CITY_HALF_WIDTH_KM + step * ((c % PROBE_GRID) as f64 + 0.5),
                -CITY_HALF_WIDTH_KM + step * ((c / PROBE_GRID) as f64 + 0.5),
            ];
            fields.iter().zip(FIELD_WEIGHTS).map(|(f, w)| w * f.value(q)).sum()
        })
        .collect();
    g.sort_by(f64::total_cmp);
    let m = g.len() / 2;
    0.5 * (g[m - 1] + g[m])
}

/// Samples from the density proportional to the field (a Gaussian mixture),
/// rejecting draws outside the city. Tags are uniform.
fn gen_pois(field: &BumpField, cfg: &CityConfig, rng: &mut SeededRng) -> Result<Vec<PoiRecord>> {
    if cfg.n_poi == 0 {
        return Ok(Vec::new());
    }
    let pick = WeightedIndex::new(&field.amplitudes).map_err(|e| Error::numeric(format!("POI weights: {e}")))?;
    let h = field.bandwidth_km;
    let half = CITY_HALF_WIDTH_KM;
    let mut out = Vec::with_capacity(cfg.n_poi);
    let max_draws = 1000 * cfg.n_poi;
    for _ in 0..max_draws {
        if out.len() == cfg.n_poi {
            break;
        }
        let c = field.centers[pick.sample(rng)];
        let dx: f64 = rng.sample(StandardNormal);
        let dy: f64 = rng.sample(StandardNormal);
        let q = [c[0] + h * dx, c[1] + h * dy];
        let tag = &cfg.tags[rng.random_range(0..cfg.tags.len())];
        if q[0].abs() <= half && q[1].abs() <= half {
            out.push(PoiRecord { id: format!("P{:06}", out.len()), location: from_local(q)?, tag: tag.clone() });
        }
    }
    if out.len() < cfg.n_poi {
        return Err(Error::numeric(format!("only {} of {} POIs landed inside the city", out.len(), cfg.n_poi)));
    }
    Ok(out)
}

/// Paths written by [`SynthCity::write`].
#[derive(Debug, Clone, PartialEq)]
pub struct CityFiles {
    pub listings: PathBuf,
    pub poi: PathBuf,
    pub tags: PathBuf,
    pub features_dir: PathBuf,
    pub truth: PathBuf,
}

impl SynthCity {
    /// Writes `listings.csv`, `poi.csv`, `tags.txt`, `features/zoom<z>.geofeat`
    /// and `truth.txt` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<CityFiles> {
        let files = CityFiles {
            listings: dir.join("listings.csv"),
            poi: dir.join("poi.csv"),
            tags: dir.join("tags.txt"),
            features_dir: dir.join("features"),
            truth: dir.join("truth.txt"),
        };
        std::fs::create_dir_all(&files.features_dir).map_err(|e| Error::io(&files.features_dir, e))?;
        write_listings(self.listings.listings(), &files.listings)?;
        write_poi_csv(&self.pois, &files.poi)?;
        write_tag_file(&self.config.tags, &files.tags)?;
        for store in &self.features {
            save_features(store, &files.features_dir.join(feature_file_name(store.zoom())))?;
        }
        std::fs::write(&files.truth, self.truth()).map_err(|e| Error::io(&files.truth, e))?;
        Ok(files)
    }

    /// Key=value description of the generating parameters.
    pub fn truth(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "seed={}\nn={}\nn_poi={}\ndim={}", c.seed, c.n, c.n_poi, c.dim);
        let _ = writeln!(s, "price_noise={:?}\nfeature_noise={:?}", c.price_noise, c.feature_noise);
        let _ = writeln!(s, "base_price={BASE_PRICE:?}\nattribute_coefs={:?}", ATTRIBUTE_COEFS);
        let _ = writeln!(s, "premium_height={PREMIUM_HEIGHT:?}\npremium_steepness={PREMIUM_STEEPNESS:?}");
        let _ = writeln!(s, "premium_center={:?}", self.premium_center);
        for (f, w) in self.fields.iter().zip(FIELD_WEIGHTS) {
            let _ = writeln!(
                s,
                "field[{}]=weight {w:?} bandwidth_km {:?} bumps {}",
                f.zoom,
                f.bandwidth_km,
                f.centers.len()
            );
        }
        s
    }

    /// Weighted field sum `G` at a point.
    pub fn field_sum(&self, p: GeoPoint) -> f64 {
        let q = to_local(p);
        self.fields.iter().zip(FIELD_WEIGHTS).map(|(f, w)| w * f.value(q)).sum()
    }
}

/// Writes the matrix of a [`SarData`] realization next to its covariates.
pub fn write_sar_data(data: &SarData, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_matrix_market(&data.w, &dir.join("w.mtx"))?;
    let mut s = String::from("id,lat,lon,y");
    for name in &data.x.names()[1..] {
        s.push(',');
        s.push_str(name);
    }
    s.push('\n');
    for (i, p) in data.points.iter().enumerate() {
        let _ = write!(s, "S{i:05},{:?},{:?},{:?}", p.lat(), p.lon(), data.y[i]);
        for v in &data.x.row(i)[1..] {
            let _ = write!(s, ",{v:?}");
        }
        s.push('\n');
    }
    let path = dir.join("sar.csv");
    std::fs::write(&path, s).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::fit_ols;
    use crate::sar::solve_power_series;
    use crate::features::FeatureMatrix;

    #[test]
    fn sar_residual_identity() {
        let beta = [1.0, 2.0, -1.0];
        for spec in [WSpec::Knn(5), WSpec::Radius(8.0), WSpec::Delaunay] {
            let d = gen_sar_data(300, 0.6, &beta, 0.1, spec, 3).unwrap();
            let wy = d.w.mul_vec(&d.y);
            let xb = d.x.mul(&beta);
            for i in 0..300 {
                let eps = d.y[i] - 0.6 * wy[i] - xb[i];
                assert!((eps - d.eps[i]).abs() < 1e-10, "{spec}: {eps} vs {}", d.eps[i]);
            }
        }
    }

    #[test]
    fn sar_points_in_unit_box() {
        let d = gen_sar_data(200, 0.3, &[1.0], 1.0, WSpec::Knn(3), 0).unwrap();
        for p in &d.points {
            assert!((51.0..52.0).contains(&p.lat()) && (-0.5..0.5).contains(&p.lon()));
        }
        assert_eq!(d.x.names(), ["intercept"]);
    }

    #[test]
    fn sar_matches_power_series() {
        let beta = [1.0, 2.0, -1.0];
        let d = gen_sar_data(500, 0.5, &beta, 0.1, WSpec::Knn(5), 11).unwrap();
        let b: Vec<f64> = d.x.mul(&beta).iter().zip(&d.eps).map(|(a, e)| a + e).collect();
        let s = solve_power_series(0.5, &d.w, &b, 1e-12, 10_000).unwrap();
        assert!(s.converged);
        let diff = s.x.iter().zip(&d.y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn sar_rho_zero_is_ordinary_regression() {
        let (n, sigma) = (500, 0.1);
        let beta = [1.0, 2.0, -1.0];
        let d = gen_sar_data(n, 0.0, &beta, sigma, WSpec::Knn(5), 5).unwrap();
        let xb = d.x.mul(&beta);
        for ((y, xb), e) in d.y.iter().zip(&xb).zip(&d.eps) {
            assert!((y - xb - e).abs() < 1e-12);
        }
        let rows: Vec<Vec<f64>> = (0..n).map(|i| d.x.row(i)[1..].to_vec()).collect();
        let x = FeatureMatrix::from_rows(vec!["x1".into(), "x2".into()], &rows).unwrap();
        let m = fit_ols(&x, &d.y).unwrap();
        let bound = 3.0 * sigma / (n as f64).sqrt();
        for (b, t) in m.coef.iter().zip(beta) {
            assert!((b - t).abs() < bound, "{b} vs {t}");
        }
    }

    #[test]
    fn sar_output_is_spatially_autocorrelated() {
        let d = gen_sar_data(500, 0.5, &[1.0, 2.0, -1.0], 0.1, WSpec::Knn(5), 7).unwrap();
        let wy = d.w.mul_vec(&d.y);
        let num: f64 = d.y.iter().zip(&wy).map(|(a, b)| a * b).sum();
        let den: f64 = d.y.iter().map(|a| a * a).sum();
        assert!(num / den > 0.2, "{}", num / den);
    }

    #[test]
    fn sar_rejects_bad_parameters() {
        assert!(gen_sar_data(50, 1.0, &[1.0], 0.1, WSpec::Knn(3), 0).is_err());
        assert!(gen_sar_data(50, -1.2, &[1.0], 0.1, WSpec::Knn(3), 0).is_err());
        assert!(gen_sar_data(50, 0.2, &[], 0.1, WSpec::Knn(3), 0).is_err());
        assert!(gen_sar_data(50, 0.2, &[1.0], -0.1, WSpec::Knn(3), 0).is_err());
    }

    #[test]
    fn window_mean_matches_quadrature() {
        let f = BumpField {
            zoom: ZoomLevel::new(17).unwrap(),
            bandwidth_km: 0.3,
            centers: vec![[0.0, 0.0], [0.4, -0.2], [-1.0, 0.7]],
            amplitudes: vec![1.0, 0.7, 1.3],
        };
        let (p, side) = ([0.1, 0.05], 0.8);
        // midpoint rule on a 400×400 grid
        let m = 400;
        let step = side / m as f64;
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                let q = [p[0] - side / 2.0 + step * (i as f64 + 0.5), p[1] - side / 2.0 + step * (j as f64 + 0.5)];
                s += f.value(q);
            }
        }
        let quad = s / (m * m) as f64;
        assert!((f.window_mean(p, side) - quad).abs() < 1e-5, "{} vs {quad}", f.window_mean(p, side));
        // a tiny window is the point value
        assert!((f.window_mean(p, 1e-4) - f.value(p)).abs() < 1e-8);
    }

    #[test]
    fn local_coordinates_round_trip() {
        for q in [[0.0, 0.0], [4.9, -3.2], [-5.0, 5.0]] {
            let back = to_local(from_local(q).unwrap());
            assert!((back[0] - q[0]).abs() < 1e-9 && (back[1] - q[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn city_is_deterministic() {
        let a = gen_nonlinear_city(150, 300, 4).unwrap();
        let b = gen_nonlinear_city(150, 300, 4).unwrap();
        assert_eq!(a.listings, b.listings);
        assert_eq!(a.features, b.features);
        assert_eq!(a.pois, b.pois);
        let c = gen_nonlinear_city(150, 300, 5).unwrap();
        assert_ne!(a.listings, c.listings);
    }

    #[test]
    fn city_shapes_and_bounds() {
        let c = gen_nonlinear_city(200, 500, 1).unwrap();
        assert_eq!(c.listings.len(), 200);
        assert_eq!(c.pois.len(), 500);
        assert_eq!(c.features.len(), 6);
        for (s, z) in c.features.iter().zip(ZoomLevel::all()) {
            assert_eq!(s.zoom(), z);
            assert_eq!(s.dim(), SYNTH_FEATURE_DIM);
            assert_eq!(s.len(), 200);
        }
        for l in c.listings.listings() {
            let q = to_local(l.location);
            assert!(q[0].abs() <= CITY_HALF_WIDTH_KM + 1e-9 && q[1].abs() <= CITY_HALF_WIDTH_KM + 1e-9);
            assert!((1..=6).contains(&l.bedrooms) && (1..=l.bedrooms).contains(&l.bathrooms));
            assert!(l.receptions <= 3 && (1..=3).contains(&l.floors));
        }
        for p in &c.pois {
            assert!(DEFAULT_TAGS.contains(&p.tag.as_str()));
        }
        assert!(gen_nonlinear_city(99, 10, 0).is_err());
    }

    #[test]
    fn noiseless_city_reproduces_the_oracle() {
        let noisy = gen_nonlinear_city(120, 0, 8).unwrap();
        let mut cfg = noisy.config.clone();
        cfg.price_noise = 0.0;
        let clean = gen_city(&cfg).unwrap();
        assert_eq!(clean.listings.prices(), noisy.noiseless_prices);
        for (l, p) in clean.listings.listings().iter().zip(clean.listings.prices()) {
            let g = clean.field_sum(l.location);
            let oracle = ground_truth_price(l.attributes(), g, clean.premium_center);
            assert!((oracle - p).abs() <= 1e-9 * p, "{oracle} vs {p}");
        }
    }

    #[test]
    fn changing_poi_count_keeps_listings() {
        let a = gen_nonlinear_city(100, 10, 2).unwrap();
        let b = gen_nonlinear_city(100, 50, 2).unwrap();
        assert_eq!(a.listings, b.listings);
        assert_eq!(a.features, b.features);
    }

    #[test]
    fn field_bandwidths_follow_tile_sides() {
        let c = gen_nonlinear_city(100, 0, 0).unwrap();
        for w in c.fields.windows(2) {
            assert!((w[0].bandwidth_km / w[1].bandwidth_km - 2.0).abs() < 1e-12);
        }
    }
}
