//! Frozen outputs. Files under `tests/golden/` were produced by the
//! implementation once; `GEOPRICE_BLESS=1 cargo test --test golden`
//! rewrites them after an intentional change.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use geoprice::dataset::{ingest_listings, Status};
use geoprice::features::{feature_file_name, load_features, save_features};
use geoprice::geo::{seeded_rng, ZoomLevel};
use geoprice::pipeline::report::{heatmap_rgba, PriceGrid};
use geoprice::poi::{build_index, featurize_dataset, read_poi_csv, DEFAULT_POI_RADIUS_KM};
use geoprice::synth::{gen_city, gen_nonlinear_city, CityConfig};
use rand::Rng;
use sha2::{Digest, Sha256};

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

fn bless() -> bool {
    std::env::var_os("GEOPRICE_BLESS").is_some()
}

/// Compares `actual` with the golden file `name`, or writes it when blessing.
fn check(name: &str, actual: &[u8]) {
    let path = golden_dir().join(name);
    if bless() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{name} differs from the frozen copy");
}

fn small_city() -> CityConfig {
    let mut cfg = CityConfig::new(100, 60, 42);
    cfg.dim = 4;
    cfg
}

#[test]
fn seed_42_first_uniforms() {
    let mut rng = seeded_rng(42);
    let u: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
    check("seed42_uniforms.txt", format!("{:?}\n{:?}\n{:?}\n", u[0], u[1], u[2]).as_bytes());
}

/// The fixture itself is synthetic output; regenerating must reproduce it
/// byte for byte, and parsing it must reproduce the snapshot.
#[test]
fn hundred_row_listing_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let files = gen_city(&small_city()).unwrap().write(dir.path()).unwrap();
    check("listings_100.csv", &std::fs::read(&files.listings).unwrap());

    let fixture = golden_dir().join("listings_100.csv");
    let (d, report) = ingest_listings(&fixture, Status::Sale).unwrap();
    assert_eq!(d.len(), 100);
    assert!(report.malformed.is_empty());
    let mut snap = String::new();
    for l in d.listings() {
        let _ = writeln!(
            snap,
            "{} {:?} {:?} {:?} {} {} {} {} {}",
            l.id,
            l.location.lat(),
            l.location.lon(),
            l.price,
            l.bedrooms,
            l.bathrooms,
            l.receptions,
            l.floors,
            l.status
        );
    }
    check("listings_100.snap", snap.as_bytes());
}

#[test]
fn geofeat_fixture_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let city = gen_city(&small_city()).unwrap();
    let z20 = ZoomLevel::new(20).unwrap();
    let written = dir.path().join(feature_file_name(z20));
    save_features(city.features.iter().find(|s| s.zoom() == z20).unwrap(), &written).unwrap();
    check("zoom20.geofeat", &std::fs::read(&written).unwrap());

    let store = load_features(&golden_dir().join("zoom20.geofeat")).unwrap();
    assert_eq!((store.zoom(), store.dim(), store.len()), (z20, 4, 100));
    let mut snap = String::new();
    for id in store.ids() {
        let _ = writeln!(snap, "{id} {:?}", store.get(id).unwrap());
    }
    check("zoom20.snap", snap.as_bytes());
    let again = dir.path().join("again.geofeat");
    save_features(&store, &again).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(golden_dir().join("zoom20.geofeat")).unwrap());
}

#[test]
fn poi_fixture_counts() {
    let dir = tempfile::tempdir().unwrap();
    let city = gen_city(&small_city()).unwrap();
    let files = city.write(dir.path()).unwrap();
    check("poi_60.csv", &std::fs::read(&files.poi).unwrap());

    let records = read_poi_csv(&golden_dir().join("poi_60.csv")).unwrap();
    assert_eq!(records.len(), 60);
    let index = build_index(&records, &city.config.tags).unwrap();
    let block = featurize_dataset(&city.listings, DEFAULT_POI_RADIUS_KM, &index).unwrap();
    let out = dir.path().join("poi_features.csv");
    block.write(&out).unwrap();
    check("poi_features_100.csv", &std::fs::read(&out).unwrap());
}

/// Pixel checksum of the price heat map of the reference city. Positive
/// spatial autocorrelation of the cell means is the visible trace of the
/// planted bumps.
#[test]
fn city_heatmap_checksum() {
    let city = gen_nonlinear_city(2000, 10_000, 1).unwrap();
    let grid = PriceGrid::build(&city.listings.locations(), &city.listings.prices(), 48).unwrap();
    let (w, h, px) = heatmap_rgba(&grid, 8);
    let mut hasher = Sha256::new();
    hasher.update(w.to_le_bytes());
    hasher.update(h.to_le_bytes());
    hasher.update(&px);
    let digest: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    check("heatmap_city_seed1.sha256", format!("{digest}\n").as_bytes());
    assert!(grid.morans_i().unwrap() > 0.0);
}
