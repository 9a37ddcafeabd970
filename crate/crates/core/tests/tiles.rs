//! Tile client against a local HTTP server.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use geoprice::pipeline::tiles::{fetch_tiles, tile_path, FetchOptions, TileRequest, TileStatus, MANIFEST_NAME};

/// Serves `200` with the request path as body unless a scripted status is
/// queued for that path. Records every request path with its arrival time.
struct Server {
    port: u16,
    hits: Arc<Mutex<Vec<(String, Instant)>>>,
    script: Arc<Mutex<HashMap<String, VecDeque<u16>>>>,
}

impl Server {
    fn start() -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        let hits = Arc::new(Mutex::new(Vec::new()));
        let script: Arc<Mutex<HashMap<String, VecDeque<u16>>>> = Arc::default();
        let (h, sc) = (hits.clone(), script.clone());
        std::thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let (h, sc) = (h.clone(), sc.clone());
                std::thread::spawn(move || serve(stream, &h, &sc));
            }
        });
        Self { port, hits, script }
    }

    fn template(&self) -> String {
        format!("http://127.0.0.1:{}/tile?lat={{lat}}&lon={{lon}}&z={{zoom}}&px={{size}}", self.port)
    }

    fn path_for(&self, r: &TileRequest) -> String {
        format!("/tile?lat={:?}&lon={:?}&z={}&px={}", r.lat, r.lon, r.zoom, r.size)
    }

    fn script(&self, r: &TileRequest, codes: &[u16]) {
        self.script.lock().unwrap().insert(self.path_for(r), codes.iter().copied().collect());
    }

    fn hit_count(&self) -> usize {
        self.hits.lock().unwrap().len()
    }
}

fn serve(stream: TcpStream, hits: &Mutex<Vec<(String, Instant)>>, script: &Mutex<HashMap<String, VecDeque<u16>>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).is_err() {
        return;
    }
    let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h).unwrap_or(0) == 0 || h == "\r\n" {
            break;
        }
    }
    hits.lock().unwrap().push((path.clone(), Instant::now()));
    let code = script.lock().unwrap().get_mut(&path).and_then(VecDeque::pop_front).unwrap_or(200);
    let body = if code == 200 { path.into_bytes() } else { b"error".to_vec() };
    let mut out = stream;
    let _ = write!(out, "HTTP/1.1 {code} X\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", body.len());
    let _ = out.write_all(&body);
}

fn requests(n: usize, zooms: &[u8]) -> Vec<TileRequest> {
    (0..n)
        .flat_map(|i| {
            zooms.iter().map(move |&z| TileRequest {
                id: format!("L{i:05}"),
                lat: 51.5 + 0.001 * i as f64,
                lon: -0.12 - 0.001 * i as f64,
                zoom: z,
                size: 600,
            })
        })
        .collect()
}

fn fast() -> FetchOptions {
    FetchOptions { rate_limit: 1000.0, workers: 4, backoff: Duration::from_millis(5), ..FetchOptions::default() }
}

#[test]
fn ten_listings_by_six_zooms_is_sixty_fetches() {
    let server = Server::start();
    let dir = tempfile::tempdir().unwrap();
    let reqs = requests(10, &[15, 16, 17, 18, 19, 20]);
    let out = fetch_tiles(&reqs, Some(&server.template()), dir.path(), &fast()).unwrap();
    assert_eq!(server.hit_count(), 60);
    assert!(out.iter().all(|o| o.status == TileStatus::Fetched && o.attempts == 1));
    for (r, o) in reqs.iter().zip(&out) {
        assert_eq!((&o.id, o.zoom), (&r.id, r.zoom));
        let body = std::fs::read(tile_path(dir.path(), &o.key)).unwrap();
        assert_eq!(body, server.path_for(r).into_bytes());
    }
    let manifest = std::fs::read_to_string(dir.path().join(MANIFEST_NAME)).unwrap();
    let lines: Vec<&str> = manifest.lines().collect();
    assert_eq!(lines.len(), 61);
    assert_eq!(lines[0], "id,zoom,key,status,attempts,detail");
    assert!(lines[1].starts_with("L00000,15,"));
    assert!(lines[60].starts_with("L00009,20,"));
}

#[test]
fn rate_limit_spaces_requests() {
    let server = Server::start();
    let dir = tempfile::tempdir().unwrap();
    let reqs = requests(10, &[18]);
    let opts = FetchOptions { rate_limit: 2.0, workers: 4, ..FetchOptions::default() };
    let start = Instant::now();
    fetch_tiles(&reqs, Some(&server.template()), dir.path(), &opts).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed >= 4.5, "10 requests at 2/s took {elapsed:.2} s");
    let mut times: Vec<Instant> = server.hits.lock().unwrap().iter().map(|(_, t)| *t).collect();
    times.sort();
    // k-th arrival no earlier than k/rate after the first, minus scheduling slack
    for (k, t) in times.iter().enumerate() {
        let since = t.duration_since(times[0]).as_secs_f64();
        assert!(since >= 0.5 * k as f64 - 0.05, "request {k} arrived after {since:.3} s");
    }
}

#[test]
fn server_errors_are_retried() {
    let server = Server::start();
    let dir = tempfile::tempdir().unwrap();
    let reqs = requests(4, &[20]);
    server.script(&reqs[0], &[500, 503]);
    server.script(&reqs[1], &[500, 500, 500, 500, 500]);
    server.script(&reqs[2], &[404]);
    server.script(&reqs[3], &[429]);
    let out = fetch_tiles(&reqs, Some(&server.template()), dir.path(), &fast()).unwrap();

    assert_eq!((&out[0].status, out[0].attempts), (&TileStatus::Fetched, 3));
    // first attempt plus three retries
    assert!(matches!(&out[1].status, TileStatus::Failed(e) if e.contains("500")));
    assert_eq!(out[1].attempts, 4);
    assert!(matches!(&out[2].status, TileStatus::Failed(e) if e.contains("404")));
    assert_eq!(out[2].attempts, 1);
    assert_eq!((&out[3].status, out[3].attempts), (&TileStatus::Fetched, 2));
    assert_eq!(server.hit_count(), 3 + 4 + 1 + 2);
    assert!(!tile_path(dir.path(), &out[1].key).exists());
}

#[test]
fn warm_cache_makes_no_requests() {
    let server = Server::start();
    let dir = tempfile::tempdir().unwrap();
    let reqs = requests(5, &[19, 20]);
    fetch_tiles(&reqs, Some(&server.template()), dir.path(), &fast()).unwrap();
    assert_eq!(server.hit_count(), 10);

    let cache_only = FetchOptions { cache_only: true, ..fast() };
    let out = fetch_tiles(&reqs, None, dir.path(), &cache_only).unwrap();
    assert!(out.iter().all(|o| o.status == TileStatus::Cached && o.attempts == 0));
    // a warm cache also short-circuits the network path
    let again = fetch_tiles(&reqs, Some(&server.template()), dir.path(), &fast()).unwrap();
    assert!(again.iter().all(|o| o.status == TileStatus::Cached));
    assert_eq!(server.hit_count(), 10);
}

#[test]
fn cold_cache_only_records_misses() {
    let dir = tempfile::tempdir().unwrap();
    let opts = FetchOptions { cache_only: true, ..fast() };
    let out = fetch_tiles(&requests(3, &[20]), None, dir.path(), &opts).unwrap();
    assert!(out.iter().all(|o| o.status == TileStatus::Missing));
}

#[test]
fn identical_tuples_are_fetched_once() {
    let server = Server::start();
    let dir = tempfile::tempdir().unwrap();
    let mut reqs = requests(2, &[20]);
    let mut twin = reqs[0].clone();
    twin.id = "L09999".into();
    reqs.push(twin);
    let out = fetch_tiles(&reqs, Some(&server.template()), dir.path(), &fast()).unwrap();
    assert_eq!(server.hit_count(), 2);
    assert_eq!(out[2].status, TileStatus::Duplicate);
    assert_eq!(out[2].key, out[0].key);
}

#[test]
fn missing_or_partial_template_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let reqs = requests(1, &[20]);
    let err = fetch_tiles(&reqs, None, dir.path(), &fast()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let err = fetch_tiles(&reqs, Some("http://x/{lat}/{lon}"), dir.path(), &fast()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("{zoom}"));
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let listings = "id,lat,lon,price,bedrooms,bathrooms,receptions,floors,status\n\
                    A,51.50,-0.12,300000,2,1,1,1,sale\n\
                    B,51.51,-0.13,450000,3,2,1,2,sale\n\
                    C,51.52,-0.14,250000,1,1,0,1,sale\n";
    std::fs::write(dir.join("listings.csv"), listings).unwrap();
    let conf = dir.join("run.conf");
    std::fs::write(&conf, format!("out_dir = {o}\ndataset = {o}/listings.csv\nseed = 1\n{extra}", o = dir.display())).unwrap();
    conf
}

#[test]
fn cli_reads_the_template_from_the_environment() {
    let server = Server::start();
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), "fusion = HA+DF(19,20)\nrate_limit = 100\n");
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_geoprice"))
        .args(["fetch-tiles", "--config"])
        .arg(&conf)
        .env("GEOPRICE_TILE_URL", server.template())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(server.hit_count(), 6);
    let manifest = std::fs::read_to_string(dir.path().join("tiles").join(MANIFEST_NAME)).unwrap();
    assert_eq!(manifest.lines().count(), 7);

    let again = std::process::Command::new(env!("CARGO_BIN_EXE_geoprice"))
        .args(["fetch-tiles", "--cache-only", "--config"])
        .arg(&conf)
        .env_remove("GEOPRICE_TILE_URL")
        .output()
        .unwrap();
    assert!(again.status.success());
    assert!(String::from_utf8_lossy(&again.stdout).contains("6 cached"));
    assert_eq!(server.hit_count(), 6);
}

#[test]
fn cli_without_template_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), "");
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_geoprice"))
        .args(["fetch-tiles", "--config"])
        .arg(&conf)
        .env_remove("GEOPRICE_TILE_URL")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.trim().lines().count(), 1, "{stderr}");
}
