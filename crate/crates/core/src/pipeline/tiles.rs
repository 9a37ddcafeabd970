//! Content-addressed tile cache with a rate-limited, retrying HTTP client.
//!
//! Requests are `(lat, lon, zoom, size)` tuples rendered into a URL
//! template with `{lat}`, `{lon}`, `{zoom}` and `{size}` placeholders. The
//! cache key is the SHA-256 of the tuple, so identical requests are fetched
//! once no matter how many listings share them.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const PLACEHOLDERS: [&str; 4] = ["{lat}", "{lon}", "{zoom}", "{size}"];

#[derive(Debug, Clone, PartialEq)]
pub struct TileRequest {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub zoom: u8,
    pub size: u32,
}

impl TileRequest {
    /// Hex SHA-256 of `lat,lon,zoom,size` with shortest round-trip floats.
    pub fn cache_key(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?},{:?},{},{}", self.lat, self.lon, self.zoom, self.size));
        hex::encode(h.finalize())
    }
}

/// Fails unless all four placeholders appear.
pub fn validate_template(template: &str) -> Result<()> {
    let missing: Vec<&str> = PLACEHOLDERS.iter().copied().filter(|p| !template.contains(p)).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!("tile URL template lacks {}", missing.join(", "))))
    }
}

pub fn render_url(template: &str, r: &TileRequest) -> String {
    template
        .replace("{lat}", &format!("{:?}", r.lat))
        .replace("{lon}", &format!("{:?}", r.lon))
        .replace("{zoom}", &r.zoom.to_string())
        .replace("{size}", &r.size.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchOptions {
    /// Requests per second shared by all workers.
    pub rate_limit: f64,
    pub workers: usize,
    /// Retries after the first attempt.
    pub retries: u32,
    /// Delay before the first retry; doubles each time.
    pub backoff: Duration,
    pub timeout: Duration,
    /// Never touch the network; misses are recorded as such.
    pub cache_only: bool,
}

impl Default for FetchOptions {
    fn default() -> Self {
        Self {
            rate_limit: 2.0,
            workers: 4,
            retries: 3,
            backoff: Duration::from_millis(250),
            timeout: Duration::from_secs(30),
            cache_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TileStatus {
    /// Already on disk.
    Cached,
    Fetched,
    /// Same key as an earlier request in this batch.
    Duplicate,
    /// Cache-only mode and not on disk.
    Missing,
    Failed(String),
}

impl TileStatus {
    fn label(&self) -> &'static str {
        match self {
            TileStatus::Cached => "cached",
            TileStatus::Fetched => "fetched",
            TileStatus::Duplicate => "duplicate",
            TileStatus::Missing => "missing",
            TileStatus::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchOutcome {
    pub id: String,
    pub zoom: u8,
    pub key: String,
    pub status: TileStatus,
    /// Network attempts made for this request.
    pub attempts: u32,
}

/// Path of a cached tile.
pub fn tile_path(cache_dir: &Path, key: &str) -> PathBuf {
    cache_dir.join(&key[..2]).join(format!("{key}.img"))
}

pub const MANIFEST_NAME: &str = "manifest.csv";

/// Global pacing: the k-th network attempt may not start before
/// `start + k / rate`.
struct Throttle {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl Throttle {
    fn new(rate: f64) -> Self {
        Self { interval: Duration::from_secs_f64(1.0 / rate), next: Mutex::new(None) }
    }

    fn wait(&self) {
        let slot = {
            let mut next = self.next.lock().expect("throttle lock");
            let now = Instant::now();
            let slot = match *next {
                Some(t) if t > now => t,
                _ => now,
            };
            *next = Some(slot + self.interval);
            slot
        };
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
    }
}

enum Attempt {
    Ok(Vec<u8>),
    Retryable(String),
    Fatal(String),
}

fn get(agent: &ureq::Agent, url: &str) -> Attempt {
    match agent.get(url).call() {
        Ok(mut resp) => {
            let code = resp.status().as_u16();
            if resp.status().is_success() {
                match resp.body_mut().read_to_vec() {
                    Ok(bytes) => Attempt::Ok(bytes),
                    Err(e) => Attempt::Retryable(format!("body: {e}")),
                }
            } else if code == 429 || code >= 500 {
                Attempt::Retryable(format!("HTTP {code}"))
            } else {
                Attempt::Fatal(format!("HTTP {code}"))
            }
        }
        Err(e) => Attempt::Retryable(e.to_string()),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().expect("tile path has a parent");
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = path.with_extension("part");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Fetches every request not already cached, then writes the manifest
/// (one row per request, in request order) to `cache_dir/manifest.csv`.
/// HTTP failures are recorded, not returned; only a bad template or an
/// unwritable cache is an error.
pub fn fetch_tiles(requests: &[TileRequest], template: Option<&str>, cache_dir: &Path, opts: &FetchOptions) -> Result<Vec<FetchOutcome>> {
    if !opts.cache_only {
        let t = template.ok_or_else(|| Error::Config("no tile URL template configured".into()))?;
        validate_template(t)?;
    }
    if !(opts.rate_limit > 0.0) || opts.workers == 0 {
        return Err(Error::Config("rate limit and worker count must be positive".into()));
    }
    std::fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;

    let keys: Vec<String> = requests.iter().map(TileRequest::cache_key).collect();
    let mut first_of: HashMap<&str, usize> = HashMap::new();
    let mut outcomes: Vec<Option<FetchOutcome>> = vec![None; requests.len()];
    let mut todo = Vec::new();
    for (i, (r, key)) in requests.iter().zip(&keys).enumerate() {
        let status = if first_of.contains_key(key.as_str()) {
            Some(TileStatus::Duplicate)
        } else {
            first_of.insert(key, i);
            if tile_path(cache_dir, key).is_file() {
                Some(TileStatus::Cached)
            } else if opts.cache_only {
                Some(TileStatus::Missing)
            } else {
                todo.push(i);
                None
            }
        };
        if let Some(status) = status {
            outcomes[i] = Some(FetchOutcome { id: r.id.clone(), zoom: r.zoom, key: key.clone(), status, attempts: 0 });
        }
    }

    if !todo.is_empty() {
        let template = template.expect("checked above");
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(opts.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let throttle = Throttle::new(opts.rate_limit);
        let cursor = AtomicUsize::new(0);
        let results: Vec<Mutex<Option<Result<FetchOutcome>>>> = todo.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..opts.workers.min(todo.len()) {
                s.spawn(|| loop {
                    let t = cursor.fetch_add(1, Ordering::SeqCst);
                    if t >= todo.len() {
                        break;
                    }
                    let i = todo[t];
                    let r = &requests[i];
                    let url = render_url(template, r);
                    let mut attempts = 0;
                    let mut status = TileStatus::Failed("no attempt".into());
                    let mut written = Ok(());
                    while attempts <= opts.retries {
                        if attempts > 0 {
                            std::thread::sleep(opts.backoff * 2u32.pow(attempts - 1));
                        }
                        throttle.wait();
                        attempts += 1;
                        match get(&agent, &url) {
                            Attempt::Ok(bytes) => {
                                written = write_atomic(&tile_path(cache_dir, &keys[i]), &bytes);
                                status = TileStatus::Fetched;
                                break;
                            }
                            Attempt::Retryable(e) => status = TileStatus::Failed(e),
                            Attempt::Fatal(e) => {
                                status = TileStatus::Failed(e);
                                break;
                            }
                        }
                    }
                    let out = written.map(|_| FetchOutcome { id: r.id.clone(), zoom: r.zoom, key: keys[i].clone(), status, attempts });
                    *results[t].lock().expect("result lock") = Some(out);
                });
            }
        });
        for (t, cell) in results.into_iter().enumerate() {
            let out = cell.into_inner().expect("result lock").expect("every task ran")?;
            outcomes[todo[t]] = Some(out);
        }
    }

    let outcomes: Vec<FetchOutcome> = outcomes.into_iter().map(|o| o.expect("every request has an outcome")).collect();
    write_manifest(&cache_dir.join(MANIFEST_NAME), &outcomes)?;
    Ok(outcomes)
}

fn write_manifest(path: &Path, outcomes: &[FetchOutcome]) -> Result<()> {
    let mut s = String::from("id,zoom,key,status,attempts,detail\n");
    for o in outcomes {
        let detail = match &o.status {
            TileStatus::Failed(e) => e.replace([',', '\n', '\r'], " "),
            _ => String::new(),
        };
        let _ = writeln!(s, "{},{},{},{},{},{}", o.id, o.zoom, o.key, o.status.label(), o.attempts, detail);
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
