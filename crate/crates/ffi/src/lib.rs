//! C interface to the geoprice toolkit.
//!
//! Objects cross the boundary as opaque handles. Each is created by a
//! `*_new`, `*_build`, `*_read`, `*_load` or `*_fit` call and released with
//! the matching `*_free`. Every fallible call returns a [`GpStatus`]; on
//! failure [`gp_last_error_message`] describes the error. The message is
//! thread-local and is cleared at the start of each call.
//!
//! Matrices are row-major `double` arrays. Strings are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use geoprice::contiguity::{read_matrix_market, write_matrix_market, SparseContiguity, WSpec};
use geoprice::geo::{haversine, zoom_footprint, GeoPoint, ZoomLevel};
use geoprice::poi::{build_index, featurize, PoiIndex, PoiRecord};
use geoprice::sar::{fit_sar_ml, predict, DesignMatrix, SarModel};
use geoprice::Error;

/// Result of every fallible call. Codes 2 to 4 match the exit codes of the
/// command-line tool.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    Config = 2,
    /// Invalid input, unreadable or malformed file.
    Data = 3,
    /// Rank deficiency, divergence or another numeric failure.
    Numeric = 4,
    /// A bug inside the library; the call had no effect.
    Panic = 5,
}

struct Failure(GpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            2 => GpStatus::Config,
            3 => GpStatus::Data,
            _ => GpStatus::Numeric,
        };
        Failure(status, e.to_string())
    }
}

fn data(msg: impl Into<String>) -> Failure {
    Failure(GpStatus::Data, msg.into())
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: Option<String>) {
    // interior NULs cannot cross as a C string
    let c = msg.map(|m| CString::new(m.replace('\0', " ")).expect("NULs removed"));
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GpStatus {
    set_last_error(None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(Some(msg));
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(Some(format!("internal error: {msg}")));
            GpStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: callers pass either NULL or a pointer obtained from this library
    unsafe { p.as_ref() }.ok_or_else(|| Failure(GpStatus::NullPointer, format!("{what} is NULL")))
}

fn out_ptr<T>(p: *mut T, what: &str) -> Result<*mut T, Failure> {
    if p.is_null() {
        Err(Failure(GpStatus::NullPointer, format!("{what} is NULL")))
    } else {
        Ok(p)
    }
}

fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(GpStatus::NullPointer, format!("{what} is NULL")));
    }
    // SAFETY: the caller guarantees `len` readable elements at `p`
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure(GpStatus::NullPointer, format!("{what} is NULL")));
    }
    // SAFETY: the caller guarantees `len` writable elements at `p`
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

fn string(p: *const c_char, what: &str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(Failure(GpStatus::NullPointer, format!("{what} is NULL")));
    }
    // SAFETY: the caller passes a NUL-terminated string
    let s = unsafe { CStr::from_ptr(p) };
    s.to_str().map(str::to_string).map_err(|_| data(format!("{what} is not valid UTF-8")))
}

fn points(lats: *const f64, lons: *const f64, n: usize) -> Result<Vec<GeoPoint>, Failure> {
    let (la, lo) = (slice(lats, n, "lats")?, slice(lons, n, "lons")?);
    la.iter().zip(lo).map(|(&a, &b)| GeoPoint::new(a, b).map_err(Failure::from)).collect()
}

fn rows(x: *const f64, n: usize, k: usize) -> Result<Vec<Vec<f64>>, Failure> {
    let len = n.checked_mul(k).ok_or_else(|| data("n * k overflows"))?;
    let x = slice(x, len, "x")?;
    if k == 0 {
        return Ok(vec![Vec::new(); n]);
    }
    Ok(x.chunks(k).map(<[f64]>::to_vec).collect())
}

fn design(x: *const f64, n: usize, k: usize) -> Result<DesignMatrix, Failure> {
    let names: Vec<String> = (1..=k).map(|j| format!("x{j}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Ok(DesignMatrix::with_intercept(&refs, &rows(x, n, k)?)?)
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn gp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn gp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Great-circle distance in kilometers (mean Earth radius 6371 km).
///
/// # Safety
/// `out_km` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn gp_haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64, out_km: *mut f64) -> GpStatus {
    guard(|| {
        let out = out_ptr(out_km, "out_km")?;
        let d = haversine(GeoPoint::new(lat1, lon1)?, GeoPoint::new(lat2, lon2)?);
        *out = d;
        Ok(())
    })
}

/// Ground area in km² covered by a square tile of `image_px` pixels at
/// zoom 15 to 20, centered at latitude `lat`.
///
/// # Safety
/// `out_km2` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn gp_zoom_footprint_km2(zoom: u8, lat: f64, image_px: u32, out_km2: *mut f64) -> GpStatus {
    guard(|| {
        let out = out_ptr(out_km2, "out_km2")?;
        if !(-90.0..=90.0).contains(&lat) || image_px == 0 {
            return Err(data(format!("need a latitude in [-90, 90] and a positive size, got {lat} and {image_px}")));
        }
        *out = zoom_footprint(ZoomLevel::new(zoom)?, lat, image_px);
        Ok(())
    })
}

/// Per-tag spatial index over points of interest.
pub struct GpPoiIndex {
    index: PoiIndex,
    /// Position in `index.tags()` of each tag in caller order.
    positions: Vec<usize>,
}

/// Builds an index over `n_records` POIs. Record `i` sits at
/// `(lats[i], lons[i])` and carries tag `tags[tag_of[i]]`. Counts are
/// reported in the order of `tags`.
///
/// # Safety
/// Arrays must hold the stated number of elements; `tags` must hold
/// `n_tags` NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gp_poi_index_new(
    lats: *const f64,
    lons: *const f64,
    tag_of: *const u32,
    n_records: usize,
    tags: *const *const c_char,
    n_tags: usize,
    out: *mut *mut GpPoiIndex,
) -> GpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let names: Vec<String> =
            slice(tags, n_tags, "tags")?.iter().map(|&t| string(t, "tag")).collect::<Result<_, _>>()?;
        let locations = points(lats, lons, n_records)?;
        let tag_of = slice(tag_of, n_records, "tag_of")?;
        let records = locations
            .into_iter()
            .zip(tag_of)
            .enumerate()
            .map(|(i, (location, &t))| {
                let tag = names.get(t as usize).ok_or_else(|| data(format!("record {i}: tag {t} out of range")))?;
                Ok(PoiRecord { id: i.to_string(), location, tag: tag.clone() })
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        let index = build_index(&records, &names)?;
        let positions = names.iter().map(|n| index.tags().binary_search(n).expect("tag in universe")).collect();
        store(out, GpPoiIndex { index, positions });
        Ok(())
    })
}

/// Number of indexed POIs; 0 for NULL.
///
/// # Safety
/// `index` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gp_poi_index_len(index: *const GpPoiIndex) -> usize {
    index.as_ref().map_or(0, |i| i.index.len())
}

/// Per-tag counts of POIs strictly closer than `radius_km` to the point.
/// `out_counts` receives `n_tags` values in the order given at build time.
///
/// # Safety
/// `index` must be a live handle; `out_counts` must hold `n_tags` values.
#[no_mangle]
pub unsafe extern "C" fn gp_poi_index_count(
    index: *const GpPoiIndex,
    lat: f64,
    lon: f64,
    radius_km: f64,
    out_counts: *mut u32,
    n_tags: usize,
) -> GpStatus {
    guard(|| {
        let idx = non_null(index, "index")?;
        if n_tags != idx.positions.len() {
            return Err(data(format!("index has {} tags, buffer holds {n_tags}", idx.positions.len())));
        }
        let out = slice_mut(out_counts, n_tags, "out_counts")?;
        let counts = featurize(GeoPoint::new(lat, lon)?, radius_km, &idx.index)?;
        for (o, &p) in out.iter_mut().zip(&idx.positions) {
            *o = counts[p];
        }
        Ok(())
    })
}

/// # Safety
/// `index` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gp_poi_index_free(index: *mut GpPoiIndex) {
    free(index);
}

/// Row-normalized spatial contiguity matrix.
pub struct GpContiguity {
    w: SparseContiguity,
}

/// Builds a row-normalized contiguity over `n` points. `spec` is
/// `"knn:K"`, `"radius:KM"` or `"delaunay"`.
///
/// # Safety
/// `lats` and `lons` must hold `n` values; `spec` must be a NUL-terminated
/// string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gp_contiguity_build(
    lats: *const f64,
    lons: *const f64,
    n: usize,
    spec: *const c_char,
    out: *mut *mut GpContiguity,
) -> GpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let spec: WSpec = string(spec, "spec")?.parse()?;
        let w = spec.build(&points(lats, lons, n)?)?;
        store(out, GpContiguity { w });
        Ok(())
    })
}

/// Reads a MatrixMarket coordinate file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gp_contiguity_read_mtx(path: *const c_char, out: *mut *mut GpContiguity) -> GpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let w = read_matrix_market(&PathBuf::from(string(path, "path")?))?;
        store(out, GpContiguity { w });
        Ok(())
    })
}

/// # Safety
/// `w` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gp_contiguity_write_mtx(w: *const GpContiguity, path: *const c_char) -> GpStatus {
    guard(|| {
        let w = non_null(w, "w")?;
        write_matrix_market(&w.w, &PathBuf::from(string(path, "path")?))?;
        Ok(())
    })
}

/// Matrix order; 0 for NULL.
///
/// # Safety
/// `w` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gp_contiguity_order(w: *const GpContiguity) -> usize {
    w.as_ref().map_or(0, |w| w.w.n())
}

/// Stored nonzeros; 0 for NULL.
///
/// # Safety
/// `w` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gp_contiguity_nnz(w: *const GpContiguity) -> usize {
    w.as_ref().map_or(0, |w| w.w.nnz())
}

/// Entry `(i, j)`.
///
/// # Safety
/// `w` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gp_contiguity_get(w: *const GpContiguity, i: usize, j: usize, out: *mut f64) -> GpStatus {
    guard(|| {
        let w = non_null(w, "w")?;
        let out = out_ptr(out, "out")?;
        if i >= w.w.n() || j >= w.w.n() {
            return Err(data(format!("({i}, {j}) outside a matrix of order {}", w.w.n())));
        }
        *out = w.w.get(i, j);
        Ok(())
    })
}

/// # Safety
/// `w` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gp_contiguity_free(w: *mut GpContiguity) {
    free(w);
}

/// Fitted spatial auto-regressive model.
pub struct GpSarModel {
    model: SarModel,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpSarSummary {
    pub rho: f64,
    pub sigma2: f64,
    pub loglik: f64,
    /// Observations used for fitting.
    pub n: usize,
    /// Coefficients including the intercept.
    pub n_coef: usize,
}

/// Maximum-likelihood fit of `y = rho W y + X beta + e`. `x` is `n` by `k`
/// without an intercept column; one is prepended, so the model has `k + 1`
/// coefficients.
///
/// # Safety
/// `x` must hold `n * k` values, `y` `n` values; `w` must be a live handle
/// of order `n`; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gp_sar_fit(
    x: *const f64,
    n: usize,
    k: usize,
    y: *const f64,
    w: *const GpContiguity,
    out: *mut *mut GpSarModel,
) -> GpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let w = non_null(w, "w")?;
        let model = fit_sar_ml(&design(x, n, k)?, slice(y, n, "y")?, &w.w)?;
        store(out, GpSarModel { model });
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gp_sar_summary(model: *const GpSarModel, out: *mut GpSarSummary) -> GpStatus {
    guard(|| {
        let m = &non_null(model, "model")?.model;
        *out_ptr(out, "out")? =
            GpSarSummary { rho: m.rho, sigma2: m.sigma2, loglik: m.loglik, n: m.n, n_coef: m.beta.len() };
        Ok(())
    })
}

/// Copies the coefficients, intercept first. `len` must equal `n_coef`.
///
/// # Safety
/// `model` must be a live handle; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn gp_sar_coefficients(model: *const GpSarModel, out: *mut f64, len: usize) -> GpStatus {
    guard(|| {
        let m = &non_null(model, "model")?.model;
        if len != m.beta.len() {
            return Err(data(format!("model has {} coefficients, buffer holds {len}", m.beta.len())));
        }
        slice_mut(out, len, "out")?.copy_from_slice(&m.beta);
        Ok(())
    })
}

/// Reduced-form prediction over `n` rows: solves `(I - rho W) y = X beta`.
/// `x` has the same `k` columns as at fitting time.
///
/// # Safety
/// `x` must hold `n * k` values, `out_y` `n` values; `w` must be a live
/// handle of order `n`.
#[no_mangle]
pub unsafe extern "C" fn gp_sar_predict(
    model: *const GpSarModel,
    x: *const f64,
    n: usize,
    k: usize,
    w: *const GpContiguity,
    out_y: *mut f64,
) -> GpStatus {
    guard(|| {
        let m = &non_null(model, "model")?.model;
        let w = non_null(w, "w")?;
        let out = slice_mut(out_y, n, "out_y")?;
        let y = predict(m, &design(x, n, k)?, &w.w)?;
        out.copy_from_slice(&y);
        Ok(())
    })
}

/// Writes the model as `key=value` lines.
///
/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gp_sar_save(model: *const GpSarModel, path: *const c_char) -> GpStatus {
    guard(|| {
        let m = &non_null(model, "model")?.model;
        let path = PathBuf::from(string(path, "path")?);
        std::fs::write(&path, m.to_kv()).map_err(|e| data(format!("{}: {e}", path.display())))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gp_sar_load(path: *const c_char, out: *mut *mut GpSarModel) -> GpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = PathBuf::from(string(path, "path")?);
        let text = std::fs::read_to_string(&path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        store(out, GpSarModel { model: SarModel::from_kv(&text)? });
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gp_sar_free(model: *mut GpSarModel) {
    free(model);
}
