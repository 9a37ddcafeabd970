#ifndef GEOPRICE_H
#define GEOPRICE_H

/* Generated by cbindgen from crates/ffi/src. Do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call. Codes 2 to 4 match the exit codes of the
// command-line tool.
typedef enum GpStatus {
  GP_STATUS_OK = 0,
  // A required pointer argument was NULL.
  GP_STATUS_NULL_POINTER = 1,
  GP_STATUS_CONFIG = 2,
  // Invalid input, unreadable or malformed file.
  GP_STATUS_DATA = 3,
  // Rank deficiency, divergence or another numeric failure.
  GP_STATUS_NUMERIC = 4,
  // A bug inside the library; the call had no effect.
  GP_STATUS_PANIC = 5,
} GpStatus;

// Row-normalized spatial contiguity matrix.
typedef struct GpContiguity GpContiguity;

// Per-tag spatial index over points of interest.
typedef struct GpPoiIndex GpPoiIndex;

// Fitted spatial auto-regressive model.
typedef struct GpSarModel GpSarModel;

typedef struct GpSarSummary {
  double rho;
  double sigma2;
  double loglik;
  // Observations used for fitting.
  size_t n;
  // Coefficients including the intercept.
  size_t n_coef;
} GpSarSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. The pointer
// stays valid until the next call into the library on the same thread.
const char *gp_last_error_message(void);

// Library version as a static string.
const char *gp_version(void);

// Great-circle distance in kilometers (mean Earth radius 6371 km).
//
// # Safety
// `out_km` must be NULL or writable.
enum GpStatus gp_haversine_km(double lat1, double lon1, double lat2, double lon2, double *out_km);

// Ground area in km² covered by a square tile of `image_px` pixels at
// zoom 15 to 20, centered at latitude `lat`.
//
// # Safety
// `out_km2` must be NULL or writable.
enum GpStatus gp_zoom_footprint_km2(uint8_t zoom, double lat, uint32_t image_px, double *out_km2);

// Builds an index over `n_records` POIs. Record `i` sits at
// `(lats[i], lons[i])` and carries tag `tags[tag_of[i]]`. Counts are
// reported in the order of `tags`.
//
// # Safety
// Arrays must hold the stated number of elements; `tags` must hold
// `n_tags` NUL-terminated strings; `out` must be writable.
enum GpStatus gp_poi_index_new(const double *lats,
                               const double *lons,
                               const uint32_t *tag_of,
                               size_t n_records,
                               const char *const *tags,
                               size_t n_tags,
                               struct GpPoiIndex **out);

// Number of indexed POIs; 0 for NULL.
//
// # Safety
// `index` must be NULL or a live handle.
size_t gp_poi_index_len(const struct GpPoiIndex *index);

// Per-tag counts of POIs strictly closer than `radius_km` to the point.
// `out_counts` receives `n_tags` values in the order given at build time.
//
// # Safety
// `index` must be a live handle; `out_counts` must hold `n_tags` values.
enum GpStatus gp_poi_index_count(const struct GpPoiIndex *index,
                                 double lat,
                                 double lon,
                                 double radius_km,
                                 uint32_t *out_counts,
                                 size_t n_tags);

// # Safety
// `index` must be NULL or a handle not yet freed.
void gp_poi_index_free(struct GpPoiIndex *index);

// Builds a row-normalized contiguity over `n` points. `spec` is
// `"knn:K"`, `"radius:KM"` or `"delaunay"`.
//
// # Safety
// `lats` and `lons` must hold `n` values; `spec` must be a NUL-terminated
// string; `out` must be writable.
enum GpStatus gp_contiguity_build(const double *lats,
                                  const double *lons,
                                  size_t n,
                                  const char *spec,
                                  struct GpContiguity **out);

// Reads a MatrixMarket coordinate file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum GpStatus gp_contiguity_read_mtx(const char *path, struct GpContiguity **out);

// # Safety
// `w` must be a live handle; `path` a NUL-terminated string.
enum GpStatus gp_contiguity_write_mtx(const struct GpContiguity *w, const char *path);

// Matrix order; 0 for NULL.
//
// # Safety
// `w` must be NULL or a live handle.
size_t gp_contiguity_order(const struct GpContiguity *w);

// Stored nonzeros; 0 for NULL.
//
// # Safety
// `w` must be NULL or a live handle.
size_t gp_contiguity_nnz(const struct GpContiguity *w);

// Entry `(i, j)`.
//
// # Safety
// `w` must be a live handle; `out` writable.
enum GpStatus gp_contiguity_get(const struct GpContiguity *w, size_t i, size_t j, double *out);

// # Safety
// `w` must be NULL or a handle not yet freed.
void gp_contiguity_free(struct GpContiguity *w);

// Maximum-likelihood fit of `y = rho W y + X beta + e`. `x` is `n` by `k`
// without an intercept column; one is prepended, so the model has `k + 1`
// coefficients.
//
// # Safety
// `x` must hold `n * k` values, `y` `n` values; `w` must be a live handle
// of order `n`; `out` writable.
enum GpStatus gp_sar_fit(const double *x,
                         size_t n,
                         size_t k,
                         const double *y,
                         const struct GpContiguity *w,
                         struct GpSarModel **out);

// # Safety
// `model` must be a live handle; `out` writable.
enum GpStatus gp_sar_summary(const struct GpSarModel *model, struct GpSarSummary *out);

// Copies the coefficients, intercept first. `len` must equal `n_coef`.
//
// # Safety
// `model` must be a live handle; `out` must hold `len` values.
enum GpStatus gp_sar_coefficients(const struct GpSarModel *model, double *out, size_t len);

// Reduced-form prediction over `n` rows: solves `(I - rho W) y = X beta`.
// `x` has the same `k` columns as at fitting time.
//
// # Safety
// `x` must hold `n * k` values, `out_y` `n` values; `w` must be a live
// handle of order `n`.
enum GpStatus gp_sar_predict(const struct GpSarModel *model,
                             const double *x,
                             size_t n,
                             size_t k,
                             const struct GpContiguity *w,
                             double *out_y);

// Writes the model as `key=value` lines.
//
// # Safety
// `model` must be a live handle; `path` a NUL-terminated string.
enum GpStatus gp_sar_save(const struct GpSarModel *model, const char *path);

// # Safety
// `path` must be a NUL-terminated string; `out` writable.
enum GpStatus gp_sar_load(const char *path, struct GpSarModel **out);

// # Safety
// `model` must be NULL or a handle not yet freed.
void gp_sar_free(struct GpSarModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GEOPRICE_H */
