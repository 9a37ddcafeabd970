//! Geodesic primitives: great-circle distance, web-map tile footprints and
//! the seeded random streams every other module draws from.

use std::f64::consts::PI;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Mean Earth radius in kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Ground resolution at zoom 0 on the equator for a 256 px base tile.
pub const METERS_PER_PIXEL_Z0: f64 = 156_543.033_92;

/// A latitude/longitude pair in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    /// Builds a point, normalizing longitude into `[-180, 180)`.
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::invalid(format!("non-finite coordinate ({lat}, {lon})")));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::invalid(format!("latitude {lat} outside [-90, 90]")));
        }
        Ok(Self { lat, lon: normalize_lon(lon) })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Unit vector on the sphere.
    pub(crate) fn to_unit_vector(self) -> [f64; 3] {
        let (la, lo) = (self.lat.to_radians(), self.lon.to_radians());
        [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
    }

    pub(crate) fn from_unit_vector(v: [f64; 3]) -> Self {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm == 0.0 {
            return Self { lat: 0.0, lon: 0.0 };
        }
        let lat = (v[2] / norm).clamp(-1.0, 1.0).asin().to_degrees();
        let lon = v[1].atan2(v[0]).to_degrees();
        Self { lat, lon: normalize_lon(lon) }
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lat, self.lon)
    }
}

fn normalize_lon(lon: f64) -> f64 {
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360
    if wrapped >= 180.0 {
        wrapped - 360.0
    } else {
        wrapped
    }
}

/// Great-circle distance in kilometers on a sphere of radius
/// [`EARTH_RADIUS_KM`]. Exactly symmetric in its arguments.
pub fn haversine(a: GeoPoint, b: GeoPoint) -> f64 {
    let (la1, la2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = (la2 - la1).abs();
    let dlon = (b.lon - a.lon).abs().to_radians();
    let s1 = (dlat / 2.0).sin();
    let s2 = (dlon / 2.0).sin();
    let h = s1 * s1 + la1.cos() * la2.cos() * s2 * s2;
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Web-map zoom level, restricted to the range used for imagery queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ZoomLevel(u8);

impl ZoomLevel {
    pub const MIN: u8 = 15;
    pub const MAX: u8 = 20;

    pub fn new(z: u8) -> Result<Self> {
        if (Self::MIN..=Self::MAX).contains(&z) {
            Ok(Self(z))
        } else {
            Err(Error::invalid(format!("zoom {z} outside {}..={}", Self::MIN, Self::MAX)))
        }
    }

    /// All zoom levels in ascending order.
    pub fn all() -> Vec<ZoomLevel> {
        (Self::MIN..=Self::MAX).map(ZoomLevel).collect()
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl fmt::Display for ZoomLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ground resolution in meters per pixel at `z` and latitude `lat`.
pub fn meters_per_pixel(z: ZoomLevel, lat: f64) -> f64 {
    METERS_PER_PIXEL_Z0 * lat.to_radians().cos() / f64::from(1u32 << z.0)
}

/// Side length in kilometers of an `image_px` square tile.
pub fn zoom_side_km(z: ZoomLevel, center_lat: f64, image_px: u32) -> f64 {
    meters_per_pixel(z, center_lat) * f64::from(image_px) / 1000.0
}

/// Ground area in km² covered by an `image_px`×`image_px` tile centered at
/// `center_lat`. Curvature inside the tile is ignored.
pub fn zoom_footprint(z: ZoomLevel, center_lat: f64, image_px: u32) -> f64 {
    let side = zoom_side_km(z, center_lat, image_px);
    side * side
}

/// Deterministic random stream used throughout the toolkit.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed from `(seed, index)` using SplitMix64
/// finalization, so per-task streams do not depend on scheduling order.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Kilometers per degree of latitude on the model sphere.
pub fn km_per_degree() -> f64 {
    EARTH_RADIUS_KM * PI / 180.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn p(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn identical_points_have_zero_distance() {
        assert_eq!(haversine(p(51.5, -0.12), p(51.5, -0.12)), 0.0);
    }

    #[test]
    fn antipodal_on_equator() {
        let d = haversine(p(0.0, 0.0), p(0.0, 180.0));
        assert!((d - PI * EARTH_RADIUS_KM).abs() < 1e-6, "{d}");
        assert!((d - 20015.087).abs() < 1e-3);
    }

    #[test]
    fn london_to_birmingham() {
        // independent evaluation of the same formula in double precision
        // (python math module) gives 162.49584060284707 km
        let d = haversine(p(51.5074, -0.1278), p(52.4862, -1.8904));
        assert!((d - 162.495_840_602_847).abs() < 1e-9, "{d}");
    }

    #[test]
    fn longitude_is_normalized() {
        assert_eq!(p(0.0, 180.0).lon(), -180.0);
        assert_eq!(p(0.0, 190.0).lon(), -170.0);
        assert_eq!(p(0.0, -180.0).lon(), -180.0);
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn zoom_level_range() {
        assert!(ZoomLevel::new(14).is_err());
        assert!(ZoomLevel::new(21).is_err());
        assert_eq!(ZoomLevel::all().len(), 6);
    }

    #[test]
    fn footprint_at_london() {
        let a15 = zoom_footprint(ZoomLevel::new(15).unwrap(), 51.5, 600);
        assert!((a15 - 3.175).abs() / 3.175 < 0.02, "{a15}");
        let a20 = zoom_footprint(ZoomLevel::new(20).unwrap(), 51.5, 600);
        assert!((a20 - 0.003).abs() / 0.003 < 0.10, "{a20}");
    }

    #[test]
    fn one_zoom_step_quarters_the_area() {
        for z in 15..20 {
            let a = zoom_footprint(ZoomLevel::new(z).unwrap(), 51.5, 600);
            let b = zoom_footprint(ZoomLevel::new(z + 1).unwrap(), 51.5, 600);
            assert_eq!(b / a, 0.25);
        }
    }

    #[test]
    fn footprint_scales_with_cos_squared() {
        let z = ZoomLevel::new(17).unwrap();
        let ratio = zoom_footprint(z, 60.0, 600) / zoom_footprint(z, 0.0, 600);
        assert!((ratio - 0.25).abs() < 1e-12);
    }

    #[test]
    fn rng_is_deterministic() {
        let a: Vec<u64> = (0..8).map({
            let mut r = seeded_rng(0);
            move |_| r.random()
        }).collect();
        let b: Vec<u64> = (0..8).map({
            let mut r = seeded_rng(0);
            move |_| r.random()
        }).collect();
        let c: Vec<u64> = (0..8).map({
            let mut r = seeded_rng(1);
            move |_| r.random()
        }).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }

    fn arb_point() -> impl Strategy<Value = GeoPoint> {
        (-90.0f64..=90.0, -180.0f64..180.0).prop_map(|(la, lo)| GeoPoint::new(la, lo).unwrap())
    }

    proptest! {
        #[test]
        fn haversine_is_symmetric(a in arb_point(), b in arb_point()) {
            prop_assert_eq!(haversine(a, b), haversine(b, a));
            prop_assert!(haversine(a, b) >= 0.0);
        }

        #[test]
        fn haversine_triangle_inequality(a in arb_point(), b in arb_point(), c in arb_point()) {
            prop_assert!(haversine(a, c) <= haversine(a, b) + haversine(b, c) + 1e-9);
        }

        #[test]
        fn footprint_decreases_with_zoom(lat in -80.0f64..80.0) {
            let areas: Vec<f64> = ZoomLevel::all().into_iter().map(|z| zoom_footprint(z, lat, 600)).collect();
            prop_assert!(areas.windows(2).all(|w| w[1] < w[0]));
        }
    }
}
