//! Points of interest: one ball tree per tag and radial count features.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use rayon::prelude::*;

use crate::balltree::BallTree;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geo::GeoPoint;

/// Radius used for POI features unless configured otherwise.
pub const DEFAULT_POI_RADIUS_KM: f64 = 2.0;

pub const POI_HEADER: [&str; 4] = ["id", "lat", "lon", "tag"];

/// Synthetic fixture of 86 generic place types, matching the size of a
/// typical commercial places taxonomy. Sorted.
pub const DEFAULT_TAGS: [&str; 86] = [
    "accounting", "airport", "amusement_park", "aquarium", "art_gallery", "atm", "bakery", "bank", "bar",
    "beauty_salon", "bicycle_store", "book_store", "bowling_alley", "bus_station", "cafe", "campground",
    "car_dealer", "car_rental", "car_repair", "car_wash", "casino", "cemetery", "church", "city_hall",
    "clothing_store", "convenience_store", "courthouse", "dentist", "department_store", "doctor", "electrician",
    "electronics_store", "embassy", "fire_station", "florist", "funeral_home", "furniture_store", "gas_station",
    "gym", "hair_care", "hardware_store", "home_goods_store", "hospital", "insurance_agency", "jewelry_store",
    "laundry", "lawyer", "library", "liquor_store", "local_government_office", "locksmith", "lodging",
    "meal_delivery", "meal_takeaway", "movie_theater", "moving_company", "museum", "night_club", "painter",
    "park", "parking", "pet_store", "pharmacy", "physiotherapist", "plumber", "police", "post_office",
    "primary_school", "real_estate_agency", "restaurant", "roofing_contractor", "school", "secondary_school",
    "shoe_store", "shopping_mall", "spa", "stadium", "storage", "store", "subway_station", "supermarket",
    "taxi_stand", "train_station", "travel_agency", "university", "veterinary_care",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PoiRecord {
    pub id: String,
    pub location: GeoPoint,
    pub tag: String,
}

/// Per-tag ball trees over a fixed, lexically ordered tag universe.
#[derive(Debug, Clone)]
pub struct PoiIndex {
    tags: Vec<String>,
    trees: Vec<BallTree>,
    /// Positions of each tree's points in the input record list.
    members: Vec<Vec<usize>>,
}

/// Sorts the universe and rejects empty, blank or duplicate tags.
pub fn normalize_tags(tags: &[String]) -> Result<Vec<String>> {
    if tags.is_empty() {
        return Err(Error::invalid("tag universe is empty"));
    }
    let mut sorted = tags.to_vec();
    sorted.sort();
    if let Some(t) = sorted.iter().find(|t| t.trim().is_empty() || t.contains(',')) {
        return Err(Error::invalid(format!("bad tag name {t:?}")));
    }
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::invalid(format!("duplicate tag {:?}", w[0])));
    }
    Ok(sorted)
}

pub fn build_index(records: &[PoiRecord], tags: &[String]) -> Result<PoiIndex> {
    let tags = normalize_tags(tags)?;
    let mut members = vec![Vec::new(); tags.len()];
    let mut unknown: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        match tags.binary_search(&r.tag) {
            Ok(t) => members[t].push(i),
            Err(_) => *unknown.entry(&r.tag).or_default() += 1,
        }
    }
    if !unknown.is_empty() {
        let total: usize = unknown.values().sum();
        let names: Vec<&str> = unknown.keys().take(5).copied().collect();
        return Err(Error::invalid(format!(
            "{total} record(s) carry tags outside the universe (e.g. {})",
            names.join(", ")
        )));
    }
    let trees = members.iter().map(|m| BallTree::new(m.iter().map(|&i| records[i].location).collect())).collect();
    Ok(PoiIndex { tags, trees, members })
}

impl PoiIndex {
    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.members.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record count per tag, in tag order.
    pub fn counts(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn tree(&self, tag: &str) -> Option<&BallTree> {
        self.tags.binary_search_by(|t| t.as_str().cmp(tag)).ok().map(|i| &self.trees[i])
    }

    /// Input positions of the records stored under `tag`.
    pub fn members(&self, tag: &str) -> Option<&[usize]> {
        self.tags.binary_search_by(|t| t.as_str().cmp(tag)).ok().map(|i| self.members[i].as_slice())
    }

    pub fn check_invariants(&self) -> bool {
        self.trees.iter().all(BallTree::check_invariants)
    }
}

fn check_radius(r: f64) -> Result<()> {
    if r.is_finite() && r > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("POI radius must be positive and finite, got {r}")))
    }
}

/// Count of records per tag strictly closer than `r` km to `h`.
pub fn featurize(h: GeoPoint, r: f64, index: &PoiIndex) -> Result<Vec<u32>> {
    check_radius(r)?;
    Ok(index.trees.iter().map(|t| t.count_within(h, r) as u32).collect())
}

/// POI count vectors for a set of listings, columns in tag order.
#[derive(Debug, Clone, PartialEq)]
pub struct PoiBlock {
    pub tags: Vec<String>,
    pub radius_km: f64,
    pub ids: Vec<String>,
    pub counts: Vec<Vec<u32>>,
}

impl PoiBlock {
    /// Counts for listing `id`, if present.
    pub fn get(&self, id: &str) -> Option<&[u32]> {
        self.ids.iter().position(|i| i == id).map(|p| self.counts[p].as_slice())
    }

    /// Lookup table from listing id to row.
    pub fn by_id(&self) -> std::collections::HashMap<&str, &[u32]> {
        self.ids.iter().map(String::as_str).zip(self.counts.iter().map(Vec::as_slice)).collect()
    }

    /// CSV with header `id,<tag>...` and a leading `# r=<km>` comment.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = format!("# r={}\nid,{}\n", self.radius_km, self.tags.join(","));
        for (id, row) in self.ids.iter().zip(&self.counts) {
            s.push_str(id);
            for c in row {
                s.push(',');
                s.push_str(&c.to_string());
            }
            s.push('\n');
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        let radius_km = lines
            .next()
            .and_then(|(_, l)| l.strip_prefix("# r="))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(path, 1, "expected '# r=<km>'"))?;
        let header = lines.next().map(|(_, l)| l).ok_or_else(|| Error::parse(path, 2, "missing header"))?;
        let mut cols = header.split(',');
        if cols.next() != Some("id") {
            return Err(Error::parse(path, 2, "header must start with id"));
        }
        let tags: Vec<String> = cols.map(String::from).collect();
        let mut ids = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in lines.filter(|(_, l)| !l.is_empty()) {
            let mut f = line.split(',');
            let id = f.next().unwrap_or_default().to_string();
            let row: Vec<u32> = f
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(path, i + 1, "counts must be nonnegative integers"))?;
            if row.len() != tags.len() {
                return Err(Error::parse(path, i + 1, format!("expected {} counts, found {}", tags.len(), row.len())));
            }
            ids.push(id);
            counts.push(row);
        }
        Ok(Self { tags, radius_km, ids, counts })
    }
}

/// One [`featurize`] row per listing, in listing order.
pub fn featurize_dataset(d: &Dataset, r: f64, index: &PoiIndex) -> Result<PoiBlock> {
    check_radius(r)?;
    let counts = d
        .listings()
        .par_iter()
        .map(|l| index.trees.iter().map(|t| t.count_within(l.location, r) as u32).collect())
        .collect();
    Ok(PoiBlock {
        tags: index.tags.clone(),
        radius_km: r,
        ids: d.listings().iter().map(|l| l.id.clone()).collect(),
        counts,
    })
}

pub fn read_poi_csv(path: &Path) -> Result<Vec<PoiRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(file);
    let mut rows = reader.records();
    match rows.next() {
        Some(Ok(h)) if h.iter().map(str::trim).eq(POI_HEADER) => {}
        Some(Err(e)) => return Err(Error::parse(path, 1, e.to_string())),
        _ => return Err(Error::parse(path, 1, format!("expected header {}", POI_HEADER.join(",")))),
    }
    let mut out = Vec::new();
    for (i, rec) in rows.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(path, line, e.to_string()))?;
        if rec.len() != 4 {
            return Err(Error::parse(path, line, format!("expected 4 fields, found {}", rec.len())));
        }
        let num = |k: usize| -> Result<f64> {
            rec[k].trim().parse().map_err(|_| Error::parse(path, line, format!("bad {} {:?}", POI_HEADER[k], &rec[k])))
        };
        let location = GeoPoint::new(num(1)?, num(2)?).map_err(|e| Error::parse(path, line, e.to_string()))?;
        out.push(PoiRecord { id: rec[0].trim().to_string(), location, tag: rec[3].trim().to_string() });
    }
    Ok(out)
}

pub fn write_poi_csv(records: &[PoiRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let to_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(POI_HEADER).map_err(to_err)?;
    for r in records {
        w.write_record([r.id.clone(), r.location.lat().to_string(), r.location.lon().to_string(), r.tag.clone()])
            .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One tag per line; blank lines and `#` comments are skipped. The result is
/// sorted.
pub fn read_tag_file(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let tags: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect();
    normalize_tags(&tags).map_err(|e| Error::parse(path, 1, e.to_string()))
}

pub fn write_tag_file(tags: &[String], path: &Path) -> Result<()> {
    let mut s = normalize_tags(tags)?.join("\n");
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
