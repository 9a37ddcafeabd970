//! Listing ingestion, outlier pruning, train/test splitting and extreme-price
//! labeling.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geo::{seeded_rng, GeoPoint};

pub const LISTINGS_HEADER: [&str; 9] =
    ["id", "lat", "lon", "price", "bedrooms", "bathrooms", "receptions", "floors", "status"];

/// Fraction of malformed rows tolerated before ingestion aborts.
pub const MAX_MALFORMED_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Status {
    Rent,
    Sale,
}

impl FromStr for Status {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rent" => Ok(Status::Rent),
            "sale" => Ok(Status::Sale),
            other => Err(Error::invalid(format!("status must be rent or sale, got {other:?}"))),
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Rent => "rent",
            Status::Sale => "sale",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Listing {
    pub id: String,
    pub location: GeoPoint,
    /// Sale price or weekly rent, in pounds.
    pub price: f64,
    pub bedrooms: u32,
    pub bathrooms: u32,
    pub receptions: u32,
    pub floors: u32,
    pub status: Status,
}

impl Listing {
    /// House attributes in the fixed column order used by feature fusion.
    pub fn attributes(&self) -> [f64; 4] {
        [
            f64::from(self.bedrooms),
            f64::from(self.bathrooms),
            f64::from(self.receptions),
            f64::from(self.floors),
        ]
    }
}

pub const ATTRIBUTE_NAMES: [&str; 4] = ["bedrooms", "bathrooms", "receptions", "floors"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Train,
    Test,
    None,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
            SplitTag::None => "none",
        })
    }
}

impl FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "test" => Ok(SplitTag::Test),
            "none" => Ok(SplitTag::None),
            other => Err(Error::invalid(format!("unknown split tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub source: Option<PathBuf>,
    pub malformed_rows: usize,
    pub prune_frac: Option<f64>,
    pub split_seed: Option<u64>,
}

/// An ordered, immutable collection of listings of a single status.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    listings: Vec<Listing>,
    splits: Vec<SplitTag>,
    provenance: Provenance,
}

impl Dataset {
    /// Validates unique ids, positive prices and a single status.
    pub fn new(listings: Vec<Listing>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(listings.len());
        for l in &listings {
            if !seen.insert(l.id.as_str()) {
                return Err(Error::invalid(format!("duplicate listing id {:?}", l.id)));
            }
            if !(l.price.is_finite() && l.price > 0.0) {
                return Err(Error::invalid(format!("listing {:?} has non-positive price {}", l.id, l.price)));
            }
        }
        if let Some(first) = listings.first() {
            if let Some(other) = listings.iter().find(|l| l.status != first.status) {
                return Err(Error::invalid(format!(
                    "rent and sale listings mixed ({:?} is {}, {:?} is {})",
                    first.id, first.status, other.id, other.status
                )));
            }
        }
        let splits = vec![SplitTag::None; listings.len()];
        Ok(Self { listings, splits, provenance: Provenance::default() })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// Attaches split tags, one per listing in order.
    pub fn with_splits(mut self, splits: Vec<SplitTag>) -> Result<Self> {
        if splits.len() != self.listings.len() {
            return Err(Error::invalid(format!(
                "{} split tags for {} listings",
                splits.len(),
                self.listings.len()
            )));
        }
        self.splits = splits;
        Ok(self)
    }

    pub fn listings(&self) -> &[Listing] {
        &self.listings
    }

    pub fn splits(&self) -> &[SplitTag] {
        &self.splits
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.listings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.listings.is_empty()
    }

    pub fn status(&self) -> Option<Status> {
        self.listings.first().map(|l| l.status)
    }

    pub fn prices(&self) -> Vec<f64> {
        self.listings.iter().map(|l| l.price).collect()
    }

    pub fn locations(&self) -> Vec<GeoPoint> {
        self.listings.iter().map(|l| l.location).collect()
    }

    /// Indices of listings carrying `tag`, in listing order.
    pub fn indices(&self, tag: SplitTag) -> Vec<usize> {
        self.splits.iter().enumerate().filter(|(_, t)| **t == tag).map(|(i, _)| i).collect()
    }

    /// New dataset holding the listings at `indices`, split tags carried over.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            listings: indices.iter().map(|&i| self.listings[i].clone()).collect(),
            splits: indices.iter().map(|&i| self.splits[i]).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Reattaches split tags from an `id -> tag` map. Listings absent from
    /// the map are tagged `None`.
    pub fn with_split_map(self, map: &BTreeMap<String, SplitTag>) -> Result<Self> {
        let splits = self
            .listings
            .iter()
            .map(|l| map.get(&l.id).copied().unwrap_or(SplitTag::None))
            .collect();
        self.with_splits(splits)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MalformedRow {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub data_rows: usize,
    pub filtered_out: usize,
    pub malformed: Vec<MalformedRow>,
}

fn parse_row(rec: &csv::StringRecord) -> std::result::Result<Listing, String> {
    if rec.len() != LISTINGS_HEADER.len() {
        return Err(format!("expected {} fields, found {}", LISTINGS_HEADER.len(), rec.len()));
    }
    let num = |i: usize| -> std::result::Result<f64, String> {
        rec[i].trim().parse::<f64>().map_err(|_| format!("{}: not a number: {:?}", LISTINGS_HEADER[i], &rec[i]))
    };
    let count = |i: usize| -> std::result::Result<u32, String> {
        rec[i].trim().parse::<u32>().map_err(|_| format!("{}: not a nonnegative integer: {:?}", LISTINGS_HEADER[i], &rec[i]))
    };
    let id = rec[0].trim();
    if id.is_empty() {
        return Err("empty id".into());
    }
    let location = GeoPoint::new(num(1)?, num(2)?).map_err(|e| e.to_string())?;
    let price = num(3)?;
    if !(price.is_finite() && price > 0.0) {
        return Err(format!("price must be positive, got {price}"));
    }
    let status = rec[8].trim().parse::<Status>().map_err(|e| e.to_string())?;
    Ok(Listing {
        id: id.to_string(),
        location,
        price,
        bedrooms: count(4)?,
        bathrooms: count(5)?,
        receptions: count(6)?,
        floors: count(7)?,
        status,
    })
}

/// Reads a listings CSV, keeping rows whose status equals `status_filter`.
///
/// Malformed rows (bad numbers, nonpositive price, unknown status, duplicate
/// id) are skipped and reported; more than 10% malformed aborts.
pub fn ingest_listings(path: &Path, status_filter: Status) -> Result<(Dataset, IngestReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(file);
    let mut records = reader.records();

    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(Error::parse(path, 1, e.to_string())),
        None => return Err(Error::parse(path, 1, "empty file, header missing")),
    };
    let header: Vec<&str> = header.iter().map(str::trim).collect();
    if header != LISTINGS_HEADER {
        return Err(Error::parse(
            path,
            1,
            format!("header mismatch: expected {:?}, found {:?}", LISTINGS_HEADER.join(","), header.join(",")),
        ));
    }

    let mut report = IngestReport::default();
    let mut listings = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        report.data_rows += 1;
        let parsed = rec.map_err(|e| e.to_string()).and_then(|r| parse_row(&r));
        match parsed {
            Ok(l) if !seen.insert(l.id.clone()) => {
                report.malformed.push(MalformedRow { line, reason: format!("duplicate id {:?}", l.id) })
            }
            Ok(l) if l.status == status_filter => listings.push(l),
            Ok(_) => report.filtered_out += 1,
            Err(reason) => report.malformed.push(MalformedRow { line, reason }),
        }
    }

    if report.data_rows > 0 {
        let frac = report.malformed.len() as f64 / report.data_rows as f64;
        if frac > MAX_MALFORMED_FRACTION {
            let first = &report.malformed[0];
            return Err(Error::parse(
                path,
                first.line,
                format!(
                    "{} of {} rows malformed ({:.1}% > {:.0}%); first: {}",
                    report.malformed.len(),
                    report.data_rows,
                    100.0 * frac,
                    100.0 * MAX_MALFORMED_FRACTION,
                    first.reason
                ),
            ));
        }
    }

    let provenance = Provenance {
        source: Some(path.to_path_buf()),
        malformed_rows: report.malformed.len(),
        ..Provenance::default()
    };
    Ok((Dataset::new(listings)?.with_provenance(provenance), report))
}

/// Writes listings in the ingestion CSV format.
pub fn write_listings(listings: &[Listing], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let to_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(LISTINGS_HEADER).map_err(to_err)?;
    for l in listings {
        w.write_record([
            l.id.clone(),
            l.location.lat().to_string(),
            l.location.lon().to_string(),
            l.price.to_string(),
            l.bedrooms.to_string(),
            l.bathrooms.to_string(),
            l.receptions.to_string(),
            l.floors.to_string(),
            l.status.to_string(),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `id,split` rows.
pub fn write_splits(d: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::from("id,split\n");
    for (l, t) in d.listings().iter().zip(d.splits()) {
        out.push_str(&format!("{},{}\n", l.id, t));
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_splits(path: &Path) -> Result<BTreeMap<String, SplitTag>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "id,split")) => {}
        _ => return Err(Error::parse(path, 1, "expected header id,split")),
    }
    let mut map = BTreeMap::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let (id, tag) = line.rsplit_once(',').ok_or_else(|| Error::parse(path, i + 1, "expected id,split"))?;
        let tag = tag.parse().map_err(|e: Error| Error::parse(path, i + 1, e.to_string()))?;
        map.insert(id.to_string(), tag);
    }
    Ok(map)
}

/// Listing indices sorted by price ascending, ties by id.
fn price_order(listings: &[Listing], indices: &[usize]) -> Vec<usize> {
    let mut order = indices.to_vec();
    order.sort_by(|&a, &b| {
        listings[a]
            .price
            .total_cmp(&listings[b].price)
            .then_with(|| listings[a].id.cmp(&listings[b].id))
    });
    order
}

/// Drops the `floor(frac·n)` cheapest and most expensive listings; remaining
/// listings keep their original order.
pub fn prune_outliers(d: &Dataset, frac: f64) -> Result<Dataset> {
    if !(0.0..0.5).contains(&frac) {
        return Err(Error::invalid(format!("prune fraction {frac} outside [0, 0.5)")));
    }
    let n = d.len();
    let m = (frac * n as f64).floor() as usize;
    let all: Vec<usize> = (0..n).collect();
    let order = price_order(d.listings(), &all);
    let mut keep = vec![true; n];
    for &i in order[..m].iter().chain(&order[n - m..]) {
        keep[i] = false;
    }
    let kept: Vec<usize> = all.into_iter().filter(|&i| keep[i]).collect();
    let mut out = d.subset(&kept);
    out.provenance.prune_frac = Some(frac);
    Ok(out)
}

/// Tags exactly `round(test_frac·n)` listings as test (ties to even), the
/// rest as train.
pub fn split(d: &Dataset, test_frac: f64, seed: u64) -> Result<Dataset> {
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(Error::invalid(format!("test fraction {test_frac} outside (0, 1)")));
    }
    let n = d.len();
    if n < 2 {
        return Err(Error::invalid(format!("cannot split {n} listing(s)")));
    }
    let n_test = (test_frac * n as f64).round_ties_even() as usize;
    if n_test == 0 {
        return Err(Error::invalid("empty test set"));
    }
    if n_test == n {
        return Err(Error::invalid("empty train set"));
    }
    let mut rng = seeded_rng(seed);
    let chosen = rand::seq::index::sample(&mut rng, n, n_test);
    let mut tags = vec![SplitTag::Train; n];
    for i in chosen {
        tags[i] = SplitTag::Test;
    }
    let mut out = d.clone().with_splits(tags)?;
    out.provenance.split_seed = Some(seed);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PriceClass {
    Cheap,
    Expensive,
}

impl fmt::Display for PriceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriceClass::Cheap => "cheap",
            PriceClass::Expensive => "expensive",
        })
    }
}

/// Labels the `floor(delta·n_train)` cheapest train listings `Cheap` and as
/// many of the most expensive `Expensive`. Listings without split tags are
/// treated as train. Output is in listing order.
pub fn label_extremes(d: &Dataset, delta: f64) -> Result<Vec<(String, PriceClass)>> {
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(Error::invalid(format!("delta {delta} outside (0, 0.5]")));
    }
    let mut train = d.indices(SplitTag::Train);
    if train.is_empty() {
        train = d.indices(SplitTag::None);
    }
    if train.is_empty() {
        return Err(Error::invalid("train split is empty"));
    }
    let m = (delta * train.len() as f64).floor() as usize;
    if m < 2 {
        return Err(Error::invalid(format!(
            "only {m} sample(s) per class with delta {delta} and {} train listings",
            train.len()
        )));
    }
    let order = price_order(d.listings(), &train);
    let mut class = vec![None; d.len()];
    for &i in &order[..m] {
        class[i] = Some(PriceClass::Cheap);
    }
    for &i in &order[order.len() - m..] {
        class[i] = Some(PriceClass::Expensive);
    }
    Ok(d.listings()
        .iter()
        .zip(class)
        .filter_map(|(l, c)| c.map(|c| (l.id.clone(), c)))
        .collect())
}
