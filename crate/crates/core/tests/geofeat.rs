//! Files from an external feature extractor. Such writers print floats the
//! way Python's `repr` does (`1e-05`, `2.5e+20`, `-0.0`), use 256 columns
//! and do not follow listing order.

use std::fmt::Write as _;

use geoprice::features::{load_features, save_features};
use geoprice::geo::{seeded_rng, ZoomLevel};
use rand::Rng;
use rand_distr::StandardNormal;

/// Python-style exponent: at least two digits and an explicit sign.
fn python_repr(x: f64) -> String {
    let s = format!("{x:?}");
    let Some((mant, exp)) = s.split_once('e') else { return s };
    let (sign, digits) = exp.strip_prefix('-').map_or(("+", exp), |d| ("-", d));
    format!("{mant}e{sign}{digits:0>2}")
}

fn extractor_file(zoom: u8, ids: &[&str], dim: usize, seed: u64) -> (String, Vec<Vec<String>>) {
    let mut rng = seeded_rng(seed);
    let mut text = format!("#GEOFEAT v1 zoom={zoom} dim={dim}\n");
    let mut cells = Vec::new();
    for id in ids {
        let row: Vec<String> = (0..dim)
            .map(|j| {
                let z: f64 = rng.sample(StandardNormal);
                // ReLU activations: many exact zeros, a few tiny and huge values
                match j % 7 {
                    0 => python_repr(0.0),
                    1 => python_repr(z.abs() * 1e-6),
                    2 => python_repr(z * 3e21),
                    3 => python_repr(-0.0),
                    _ => python_repr(z.max(0.0)),
                }
            })
            .collect();
        let _ = writeln!(text, "{id},{}", row.join(","));
        cells.push(row);
    }
    (text, cells)
}

#[test]
fn python_style_file_loads_and_round_trips_bit_exactly() {
    let ids = ["L0042", "L0007", "L0100", "L0001"];
    let (text, cells) = extractor_file(18, &ids, 256, 9);
    assert!(text.contains("e-0") && text.contains("e+2"), "writer should exercise exponent forms");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("zoom18.geofeat");
    std::fs::write(&path, &text).unwrap();
    let store = load_features(&path).unwrap();
    assert_eq!((store.zoom(), store.dim(), store.len()), (ZoomLevel::new(18).unwrap(), 256, 4));
    assert_eq!(store.ids(), ids);

    for (id, row) in ids.iter().zip(&cells) {
        let got = store.get(id).unwrap();
        for (g, s) in got.iter().zip(row) {
            assert_eq!(g.to_bits(), s.parse::<f64>().unwrap().to_bits(), "{id}: {s}");
        }
    }

    let again = dir.path().join("again.geofeat");
    save_features(&store, &again).unwrap();
    let back = load_features(&again).unwrap();
    assert_eq!(back.ids(), store.ids());
    for id in ids {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.get(id).unwrap()), bits(store.get(id).unwrap()));
    }
}

#[test]
fn trailing_newline_and_crlf_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("z15.geofeat");
    std::fs::write(&path, "#GEOFEAT v1 zoom=15 dim=2\r\na,1.0,2.5\r\nb,0.0,-1e-05\r\n\r\n").unwrap();
    let store = load_features(&path).unwrap();
    assert_eq!(store.get("b").unwrap(), &[0.0, -1e-5]);
}

#[test]
fn header_dimension_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("z16.geofeat");
    std::fs::write(&path, "#GEOFEAT v1 zoom=16 dim=256\na,1.0,2.0\n").unwrap();
    let err = load_features(&path).unwrap_err().to_string();
    assert!(err.contains("row has dim 2, header declares 256"), "{err}");
}
