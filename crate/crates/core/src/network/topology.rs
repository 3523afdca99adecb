//! `towers.csv` ingestion and emission.
//!
//! Schema: `tower_id,lat,lon,rat,max_bandwidth_bps,range_m,base_latency_s`.
//! Coordinates are projected to local meters (equirectangular about the
//! centroid of the valid rows) at load time and never touched again.

use std::io::{Read, Write};

use thiserror::Error;

use super::tower::{CellTower, GeoCoord, Rat};
use crate::geometry::project_equirectangular;
use crate::Point;

pub const TOWER_CSV_HEADER: [&str; 7] = [
    "tower_id",
    "lat",
    "lon",
    "rat",
    "max_bandwidth_bps",
    "range_m",
    "base_latency_s",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("malformed header: expected `{}`, got `{found}`", TOWER_CSV_HEADER.join(","))]
    MalformedHeader { found: String },
    #[error("all {} rows failed; first: line {}: {}", .0.len(), .0[0].line, .0[0].message)]
    AllRowsFailed(Vec<RowError>),
    #[error("tower `{0}` has no geographic coordinates to emit")]
    MissingGeo(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub towers: Vec<CellTower>,
    pub row_errors: Vec<RowError>,
    /// Projection origin (centroid of valid rows); `None` when empty.
    pub origin: Option<GeoCoord>,
}

struct RawRow {
    tower_id: String,
    geo: GeoCoord,
    rat: Rat,
    max_bandwidth_bps: f64,
    range_m: f64,
    base_latency_s: f64,
}

fn parse_f64(field: &str, name: &str) -> Result<f64, String> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| format!("{name}: `{field}` is not a number"))?;
    if !v.is_finite() {
        return Err(format!("{name}: `{field}` is not finite"));
    }
    Ok(v)
}

fn parse_row(rec: &csv::StringRecord) -> Result<RawRow, String> {
    if rec.len() != TOWER_CSV_HEADER.len() {
        return Err(format!("expected {} fields, got {}", TOWER_CSV_HEADER.len(), rec.len()));
    }
    let tower_id = rec[0].trim().to_owned();
    if tower_id.is_empty() {
        return Err("tower_id is empty".into());
    }
    let lat = parse_f64(&rec[1], "lat")?;
    let lon = parse_f64(&rec[2], "lon")?;
    if !(-90.0..=90.0).contains(&lat) {
        return Err(format!("lat {lat} outside [-90, 90]"));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(format!("lon {lon} outside [-180, 180]"));
    }
    let rat: Rat = rec[3].parse().map_err(|e| format!("rat: {e}"))?;
    let max_bandwidth_bps = parse_f64(&rec[4], "max_bandwidth_bps")?;
    let range_m = parse_f64(&rec[5], "range_m")?;
    let base_latency_s = parse_f64(&rec[6], "base_latency_s")?;
    if max_bandwidth_bps <= 0.0 {
        return Err(format!("max_bandwidth_bps must be > 0, got {max_bandwidth_bps}"));
    }
    if range_m <= 0.0 {
        return Err(format!("range_m must be > 0, got {range_m}"));
    }
    if base_latency_s < 0.0 {
        return Err(format!("base_latency_s must be >= 0, got {base_latency_s}"));
    }
    Ok(RawRow {
        tower_id,
        geo: GeoCoord { lat, lon },
        rat,
        max_bandwidth_bps,
        range_m,
        base_latency_s,
    })
}

pub fn ingest_topology<R: Read>(input: R) -> Result<Topology, TopologyError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::Headers)
        .from_reader(input);

    let header = reader.headers()?.clone();
    let matches = header.len() == TOWER_CSV_HEADER.len()
        && header
            .iter()
            .zip(TOWER_CSV_HEADER)
            .all(|(got, want)| got.trim_start_matches('\u{feff}').eq_ignore_ascii_case(want));
    if !matches {
        return Err(TopologyError::MalformedHeader {
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut rows = Vec::new();
    let mut row_errors = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for rec in reader.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                row_errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        match parse_row(&rec) {
            Ok(row) if !seen.insert(row.tower_id.clone()) => row_errors.push(RowError {
                line,
                message: format!("duplicate tower_id `{}`", row.tower_id),
            }),
            Ok(row) => rows.push(row),
            Err(message) => row_errors.push(RowError { line, message }),
        }
    }

    if rows.is_empty() && !row_errors.is_empty() {
        return Err(TopologyError::AllRowsFailed(row_errors));
    }

    let origin = (!rows.is_empty()).then(|| {
        let n = rows.len() as f64;
        GeoCoord {
            lat: rows.iter().map(|r| r.geo.lat).sum::<f64>() / n,
            lon: rows.iter().map(|r| r.geo.lon).sum::<f64>() / n,
        }
    });

    let towers = rows
        .into_iter()
        .map(|r| {
            let o = origin.expect("origin exists when rows exist");
            let position: Point = project_equirectangular(r.geo.lat, r.geo.lon, o.lat, o.lon);
            CellTower {
                tower_id: r.tower_id,
                position,
                rat: r.rat,
                max_bandwidth_bps: r.max_bandwidth_bps,
                range_m: r.range_m,
                base_latency_s: r.base_latency_s,
                geo: Some(r.geo),
            }
        })
        .collect();

    Ok(Topology {
        towers,
        row_errors,
        origin,
    })
}

/// Writes towers in the ingestion schema with 6-decimal coordinates.
pub fn emit_topology<W: Write>(towers: &[CellTower], output: W) -> Result<(), TopologyError> {
    let mut w = csv::Writer::from_writer(output);
    w.write_record(TOWER_CSV_HEADER)?;
    for t in towers {
        let geo = t.geo.ok_or_else(|| TopologyError::MissingGeo(t.tower_id.clone()))?;
        w.write_record([
            t.tower_id.clone(),
            format!("{:.6}", geo.lat),
            format!("{:.6}", geo.lon),
            t.rat.to_string(),
            t.max_bandwidth_bps.to_string(),
            t.range_m.to_string(),
            t.base_latency_s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
