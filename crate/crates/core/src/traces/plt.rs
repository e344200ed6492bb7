use std::fmt::Write as _;

use chrono::{DateTime, NaiveDate, NaiveDateTime, NaiveTime};

use super::{GeoPoint, TraceError};

const HEADER_LINES: usize = 6;
// days between 1899-12-30 (the PLT day-count origin) and 1970-01-01
const PLT_EPOCH_DAYS: f64 = 25569.0;

/// Parses a GeoLife `.plt` trajectory.
///
/// The six header lines are skipped; each data row is
/// `lat,lon,0,altitude,days,date,time`. Date and time are taken as UTC and
/// stored as epoch seconds. Rows are returned in file order.
pub fn parse_plt(bytes: &[u8]) -> Result<Vec<GeoPoint>, TraceError> {
    let text = String::from_utf8_lossy(bytes);
    let mut points = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(HEADER_LINES) {
        let line_no = idx + 1;
        let row = line.trim();
        if row.is_empty() {
            continue;
        }
        points.push(parse_row(row).map_err(|message| TraceError::Record {
            line: line_no,
            message,
        })?);
    }
    if points.is_empty() {
        return Err(TraceError::EmptyTrace);
    }
    Ok(points)
}

fn parse_row(row: &str) -> Result<GeoPoint, String> {
    let fields: Vec<&str> = row.split(',').map(str::trim).collect();
    if fields.len() != 7 {
        return Err(format!("expected 7 fields, found {}", fields.len()));
    }
    let lat: f64 = fields[0].parse().map_err(|_| format!("bad latitude `{}`", fields[0]))?;
    let lon: f64 = fields[1].parse().map_err(|_| format!("bad longitude `{}`", fields[1]))?;
    if !(-90.0..=90.0).contains(&lat) {
        return Err(format!("latitude {lat} out of range"));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(format!("longitude {lon} out of range"));
    }
    let date = NaiveDate::parse_from_str(fields[5], "%Y-%m-%d").map_err(|e| format!("bad date `{}`: {e}", fields[5]))?;
    let time = NaiveTime::parse_from_str(fields[6], "%H:%M:%S").map_err(|e| format!("bad time `{}`: {e}", fields[6]))?;
    let t = NaiveDateTime::new(date, time).and_utc().timestamp();
    Ok(GeoPoint { lat, lon, t })
}

/// Serializes points in PLT layout with a generic header.
pub fn write_plt(points: &[GeoPoint]) -> String {
    let mut out = String::from(
        "Geolife trajectory\nWGS 84\nAltitude is in Feet\nReserved 3\n0,2,255,My Track,0,0,2,8421376\n0\n",
    );
    for p in points {
        let dt = DateTime::from_timestamp(p.t, 0).map(|d| d.naive_utc()).unwrap_or_default();
        let days = p.t as f64 / 86_400.0 + PLT_EPOCH_DAYS;
        let _ = writeln!(
            out,
            "{},{},0,0,{days:.10},{},{}",
            p.lat,
            p.lon,
            dt.format("%Y-%m-%d"),
            dt.format("%H:%M:%S")
        );
    }
    out
}
