use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::Serialize;

use crate::error::{Error, Result};

const REQUIRED: [&str; 4] = ["starttime", "stoptime", "start station id", "end station id"];

/// Rough New York City bounding box; coordinates outside it are treated as absent.
const LAT_RANGE: (f64, f64) = (40.3, 41.1);
const LON_RANGE: (f64, f64) = (-74.4, -73.5);

/// One bike trip: a rental at its start station and a return at its end station.
#[derive(Clone, Debug, PartialEq)]
pub struct TripRecord {
    /// Epoch seconds on the naive local clock of the source file.
    pub start_time: i64,
    pub stop_time: i64,
    pub start_station: u32,
    pub end_station: u32,
    /// `(lat, lon)` in degrees.
    pub start_coord: Option<(f64, f64)>,
    pub end_coord: Option<(f64, f64)>,
}

impl TripRecord {
    pub fn start_hour(&self) -> usize {
        super::hour_of_day(self.start_time)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TripAudit {
    pub rows: u64,
    pub accepted: u64,
    pub malformed: u64,
    /// Rows whose stop time precedes the start time.
    pub time_reversed: u64,
}

impl TripAudit {
    pub fn merge(&mut self, other: &TripAudit) {
        self.rows += other.rows;
        self.accepted += other.accepted;
        self.malformed += other.malformed;
        self.time_reversed += other.time_reversed;
    }
}

#[derive(Clone, Debug, Default)]
pub struct Trips {
    pub records: Vec<TripRecord>,
    pub audit: TripAudit,
}

/// Accepts `YYYY-MM-DD HH:MM:SS` (optionally with fractional seconds) and the
/// `M/D/YYYY HH:MM:SS` form used by some monthly exports.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    const FORMATS: [&str; 4] = [
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S",
        "%m/%d/%Y %H:%M:%S",
        "%m/%d/%Y %H:%M",
    ];
    let s = s.trim();
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|t| t.and_utc().timestamp())
}

fn coord(lat: Option<&str>, lon: Option<&str>) -> Option<(f64, f64)> {
    let lat: f64 = lat?.trim().parse().ok()?;
    let lon: f64 = lon?.trim().parse().ok()?;
    let inside = (LAT_RANGE.0..=LAT_RANGE.1).contains(&lat) && (LON_RANGE.0..=LON_RANGE.1).contains(&lon);
    inside.then_some((lat, lon))
}

fn parse_id(s: &str) -> Option<u32> {
    let s = s.trim();
    s.parse().ok().or_else(|| {
        // Some exports write ids as floats ("72.0").
        let f: f64 = s.parse().ok()?;
        (f >= 0.0 && f.fract() == 0.0 && f <= u32::MAX as f64).then_some(f as u32)
    })
}

/// Parses a trip CSV with a header row. Malformed rows are skipped and
/// counted; a missing required column is fatal.
pub fn parse_trips<R: Read>(reader: R) -> Result<Trips> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers: Vec<String> = csv
        .headers()?
        .iter()
        .map(|h| h.trim().trim_start_matches('\u{feff}').to_ascii_lowercase())
        .collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut required = [0usize; 4];
    for (slot, name) in required.iter_mut().zip(REQUIRED) {
        *slot = col(name).ok_or_else(|| Error::Schema(format!("missing required column '{name}'")))?;
    }
    let [c_start, c_stop, c_from, c_to] = required;
    let c_lat0 = col("start station latitude");
    let c_lon0 = col("start station longitude");
    let c_lat1 = col("end station latitude");
    let c_lon1 = col("end station longitude");

    let mut out = Trips::default();
    for row in csv.records() {
        out.audit.rows += 1;
        let Ok(row) = row else {
            out.audit.malformed += 1;
            continue;
        };
        let field = |c: Option<usize>| c.and_then(|c| row.get(c));
        let parsed = (|| {
            Some((
                parse_timestamp(row.get(c_start)?)?,
                parse_timestamp(row.get(c_stop)?)?,
                parse_id(row.get(c_from)?)?,
                parse_id(row.get(c_to)?)?,
            ))
        })();
        let Some((start_time, stop_time, start_station, end_station)) = parsed else {
            out.audit.malformed += 1;
            continue;
        };
        if stop_time < start_time {
            out.audit.time_reversed += 1;
            continue;
        }
        out.audit.accepted += 1;
        out.records.push(TripRecord {
            start_time,
            stop_time,
            start_station,
            end_station,
            start_coord: coord(field(c_lat0), field(c_lon0)),
            end_coord: coord(field(c_lat1), field(c_lon1)),
        });
    }
    Ok(out)
}

/// Parses several files in the given order and concatenates their records.
pub fn parse_trip_files<P: AsRef<Path>>(paths: &[P]) -> Result<Trips> {
    let mut all = Trips::default();
    for p in paths {
        let p = p.as_ref();
        let file = File::open(p)?;
        let trips = parse_trips(std::io::BufReader::new(file))
            .map_err(|e| match e {
                Error::Schema(msg) => Error::Schema(format!("{}: {msg}", p.display())),
                other => other,
            })?;
        all.audit.merge(&trips.audit);
        all.records.extend(trips.records);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "\"tripduration\",\"starttime\",\"stoptime\",\"start station id\",\"start station name\",\"start station latitude\",\"start station longitude\",\"end station id\",\"end station name\",\"end station latitude\",\"end station longitude\",\"bikeid\"\n";

    #[test]
    fn fixture_keeps_valid_rows_in_order() {
        let csv = format!(
            "{HEADER}\
             \"634\",\"2014-04-01 00:12:00\",\"2014-04-01 00:22:34\",\"137\",\"E 56 St\",\"40.7\",\"-73.9\",\"72\",\"W 52 St\",\"40.76\",\"-73.99\",\"1\"\n\
             \"100\",\"2014-04-01 01:00:00\",\"2014-04-01 00:59:00\",\"137\",\"E 56 St\",\"40.7\",\"-73.9\",\"72\",\"W 52 St\",\"40.76\",\"-73.99\",\"2\"\n\
             \"900\",\"2014-04-01 02:30:00\",\"2014-04-01 02:45:00\",\"72\",\"W 52 St\",\"40.76\",\"-73.99\",\"137\",\"E 56 St\",\"0.0\",\"0.0\",\"3\"\n"
        );
        let trips = parse_trips(csv.as_bytes()).unwrap();
        assert_eq!(trips.records.len(), 2);
        assert_eq!(trips.audit.time_reversed, 1);
        assert_eq!(trips.audit.accepted, 2);
        assert_eq!(trips.records[0].start_station, 137);
        assert_eq!(trips.records[0].start_hour(), 0);
        assert_eq!(trips.records[1].start_station, 72);
        assert_eq!(trips.records[1].start_coord, Some((40.76, -73.99)));
        assert_eq!(trips.records[1].end_coord, None, "0,0 is outside NYC");
    }

    #[test]
    fn missing_column_is_fatal_and_named() {
        let csv = "starttime,start station id,end station id\n2014-04-01 00:00:00,1,2\n";
        let err = parse_trips(csv.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("'stoptime'"), "{err}");
    }

    #[test]
    fn malformed_rows_are_counted() {
        let csv = "starttime,stoptime,start station id,end station id\n\
                   2014-04-01 00:00:00,2014-04-01 00:10:00,1,2\n\
                   not a time,2014-04-01 00:10:00,1,2\n\
                   2014-04-01 00:00:00,2014-04-01 00:10:00,NULL,2\n";
        let trips = parse_trips(csv.as_bytes()).unwrap();
        assert_eq!(trips.records.len(), 1);
        assert_eq!(trips.audit.malformed, 2);
        assert_eq!(trips.audit.rows, 3);
    }

    #[test]
    fn both_timestamp_layouts() {
        let a = parse_timestamp("2014-09-01 07:05:09").unwrap();
        let b = parse_timestamp("9/1/2014 07:05:09").unwrap();
        assert_eq!(a, b);
        assert_eq!(super::super::hour_of_day(a), 7);
        assert!(parse_timestamp("2014-13-01 00:00:00").is_none());
    }
}
