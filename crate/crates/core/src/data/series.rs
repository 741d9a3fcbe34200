use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::grid::{GridCell, StationGrid};
use super::trips::TripRecord;
use crate::error::{Error, Result};

pub const SERIES_MAGIC: &[u8; 4] = b"STDM";
const SERIES_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 4 + 8 + 4;

/// Demand counts laid out `T x 2 x rows x cols`. Channel 0 counts rentals
/// (trip starts), channel 1 counts returns (trip stops).
#[derive(Clone, Debug, PartialEq)]
pub struct DemandSeries {
    pub rows: usize,
    pub cols: usize,
    /// Epoch seconds of the first interval's start.
    pub start_epoch: i64,
    /// Interval length in seconds.
    pub interval: u32,
    data: Vec<f32>,
}

impl DemandSeries {
    pub fn new(rows: usize, cols: usize, start_epoch: i64, interval: u32, data: Vec<f32>) -> Result<Self> {
        let frame = 2 * rows * cols;
        if rows == 0 || cols == 0 || interval == 0 || data.is_empty() || !data.len().is_multiple_of(frame) {
            return Err(Error::Domain(format!(
                "series of {} values does not divide into {rows}x{cols} frames",
                data.len()
            )));
        }
        Ok(Self { rows, cols, start_epoch, interval, data })
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn frame_len(&self) -> usize {
        2 * self.cells()
    }

    /// Number of intervals `T`.
    pub fn len(&self) -> usize {
        self.data.len() / self.frame_len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Frame `t` as `2 x rows x cols`.
    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn time_of(&self, t: usize) -> i64 {
        self.start_epoch + t as i64 * self.interval as i64
    }

    pub fn end_epoch(&self) -> i64 {
        self.time_of(self.len())
    }

    pub fn hour_of(&self, t: usize) -> usize {
        super::hour_of_day(self.time_of(t))
    }

    /// Total count in each channel over the whole series.
    pub fn channel_totals(&self) -> [f64; 2] {
        let cells = self.cells();
        let mut out = [0.0; 2];
        for frame in self.data.chunks(self.frame_len()) {
            for (ch, slot) in out.iter_mut().enumerate() {
                *slot += frame[ch * cells..(ch + 1) * cells].iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SeriesAudit {
    pub rentals_counted: u64,
    pub returns_counted: u64,
    /// Events at selected stations whose timestamp lies outside the range.
    pub out_of_range: u64,
    /// Events at stations that are not on the grid.
    pub unselected: u64,
}

/// Bins trip starts and stops at the grid's stations into `[t0, t1)` with the
/// given interval. Both bounds must be interval aligned.
pub fn build_demand_series(
    records: &[TripRecord],
    grid: &StationGrid,
    t0: i64,
    t1: i64,
    interval: u32,
) -> Result<(DemandSeries, SeriesAudit)> {
    let step = interval as i64;
    if interval == 0 || t1 <= t0 || t0.rem_euclid(step) != 0 || (t1 - t0) % step != 0 {
        return Err(Error::Usage(format!(
            "time range [{t0}, {t1}) is not a positive multiple of the {interval}s interval"
        )));
    }
    let len = ((t1 - t0) / step) as usize;
    let cells = grid.rows() * grid.cols();
    let mut data = vec![0f32; len * 2 * cells];
    let mut audit = SeriesAudit::default();
    for r in records {
        for (ch, station, time) in [(0, r.start_station, r.start_time), (1, r.end_station, r.stop_time)] {
            let Some(cell) = grid.cell_of(station) else {
                audit.unselected += 1;
                continue;
            };
            if time < t0 || time >= t1 {
                audit.out_of_range += 1;
                continue;
            }
            let t = ((time - t0) / step) as usize;
            data[(t * 2 + ch) * cells + cell] += 1.0;
            if ch == 0 {
                audit.rentals_counted += 1;
            } else {
                audit.returns_counted += 1;
            }
        }
    }
    Ok((DemandSeries::new(grid.rows(), grid.cols(), t0, interval, data)?, audit))
}

pub fn write_series(path: &Path, series: &DemandSeries) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(SERIES_MAGIC)?;
    for v in [SERIES_VERSION, series.rows as u32, series.cols as u32, series.len() as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&series.start_epoch.to_le_bytes())?;
    out.write_all(&series.interval.to_le_bytes())?;
    for v in &series.data {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_series(path: &Path) -> Result<DemandSeries> {
    let bytes = fs::read(path)?;
    let bad = |detail: String| Error::format(path, detail);
    if bytes.len() < HEADER_LEN || &bytes[..4] != SERIES_MAGIC {
        return Err(bad("not a demand series file".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != SERIES_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let (rows, cols, len) = (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
    let start_epoch = i64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let interval = u32_at(28);
    let expected = len
        .checked_mul(2 * rows * cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("dimensions overflow".into()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != expected {
        return Err(bad(format!("expected {expected} data bytes, found {}", body.len())));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    DemandSeries::new(rows, cols, start_epoch, interval, data).map_err(|e| bad(e.to_string()))
}

#[derive(Serialize, serde::Deserialize)]
struct MapEntry {
    row: usize,
    col: usize,
    lat: f64,
    lon: f64,
}

#[derive(Serialize, serde::Deserialize)]
struct StationMapFile {
    rows: usize,
    cols: usize,
    stations: BTreeMap<String, MapEntry>,
}

/// JSON sidecar mapping station ids to grid cells.
pub fn write_station_map(path: &Path, grid: &StationGrid) -> Result<()> {
    let file = StationMapFile {
        rows: grid.rows(),
        cols: grid.cols(),
        stations: grid
            .cells()
            .iter()
            .map(|c| (c.station.to_string(), MapEntry { row: c.row, col: c.col, lat: c.lat, lon: c.lon }))
            .collect(),
    };
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn read_station_map(path: &Path) -> Result<StationGrid> {
    let file: StationMapFile = serde_json::from_slice(&fs::read(path)?)?;
    let mut cells = Vec::with_capacity(file.stations.len());
    for (id, e) in file.stations {
        let station = id
            .parse()
            .map_err(|_| Error::format(path, format!("station id '{id}' is not an integer")))?;
        cells.push(GridCell { station, row: e.row, col: e.col, lat: e.lat, lon: e.lon });
    }
    StationGrid::from_cells(file.rows, file.cols, cells).map_err(|e| Error::format(path, e.to_string()))
}
