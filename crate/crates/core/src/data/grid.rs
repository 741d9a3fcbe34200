use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::trips::TripRecord;
use crate::error::{Error, Result};

/// The `n` stations with the most start plus end events. Ties go to the
/// lower station id. Returned in rank order.
pub fn select_stations(records: &[TripRecord], n: usize) -> Result<Vec<u32>> {
    let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
    for r in records {
        *counts.entry(r.start_station).or_default() += 1;
        *counts.entry(r.end_station).or_default() += 1;
    }
    if counts.len() < n {
        return Err(Error::Domain(format!(
            "asked for {n} stations but the trips reference only {}",
            counts.len()
        )));
    }
    let mut ranked: Vec<(u32, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().take(n).map(|(id, _)| id).collect())
}

/// Most frequent coordinate reported for each station. Ties are broken by
/// the smaller `(lat, lon)` pair.
pub fn modal_coordinates(records: &[TripRecord]) -> BTreeMap<u32, (f64, f64)> {
    let mut seen: HashMap<u32, HashMap<(u64, u64), u64>> = HashMap::new();
    let mut note = |id: u32, c: Option<(f64, f64)>| {
        if let Some((lat, lon)) = c {
            *seen.entry(id).or_default().entry((lat.to_bits(), lon.to_bits())).or_default() += 1;
        }
    };
    for r in records {
        note(r.start_station, r.start_coord);
        note(r.end_station, r.end_coord);
    }
    seen.into_iter()
        .map(|(id, hist)| {
            let best = hist
                .into_iter()
                .map(|((a, b), n)| ((f64::from_bits(a), f64::from_bits(b)), n))
                .max_by(|(c1, n1), (c2, n2)| {
                    n1.cmp(n2)
                        .then_with(|| c2.0.total_cmp(&c1.0))
                        .then_with(|| c2.1.total_cmp(&c1.1))
                })
                .map(|(c, _)| c)
                .expect("histogram is never empty");
            (id, best)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub station: u32,
    pub row: usize,
    pub col: usize,
    pub lat: f64,
    pub lon: f64,
}

/// Placement of `rows * cols` stations on a pseudo-spatial grid. Row 0 holds
/// the northernmost stations; within a row columns run west to east.
#[derive(Clone, Debug, PartialEq)]
pub struct StationGrid {
    rows: usize,
    cols: usize,
    cells: Vec<GridCell>,
    index: HashMap<u32, usize>,
}

impl StationGrid {
    pub fn from_cells(rows: usize, cols: usize, mut cells: Vec<GridCell>) -> Result<Self> {
        if cells.len() != rows * cols {
            return Err(Error::Domain(format!(
                "grid {rows}x{cols} needs {} stations, got {}",
                rows * cols,
                cells.len()
            )));
        }
        cells.sort_by_key(|c| (c.row, c.col));
        let mut index = HashMap::new();
        for (k, c) in cells.iter().enumerate() {
            if c.row * cols + c.col != k {
                return Err(Error::Domain(format!("grid cell ({}, {}) is missing or repeated", c.row, c.col)));
            }
            if index.insert(c.station, k).is_some() {
                return Err(Error::Domain(format!("station {} appears twice", c.station)));
            }
        }
        Ok(Self { rows, cols, cells, index })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> &[GridCell] {
        &self.cells
    }

    /// Row-major cell index of a station, or `None` for unselected stations.
    pub fn cell_of(&self, station: u32) -> Option<usize> {
        self.index.get(&station).copied()
    }

    pub fn station_at(&self, row: usize, col: usize) -> u32 {
        self.cells[row * self.cols + col].station
    }
}

/// Sorts stations by latitude (north first), cuts them into `rows` groups of
/// `cols`, then orders each group by longitude (west first). Equal
/// coordinates fall back to station id.
pub fn assign_grid(stations: &[(u32, f64, f64)], rows: usize, cols: usize) -> Result<StationGrid> {
    if stations.len() != rows * cols {
        return Err(Error::Domain(format!(
            "grid {rows}x{cols} needs {} stations, got {}",
            rows * cols,
            stations.len()
        )));
    }
    let mut by_lat = stations.to_vec();
    by_lat.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut cells = Vec::with_capacity(stations.len());
    for (row, group) in by_lat.chunks_mut(cols).enumerate() {
        group.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
        for (col, &(station, lat, lon)) in group.iter().enumerate() {
            cells.push(GridCell { station, row, col, lat, lon });
        }
    }
    StationGrid::from_cells(rows, cols, cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trip(a: u32, b: u32) -> TripRecord {
        TripRecord {
            start_time: 0,
            stop_time: 60,
            start_station: a,
            end_station: b,
            start_coord: None,
            end_coord: None,
        }
    }

    #[test]
    fn top_n_with_tie_break_on_id() {
        let recs = vec![trip(5, 6), trip(5, 7), trip(6, 7), trip(9, 9)];
        // counts: 5→2, 6→2, 7→2, 9→2 ; all tied
        assert_eq!(select_stations(&recs, 3).unwrap(), vec![5, 6, 7]);
        let recs = vec![trip(9, 9), trip(9, 1), trip(2, 3)];
        assert_eq!(select_stations(&recs, 2).unwrap(), vec![9, 1]);
        assert!(select_stations(&recs, 10).is_err());
    }

    #[test]
    fn grid_rows_by_latitude_cols_by_longitude() {
        let stations = [
            (1, 40.70, -73.95),
            (2, 40.80, -73.90),
            (3, 40.80, -74.00),
            (4, 40.60, -74.10),
            (5, 40.75, -74.05),
            (6, 40.65, -73.80),
        ];
        let g = assign_grid(&stations, 3, 2).unwrap();
        assert_eq!(g.station_at(0, 0), 3);
        assert_eq!(g.station_at(0, 1), 2);
        assert_eq!(g.station_at(1, 0), 5);
        assert_eq!(g.station_at(1, 1), 1);
        assert_eq!(g.station_at(2, 0), 4);
        assert_eq!(g.station_at(2, 1), 6);
        assert_eq!(g.cell_of(6), Some(5));
        assert_eq!(g.cell_of(99), None);
    }

    #[test]
    fn modal_coordinate_wins() {
        let mut recs = vec![trip(1, 2), trip(1, 2), trip(1, 2)];
        recs[0].start_coord = Some((40.7, -73.9));
        recs[1].start_coord = Some((40.8, -73.9));
        recs[2].start_coord = Some((40.8, -73.9));
        let m = modal_coordinates(&recs);
        assert_eq!(m[&1], (40.8, -73.9));
        assert!(!m.contains_key(&2));
    }
}
