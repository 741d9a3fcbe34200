//! Trip ingestion, demand gridding, supervised windows and hour embeddings.

mod embeddings;
mod grid;
mod series;
mod trips;
mod windows;

pub use embeddings::{generate_hour_embeddings, load_hour_embeddings, write_hour_embeddings};
pub use grid::{assign_grid, modal_coordinates, select_stations, GridCell, StationGrid};
pub use series::{
    build_demand_series, read_series, read_station_map, write_series, write_station_map, DemandSeries,
    SeriesAudit, SERIES_MAGIC,
};
pub use trips::{parse_timestamp, parse_trip_files, parse_trips, TripAudit, TripRecord, Trips};
pub use windows::{make_windows, split_dataset, stack_batch, MinMax, SampleWindow, Split};

pub const SECONDS_PER_HOUR: i64 = 3600;
pub const SECONDS_PER_DAY: i64 = 86_400;

/// Hour of day (0–23) of an epoch timestamp, read on the naive clock the
/// trip files use.
pub fn hour_of_day(epoch: i64) -> usize {
    epoch.div_euclid(SECONDS_PER_HOUR).rem_euclid(24) as usize
}
