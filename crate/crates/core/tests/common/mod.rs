#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 2014-04-01 00:00:00 UTC.
pub const FIXTURE_T0: i64 = 1_396_310_400;

const STATIONS: [(u32, f64, f64); 6] = [
    (72, 40.767, -73.993),
    (79, 40.719, -74.006),
    (82, 40.711, -74.000),
    (83, 40.683, -73.976),
    (116, 40.741, -74.001),
    (119, 40.696, -73.978),
];

/// What an ingest of the fixture must report, counted while writing it.
#[derive(Debug, Default)]
pub struct Expected {
    pub rows: u64,
    pub accepted: u64,
    pub malformed: u64,
    pub reversed: u64,
    /// Starts at the four busy stations inside the day range.
    pub rentals: u64,
    /// Stops at the four busy stations inside the day range.
    pub returns: u64,
}

fn stamp(epoch: i64) -> String {
    chrono::DateTime::from_timestamp(epoch, 0)
        .expect("valid epoch")
        .format("%Y-%m-%d %H:%M:%S")
        .to_string()
}

/// Writes a Citi Bike style trip CSV covering `days` days from
/// [`FIXTURE_T0`]. Stations 72, 79, 82 and 83 carry almost all traffic; 116
/// and 119 appear in a handful of trips. A few rows are malformed or time
/// reversed and some trips end after the last day.
pub fn write_trip_fixture(path: &Path, days: i64, seed: u64) -> Expected {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let end = FIXTURE_T0 + days * 86_400;
    let busy = [72u32, 79, 82, 83];
    let coord = |id: u32| STATIONS.iter().find(|s| s.0 == id).map(|s| (s.1, s.2)).unwrap();
    let mut exp = Expected::default();
    let mut out = String::from(
        "\"tripduration\",\"starttime\",\"stoptime\",\"start station id\",\"start station name\",\
         \"start station latitude\",\"start station longitude\",\"end station id\",\"end station name\",\
         \"end station latitude\",\"end station longitude\",\"bikeid\",\"usertype\"\n",
    );
    let push = |out: &mut String, start: i64, stop: i64, a: u32, b: u32| {
        let ((la, oa), (lb, ob)) = (coord(a), coord(b));
        let _ = writeln!(
            out,
            "{},\"{}\",\"{}\",{a},\"st {a}\",{la},{oa},{b},\"st {b}\",{lb},{ob},{},\"Subscriber\"",
            stop - start,
            stamp(start),
            stamp(stop),
            14_000 + a
        );
    };
    for hour in 0..days * 24 {
        let base = FIXTURE_T0 + hour * 3600;
        let trips = 2 + (hour % 24) / 4 + rng.random_range(0..4);
        for _ in 0..trips {
            let a = busy[rng.random_range(0..4)];
            let mut b = busy[rng.random_range(0..4)];
            if rng.random_bool(0.02) {
                b = 116;
            }
            let start = base + rng.random_range(0..3600);
            let stop = start + rng.random_range(120..4000);
            push(&mut out, start, stop, a, b);
            exp.rows += 1;
            exp.accepted += 1;
            exp.rentals += 1;
            if b != 116 && stop < end {
                exp.returns += 1;
            }
        }
    }
    // Rare stations, so the top four are unambiguous.
    for k in 0..3 {
        let start = FIXTURE_T0 + 3600 * (5 + k);
        push(&mut out, start, start + 600, 119, 72);
        exp.rows += 1;
        exp.accepted += 1;
        exp.returns += 1;
    }
    // Unparseable timestamp and missing station id.
    out.push_str("300,\"yesterday\",\"2014-04-01 01:00:00\",72,\"a\",40.767,-73.993,79,\"b\",40.719,-74.006,1,\"Customer\"\n");
    out.push_str("300,\"2014-04-01 02:00:00\",\"2014-04-01 02:05:00\",,\"a\",40.767,-73.993,79,\"b\",40.719,-74.006,1,\"Customer\"\n");
    exp.rows += 2;
    exp.malformed += 2;
    // Stop before start.
    out.push_str("300,\"2014-04-01 03:00:00\",\"2014-04-01 02:00:00\",72,\"a\",40.767,-73.993,79,\"b\",40.719,-74.006,1,\"Customer\"\n");
    exp.rows += 1;
    exp.reversed += 1;
    std::fs::write(path, out).expect("write fixture");
    exp
}
