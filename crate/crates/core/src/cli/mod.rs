//! The `stdi` command line.

mod config;
mod manifest;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::bench::{channel_metrics, compute_metrics, run_benchmark, BenchConfig, Method, Suite};
use crate::data::{
    assign_grid, build_demand_series, generate_hour_embeddings, load_hour_embeddings, make_windows, modal_coordinates,
    parse_trip_files, read_series, select_stations, split_dataset, write_series, write_station_map, DemandSeries, Split,
    SECONDS_PER_DAY,
};
use crate::error::{Error, Result};
use crate::model::{build_model_with_embeddings, load_checkpoint, save_checkpoint, Dims, ModelKind, StdiModel};
use crate::tensor::{OpKind, Precision, Scalar, Tensor};
use crate::train::{evaluate, fit, predict_windows, targets_of};
use crate::verify::{run_gradcheck, GradcheckOptions};

pub use config::RunConfig;
pub use manifest::{sha256_file, RunManifest};

use manifest::sibling;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "stdi", version, about = "Bike-share demand forecasting: ingest, train, evaluate, verify, benchmark")]
pub struct Cli {
    /// Root for relative data paths that do not exist relative to the working directory.
    #[arg(long, global = true, env = "STDI_DATA_DIR")]
    pub data_dir: Option<PathBuf>,

    /// More log output on stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Grid raw trip CSVs into a demand series file.
    Ingest(IngestArgs),
    /// Train one model kind and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test period of a series.
    Eval(EvalArgs),
    /// Finite-difference check of every op, layer and model.
    Gradcheck(GradcheckArgs),
    /// Run a benchmark suite and write table, CSV and JSON reports.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub trips: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub stations: usize,
    /// Grid as ROWSxCOLS.
    #[arg(long, default_value = "8x16")]
    pub grid: String,
    /// Interval length in seconds.
    #[arg(long, default_value_t = 3600)]
    pub interval: u32,
    /// First day (YYYY-MM-DD); defaults to the day of the earliest trip start.
    #[arg(long)]
    pub start: Option<String>,
    /// Day after the last (YYYY-MM-DD); defaults to the day after the latest trip start.
    #[arg(long)]
    pub end: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: String,
    /// Pre-trained hour vectors (text format) or `generate`.
    #[arg(long, default_value = "generate")]
    pub embeddings: String,
    /// `key=value` overrides or JSON files, applied in order.
    #[arg(long = "config", num_args = 1..)]
    pub config: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Split overrides (`test_days`, `val_frac`).
    #[arg(long = "config", num_args = 1..)]
    pub config: Vec<String>,
    /// Metrics JSON path; defaults to `<ckpt>.eval.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// `toy` or `full`.
    #[arg(long, default_value = "toy")]
    pub dims: String,
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    /// Model kinds to check end to end (default: all).
    #[arg(long, num_args = 1..)]
    pub kinds: Vec<String>,
    /// Directory for the report and manifest.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// table1, table2, table3 or all.
    #[arg(long, default_value = "table1")]
    pub suite: String,
    /// Explicit method list; replaces the suite's.
    #[arg(long, num_args = 1..)]
    pub methods: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "generate")]
    pub embeddings: String,
    #[arg(long = "config", num_args = 1..)]
    pub config: Vec<String>,
    /// Output directory; defaults to `bench-<suite>-seed<S>` beside the data.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Run methods concurrently.
    #[arg(long)]
    pub parallel: bool,
    /// Record wall-clock runtimes in the CSV (breaks byte-identical reruns).
    #[arg(long)]
    pub timings: bool,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_) => EXIT_USAGE,
        Error::Shape { .. } | Error::Domain(_) | Error::Schema(_) | Error::Format { .. } | Error::Io(_) | Error::Json(_) | Error::Csv(_) => {
            EXIT_DATA
        }
        Error::NonFinite { .. } | Error::Diverged { .. } | Error::Consistency(_) => EXIT_VERIFY,
    }
}

struct Ctx {
    data_dir: Option<PathBuf>,
}

impl Ctx {
    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.data_dir {
            Some(root) if p.is_relative() && !p.exists() => root.join(p),
            _ => p.to_path_buf(),
        }
    }
}

/// Parses `std::env::args`, runs the command and returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    let ctx = Ctx { data_dir: cli.data_dir };
    match cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Bench(a) => bench(&ctx, a),
    }
}

fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Usage(format!("grid '{s}' is not ROWSxCOLS"));
    let (r, c) = s.to_ascii_lowercase().split_once('x').map(|(a, b)| (a.to_string(), b.to_string())).ok_or_else(bad)?;
    let (r, c) = (r.trim().parse::<usize>().map_err(|_| bad())?, c.trim().parse::<usize>().map_err(|_| bad())?);
    if r == 0 || c == 0 {
        return Err(bad());
    }
    Ok((r, c))
}

fn parse_day(s: &str) -> Result<i64> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc().timestamp())
        .map_err(|_| Error::Usage(format!("date '{s}' is not YYYY-MM-DD")))
}

fn ingest(ctx: &Ctx, a: IngestArgs) -> Result<i32> {
    let mut manifest = RunManifest::start("ingest");
    let (rows, cols) = parse_grid(&a.grid)?;
    if a.stations != rows * cols {
        return Err(Error::Usage(format!("{} stations do not fill a {rows}x{cols} grid", a.stations)));
    }
    let paths: Vec<PathBuf> = a.trips.iter().map(|p| ctx.resolve(p)).collect();
    for p in &paths {
        manifest.input(p)?;
    }
    let trips = parse_trip_files(&paths)?;
    log::info!("parsed {} trips ({} malformed, {} reversed)", trips.audit.accepted, trips.audit.malformed, trips.audit.time_reversed);
    if trips.records.is_empty() {
        return Err(Error::Schema("no valid trips in the input".into()));
    }
    let ids = select_stations(&trips.records, a.stations)?;
    let coords = modal_coordinates(&trips.records);
    let mut placed = Vec::with_capacity(ids.len());
    for id in &ids {
        let &(lat, lon) = coords
            .get(id)
            .ok_or_else(|| Error::Schema(format!("station {id} never reports coordinates")))?;
        placed.push((*id, lat, lon));
    }
    let grid = assign_grid(&placed, rows, cols)?;
    let first = trips.records.iter().map(|r| r.start_time).min().expect("non-empty");
    let last = trips.records.iter().map(|r| r.start_time).max().expect("non-empty");
    let t0 = match &a.start {
        Some(s) => parse_day(s)?,
        None => first.div_euclid(SECONDS_PER_DAY) * SECONDS_PER_DAY,
    };
    let t1 = match &a.end {
        Some(s) => parse_day(s)?,
        None => (last.div_euclid(SECONDS_PER_DAY) + 1) * SECONDS_PER_DAY,
    };
    let (series, audit) = build_demand_series(&trips.records, &grid, t0, t1, a.interval)?;
    let out = ctx.resolve(&a.out);
    write_series(&out, &series)?;
    let map = sibling(&out, "stations.json");
    write_station_map(&map, &grid)?;
    manifest.artifact(&out);
    manifest.artifact(&map);
    let totals = series.channel_totals();
    let summary = json!({
        "intervals": series.len(),
        "grid": [rows, cols],
        "start_epoch": series.start_epoch,
        "interval_s": series.interval,
        "rentals": totals[0],
        "returns": totals[1],
        "total_orders": totals[0] + totals[1],
        "trips": trips.audit,
        "events": audit,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    manifest.config = json!({"stations": a.stations, "grid": a.grid, "interval": a.interval, "start": t0, "end": t1});
    manifest.summary = summary;
    manifest.write(&sibling(&out, "manifest.json"))?;
    Ok(EXIT_OK)
}

fn load_embeddings(spec: &str, dim: usize, seed: u64, ctx: &Ctx) -> Result<(Tensor<f32>, String)> {
    if spec == "generate" {
        Ok((generate_hour_embeddings(dim, seed), format!("generated:{seed}")))
    } else {
        let path = ctx.resolve(Path::new(spec));
        let table = load_hour_embeddings(&path, dim)?;
        Ok((table, format!("file:{}", sha256_file(&path)?)))
    }
}

struct Prepared {
    series: DemandSeries,
    split: Split,
    cfg: RunConfig,
}

fn prepare(ctx: &Ctx, data: &Path, overrides: &[String], seed: u64, manifest: &mut RunManifest) -> Result<Prepared> {
    let path = ctx.resolve(data);
    manifest.input(&path)?;
    let series = read_series(&path)?;
    let mut cfg = RunConfig::default().with_overrides(overrides)?;
    cfg.dims.rows = series.rows;
    cfg.dims.cols = series.cols;
    cfg.train.seed = seed;
    cfg.dims.validate()?;
    let windows = make_windows(&series, cfg.dims.seq_len)?;
    let split = split_dataset(windows, series.end_epoch(), cfg.test_days, cfg.val_frac)?;
    log::info!(
        "{} intervals on a {}x{} grid: {} train / {} val / {} test windows",
        series.len(),
        series.rows,
        series.cols,
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    Ok(Prepared { series, split, cfg })
}

fn train_kind<T: Scalar>(
    kind: ModelKind,
    p: &Prepared,
    table: &Tensor<f32>,
    log_path: &Path,
) -> Result<(StdiModel<T>, crate::train::TrainHistory)> {
    let mut model = build_model_with_embeddings::<T>(kind, &p.cfg.dims, p.cfg.train.seed, table)?;
    let mut log = std::io::BufWriter::new(fs::File::create(log_path)?);
    let history = fit(&mut model, &p.split.train, &p.split.val, &p.cfg.train, Some(&mut log))?;
    log.flush()?;
    Ok((model, history))
}

fn save_as_f32<T: Scalar>(model: &StdiModel<T>, path: &Path) -> Result<()> {
    save_checkpoint(model, path)
}

fn train(ctx: &Ctx, a: TrainArgs) -> Result<i32> {
    let mut manifest = RunManifest::start("train");
    manifest.seed = Some(a.seed);
    let kind: ModelKind = a.model.parse()?;
    let p = prepare(ctx, &a.data, &a.config, a.seed, &mut manifest)?;
    let (table, source) = load_embeddings(&a.embeddings, p.cfg.dims.embed_dim, a.seed, ctx)?;
    let out = ctx.resolve(&a.out);
    let log_path = sibling(&out, "log.jsonl");
    let started = Instant::now();
    let (history, val) = match p.cfg.train.precision {
        Precision::Standard => {
            let (mut m, h) = train_kind::<f32>(kind, &p, &table, &log_path)?;
            save_as_f32(&m, &out)?;
            let val = evaluate(&mut m, &p.split.val, p.cfg.train.batch_size)?;
            (h, val)
        }
        Precision::Verification => {
            let (mut m, h) = train_kind::<f64>(kind, &p, &table, &log_path)?;
            save_as_f32(&m, &out)?;
            let val = evaluate(&mut m, &p.split.val, p.cfg.train.batch_size)?;
            (h, val)
        }
    };
    println!(
        "{kind}: best epoch {} of {} ({} steps, {:.1}s)  val RMSE {:.4}  MAE {:.4}",
        history.best_epoch,
        history.epochs.len(),
        history.steps,
        started.elapsed().as_secs_f64(),
        val.rmse,
        val.mae
    );
    manifest.artifact(&out);
    manifest.artifact(&log_path);
    manifest.config = json!({"model": kind.name(), "embeddings": source, "run": p.cfg});
    manifest.summary = json!({"best_epoch": history.best_epoch, "epochs": history.epochs.len(), "steps": history.steps, "val": val, "series_intervals": p.series.len()});
    manifest.write(&sibling(&out, "manifest.json"))?;
    Ok(EXIT_OK)
}

fn eval(ctx: &Ctx, a: EvalArgs) -> Result<i32> {
    let mut manifest = RunManifest::start("eval");
    let ckpt = ctx.resolve(&a.ckpt);
    manifest.input(&ckpt)?;
    let mut model = load_checkpoint::<f32>(&ckpt)?;
    let dims: Dims = model.dims().clone();
    let path = ctx.resolve(&a.data);
    let series = read_series(&path)?;
    if (series.rows, series.cols) != (dims.rows, dims.cols) {
        return Err(Error::shape(
            "eval",
            format!(
                "checkpoint expects a {}x{} grid, series {} is {}x{}",
                dims.rows,
                dims.cols,
                path.display(),
                series.rows,
                series.cols
            ),
        ));
    }
    let mut overrides = a.config.clone();
    overrides.insert(0, format!("seq_len={}", dims.seq_len));
    let p = prepare(ctx, &a.data, &overrides, 0, &mut manifest)?;
    let batch = 64;
    let val = evaluate(&mut model, &p.split.val, batch)?;
    let preds = predict_windows(&mut model, &p.split.test, batch)?;
    let targets = targets_of(&p.split.test);
    let test = compute_metrics(&preds, &targets)?;
    let [rentals, returns] = channel_metrics(&preds, &targets, dims.cells())?;
    let report = json!({
        "model": model.kind().name(),
        "test": test,
        "test_rentals": rentals,
        "test_returns": returns,
        "val": val,
        "test_windows": p.split.test.len(),
    });
    println!(
        "{}: test RMSE {:.4}  MAE {:.4}  (z = {}; rentals {:.4}/{:.4}, returns {:.4}/{:.4})  val RMSE {:.4}",
        model.kind(),
        test.rmse,
        test.mae,
        test.z,
        rentals.rmse,
        rentals.mae,
        returns.rmse,
        returns.mae,
        val.rmse
    );
    println!("{}", serde_json::to_string(&report)?);
    let out = a.out.unwrap_or_else(|| sibling(&ckpt, "eval.json"));
    fs::write(&out, serde_json::to_string_pretty(&report)?)?;
    manifest.artifact(&out);
    manifest.summary = report;
    manifest.write(&sibling(&out, "manifest.json"))?;
    Ok(EXIT_OK)
}

fn gradcheck(a: GradcheckArgs) -> Result<i32> {
    let mut manifest = RunManifest::start("gradcheck");
    let dims = match a.dims.as_str() {
        "toy" => Dims::toy(),
        "full" => Dims::default(),
        other => return Err(Error::Usage(format!("unknown dims preset '{other}'; use toy or full"))),
    };
    let fault = match &a.inject_fault {
        Some(name) => Some(OpKind::from_name(name).ok_or_else(|| Error::Usage(format!("unknown op '{name}'")))?),
        None => None,
    };
    let kinds = if a.kinds.is_empty() {
        ModelKind::ALL.to_vec()
    } else {
        a.kinds.iter().map(|k| k.parse()).collect::<Result<Vec<ModelKind>>>()?
    };
    let opts = GradcheckOptions {
        dims,
        seeds: a.seeds,
        first_seed: 0,
        kinds,
        fault,
    };
    let started = Instant::now();
    let checks = run_gradcheck(&opts)?;
    let width = checks.iter().map(|c| c.component.len()).max().unwrap_or(9).max(9);
    println!("{:<width$}  {:<5}  {:>12}  {:>9}  result", "component", "level", "max rel err", "threshold");
    for c in &checks {
        let level = serde_json::to_value(c.level)?;
        println!(
            "{:<width$}  {:<5}  {:>12.3e}  {:>9.0e}  {}",
            c.component,
            level.as_str().unwrap_or(""),
            c.max_rel_error,
            c.threshold,
            if c.passed() { "PASS" } else { "FAIL" }
        );
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    let elapsed = started.elapsed().as_secs_f64();
    println!("{} components, {failed} failed, {} seeds, {elapsed:.1}s", checks.len(), a.seeds);
    fs::create_dir_all(&a.out_dir)?;
    let report = a.out_dir.join("gradcheck-report.json");
    fs::write(&report, serde_json::to_string_pretty(&checks)?)?;
    manifest.artifact(&report);
    manifest.config = json!({"dims": opts.dims, "seeds": a.seeds, "kinds": opts.kinds, "fault": a.inject_fault});
    manifest.summary = json!({"components": checks.len(), "failed": failed, "elapsed_s": elapsed});
    manifest.write(&a.out_dir.join("gradcheck-report.manifest.json"))?;
    Ok(if failed == 0 { EXIT_OK } else { EXIT_VERIFY })
}

fn bench(ctx: &Ctx, a: BenchArgs) -> Result<i32> {
    let mut manifest = RunManifest::start("bench");
    manifest.seed = Some(a.seed);
    let suite: Suite = a.suite.parse()?;
    let methods = if a.methods.is_empty() {
        suite.methods()
    } else {
        a.methods.iter().map(|m| m.parse()).collect::<Result<Vec<Method>>>()?
    };
    let p = prepare(ctx, &a.data, &a.config, a.seed, &mut manifest)?;
    let (table, source) = load_embeddings(&a.embeddings, p.cfg.dims.embed_dim, a.seed, ctx)?;
    let cfg = BenchConfig {
        dims: p.cfg.dims.clone(),
        train: p.cfg.train.clone(),
        ha_by_weekday: p.cfg.ha_by_weekday,
        embeddings_source: source,
        embeddings: Some(table),
        parallel: a.parallel,
        ..BenchConfig::default()
    };
    let mut report = run_benchmark(&p.split, &methods, &cfg)?;
    report.timings = a.timings;
    let data = ctx.resolve(&a.data);
    let out_dir = a.out_dir.unwrap_or_else(|| {
        data.parent().unwrap_or(Path::new(".")).join(format!("bench-{}-seed{}", suite.name(), a.seed))
    });
    fs::create_dir_all(&out_dir)?;
    let text = report.to_text();
    print!("{text}");
    let files = [
        (out_dir.join("results.txt"), text),
        (out_dir.join("results.csv"), report.to_csv()),
        (out_dir.join("results.json"), report.to_json()),
    ];
    for (path, body) in &files {
        fs::write(path, body)?;
        manifest.artifact(path);
    }
    manifest.config = json!({"suite": suite.name(), "methods": methods.iter().map(|m| m.name()).collect::<Vec<_>>(), "bench": cfg, "run": p.cfg});
    manifest.summary = serde_json::from_str(&report.to_json())?;
    manifest.write(&out_dir.join("manifest.json"))?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_and_day_parsing() {
        assert_eq!(parse_grid("8x16").unwrap(), (8, 16));
        assert_eq!(parse_grid("2X2").unwrap(), (2, 2));
        assert!(parse_grid("8*16").is_err());
        assert!(parse_grid("0x4").is_err());
        assert_eq!(parse_day("2014-04-01").unwrap(), 1_396_310_400);
    }

    #[test]
    fn exit_code_classes() {
        assert_eq!(exit_code(&Error::Usage("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::Schema("x".into())), EXIT_DATA);
        assert_eq!(exit_code(&Error::Diverged { epoch: 1, batch: 1, loss: f64::NAN }), EXIT_VERIFY);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
