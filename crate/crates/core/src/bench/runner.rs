use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::baselines::{HistoricalAverage, LinearBaseline, LinearKind, Mlp, LAMBDA_GRID, MLP_HIDDEN};
use super::metrics::{channel_metrics, compute_metrics, MetricPair};
use crate::data::{SampleWindow, Split};
use crate::error::{Error, Result};
use crate::model::{build_model, build_model_with_embeddings, Dims, Forecaster, ModelKind};
use crate::tensor::{Precision, Scalar, Tensor};
use crate::train::{fit, predict_windows, targets_of, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    HistoricalAverage,
    Lasso,
    Ridge,
    Mlp,
    Model(ModelKind),
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::HistoricalAverage => "HA",
            Method::Lasso => "Lasso",
            Method::Ridge => "Ridge",
            Method::Mlp => "MLP",
            Method::Model(k) => k.name(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::HistoricalAverage => "Historical average",
            Method::Lasso => "Lasso regression",
            Method::Ridge => "Ridge regression",
            Method::Mlp => "Multiple layer perceptron",
            Method::Model(k) => k.label(),
        }
    }

    /// Published `(RMSE, MAE)` on the 2014 Citi Bike test period.
    pub fn reference(self) -> Option<(f64, f64)> {
        Some(match self {
            Method::HistoricalAverage => (10.7308, 5.8374),
            Method::Lasso => (8.4947, 3.6799),
            Method::Ridge => (8.4699, 3.6984),
            Method::Mlp => (7.1888, 3.3388),
            Method::Model(k) => match k {
                ModelKind::Stdi => (4.6339, 2.1946),
                ModelKind::SpatialFC => (5.6558, 2.6218),
                ModelKind::TemporalFC => (5.2614, 2.3914),
                ModelKind::SpatialTemporalFC => (5.0832, 2.3476),
                ModelKind::SpatialDI => (4.9077, 2.3457),
                ModelKind::TemporalDI => (4.7788, 2.2582),
                ModelKind::StdiFusion => (4.8149, 2.2995),
                ModelKind::UnifiedSpatial => (6.1493, 2.9533),
                ModelKind::StdiEmbedding => (4.6154, 2.1783),
            },
        })
    }

    pub fn all() -> Vec<Method> {
        let mut v = vec![Method::HistoricalAverage, Method::Lasso, Method::Ridge, Method::Mlp];
        v.extend(ModelKind::ALL.map(Method::Model));
        v
    }

    pub fn valid_names() -> String {
        Self::all().iter().map(|m| m.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = |x: &str| x.replace(['-', '_', ' '], "").to_ascii_lowercase();
        Self::all()
            .into_iter()
            .find(|m| norm(m.name()) == norm(s))
            .ok_or_else(|| Error::Usage(format!("unknown method '{s}'; valid methods: {}", Self::valid_names())))
    }
}

/// Results cited for context only; these systems are not reimplemented.
const CITED: [(&str, f64, f64); 4] = [
    ("ARIMA", 10.4773, 4.7005),
    ("ST-ResNet", 5.1249, 2.7206),
    ("DMVST-Net", 5.0595, 2.3423),
    ("DeepSTN+", 4.9060, 2.4269),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Table1,
    Table2,
    Table3,
    All,
}

impl Suite {
    pub fn methods(self) -> Vec<Method> {
        use ModelKind::*;
        let m = Method::Model;
        match self {
            Suite::Table1 => vec![Method::HistoricalAverage, Method::Lasso, Method::Ridge, Method::Mlp, m(Stdi)],
            Suite::Table2 => [SpatialFC, TemporalFC, SpatialTemporalFC, SpatialDI, TemporalDI, Stdi].map(m).to_vec(),
            Suite::Table3 => [UnifiedSpatial, SpatialFC, StdiFusion, StdiEmbedding, Stdi].map(m).to_vec(),
            Suite::All => {
                let mut out: Vec<Method> = Vec::new();
                for s in [Suite::Table1, Suite::Table2, Suite::Table3] {
                    for x in s.methods() {
                        if !out.contains(&x) {
                            out.push(x);
                        }
                    }
                }
                out
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Suite::Table1 => "table1",
            Suite::Table2 => "table2",
            Suite::Table3 => "table3",
            Suite::All => "all",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Suite::Table1, Suite::Table2, Suite::Table3, Suite::All]
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Usage(format!("unknown suite '{s}'; valid suites: table1, table2, table3, all")))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchConfig {
    pub dims: Dims,
    pub train: TrainConfig,
    pub lambda_grid: Vec<f64>,
    pub ha_by_weekday: bool,
    pub mlp_hidden: Vec<usize>,
    /// Where the hour embeddings came from; part of the config digest.
    pub embeddings_source: String,
    #[serde(skip)]
    pub embeddings: Option<Tensor<f32>>,
    /// Run methods concurrently, each in its own context.
    #[serde(skip)]
    pub parallel: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            dims: Dims::default(),
            train: TrainConfig::default(),
            lambda_grid: LAMBDA_GRID.to_vec(),
            ha_by_weekday: false,
            mlp_hidden: MLP_HIDDEN.to_vec(),
            embeddings_source: "generated".into(),
            embeddings: None,
            parallel: false,
        }
    }
}

impl BenchConfig {
    /// Short SHA-256 prefix over the method name and every result-affecting setting.
    pub fn digest(&self, method: Method) -> String {
        let json = serde_json::to_string(&(method.name(), self)).expect("config serialises");
        let hash = Sha256::digest(json.as_bytes());
        format!("{hash:x}")[..16].to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub label: String,
    #[serde(flatten)]
    pub metrics: MetricPair,
    pub rentals: MetricPair,
    pub returns: MetricPair,
    pub seed: u64,
    pub config_digest: String,
    pub runtime_s: f64,
    pub reference: Option<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub test_windows: usize,
    /// Whether the CSV carries wall-clock runtimes (which break byte equality).
    #[serde(skip)]
    pub timings: bool,
}

impl BenchReport {
    pub fn row(&self, name: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,rmse,mae,z,seed,config_digest,runtime_s\n");
        for r in &self.rows {
            let runtime = if self.timings { format!("{:.3}", r.runtime_s) } else { String::new() };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.method, r.metrics.rmse, r.metrics.mae, r.metrics.z, r.seed, r.config_digest, runtime
            );
        }
        out
    }

    /// Runtimes are nulled unless timings were requested, as in the CSV.
    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serialises");
        if !self.timings {
            for row in v["rows"].as_array_mut().into_iter().flatten() {
                row["runtime_s"] = serde_json::Value::Null;
            }
        }
        serde_json::to_string_pretty(&v).expect("report serialises")
    }

    /// Aligned table with the published numbers beside ours.
    pub fn to_text(&self) -> String {
        let header = ["Method", "RMSE", "MAE", "Published RMSE", "Published MAE", "Runtime (s)"];
        let fmt_ref = |r: Option<(f64, f64)>, i: usize| r.map_or("-".into(), |(a, b)| format!("{:.4}", [a, b][i]));
        let mut lines: Vec<[String; 6]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.label.clone(),
                    format!("{:.4}", r.metrics.rmse),
                    format!("{:.4}", r.metrics.mae),
                    fmt_ref(r.reference, 0),
                    fmt_ref(r.reference, 1),
                    format!("{:.1}", r.runtime_s),
                ]
            })
            .collect();
        if self.rows.iter().any(|r| r.method == "HA") {
            for (name, rmse, mae) in CITED {
                lines.push([
                    format!("{name} (cited)"),
                    "-".into(),
                    "-".into(),
                    format!("{rmse:.4}"),
                    format!("{mae:.4}"),
                    "-".into(),
                ]);
            }
        }
        let mut width = header.map(str::len);
        for l in &lines {
            for (w, c) in width.iter_mut().zip(l) {
                *w = (*w).max(c.chars().count());
            }
        }
        let render = |cells: &[String]| {
            let mut s = String::new();
            for (i, (c, w)) in cells.iter().zip(width).enumerate() {
                if i == 0 {
                    let _ = write!(s, "{c:<w$}");
                } else {
                    let _ = write!(s, "  {c:>w$}");
                }
            }
            s.trim_end().to_string() + "\n"
        };
        let n = if self.timings { header.len() } else { header.len() - 1 };
        let mut out = render(&header.map(String::from)[..n]);
        out.push_str(&"-".repeat(width[..n].iter().sum::<usize>() + 2 * (n - 1)));
        out.push('\n');
        for l in &lines {
            out.push_str(&render(&l[..n]));
        }
        let _ = writeln!(out, "z = {} predicted values over {} test windows", self.rows.first().map_or(0, |r| r.metrics.z), self.test_windows);
        out
    }
}

fn check_windows(split: &Split, dims: &Dims) -> Result<()> {
    if split.test.is_empty() {
        return Err(Error::Usage("the test set is empty".into()));
    }
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::Usage("training and validation sets must be non-empty".into()));
    }
    let frame = dims.outputs();
    let ok = |w: &SampleWindow| w.target.len() == frame && w.inputs.len() == dims.seq_len * frame;
    if let Some(w) = split.train.iter().chain(&split.val).chain(&split.test).find(|w| !ok(w)) {
        return Err(Error::shape(
            "run_benchmark",
            format!(
                "window with {} inputs / {} targets does not fit L={} on a {}x{} grid",
                w.inputs.len(),
                w.target.len(),
                dims.seq_len,
                dims.rows,
                dims.cols
            ),
        ));
    }
    Ok(())
}

fn train_network<T: Scalar>(method: Method, split: &Split, cfg: &BenchConfig) -> Result<Vec<f64>> {
    let (d, seed) = (&cfg.dims, cfg.train.seed);
    let mut model: Box<dyn Forecaster<T> + Send> = match method {
        Method::Mlp => Box::new(Mlp::<T>::new(d.seq_len, d.rows, d.cols, &cfg.mlp_hidden, seed)),
        Method::Model(kind) => Box::new(match &cfg.embeddings {
            Some(table) => build_model_with_embeddings::<T>(kind, d, seed, table)?,
            None => build_model::<T>(kind, d, seed)?,
        }),
        _ => unreachable!("not a network"),
    };
    let history = fit(model.as_mut(), &split.train, &split.val, &cfg.train, None)?;
    log::info!(
        "{method}: best epoch {} of {} ({} steps)",
        history.best_epoch,
        history.epochs.len(),
        history.steps
    );
    predict_windows(model.as_mut(), &split.test, cfg.train.batch_size)
}

fn run_method(method: Method, split: &Split, cfg: &BenchConfig) -> Result<BenchRow> {
    log::info!("running {method}");
    let started = Instant::now();
    let preds = match method {
        Method::HistoricalAverage => {
            let history: Vec<SampleWindow> = split.train.iter().chain(&split.val).cloned().collect();
            HistoricalAverage::from_windows(&history, cfg.ha_by_weekday)?.predict(&split.test)
        }
        Method::Ridge | Method::Lasso => {
            let kind = if method == Method::Ridge { LinearKind::Ridge } else { LinearKind::Lasso };
            LinearBaseline::select(&split.train, &split.val, kind, &cfg.lambda_grid)?.predict(&split.test)
        }
        Method::Mlp | Method::Model(_) => match cfg.train.precision {
            Precision::Standard => train_network::<f32>(method, split, cfg)?,
            Precision::Verification => train_network::<f64>(method, split, cfg)?,
        },
    };
    let targets = targets_of(&split.test);
    let [rentals, returns] = channel_metrics(&preds, &targets, cfg.dims.cells())?;
    Ok(BenchRow {
        method: method.name().to_string(),
        label: method.label().to_string(),
        metrics: compute_metrics(&preds, &targets)?,
        rentals,
        returns,
        seed: cfg.train.seed,
        config_digest: cfg.digest(method),
        runtime_s: started.elapsed().as_secs_f64(),
        reference: method.reference(),
    })
}

/// Trains and evaluates every method on the same split. Duplicated methods
/// run once.
pub fn run_benchmark(split: &Split, methods: &[Method], cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.dims.validate()?;
    cfg.train.validate()?;
    check_windows(split, &cfg.dims)?;
    let mut unique: Vec<Method> = Vec::new();
    for &m in methods {
        if !unique.contains(&m) {
            unique.push(m);
        }
    }
    if unique.is_empty() {
        return Err(Error::Usage(format!("no methods requested; valid methods: {}", Method::valid_names())));
    }
    let rows = if cfg.parallel {
        unique.par_iter().map(|&m| run_method(m, split, cfg)).collect::<Result<Vec<_>>>()?
    } else {
        unique.iter().map(|&m| run_method(m, split, cfg)).collect::<Result<Vec<_>>>()?
    };
    Ok(BenchReport {
        rows,
        test_windows: split.test.len(),
        timings: false,
    })
}
