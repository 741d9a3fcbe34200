//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any gated criterion fails.
//!
//! `cargo test --test acceptance -- c3 c4` runs a subset. The real-data
//! checks need `STDI_CITIBIKE_2014` pointing at a directory of the April to
//! September 2014 trip CSVs; the full-scale benchmark additionally needs
//! `STDI_FULL_BENCH=1` and takes hours.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stdi_core::bench::{compute_metrics, run_benchmark, BenchConfig, LinearBaseline, LinearKind, Method};
use stdi_core::data::{
    assign_grid, build_demand_series, make_windows, modal_coordinates, parse_trip_files, select_stations, split_dataset,
    SampleWindow,
};
use stdi_core::model::{build_model, Dims, Forecaster, ModelKind};
use stdi_core::nn::{Forward, Lstm, Mode, ParamStore};
use stdi_core::tensor::{conv2d_naive, Tape, Tensor};
use stdi_core::train::{fit, predict_windows, targets_of, TrainConfig};
use stdi_core::verify::{run_gradcheck, GradcheckOptions, Level, GRAPH_TOLERANCE, OP_TOLERANCE};

enum Outcome {
    Pass(String),
    Fail(String),
    /// Not gated: reported numbers or a precondition that is absent.
    Report(String),
}

type Check = fn() -> Outcome;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

// 1. Gradient correctness.
fn c1_gradcheck() -> Outcome {
    let start = Instant::now();
    let checks = match run_gradcheck(&GradcheckOptions::default()) {
        Ok(c) => c,
        Err(e) => return Outcome::Fail(format!("gradcheck errored: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let worst = |level: Level| {
        checks
            .iter()
            .filter(|c| c.level == level)
            .map(|c| c.max_rel_error)
            .fold(0.0, f64::max)
    };
    let (op, layer, model) = (worst(Level::Op), worst(Level::Layer), worst(Level::Model));
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.component.as_str()).collect();
    let stdi_seeds = checks
        .iter()
        .find(|c| c.component == "STDI")
        .map_or(0, |c| c.seeds);
    verdict(
        failed.is_empty() && op < OP_TOLERANCE && model < GRAPH_TOLERANCE && stdi_seeds >= 20 && secs < 300.0,
        format!(
            "{} components, {stdi_seeds} seeds: max rel err op {op:.2e} (< 1e-5), layer {layer:.2e}, model {model:.2e} (< 1e-4), {secs:.0}s (< 300s){}",
            checks.len(),
            if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
        ),
    )
}

// 2. Factorization oracle.
#[allow(clippy::needless_range_loop)]
fn c2_factorization() -> Outcome {
    let dims = Dims::toy();
    let (a, d, k, h) = (dims.rank, dims.hidden, dims.outputs(), dims.embed_dim);
    let leaky = |x: f64| if x >= 0.0 { x } else { dims.leaky_slope * x };
    let (mut worst, mut max_rank) = (0.0f64, 0usize);
    for draw in 0..100u64 {
        let mut model = build_model::<f64>(ModelKind::Stdi, &dims, 1000 + draw).expect("model builds");
        let net = model.interval_net().expect("STDI has an interval head").clone();
        let store = model.store();
        let table = store.get(model.embedding_table().expect("table")).clone();
        let wl = store.get(net.lin_w.weight).clone();
        let bl = store.get(net.lin_w.bias.expect("bias")).clone();
        let o = store.get(net.o).clone();
        let op = store.get(net.o_prime).clone();
        let hour = (draw as usize * 7) % 24;
        let v = &table.data()[hour * h..(hour + 1) * h];
        let w: Vec<f64> = (0..a)
            .map(|r| leaky(bl.data()[r] + (0..h).map(|c| wl.data()[r * h + c] * v[c]).sum::<f64>()))
            .collect();
        let (generated, _) = model.interval_params(hour).expect("params");
        for p in 0..k {
            for q in 0..d {
                let mut naive = 0.0;
                for r in 0..a {
                    naive += op.data()[p * a + r] * w[r] * o.data()[r * d + q];
                }
                worst = worst.max((generated.data()[p * d + q] - naive).abs());
            }
        }
        let sv = nalgebra::DMatrix::from_row_slice(k, d, generated.data()).singular_values();
        let top = sv.max();
        max_rank = max_rank.max(sv.iter().filter(|&&s| s > 1e-9 * top).count());
    }
    verdict(
        worst <= 1e-12 && max_rank <= a,
        format!("100 draws: max |W_FC - triple loop| {worst:.1e} (<= 1e-12), max rank {max_rank} (<= a = {a})"),
    )
}

/// Windows whose target is the last input frame scaled per output by one of
/// four gain patterns, chosen by `hour / 6`.
fn regime_windows(n: usize, dims: &Dims, offset: usize, rng: &mut ChaCha8Rng) -> Vec<SampleWindow> {
    const GAINS: [f32; 4] = [0.2, 0.6, 1.4, 1.8];
    let k = dims.outputs();
    (0..n)
        .map(|i| {
            let t = offset + i;
            let hour = rng.random_range(0..24);
            let inputs: Vec<f32> = (0..dims.seq_len * k).map(|_| rng.random_range(0.0..10.0)).collect();
            let last = &inputs[(dims.seq_len - 1) * k..];
            let regime = hour / 6;
            let target = last.iter().enumerate().map(|(o, x)| GAINS[(o + regime) % 4] * x).collect();
            SampleWindow {
                target_index: t,
                target_time: t as i64 * 3600,
                hour,
                inputs,
                target,
            }
        })
        .collect()
}

// 3. Hour conditioning.
fn c3_hour_conditioning() -> Outcome {
    let dims = Dims {
        rows: 2,
        cols: 2,
        seq_len: 3,
        channels: 4,
        hidden: 16,
        rank: 8,
        embed_dim: 50,
        fusion_dim: 4,
        ..Dims::default()
    };
    let cfg = TrainConfig {
        min_max_scale: true,
        ..TrainConfig::default()
    };
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed + seed);
        let train = regime_windows(2000, &dims, 0, &mut rng);
        let val = regime_windows(300, &dims, 2000, &mut rng);
        let test = regime_windows(500, &dims, 2300, &mut rng);
        let mut rmse = [0.0; 2];
        for (slot, kind) in [ModelKind::Stdi, ModelKind::SpatialTemporalFC].into_iter().enumerate() {
            let start = Instant::now();
            let cfg = TrainConfig { seed, ..cfg.clone() };
            let mut model = build_model::<f32>(kind, &dims, seed).expect("model builds");
            if let Err(e) = fit(&mut model, &train, &val, &cfg, None) {
                return Outcome::Fail(format!("{kind} seed {seed}: {e}"));
            }
            let preds = predict_windows(&mut model, &test, 256).expect("predict");
            rmse[slot] = compute_metrics(&preds, &targets_of(&test)).expect("metrics").rmse;
            let secs = start.elapsed().as_secs_f64();
            ok &= secs < 600.0;
            if secs >= 600.0 {
                lines.push(format!("{kind} seed {seed} took {secs:.0}s"));
            }
        }
        let gain = 1.0 - rmse[0] / rmse[1];
        ok &= gain >= 0.15;
        lines.push(format!("seed {seed}: STDI {:.3} vs static {:.3} ({:+.0}%)", rmse[0], rmse[1], -100.0 * gain));
    }
    verdict(ok, format!("test RMSE, need >= 15% lower: {}", lines.join("; ")))
}

// 4. Overfit smoke test.
fn c4_overfit() -> Outcome {
    let dims = Dims::toy();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let k = dims.outputs();
    // A smooth daily cycle plus noise, already in unit range.
    let frame = |t: usize, rng: &mut ChaCha8Rng| -> Vec<f32> {
        (0..k)
            .map(|c| {
                let phase = (t as f32 + c as f32) * std::f32::consts::TAU / 24.0;
                0.5 + 0.3 * phase.sin() + rng.random_range(-0.1..0.1)
            })
            .collect()
    };
    let frames: Vec<Vec<f32>> = (0..20 + dims.seq_len).map(|t| frame(t, &mut rng)).collect();
    let windows: Vec<SampleWindow> = (0..20)
        .map(|i| {
            let t = i + dims.seq_len;
            SampleWindow {
                target_index: t,
                target_time: t as i64 * 3600,
                hour: t % 24,
                inputs: frames[i..t].concat(),
                target: frames[t].clone(),
            }
        })
        .collect();
    let cfg = TrainConfig {
        batch_size: 20,
        epochs: 2000,
        patience: 2000,
        max_steps: Some(2000),
        ..TrainConfig::default()
    };
    let mut model = build_model::<f32>(ModelKind::Stdi, &dims, 4).expect("model builds");
    let history = match fit(&mut model, &windows, &windows, &cfg, None) {
        Ok(h) => h,
        Err(e) => return Outcome::Fail(format!("training failed: {e}")),
    };
    let best = history.epochs.iter().map(|e| e.train_loss).fold(f64::INFINITY, f64::min);
    let reached = history.epochs.iter().position(|e| e.train_loss < 0.01).map(|i| i + 1);
    let preds = predict_windows(&mut model, &windows, 20).expect("predict");
    let eval_mse = compute_metrics(&preds, &targets_of(&windows)).expect("metrics").rmse.powi(2);
    verdict(
        reached.is_some() && history.steps <= 2000,
        format!(
            "20 windows, {} steps: best train MSE {best:.2e}, below 0.01 at step {}, eval-mode MSE {eval_mse:.2e}",
            history.steps,
            reached.map_or("-".to_string(), |s| s.to_string())
        ),
    )
}

fn lstm_reference(store: &ParamStore<f64>, lstm: &Lstm, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (lstm.input, lstm.hidden);
    let (w_ih, b_ih) = (store.get(lstm.w_ih).data(), store.get(lstm.b_ih).data());
    let (w_hh, b_hh) = (store.get(lstm.w_hh).data(), store.get(lstm.b_hh).data());
    let gate = |row: usize| {
        let mut s = b_ih[row] + b_hh[row];
        for j in 0..n {
            s += w_ih[row * n + j] * x[j];
        }
        for j in 0..d {
            s += w_hh[row * d + j] * h[j];
        }
        s
    };
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut h_next = vec![0.0; d];
    let mut c_next = vec![0.0; d];
    for u in 0..d {
        let (i, f, g, o) = (sig(gate(u)), sig(gate(d + u)), gate(2 * d + u).tanh(), sig(gate(3 * d + u)));
        c_next[u] = f * c[u] + i * g;
        h_next[u] = o * c_next[u].tanh();
    }
    (h_next, c_next)
}

// 5. Oracle equivalences.
fn c5_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut conv_exact = true;
    for _ in 0..20 {
        let (n, ci, co, hh, ww) = (2, rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..6), rng.random_range(1..6));
        let x = Tensor::<f64>::from_fn(&[n, ci, hh, ww], |_| rng.random_range(-2.0..2.0));
        let k = Tensor::<f64>::from_fn(&[co, ci, 3, 3], |_| rng.random_range(-1.0..1.0));
        let b = Tensor::<f64>::from_fn(&[co], |_| rng.random_range(-1.0..1.0));
        let mut tape = Tape::new();
        let (xv, kv, bv) = (tape.leaf(x.clone(), false), tape.leaf(k.clone(), false), tape.leaf(b.clone(), false));
        let y = tape.conv2d(xv, kv, bv).expect("conv");
        let y = tape.value(y);
        let per = co * hh * ww;
        for s in 0..n {
            let xs = Tensor::new(&[ci, hh, ww], x.data()[s * ci * hh * ww..(s + 1) * ci * hh * ww].to_vec()).unwrap();
            let naive = conv2d_naive(&xs, &k, &b).expect("naive conv");
            conv_exact &= naive.data() == &y.data()[s * per..(s + 1) * per];
        }
    }

    let mut lstm_err = 0.0f64;
    for seed in 0..20 {
        let mut prng = ChaCha8Rng::seed_from_u64(seed);
        let (batch, n, d) = (3, 5, 4);
        let mut store = ParamStore::<f64>::new();
        let lstm = Lstm::new(&mut store, "lstm", n, d, &mut prng);
        let x = Tensor::<f64>::from_fn(&[batch, n], |_| prng.random_range(-2.0..2.0));
        let h = Tensor::<f64>::from_fn(&[batch, d], |_| prng.random_range(-1.0..1.0));
        let c = Tensor::<f64>::from_fn(&[batch, d], |_| prng.random_range(-1.0..1.0));
        let reference = store.clone();
        let mut f = Forward::new(&mut store, Mode::Eval);
        let (xv, hv, cv) = (f.tape.leaf(x.clone(), false), f.tape.leaf(h.clone(), false), f.tape.leaf(c.clone(), false));
        let (hn, cn) = lstm.step(&mut f, xv, hv, cv).expect("lstm step");
        let (hn, cn) = (f.tape.value(hn).clone(), f.tape.value(cn).clone());
        for s in 0..batch {
            let (rh, rc) = lstm_reference(
                &reference,
                &lstm,
                &x.data()[s * n..(s + 1) * n],
                &h.data()[s * d..(s + 1) * d],
                &c.data()[s * d..(s + 1) * d],
            );
            for u in 0..d {
                lstm_err = lstm_err.max((hn.data()[s * d + u] - rh[u]).abs());
                lstm_err = lstm_err.max((cn.data()[s * d + u] - rc[u]).abs());
            }
        }
    }

    let mut ridge_err = 0.0f64;
    for seed in 0..10u64 {
        let mut prng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (n, p, k) = (60, 8, 3);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| prng.random_range(-3.0..3.0)).collect()).collect();
        let y: Vec<Vec<f64>> = x
            .iter()
            .map(|r| (0..k).map(|o| r.iter().enumerate().map(|(j, v)| v * ((j + o) as f64 - 4.0)).sum::<f64>() + prng.random_range(-1.0..1.0)).collect())
            .collect();
        for lambda in [0.01, 0.1, 1.0, 10.0] {
            let closed = LinearBaseline::fit(&x, &y, LinearKind::Ridge, lambda).expect("ridge");
            let cd = LinearBaseline::fit_ridge_cd(&x, &y, lambda, 1e-12).expect("ridge cd");
            for (a, b) in closed.coef.iter().flatten().zip(cd.iter().flatten()) {
                ridge_err = ridge_err.max((a - b).abs());
            }
        }
    }
    verdict(
        conv_exact && lstm_err <= 1e-12 && ridge_err <= 1e-6,
        format!(
            "conv2d vs loops bit-exact: {conv_exact}; lstm_step vs reference {lstm_err:.1e} (<= 1e-12); ridge closed form vs CD {ridge_err:.1e} (<= 1e-6)"
        ),
    )
}

// 6. Ingestion conservation.
fn c6_ingest_fixture() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("trips.csv");
    let exp = common::write_trip_fixture(&path, 3, 6);
    let trips = match parse_trip_files(&[&path]) {
        Ok(t) => t,
        Err(e) => return Outcome::Fail(format!("fixture failed to parse: {e}")),
    };
    let ids = select_stations(&trips.records, 4).expect("stations");
    let coords = modal_coordinates(&trips.records);
    let placed: Vec<(u32, f64, f64)> = ids.iter().map(|id| (*id, coords[id].0, coords[id].1)).collect();
    let grid = assign_grid(&placed, 2, 2).expect("grid");
    let t1 = common::FIXTURE_T0 + 3 * 86_400;
    let (series, audit) = build_demand_series(&trips.records, &grid, common::FIXTURE_T0, t1, 3600).expect("series");
    let totals = series.channel_totals();
    let a = &trips.audit;
    let ok = a.rows == exp.rows
        && a.accepted == exp.accepted
        && a.malformed == exp.malformed
        && a.time_reversed == exp.reversed
        && totals[0] == exp.rentals as f64
        && totals[1] == exp.returns as f64
        && audit.rentals_counted == exp.rentals
        && audit.returns_counted == exp.returns
        && series.len() == 72;
    verdict(
        ok,
        format!(
            "fixture: rentals {} / expected {}, returns {} / expected {}, accepted {} of {} rows ({} malformed, {} reversed), T = {}",
            totals[0], exp.rentals, totals[1], exp.returns, a.accepted, a.rows, a.malformed, a.time_reversed, series.len()
        ),
    )
}

fn real_trip_files() -> Option<Vec<PathBuf>> {
    let dir = std::env::var_os("STDI_CITIBIKE_2014")?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    (!files.is_empty()).then_some(files)
}

const APR_1_2014: i64 = 1_396_310_400;
const OCT_1_2014: i64 = 1_412_121_600;
const PUBLISHED_ORDERS: f64 = 5_359_944.0;

fn c6_ingest_real() -> Outcome {
    let Some(files) = real_trip_files() else {
        return Outcome::Report("skipped: set STDI_CITIBIKE_2014 to the 2014 trip CSV directory".into());
    };
    let trips = match parse_trip_files(&files) {
        Ok(t) => t,
        Err(e) => return Outcome::Fail(format!("2014 corpus failed to parse: {e}")),
    };
    let in_range = trips
        .records
        .iter()
        .filter(|r| (APR_1_2014..OCT_1_2014).contains(&r.start_time))
        .count() as f64;
    let ids = select_stations(&trips.records, 128).expect("stations");
    let coords = modal_coordinates(&trips.records);
    let placed: Vec<(u32, f64, f64)> = ids.iter().filter_map(|id| coords.get(id).map(|c| (*id, c.0, c.1))).collect();
    let grid = assign_grid(&placed, 8, 16).expect("grid");
    let (series, _) = build_demand_series(&trips.records, &grid, APR_1_2014, OCT_1_2014, 3600).expect("series");
    let rel = (in_range - PUBLISHED_ORDERS).abs() / PUBLISHED_ORDERS;
    verdict(
        series.len() == 4392 && rel <= 0.005,
        format!(
            "2014 corpus: T = {} (published 4392), orders {in_range} vs published 5,359,944 ({:.2}% off, <= 0.5%)",
            series.len(),
            100.0 * rel
        ),
    )
}

// 7. Real-data benchmark, reported only.
fn c7_real_benchmark() -> Outcome {
    let Some(files) = real_trip_files() else {
        return Outcome::Report("skipped: needs STDI_CITIBIKE_2014".into());
    };
    if std::env::var("STDI_FULL_BENCH").as_deref() != Ok("1") {
        return Outcome::Report("skipped: set STDI_FULL_BENCH=1 to run the full-scale benchmark (hours)".into());
    }
    let trips = parse_trip_files(&files).expect("corpus parses");
    let ids = select_stations(&trips.records, 128).expect("stations");
    let coords = modal_coordinates(&trips.records);
    let placed: Vec<(u32, f64, f64)> = ids.iter().filter_map(|id| coords.get(id).map(|c| (*id, c.0, c.1))).collect();
    let grid = assign_grid(&placed, 8, 16).expect("grid");
    let (series, _) = build_demand_series(&trips.records, &grid, APR_1_2014, OCT_1_2014, 3600).expect("series");
    let dims = Dims::default();
    let windows = make_windows(&series, dims.seq_len).expect("windows");
    let split = split_dataset(windows, series.end_epoch(), 10, 0.1).expect("split");
    let cfg = BenchConfig {
        dims,
        ..BenchConfig::default()
    };
    let methods = [Method::HistoricalAverage, Method::Mlp, Method::Model(ModelKind::Stdi)];
    let report = match run_benchmark(&split, &methods, &cfg) {
        Ok(r) => r,
        Err(e) => return Outcome::Report(format!("benchmark failed: {e}")),
    };
    print!("{}", report.to_text());
    let get = |m: Method| report.row(m.name()).expect("row present").metrics;
    let (ha, mlp, stdi) = (get(methods[0]), get(methods[1]), get(methods[2]));
    let beats = stdi.rmse < ha.rmse && stdi.rmse < mlp.rmse && stdi.mae < ha.mae && stdi.mae < mlp.mae;
    Outcome::Report(format!(
        "STDI {:.4}/{:.4} (published 4.6339/2.1946), MLP {:.4}/{:.4} (7.1888/3.3388), HA {:.4}/{:.4} (10.7308/5.8374); ordering holds: {beats}",
        stdi.rmse, stdi.mae, mlp.rmse, mlp.mae, ha.rmse, ha.mae
    ))
}

fn stdi(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_stdi"))
        .args(args)
        .current_dir(cwd)
        .env_remove("STDI_DATA_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("stdi runs")
}

// 8. Determinism.
fn c8_determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let root = dir.path();
    common::write_trip_fixture(&root.join("trips.csv"), 14, 8);
    let mut notes = Vec::new();
    let mut ok = true;
    let mut same = |label: &str, a: &Path, b: &Path| {
        let equal = matches!((std::fs::read(a), std::fs::read(b)), (Ok(x), Ok(y)) if x == y);
        ok &= equal;
        notes.push(format!("{label} {}", if equal { "identical" } else { "DIFFER" }));
    };
    for out in ["a.stdm", "b.stdm"] {
        let o = stdi(&["ingest", "--trips", "trips.csv", "--out", out, "--stations", "4", "--grid", "2x2"], root);
        assert!(o.status.success(), "ingest failed: {}", String::from_utf8_lossy(&o.stderr));
    }
    same("ingest series", &root.join("a.stdm"), &root.join("b.stdm"));
    same("station map", &root.join("a.stations.json"), &root.join("b.stations.json"));

    let toy = [
        "seq_len=3", "channels=4", "hidden=8", "rank=4", "embed_dim=6", "fusion_dim=4", "epochs=3", "patience=3", "test_days=2",
    ];
    let mut runs = Vec::new();
    for (i, parallel) in [false, false, true].into_iter().enumerate() {
        let out = format!("bench{i}");
        let mut args = vec!["bench", "--data", "a.stdm", "--suite", "all", "--seed", "3", "--out-dir", &out, "--config"];
        args.extend(toy);
        if parallel {
            args.push("--parallel");
        }
        let o = stdi(&args, root);
        if !o.status.success() {
            return Outcome::Fail(format!("bench failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
        runs.push(root.join(out));
    }
    same("bench CSV (repeat)", &runs[0].join("results.csv"), &runs[1].join("results.csv"));
    same("bench CSV (parallel)", &runs[0].join("results.csv"), &runs[2].join("results.csv"));
    same("bench JSON", &runs[0].join("results.json"), &runs[1].join("results.json"));

    for name in ["m1.ckpt", "m2.ckpt"] {
        let mut args = vec!["train", "--data", "a.stdm", "--model", "stdi", "--seed", "3", "--out", name, "--config"];
        args.extend(toy);
        let o = stdi(&args, root);
        if !o.status.success() {
            return Outcome::Fail(format!("train failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
    }
    same("checkpoint", &root.join("m1.ckpt"), &root.join("m2.ckpt"));
    let csv = std::fs::read_to_string(runs[0].join("results.csv")).unwrap_or_default();
    verdict(ok, format!("{} methods; {}", csv.lines().count().saturating_sub(1), notes.join(", ")))
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, &str, Check); 9] = [
        ("c1", "gradient correctness", c1_gradcheck),
        ("c2", "factorization oracle", c2_factorization),
        ("c3", "hour conditioning", c3_hour_conditioning),
        ("c4", "overfit smoke test", c4_overfit),
        ("c5", "oracle equivalences", c5_oracles),
        ("c6", "ingestion conservation (fixture)", c6_ingest_fixture),
        ("c6", "ingestion conservation (2014 corpus)", c6_ingest_real),
        ("c7", "real-data benchmark", c7_real_benchmark),
        ("c8", "determinism", c8_determinism),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let (tag, detail) = match check() {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Report(d) => ("INFO", d),
        };
        println!("[{tag}] {id} {name} ({:.1}s): {detail}", start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
