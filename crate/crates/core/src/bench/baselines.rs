use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{MinMax, SampleWindow, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::model::{Forecaster, HOURS_PER_DAY};
use crate::nn::{Forward, ForwardPass, Linear, Mode, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Per-(slot, channel, cell) mean of historical frames, where the slot is the
/// hour of day or, optionally, the hour of week.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoricalAverage {
    by_weekday: bool,
    frame_len: usize,
    means: Vec<Vec<f64>>,
}

fn weekday(epoch: i64) -> usize {
    // 1970-01-01 was a Thursday; Monday is 0.
    (epoch.div_euclid(SECONDS_PER_DAY) + 3).rem_euclid(7) as usize
}

impl HistoricalAverage {
    fn slot(&self, time: i64) -> usize {
        let hour = crate::data::hour_of_day(time);
        if self.by_weekday {
            weekday(time) * HOURS_PER_DAY + hour
        } else {
            hour
        }
    }

    /// Fits on `(interval start, frame)` pairs.
    pub fn fit<'a>(frames: impl IntoIterator<Item = (i64, &'a [f32])>, frame_len: usize, by_weekday: bool) -> Result<Self> {
        let slots = if by_weekday { 7 * HOURS_PER_DAY } else { HOURS_PER_DAY };
        let mut ha = Self {
            by_weekday,
            frame_len,
            means: vec![Vec::new(); slots],
        };
        let mut sums = vec![vec![0.0; frame_len]; slots];
        let mut counts = vec![0usize; slots];
        for (time, frame) in frames {
            if frame.len() != frame_len {
                return Err(Error::shape("historical_average", format!("frame of {} values, expected {frame_len}", frame.len())));
            }
            let s = ha.slot(time);
            counts[s] += 1;
            for (acc, &v) in sums[s].iter_mut().zip(frame) {
                *acc += v as f64;
            }
        }
        for ((mean, sum), n) in ha.means.iter_mut().zip(sums).zip(counts) {
            *mean = if n == 0 { vec![0.0; frame_len] } else { sum.into_iter().map(|v| v / n as f64).collect() };
        }
        Ok(ha)
    }

    /// Fits on the target frames of `windows`.
    pub fn from_windows(windows: &[SampleWindow], by_weekday: bool) -> Result<Self> {
        let frame_len = windows.first().map_or(0, |w| w.target.len());
        Self::fit(windows.iter().map(|w| (w.target_time, w.target.as_slice())), frame_len, by_weekday)
    }

    pub fn predict(&self, windows: &[SampleWindow]) -> Vec<f64> {
        windows.iter().flat_map(|w| self.means[self.slot(w.target_time)].iter().copied()).collect()
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }
}

/// Solves `min ½wᵀGw − cᵀw + l1·‖w‖₁ + ½·l2·‖w‖²` by cyclic coordinate
/// descent, stopping once no coordinate moves more than `tol` in a sweep.
pub fn coordinate_descent(gram: &DMatrix<f64>, rhs: &[f64], l1: f64, l2: f64, tol: f64, max_sweeps: usize) -> Vec<f64> {
    let p = rhs.len();
    let mut w = vec![0.0; p];
    // q = G·w, kept up to date as coordinates move.
    let mut q = vec![0.0; p];
    for _ in 0..max_sweeps {
        let mut biggest: f64 = 0.0;
        for j in 0..p {
            let gjj = gram[(j, j)];
            let denom = gjj + l2;
            if denom <= 0.0 {
                continue;
            }
            let rho = rhs[j] - (q[j] - gjj * w[j]);
            let next = (rho.abs() - l1).max(0.0).copysign(rho) / denom;
            let delta = next - w[j];
            if delta != 0.0 {
                for (qi, gij) in q.iter_mut().zip(gram.column(j).iter()) {
                    *qi += gij * delta;
                }
                w[j] = next;
                biggest = biggest.max(delta.abs());
            }
        }
        if biggest < tol {
            break;
        }
    }
    w
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinearKind {
    Ridge,
    Lasso,
}

/// One independent linear regression per output with an unpenalised intercept.
///
/// Ridge minimises `‖y − Xβ‖² + λ‖β‖²`; lasso minimises
/// `(1/2n)‖y − Xβ‖² + λ‖β‖₁`.
#[derive(Clone, Debug)]
pub struct LinearBaseline {
    pub kind: LinearKind,
    pub lambda: f64,
    /// `outputs x features`.
    pub coef: Vec<Vec<f64>>,
    pub intercept: Vec<f64>,
    x_mean: Vec<f64>,
}

pub const LAMBDA_GRID: [f64; 4] = [0.01, 0.1, 1.0, 10.0];
const LASSO_TOL: f64 = 1e-6;
const LASSO_MAX_SWEEPS: usize = 10_000;

struct Centered {
    /// `XcᵀXc`.
    gram: DMatrix<f64>,
    /// `XcᵀYc`, `features x outputs`.
    xty: DMatrix<f64>,
    x_mean: Vec<f64>,
    y_mean: Vec<f64>,
    n: usize,
}

fn center(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<Centered> {
    let n = x.len();
    if n == 0 || n != y.len() {
        return Err(Error::Usage("linear baseline needs matching, non-empty X and Y".into()));
    }
    let (p, k) = (x[0].len(), y[0].len());
    let mean = |rows: &[Vec<f64>], w: usize| {
        let mut m = vec![0.0; w];
        for r in rows {
            for (a, v) in m.iter_mut().zip(r) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|a| *a /= n as f64);
        m
    };
    let (x_mean, y_mean) = (mean(x, p), mean(y, k));
    let xc = DMatrix::from_fn(n, p, |r, c| x[r][c] - x_mean[c]);
    let yc = DMatrix::from_fn(n, k, |r, c| y[r][c] - y_mean[c]);
    Ok(Centered {
        gram: xc.tr_mul(&xc),
        xty: xc.tr_mul(&yc),
        x_mean,
        y_mean,
        n,
    })
}

impl LinearBaseline {
    pub fn fit(x: &[Vec<f64>], y: &[Vec<f64>], kind: LinearKind, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Usage(format!("regularisation strength {lambda} must be positive")));
        }
        let c = center(x, y)?;
        let (p, k) = (c.gram.nrows(), c.xty.ncols());
        let coef: Vec<Vec<f64>> = match kind {
            LinearKind::Ridge => {
                let mut a = c.gram.clone();
                for i in 0..p {
                    a[(i, i)] += lambda;
                }
                let chol = a
                    .cholesky()
                    .ok_or_else(|| Error::Domain("ridge system is not positive definite".into()))?;
                let beta = chol.solve(&c.xty);
                (0..k).map(|o| beta.column(o).iter().copied().collect()).collect()
            }
            LinearKind::Lasso => {
                let n = c.n as f64;
                let gram = &c.gram / n;
                (0..k)
                    .into_par_iter()
                    .map(|o| {
                        let rhs: Vec<f64> = c.xty.column(o).iter().map(|v| v / n).collect();
                        coordinate_descent(&gram, &rhs, lambda, 0.0, LASSO_TOL, LASSO_MAX_SWEEPS)
                    })
                    .collect()
            }
        };
        let intercept = coef
            .iter()
            .zip(&c.y_mean)
            .map(|(b, ym)| ym - b.iter().zip(&c.x_mean).map(|(bi, xm)| bi * xm).sum::<f64>())
            .collect();
        Ok(Self {
            kind,
            lambda,
            coef,
            intercept,
            x_mean: c.x_mean,
        })
    }

    /// Ridge through coordinate descent rather than the normal equations.
    pub fn fit_ridge_cd(x: &[Vec<f64>], y: &[Vec<f64>], lambda: f64, tol: f64) -> Result<Vec<Vec<f64>>> {
        let c = center(x, y)?;
        Ok((0..c.xty.ncols())
            .map(|o| {
                let rhs: Vec<f64> = c.xty.column(o).iter().copied().collect();
                coordinate_descent(&c.gram, &rhs, 0.0, lambda, tol, 1_000_000)
            })
            .collect())
    }

    pub fn features(&self) -> usize {
        self.x_mean.len()
    }

    pub fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        self.coef
            .iter()
            .zip(&self.intercept)
            .map(|(b, c)| c + b.iter().zip(x).map(|(bi, xi)| bi * xi).sum::<f64>())
            .collect()
    }

    pub fn predict(&self, windows: &[SampleWindow]) -> Vec<f64> {
        windows
            .iter()
            .flat_map(|w| self.predict_row(&w.inputs.iter().map(|&v| v as f64).collect::<Vec<_>>()))
            .collect()
    }

    /// Fits every λ in `grid` on `train` and keeps the one with the lowest
    /// validation RMSE pooled over all outputs.
    pub fn select(train: &[SampleWindow], val: &[SampleWindow], kind: LinearKind, grid: &[f64]) -> Result<Self> {
        let rows = |ws: &[SampleWindow], f: fn(&SampleWindow) -> &Vec<f32>| -> Vec<Vec<f64>> {
            ws.iter().map(|w| f(w).iter().map(|&v| v as f64).collect()).collect()
        };
        let (x, y) = (rows(train, |w| &w.inputs), rows(train, |w| &w.target));
        let targets = crate::train::targets_of(val);
        let mut best: Option<(f64, Self)> = None;
        for &lambda in grid {
            let m = Self::fit(&x, &y, kind, lambda)?;
            let rmse = super::compute_metrics(&m.predict(val), &targets)?.rmse;
            log::info!("{kind:?} lambda {lambda}: validation RMSE {rmse:.4}");
            if best.as_ref().is_none_or(|(r, _)| rmse < *r) {
                best = Some((rmse, m));
            }
        }
        best.map(|(_, m)| m).ok_or_else(|| Error::Usage("empty regularisation grid".into()))
    }
}

/// Fully connected network on the flattened input window.
pub struct Mlp<T: Scalar> {
    store: ParamStore<T>,
    layers: Vec<Linear>,
    window: (usize, usize, usize),
    scaling: Option<MinMax>,
}

pub const MLP_HIDDEN: [usize; 4] = [256, 256, 128, 128];

impl<T: Scalar> Mlp<T> {
    pub fn new(seq_len: usize, rows: usize, cols: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut widths = vec![seq_len * 2 * rows * cols];
        widths.extend_from_slice(hidden);
        widths.push(2 * rows * cols);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| Linear::new(&mut store, &format!("mlp.fc{l}"), w[0], w[1], true, &mut rng))
            .collect();
        Self {
            store,
            layers,
            window: (seq_len, rows, cols),
            scaling: None,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.store.entries().iter().map(|e| e.value.len()).sum()
    }
}

impl<T: Scalar> Forecaster<T> for Mlp<T> {
    fn name(&self) -> String {
        "MLP".into()
    }

    fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn forward(&mut self, inputs: &Tensor<T>, hours: &[usize], mode: Mode) -> Result<ForwardPass<T>> {
        let (l, r, c) = self.window;
        let shape = inputs.shape();
        if shape.len() != 5 || shape[1..] != [l, 2, r, c] || hours.len() != shape[0] {
            return Err(Error::shape("mlp", format!("input {shape:?} vs B×{:?}", [l, 2, r, c])));
        }
        let b = shape[0];
        let mut f = Forward::new(&mut self.store, mode);
        let x = f.tape.leaf(inputs.clone(), false);
        let mut h = f.tape.reshape(x, &[b, l * 2 * r * c])?;
        for layer in &self.layers {
            h = layer.forward(&mut f, h)?;
            h = f.tape.relu(h)?;
        }
        let y = f.tape.reshape(h, &[b, 2, r, c])?;
        Ok(f.finish(y))
    }

    fn window_shape(&self) -> (usize, usize, usize) {
        self.window
    }

    fn scaling(&self) -> Option<MinMax> {
        self.scaling
    }

    fn set_scaling(&mut self, scaling: Option<MinMax>) {
        self.scaling = scaling;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn window(t: usize, hour_time: i64, inputs: Vec<f32>, target: Vec<f32>) -> SampleWindow {
        SampleWindow {
            target_index: t,
            target_time: hour_time,
            hour: crate::data::hour_of_day(hour_time),
            inputs,
            target,
        }
    }

    #[test]
    fn ha_averages_by_hour() {
        let h8 = 8 * 3600;
        let train = vec![
            window(0, h8, vec![], vec![2.0, 0.0]),
            window(1, h8 + 86_400, vec![], vec![4.0, 0.0]),
            window(2, 9 * 3600, vec![], vec![7.0, 0.0]),
        ];
        let ha = HistoricalAverage::from_windows(&train, false).unwrap();
        let test = vec![window(3, h8 + 5 * 86_400, vec![], vec![0.0, 0.0]), window(4, 10 * 3600, vec![], vec![0.0, 0.0])];
        assert_eq!(ha.predict(&test), vec![3.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn ha_recovers_hourly_profile() {
        let profile: Vec<f32> = (0..24).map(|h| 5.0 + 3.0 * (h as f32 * std::f32::consts::PI / 12.0).sin()).collect();
        let train: Vec<SampleWindow> = (0..24 * 14)
            .map(|t| window(t, t as i64 * 3600, vec![], vec![profile[t % 24], 1.0]))
            .collect();
        let ha = HistoricalAverage::from_windows(&train, false).unwrap();
        let test: Vec<SampleWindow> = (0..24).map(|h| window(h, (400 * 24 + h as i64) * 3600, vec![], vec![0.0, 0.0])).collect();
        let pred = ha.predict(&test);
        for h in 0..24 {
            assert_eq!(pred[2 * h], profile[h] as f64);
            assert_eq!(pred[2 * h + 1], 1.0);
        }
        let weekly = HistoricalAverage::from_windows(&train, true).unwrap();
        assert_eq!(weekly.predict(&test[..1]), pred[..2].to_vec());
    }

    fn random_system(n: usize, p: usize, k: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y = (0..n).map(|_| (0..k).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        (x, y)
    }

    #[test]
    fn ridge_closed_form_matches_coordinate_descent() {
        for seed in 0..5 {
            let (x, y) = random_system(30, 6, 3, seed);
            for lambda in [0.01, 1.0, 10.0] {
                let closed = LinearBaseline::fit(&x, &y, LinearKind::Ridge, lambda).unwrap();
                let cd = LinearBaseline::fit_ridge_cd(&x, &y, lambda, 1e-12).unwrap();
                for (a, b) in closed.coef.iter().flatten().zip(cd.iter().flatten()) {
                    assert!((a - b).abs() <= 1e-6, "seed {seed} λ {lambda}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn ridge_recovers_identity_copy_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let make = |n: usize, rng: &mut ChaCha8Rng| -> Vec<SampleWindow> {
            (0..n)
                .map(|t| {
                    let inputs: Vec<f32> = (0..6).map(|_| rng.random_range(0.0..10.0)).collect();
                    let target = inputs[4..].to_vec();
                    window(t, t as i64 * 3600, inputs, target)
                })
                .collect()
        };
        let (train, val) = (make(200, &mut rng), make(40, &mut rng));
        let m = LinearBaseline::select(&train, &val, LinearKind::Ridge, &LAMBDA_GRID).unwrap();
        assert_eq!(m.lambda, 0.01);
        let rmse = crate::bench::compute_metrics(&m.predict(&val), &crate::train::targets_of(&val)).unwrap().rmse;
        assert!(rmse < 1e-3, "{rmse}");
    }

    #[test]
    fn huge_lambda_shrinks_to_intercept() {
        let (x, y) = random_system(40, 4, 2, 3);
        for kind in [LinearKind::Ridge, LinearKind::Lasso] {
            let m = LinearBaseline::fit(&x, &y, kind, 1e9).unwrap();
            assert!(m.coef.iter().flatten().all(|c| c.abs() < 1e-6), "{kind:?}");
            let ybar: f64 = y.iter().map(|r| r[0]).sum::<f64>() / 40.0;
            assert_relative_eq!(m.predict_row(&x[0])[0], ybar, epsilon = 1e-6);
        }
        assert!(LinearBaseline::fit(&x, &y, LinearKind::Ridge, 0.0).is_err());
    }

    #[test]
    fn lasso_recovers_sparse_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<Vec<f64>> = (0..200).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<Vec<f64>> = x
            .iter()
            .map(|r| vec![3.0 * r[1] - 2.0 * r[3] + 0.5 + rng.random_range(-0.01..0.01)])
            .collect();
        let m = LinearBaseline::fit(&x, &y, LinearKind::Lasso, 0.05).unwrap();
        let support: Vec<usize> = (0..5).filter(|&j| m.coef[0][j].abs() > 1e-8).collect();
        assert_eq!(support, vec![1, 3]);
        assert!((m.coef[0][1] - 3.0).abs() < 0.2 && (m.coef[0][3] + 2.0).abs() < 0.2);
    }

    #[test]
    fn mlp_census_at_full_widths() {
        let m = Mlp::<f32>::new(3, 8, 16, &MLP_HIDDEN, 0);
        let want = (768 * 256 + 256) + (256 * 256 + 256) + (256 * 128 + 128) + (128 * 128 + 128) + (128 * 256 + 256);
        assert_eq!(m.parameter_count(), want);
    }

    #[test]
    fn mlp_overfits_ten_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let windows: Vec<SampleWindow> = (0..10)
            .map(|t| {
                let inputs: Vec<f32> = (0..24).map(|_| rng.random_range(0.0..2.0)).collect();
                let target = inputs[16..].to_vec();
                window(t, t as i64 * 3600, inputs, target)
            })
            .collect();
        let mut m = Mlp::<f32>::new(3, 2, 2, &MLP_HIDDEN, 4);
        let cfg = crate::train::TrainConfig {
            epochs: 600,
            patience: 600,
            batch_size: 10,
            weight_decay: 0.0,
            ..Default::default()
        };
        let h = crate::train::fit(&mut m, &windows, &windows, &cfg, None).unwrap();
        let best = h.epochs.iter().map(|e| e.train_loss).fold(f64::INFINITY, f64::min);
        assert!(best < 0.01, "{best}");
        let x = crate::data::stack_batch::<f32>(&windows.iter().collect::<Vec<_>>(), 3, 2, 2).unwrap().0;
        assert!(m.predict(&x, &[0; 10]).unwrap().data().iter().all(|&v| v >= 0.0));
    }
}
