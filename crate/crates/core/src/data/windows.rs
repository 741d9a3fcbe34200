use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::series::DemandSeries;
use super::SECONDS_PER_DAY;

/// One supervised sample: `seq_len` consecutive frames and the frame after them.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleWindow {
    /// Index of the target frame in the source series.
    pub target_index: usize,
    /// Epoch seconds of the target interval's start.
    pub target_time: i64,
    /// Hour of day of the target interval.
    pub hour: usize,
    /// `seq_len x 2 x rows x cols`, oldest frame first.
    pub inputs: Vec<f32>,
    /// `2 x rows x cols`.
    pub target: Vec<f32>,
}

/// All `T - seq_len` windows of a series, in time order.
pub fn make_windows(series: &DemandSeries, seq_len: usize) -> Result<Vec<SampleWindow>> {
    if seq_len == 0 {
        return Err(Error::Usage("sequence length must be at least 1".into()));
    }
    if series.len() <= seq_len {
        return Err(Error::Domain(format!(
            "series has {} intervals, need more than the sequence length {seq_len}",
            series.len()
        )));
    }
    let n = series.frame_len();
    let data = series.data();
    Ok((seq_len..series.len())
        .map(|t| SampleWindow {
            target_index: t,
            target_time: series.time_of(t),
            hour: series.hour_of(t),
            inputs: data[(t - seq_len) * n..t * n].to_vec(),
            target: data[t * n..(t + 1) * n].to_vec(),
        })
        .collect())
}

#[derive(Clone, Debug, Default)]
pub struct Split {
    pub train: Vec<SampleWindow>,
    pub val: Vec<SampleWindow>,
    pub test: Vec<SampleWindow>,
}

/// Windows whose target starts in the final `test_days` days before
/// `series_end` form the test set. The rest stay chronological and the last
/// `val_frac` of them become the validation set.
pub fn split_dataset(windows: Vec<SampleWindow>, series_end: i64, test_days: u32, val_frac: f64) -> Result<Split> {
    if !(0.0..1.0).contains(&val_frac) {
        return Err(Error::Usage(format!("validation fraction {val_frac} must lie in [0, 1)")));
    }
    let boundary = series_end - test_days as i64 * SECONDS_PER_DAY;
    let (test, rest): (Vec<_>, Vec<_>) = windows.into_iter().partition(|w| w.target_time >= boundary);
    let n_val = (rest.len() as f64 * val_frac).round() as usize;
    let mut train = rest;
    let val = train.split_off(train.len() - n_val);
    if train.is_empty() {
        return Err(Error::Domain("no training windows remain after the split".into()));
    }
    Ok(Split { train, val, test })
}

/// Min-max value scaling fitted on training windows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(windows: &[SampleWindow]) -> Result<Self> {
        let mut values = windows.iter().flat_map(|w| w.inputs.iter().chain(&w.target)).map(|&v| v as f64);
        let first = values.next().ok_or_else(|| Error::Usage("cannot fit scaling on no windows".into()))?;
        let (min, max) = values.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Ok(Self { min, max: if max > min { max } else { min + 1.0 } })
    }

    pub fn scale(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn unscale(&self, v: f64) -> f64 {
        v * (self.max - self.min) + self.min
    }

    pub fn scale_tensor<T: Scalar>(&self, t: &Tensor<T>) -> Tensor<T> {
        t.map(|v| T::of(self.scale(v.as_f64())))
    }

    pub fn unscale_tensor<T: Scalar>(&self, t: &Tensor<T>) -> Tensor<T> {
        t.map(|v| T::of(self.unscale(v.as_f64())))
    }
}

/// Stacks windows into model inputs `B x L x 2 x rows x cols`, their hours
/// and targets `B x 2 x rows x cols`.
pub fn stack_batch<T: Scalar>(
    windows: &[&SampleWindow],
    seq_len: usize,
    rows: usize,
    cols: usize,
) -> Result<(Tensor<T>, Vec<usize>, Tensor<T>)> {
    let frame = 2 * rows * cols;
    let b = windows.len();
    let mut inputs = Vec::with_capacity(b * seq_len * frame);
    let mut targets = Vec::with_capacity(b * frame);
    for w in windows {
        if w.inputs.len() != seq_len * frame || w.target.len() != frame {
            return Err(Error::shape(
                "stack_batch",
                format!("window does not match L={seq_len} on a {rows}x{cols} grid"),
            ));
        }
        inputs.extend(w.inputs.iter().map(|&v| T::of(v as f64)));
        targets.extend(w.target.iter().map(|&v| T::of(v as f64)));
    }
    Ok((
        Tensor::new(&[b, seq_len, 2, rows, cols], inputs)?,
        windows.iter().map(|w| w.hour).collect(),
        Tensor::new(&[b, 2, rows, cols], targets)?,
    ))
}
