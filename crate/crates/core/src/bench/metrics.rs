use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RMSE and MAE pooled over every predicted value, and the count `z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub rmse: f64,
    pub mae: f64,
    pub z: usize,
}

pub fn compute_metrics(preds: &[f64], targets: &[f64]) -> Result<MetricPair> {
    if preds.len() != targets.len() {
        return Err(Error::shape(
            "compute_metrics",
            format!("{} predictions vs {} targets", preds.len(), targets.len()),
        ));
    }
    if preds.is_empty() {
        return Err(Error::Usage("metrics over an empty set".into()));
    }
    let (mut sq, mut abs) = (0.0, 0.0);
    for (p, y) in preds.iter().zip(targets) {
        let e = y - p;
        sq += e * e;
        abs += e.abs();
    }
    let z = preds.len();
    Ok(MetricPair {
        rmse: (sq / z as f64).sqrt(),
        mae: abs / z as f64,
        z,
    })
}

/// Metrics per demand channel (rentals, returns) for samples laid out
/// `N x 2 x cells`.
pub fn channel_metrics(preds: &[f64], targets: &[f64], cells: usize) -> Result<[MetricPair; 2]> {
    if cells == 0 || preds.len() != targets.len() || !preds.len().is_multiple_of(2 * cells) {
        return Err(Error::shape(
            "channel_metrics",
            format!("{} values do not divide into samples of 2x{cells}", preds.len()),
        ));
    }
    let pick = |src: &[f64], ch: usize| -> Vec<f64> {
        src.chunks(2 * cells).flat_map(|s| s[ch * cells..(ch + 1) * cells].to_vec()).collect()
    };
    Ok([
        compute_metrics(&pick(preds, 0), &pick(targets, 0))?,
        compute_metrics(&pick(preds, 1), &pick(targets, 1))?,
    ])
}
