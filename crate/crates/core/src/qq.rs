//! Quantile–quantile statistics with a two-sample Kolmogorov–Smirnov band.

use std::io::Write;

use crate::error::{Error, FormatErrorKind, Result};
use crate::io::fmt_f64;

/// Quantiles by linear interpolation between order statistics, with
/// 1-based position `h = (n − 1) p + 1`.
pub fn quantiles(sample: &[f64], probabilities: &[f64]) -> Result<Vec<f64>> {
    for &p in probabilities {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::param(format!("probability {p} outside (0, 1)")));
        }
    }
    let sorted = sorted_sample(sample)?;
    Ok(probabilities.iter().map(|&p| quantile_sorted(&sorted, p)).collect())
}

fn sorted_sample(sample: &[f64]) -> Result<Vec<f64>> {
    if sample.is_empty() {
        return Err(Error::param("empty sample"));
    }
    if sample.iter().any(|v| v.is_nan()) {
        return Err(Error::param("sample contains NaN"));
    }
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Same rule on a sorted sample for any `p` in `[0, 1]`.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    match sorted.get(lo + 1) {
        Some(&hi) if frac > 0.0 => sorted[lo] + frac * (hi - sorted[lo]),
        _ => sorted[lo],
    }
}

/// `c(α) = √(−ln(α/2) / 2)`, about 1.358 at α = 0.05.
pub fn ks_coefficient(alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt()
}

pub const DEFAULT_ALPHA: f64 = 0.05;

/// Percentiles 1, 2, …, 99 as probabilities.
pub fn default_probabilities() -> Vec<f64> {
    (1..100).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QQResult {
    pub percentiles: Vec<f64>,
    pub x_quantiles: Vec<f64>,
    pub y_quantiles: Vec<f64>,
    /// Band half-width in probability units.
    pub ks_band_halfwidth: f64,
    /// The x-sample quantiles at `p ∓ halfwidth`, clamped to the sample range.
    pub band_low: Vec<f64>,
    pub band_high: Vec<f64>,
    pub n_x: usize,
    pub n_y: usize,
}

impl QQResult {
    /// Whether every y quantile lies inside the band.
    pub fn within_band(&self) -> bool {
        self.y_quantiles
            .iter()
            .zip(self.band_low.iter().zip(&self.band_high))
            .all(|(y, (lo, hi))| lo <= y && y <= hi)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::format(0, FormatErrorKind::Csv(e.to_string()));
        w.write_record(["p", "x_quantile", "y_quantile", "band_low", "band_high"])
            .map_err(err)?;
        for i in 0..self.percentiles.len() {
            w.write_record([
                fmt_f64(self.percentiles[i]),
                fmt_f64(self.x_quantiles[i]),
                fmt_f64(self.y_quantiles[i]),
                fmt_f64(self.band_low[i]),
                fmt_f64(self.band_high[i]),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }
}

pub fn qq(x: &[f64], y: &[f64], probabilities: &[f64]) -> Result<QQResult> {
    qq_with_alpha(x, y, probabilities, DEFAULT_ALPHA)
}

pub fn qq_with_alpha(x: &[f64], y: &[f64], probabilities: &[f64], alpha: f64) -> Result<QQResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param(format!("alpha {alpha} outside (0, 1)")));
    }
    let x_quantiles = quantiles(x, probabilities)?;
    let y_quantiles = quantiles(y, probabilities)?;
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let h = ks_coefficient(alpha) * ((nx + ny) / (nx * ny)).sqrt();
    let xs = sorted_sample(x)?;
    Ok(QQResult {
        percentiles: probabilities.to_vec(),
        x_quantiles,
        y_quantiles,
        ks_band_halfwidth: h,
        band_low: probabilities.iter().map(|&p| quantile_sorted(&xs, p - h)).collect(),
        band_high: probabilities.iter().map(|&p| quantile_sorted(&xs, p + h)).collect(),
        n_x: x.len(),
        n_y: y.len(),
    })
}
