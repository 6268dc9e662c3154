//! Two-session ICC estimation and band-level persistence summaries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featuregen::{FeatureDataset, IccTarget, Session};

/// Raw ICC estimate. Not clamped: small negative values occur by chance.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct IccEstimate(pub f64);

impl IccEstimate {
    pub fn value(self) -> f64 {
        self.0
    }

    /// Value clamped to `[0, 1]` for display.
    pub fn reported(self) -> f64 {
        self.0.clamp(0.0, 1.0)
    }
}

/// Two-way mixed-effects consistency ICC(3,1) for two sessions.
///
/// With `k = 2` the subjects x sessions ANOVA collapses onto per-subject sums
/// and differences: `SS_subjects = Σ(s - s̄)² / 2` and
/// `SS_error = Σ(d - d̄)² / 2`, both on `n - 1` degrees of freedom, so
/// `(MS_subjects - MS_error) / (MS_subjects + MS_error)` reduces to a ratio of
/// the two sums of squares.
pub fn icc_two_session(x1: &[f64], x2: &[f64]) -> Result<IccEstimate> {
    if x1.len() != x2.len() {
        return Err(Error::DimensionMismatch(format!(
            "sessions differ in length: {} vs {}",
            x1.len(),
            x2.len()
        )));
    }
    let n = x1.len();
    if n < 3 {
        return Err(Error::InvalidParameter(format!("ICC needs at least 3 subjects, got {n}")));
    }
    let nf = n as f64;
    let (sum_s, sum_d) = x1
        .iter()
        .zip(x2)
        .fold((0.0, 0.0), |(s, d), (a, b)| (s + (a + b), d + (a - b)));
    let (mean_s, mean_d) = (sum_s / nf, sum_d / nf);
    let (ss_s, ss_d) = x1.iter().zip(x2).fold((0.0, 0.0), |(s, d), (a, b)| {
        let es = (a + b) - mean_s;
        let ed = (a - b) - mean_d;
        (s + es * es, d + ed * ed)
    });
    let denom = ss_s + ss_d;
    if !denom.is_finite() {
        return Err(Error::Degenerate("non-finite session values".into()));
    }
    if denom == 0.0 {
        return Err(Error::Degenerate("all subjects have identical values; ICC undefined".into()));
    }
    Ok(IccEstimate((ss_s - ss_d) / denom))
}

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Mean and sample SD (n - 1) with compensated sums. SD is 0 for a single value.
pub(crate) fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = compensated_sum(values.iter().copied()) / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    (mean, (ss / (n - 1.0)).sqrt())
}

pub const HISTOGRAM_BIN_WIDTH: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandIccSummary {
    pub target: IccTarget,
    pub mean: f64,
    pub sd: f64,
    /// `(bin lower edge, count)` over a contiguous run of fixed-width bins.
    pub histogram: Vec<(f64, usize)>,
    /// Per-feature estimates in feature order.
    pub estimates: Vec<f64>,
}

impl BandIccSummary {
    pub fn n_features(&self) -> usize {
        self.estimates.len()
    }
}

/// Fixed-width histogram covering every bin from the lowest to the highest
/// occupied one.
pub fn histogram(values: &[f64], width: f64) -> Vec<(f64, usize)> {
    if values.is_empty() {
        return Vec::new();
    }
    let bin = |v: f64| (v / width).floor() as i64;
    let lo = values.iter().map(|&v| bin(v)).min().unwrap();
    let hi = values.iter().map(|&v| bin(v)).max().unwrap();
    let mut counts = vec![0usize; (hi - lo + 1) as usize];
    for &v in values {
        counts[(bin(v) - lo) as usize] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| ((lo + i as i64) as f64 * width, c))
        .collect()
}

pub fn band_icc_summary(ds: &FeatureDataset) -> Result<BandIccSummary> {
    if ds.n_subjects() < 3 {
        return Err(Error::InvalidParameter(format!(
            "ICC needs at least 3 subjects, dataset has {}",
            ds.n_subjects()
        )));
    }
    let estimates = (0..ds.n_features())
        .into_par_iter()
        .map(|f| {
            icc_two_session(&ds.column(f, Session::First), &ds.column(f, Session::Second))
                .map(IccEstimate::value)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean, sd) = mean_sd(&estimates);
    Ok(BandIccSummary {
        target: ds.target(),
        mean,
        sd,
        histogram: histogram(&estimates, HISTOGRAM_BIN_WIDTH),
        estimates,
    })
}
