//! Log-linear planning equations: `log10(N) = intercept + slope * ICC`.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::featuregen::IccTarget;
use crate::search::{TableCell, TargetSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub f_value: f64,
    pub df_model: u32,
    pub df_residual: u32,
    pub p_value: f64,
    pub n_points: usize,
    /// ICC range covered by the fitted points.
    pub icc_min: f64,
    pub icc_max: f64,
}

impl RegressionFit {
    pub fn predict_log10(&self, icc: f64) -> f64 {
        self.intercept + self.slope * icc
    }

    /// Residuals `log10(n) - fitted` for the given points.
    pub fn residuals(&self, points: &[(f64, u64)]) -> Vec<f64> {
        points
            .iter()
            .map(|&(x, n)| (n as f64).log10() - self.predict_log10(x))
            .collect()
    }
}

/// Upper tail of F(d1, d2) at `f`.
pub fn f_survival(f: f64, d1: f64, d2: f64) -> f64 {
    if f.is_infinite() {
        return 0.0;
    }
    if f <= 0.0 {
        return 1.0;
    }
    beta_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))
}

/// Ordinary least squares of `log10(n)` on `icc`.
pub fn fit_log_linear(points: &[(f64, u64)]) -> Result<RegressionFit> {
    if points.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    if let Some(&(x, n)) = points.iter().find(|&&(x, n)| n == 0 || !x.is_finite()) {
        return Err(Error::InvalidParameter(format!("invalid point ({x}, {n})")));
    }
    let count = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| (p.1 as f64).log10()).collect();
    let mx = xs.iter().sum::<f64>() / count;
    let my = ys.iter().sum::<f64>() / count;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all ICC values identical".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let ss_reg = (syy - ss_res).max(0.0);
    let df_residual = points.len() as u32 - 2;
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let f_value = if ss_res > 0.0 {
        ss_reg / (ss_res / df_residual as f64)
    } else if ss_reg > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let p_value = if df_residual == 0 {
        f64::NAN
    } else {
        f_survival(f_value, 1.0, df_residual as f64)
    };
    Ok(RegressionFit {
        slope,
        intercept,
        r_squared,
        f_value,
        df_model: 1,
        df_residual,
        p_value,
        n_points: points.len(),
        icc_min: xs.iter().copied().fold(f64::INFINITY, f64::min),
        icc_max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanningQuery {
    pub icc: IccTarget,
    pub fit: RegressionFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub n: u64,
    pub log10_n: f64,
    /// ICC lies outside the range of the fitted points.
    pub extrapolated: bool,
}

/// Feature count `round(10^(intercept + slope * icc))`, at least 1.
pub fn predict_feature_count(q: &PlanningQuery) -> Prediction {
    let icc = q.icc.value();
    let log10_n = q.fit.predict_log10(icc);
    let n = 10f64.powf(log10_n).round().max(1.0) as u64;
    let eps = 1e-12;
    Prediction {
        n,
        log10_n,
        extrapolated: icc < q.fit.icc_min - eps || icc > q.fit.icc_max + eps,
    }
}

/// One band's required count for one target; `n_required` is `None` when
/// the search did not reach the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetCount {
    pub target: TargetSpec,
    pub icc: f64,
    pub n_required: Option<u64>,
}

impl TargetCount {
    /// Counts from a search table, keyed by band target ICC.
    pub fn from_table(cells: &[TableCell]) -> Vec<TargetCount> {
        cells
            .iter()
            .map(|c| TargetCount {
                target: c.target,
                icc: c.band_target.value(),
                n_required: c.found().map(|r| r.n_required as u64),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetFit {
    pub target: TargetSpec,
    pub fit: RegressionFit,
    pub points: Vec<(f64, u64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitSummary {
    pub fits: Vec<TargetFit>,
    /// Targets that could not be fitted, with the reason.
    pub skipped: Vec<(TargetSpec, String)>,
}

/// One fit per distinct target, in first-appearance order. A target with a
/// missing band count or fewer than 3 bands is skipped and reported.
pub fn fit_all_targets(counts: &[TargetCount]) -> FitSummary {
    let mut order: Vec<TargetSpec> = Vec::new();
    for c in counts {
        if !order.contains(&c.target) {
            order.push(c.target);
        }
    }
    let mut summary = FitSummary::default();
    for target in order {
        let column: Vec<&TargetCount> = counts.iter().filter(|c| c.target == target).collect();
        let missing = column.iter().filter(|c| c.n_required.is_none()).count();
        if missing > 0 {
            summary
                .skipped
                .push((target, format!("{missing} band(s) did not reach the target")));
            continue;
        }
        let points: Vec<(f64, u64)> = column.iter().map(|c| (c.icc, c.n_required.unwrap())).collect();
        match fit_log_linear(&points) {
            Ok(fit) => summary.fits.push(TargetFit { target, fit, points }),
            Err(e) => summary.skipped.push((target, e.to_string())),
        }
    }
    summary
}

/// EER targets of the published count table, as fractions.
pub const REFERENCE_EER_TARGETS: [f64; 5] = [0.05, 0.02, 0.01, 0.005, 0.001];

/// Published simulated feature counts at 10,000 subjects: band ICC and the
/// count for each of [`REFERENCE_EER_TARGETS`].
pub const REFERENCE_EER_COUNTS: [(f64, [u64; 5]); 7] = [
    (0.35, [82, 127, 162, 198, 281]),
    (0.45, [48, 74, 94, 115, 166]),
    (0.55, [30, 46, 59, 72, 102]),
    (0.65, [19, 30, 38, 46, 66]),
    (0.75, [13, 20, 25, 30, 43]),
    (0.85, [8, 12, 16, 19, 27]),
    (0.95, [5, 7, 8, 10, 14]),
];

/// Published count for `icc` and EER `target`, when both are tabulated.
pub fn reference_eer_count(icc: f64, target: f64) -> Option<u64> {
    let j = REFERENCE_EER_TARGETS.iter().position(|&t| (t - target).abs() < 1e-12)?;
    REFERENCE_EER_COUNTS
        .iter()
        .find(|(band, _)| (band - icc).abs() < 1e-9)
        .map(|(_, row)| row[j])
}

/// Published planning coefficients `(target, slope, intercept)` for the
/// seven-band 0.35..0.95 design at 10,000 subjects.
pub fn reference_coefficients() -> Vec<(TargetSpec, f64, f64)> {
    let eer = |t: f64, s: f64, i: f64| (TargetSpec::Eer { target: t }, s, i);
    let frr = |far: f64, s: f64, i: f64| {
        (
            TargetSpec::FrrAtFar {
                far_level: far,
                frr_target: 0.01,
            },
            s,
            i,
        )
    };
    vec![
        eer(0.05, -1.987, 2.587),
        eer(0.02, -2.042, 2.804),
        eer(0.01, -2.082, 2.930),
        eer(0.005, -2.084, 3.016),
        eer(0.001, -2.093, 3.176),
        frr(0.001, -2.086, 3.060),
        frr(0.0001, -2.076, 3.150),
        frr(0.00001, -2.091, 3.232),
        frr(0.000001, -2.064, 3.279),
    ]
}

/// A [`RegressionFit`] carrying only reference coefficients, valid over
/// ICC 0.35..0.95.
pub fn reference_fit(slope: f64, intercept: f64) -> RegressionFit {
    RegressionFit {
        slope,
        intercept,
        r_squared: f64::NAN,
        f_value: f64::NAN,
        df_model: 1,
        df_residual: 5,
        p_value: f64::NAN,
        n_points: 7,
        icc_min: 0.35,
        icc_max: 0.95,
    }
}
