//! CSV and SVG artifacts. All rates are fractions, never percents.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ErrorRatePoint;
use crate::regression::{TargetCount, TargetFit};
use crate::reliability::BandIccSummary;
use crate::scoring::ScoreSet;
use crate::search::{CellOutcome, TableCell, TargetSpec};

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(true).from_writer(w)
}

/// Writes `header` up front so an empty table is still a valid CSV.
fn writer_with_header<W: Write>(w: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(header)?;
    Ok(out)
}

#[derive(Serialize)]
struct BandIccRow {
    band_target: f64,
    feature_index: usize,
    icc: f64,
}

/// `band_icc.csv`: `band_target,feature_index,icc`.
pub fn write_band_icc<W: Write>(w: W, summaries: &[BandIccSummary]) -> Result<()> {
    let mut out = writer_with_header(w, &["band_target", "feature_index", "icc"])?;
    for s in summaries {
        for (feature_index, &icc) in s.estimates.iter().enumerate() {
            out.serialize(BandIccRow {
                band_target: s.target.value(),
                feature_index,
                icc,
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct BandSummaryRow {
    band_target: f64,
    mean_icc: f64,
    sd_icc: f64,
}

/// `band_summary.csv`: `band_target,mean_icc,sd_icc`.
pub fn write_band_summary<W: Write>(w: W, summaries: &[BandIccSummary]) -> Result<()> {
    let mut out = writer_with_header(w, &["band_target", "mean_icc", "sd_icc"])?;
    for s in summaries {
        out.serialize(BandSummaryRow {
            band_target: s.target.value(),
            mean_icc: s.mean,
            sd_icc: s.sd,
        })?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct HistogramRow {
    band_target: f64,
    bin_lower: f64,
    count: usize,
}

/// `band_histogram.csv`: `band_target,bin_lower,count`.
pub fn write_band_histogram<W: Write>(w: W, summaries: &[BandIccSummary]) -> Result<()> {
    let mut out = writer_with_header(w, &["band_target", "bin_lower", "count"])?;
    for s in summaries {
        for &(bin_lower, count) in &s.histogram {
            out.serialize(HistogramRow {
                band_target: s.target.value(),
                bin_lower,
                count,
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ScoreRow {
    kind: &'static str,
    subject_a: u32,
    subject_b: u32,
    score: f64,
}

/// `scores.csv`: `kind,subject_a,subject_b,score`. Impostor rows only when
/// `include_impostor` is set and pair labels are present.
pub fn write_scores<W: Write>(w: W, scores: &ScoreSet, include_impostor: bool) -> Result<()> {
    let mut out = writer(w);
    for (i, &score) in scores.genuine.iter().enumerate() {
        out.serialize(ScoreRow {
            kind: "genuine",
            subject_a: i as u32,
            subject_b: i as u32,
            score,
        })?;
    }
    if include_impostor {
        if scores.impostor_pairs.len() != scores.impostor.len() {
            return Err(Error::InvalidParameter("impostor scores carry no pair labels".into()));
        }
        for (&(a, b), &score) in scores.impostor_pairs.iter().zip(&scores.impostor) {
            out.serialize(ScoreRow {
                kind: "impostor",
                subject_a: a,
                subject_b: b,
                score,
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `roc.csv`: `threshold,far,frr`.
pub fn write_roc<W: Write>(w: W, points: &[ErrorRatePoint]) -> Result<()> {
    let mut out = writer(w);
    for p in points {
        out.serialize(p)?;
    }
    out.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `required_features.csv`:
/// `band_target,target_kind,target_value,far_level,n_required,mean_metric_at_n`.
/// Unreached cells leave `n_required` empty and report the best mean metric.
pub fn write_required_features<W: Write>(w: W, cells: &[TableCell]) -> Result<()> {
    let mut out = writer(w);
    out.write_record([
        "band_target",
        "target_kind",
        "target_value",
        "far_level",
        "n_required",
        "mean_metric_at_n",
    ])?;
    for c in cells {
        let (n, metric) = match &c.outcome {
            CellOutcome::Found(r) => (r.n_required.to_string(), r.mean_metric_at_n.to_string()),
            CellOutcome::NotReachable { best_metric, .. } => (String::new(), best_metric.to_string()),
            CellOutcome::Failed { .. } => (String::new(), String::new()),
        };
        out.write_record([
            c.band_target.value().to_string(),
            c.target.kind().to_string(),
            c.target.target_value().to_string(),
            opt(c.target.far_level()),
            n,
            metric,
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct RequiredRow {
    band_target: f64,
    target_kind: String,
    target_value: f64,
    far_level: Option<f64>,
    n_required: Option<u64>,
}

/// Parses `required_features.csv` back into per-band counts.
pub fn read_required_features<R: Read>(r: R) -> Result<Vec<TargetCount>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize::<RequiredRow>()
        .map(|row| {
            let row = row?;
            let target = match (row.target_kind.as_str(), row.far_level) {
                ("eer", _) => TargetSpec::Eer {
                    target: row.target_value,
                },
                ("frr_at_far", Some(far_level)) => TargetSpec::FrrAtFar {
                    far_level,
                    frr_target: row.target_value,
                },
                (kind, _) => {
                    return Err(Error::Format(format!(
                        "unknown target kind {kind:?} or missing far_level"
                    )))
                }
            };
            target.validate()?;
            Ok(TargetCount {
                target,
                icc: row.band_target,
                n_required: row.n_required,
            })
        })
        .collect()
}

/// `search_trace.csv`:
/// `band_target,target_kind,target_value,far_level,stage,replications,n_features,mean_metric`.
pub fn write_search_trace<W: Write>(w: W, cells: &[TableCell]) -> Result<()> {
    let mut out = writer(w);
    out.write_record([
        "band_target",
        "target_kind",
        "target_value",
        "far_level",
        "stage",
        "replications",
        "n_features",
        "mean_metric",
    ])?;
    for c in cells {
        let Some(r) = c.found() else { continue };
        for stage in &r.trace {
            for &(n, m) in &stage.scan {
                out.write_record([
                    c.band_target.value().to_string(),
                    c.target.kind().to_string(),
                    c.target.target_value().to_string(),
                    opt(c.target.far_level()),
                    stage.stage.to_string(),
                    stage.replications.to_string(),
                    n.to_string(),
                    m.to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// `fits.csv`:
/// `target_kind,target_value,far_level,slope,intercept,r_squared,f_value,df_model,df_residual,p_value`.
pub fn write_fits<W: Write>(w: W, fits: &[TargetFit]) -> Result<()> {
    let mut out = writer(w);
    out.write_record([
        "target_kind",
        "target_value",
        "far_level",
        "slope",
        "intercept",
        "r_squared",
        "f_value",
        "df_model",
        "df_residual",
        "p_value",
    ])?;
    for tf in fits {
        let f = &tf.fit;
        out.write_record([
            tf.target.kind().to_string(),
            tf.target.target_value().to_string(),
            opt(tf.target.far_level()),
            f.slope.to_string(),
            f.intercept.to_string(),
            f.r_squared.to_string(),
            f.f_value.to_string(),
            f.df_model.to_string(),
            f.df_residual.to_string(),
            f.p_value.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Plot-ready `fit_points.csv`:
/// `target_kind,target_value,far_level,icc,n_features,log10_n,fitted_log10_n`.
pub fn write_fit_points<W: Write>(w: W, fits: &[TargetFit]) -> Result<()> {
    let mut out = writer(w);
    out.write_record([
        "target_kind",
        "target_value",
        "far_level",
        "icc",
        "n_features",
        "log10_n",
        "fitted_log10_n",
    ])?;
    for tf in fits {
        for &(icc, n) in &tf.points {
            out.write_record([
                tf.target.kind().to_string(),
                tf.target.target_value().to_string(),
                opt(tf.target.far_level()),
                icc.to_string(),
                n.to_string(),
                (n as f64).log10().to_string(),
                tf.fit.predict_log10(icc).to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Scatter of `log10(N)` against ICC with one fitted line per target.
pub fn write_fit_svg<W: Write>(mut w: W, fits: &[TargetFit]) -> Result<()> {
    let (width, height, margin) = (640.0, 440.0, 56.0);
    let xs = || fits.iter().flat_map(|f| f.points.iter().map(|p| p.0));
    let ys = || fits.iter().flat_map(|f| f.points.iter().map(|p| (p.1 as f64).log10()));
    let (x0, x1) = (xs().fold(f64::INFINITY, f64::min), xs().fold(f64::NEG_INFINITY, f64::max));
    let (y0, y1) = (
        ys().fold(f64::INFINITY, f64::min).min(0.0),
        ys().fold(f64::NEG_INFINITY, f64::max),
    );
    let (x0, x1) = if x0 < x1 { (x0, x1) } else { (0.0, 1.0) };
    let y1 = if y1 > y0 { y1 } else { y0 + 1.0 };
    let px = |x: f64| margin + (x - x0) / (x1 - x0) * (width - 2.0 * margin);
    let py = |y: f64| height - margin - (y - y0) / (y1 - y0) * (height - 2.0 * margin);

    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    )?;
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    writeln!(
        w,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = margin,
        b = height - margin,
        r = width - margin,
        t = margin
    )?;
    writeln!(
        w,
        r#"<text x="{}" y="{}" text-anchor="middle">ICC</text><text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">log10(number of features)</text>"#,
        width / 2.0,
        height - 16.0,
        height / 2.0,
        height / 2.0
    )?;
    for (i, tf) in fits.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let label = match tf.target.far_level() {
            None => format!("EER < {}%", tf.target.target_value() * 100.0),
            Some(far) => format!("FRR {}% @ FAR {}%", tf.target.target_value() * 100.0, far * 100.0),
        };
        writeln!(
            w,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}"/>"#,
            px(x0),
            py(tf.fit.predict_log10(x0)),
            px(x1),
            py(tf.fit.predict_log10(x1))
        )?;
        for &(x, n) in &tf.points {
            writeln!(
                w,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#,
                px(x),
                py((n as f64).log10())
            )?;
        }
        writeln!(
            w,
            r#"<text x="{}" y="{}" fill="{color}" text-anchor="end">{label}</text>"#,
            width - margin,
            margin + 14.0 * i as f64
        )?;
    }
    writeln!(w, "</svg>")?;
    Ok(())
}
