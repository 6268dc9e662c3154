use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use iccplan_core::featuregen::band_seed;
use iccplan_core::regression::{reference_coefficients, reference_eer_count, FitSummary, TargetCount};
use iccplan_core::search::{band_cells, CellOutcome, TableCell};
use iccplan_core::{
    band_icc_summary, fit_all_targets, generate_band, predict_feature_count, report, BandConfig, BandIccSummary,
    FeatureDataset, IccTarget, PlanningQuery, TargetSpec,
};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{pct_to_fraction, ConfigError, ExperimentConfig};
use crate::manifest::Run;
use crate::Exit;

pub const BAND_SUMMARY: &str = "band_summary.csv";
pub const BAND_ICC: &str = "band_icc.csv";
pub const BAND_HISTOGRAM: &str = "band_histogram.csv";
pub const REQUIRED_FEATURES: &str = "required_features.csv";
pub const SEARCH_TRACE: &str = "search_trace.csv";
pub const FITS: &str = "fits.csv";
pub const FIT_POINTS: &str = "fit_points.csv";
pub const FIT_SVG: &str = "fits.svg";
pub const CELL_DIR: &str = "cells";

pub fn dataset_path(index: usize, target: IccTarget) -> String {
    format!("datasets/band_{index:02}_{}.bin", target.value())
}

fn band_config(cfg: &ExperimentConfig, index: usize, target: IccTarget) -> iccplan_core::Result<BandConfig> {
    BandConfig::new(target, cfg.n_subjects, cfg.n_features, band_seed(cfg.master_seed, index))
}

/// Reads the band's dataset file when it matches the config, otherwise
/// regenerates it (generation is deterministic).
fn load_or_generate(out: &Path, cfg: &ExperimentConfig, index: usize, target: IccTarget) -> anyhow::Result<FeatureDataset> {
    let expected = band_config(cfg, index, target)?;
    let path = out.join(dataset_path(index, target));
    if let Ok(file) = fs::File::open(&path) {
        match FeatureDataset::read_binary(BufReader::new(file)) {
            Ok(ds) if *ds.config() == expected => {
                info!("loaded {}", path.display());
                return Ok(ds);
            }
            Ok(_) => info!("{} was generated with other settings; regenerating", path.display()),
            Err(e) => info!("{} is unreadable ({e}); regenerating", path.display()),
        }
    }
    Ok(generate_band(expected)?)
}

fn summaries(datasets: &[FeatureDataset]) -> anyhow::Result<Vec<BandIccSummary>> {
    datasets
        .iter()
        .map(|ds| band_icc_summary(ds).map_err(Into::into))
        .collect()
}

fn write_icc_tables(run: &mut Run, s: &[BandIccSummary]) -> anyhow::Result<()> {
    run.write_artifact(BAND_ICC, |w| report::write_band_icc(w, s))?;
    run.write_artifact(BAND_SUMMARY, |w| report::write_band_summary(w, s))?;
    run.write_artifact(BAND_HISTOGRAM, |w| report::write_band_histogram(w, s))?;
    for x in s {
        println!("band {:.2}: mean ICC {:.4}, sd {:.4}", x.target.value(), x.mean, x.sd);
    }
    Ok(())
}

pub fn generate(run: &mut Run, cfg: &ExperimentConfig) -> anyhow::Result<Exit> {
    cfg.validate()?;
    let mut out = Vec::new();
    // one band in memory at a time
    for (i, target) in cfg.band_targets()?.into_iter().enumerate() {
        let ds = generate_band(band_config(cfg, i, target)?)?;
        run.write_artifact(&dataset_path(i, target), |w| ds.write_binary(w))?;
        if cfg.n_subjects >= 3 {
            out.push(band_icc_summary(&ds)?);
        }
    }
    if cfg.n_subjects < 3 {
        run.warn("ICC needs at least 3 subjects; band_summary.csv has a header only");
    }
    run.write_artifact(BAND_SUMMARY, |w| report::write_band_summary(w, &out))?;
    Ok(Exit::Success)
}

pub fn icc(run: &mut Run, cfg: &ExperimentConfig) -> anyhow::Result<Exit> {
    cfg.validate()?;
    if cfg.n_subjects < 3 {
        return Err(ConfigError::invalid("ICC needs at least 3 subjects").into());
    }
    let mut out = Vec::new();
    for (i, target) in cfg.band_targets()?.into_iter().enumerate() {
        let ds = load_or_generate(run.out(), cfg, i, target)?;
        out.push(band_icc_summary(&ds)?);
    }
    write_icc_tables(run, &out)?;
    Ok(Exit::Success)
}

#[derive(Serialize, Deserialize)]
struct CellFile {
    config_checksum: String,
    cell: TableCell,
}

fn cell_path(out: &Path, band: usize, target: &TargetSpec) -> PathBuf {
    let name = match *target {
        TargetSpec::Eer { target } => format!("b{band:02}_eer_{target}.json"),
        TargetSpec::FrrAtFar { far_level, frr_target } => format!("b{band:02}_frr_{frr_target}_far_{far_level}.json"),
    };
    out.join(CELL_DIR).join(name)
}

/// A finished cell from an earlier run with the same config, if any.
/// Failed cells are always recomputed.
fn read_cell(out: &Path, band: usize, target: &TargetSpec, checksum: &str) -> Option<TableCell> {
    let text = fs::read_to_string(cell_path(out, band, target)).ok()?;
    let file: CellFile = serde_json::from_str(&text).ok()?;
    let ok = file.config_checksum == checksum
        && file.cell.band_index == band
        && file.cell.target == *target
        && !matches!(file.cell.outcome, CellOutcome::Failed { .. });
    ok.then_some(file.cell)
}

fn write_cell(out: &Path, cell: &TableCell, checksum: &str) -> anyhow::Result<()> {
    let path = cell_path(out, cell.band_index, &cell.target);
    fs::create_dir_all(path.parent().unwrap())?;
    let file = CellFile {
        config_checksum: checksum.into(),
        cell: cell.clone(),
    };
    // write-then-rename so an interrupted run never leaves a partial cell
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_string_pretty(&file)?)?;
    fs::rename(&tmp, &path)?;
    Ok(())
}

/// Every `(band, target)` cell in band-major, config order. Cells already
/// on disk for this config are reused; the rest are searched and saved as
/// they finish.
fn search_cells(
    run: &Run,
    cfg: &ExperimentConfig,
    targets: &[TargetSpec],
    datasets: Option<&[FeatureDataset]>,
) -> anyhow::Result<Vec<TableCell>> {
    let out = run.out();
    let checksum = cfg.checksum();
    let bands = cfg.band_targets()?;
    let per_band: Vec<Vec<TableCell>> = bands
        .par_iter()
        .enumerate()
        .map(|(b, &band)| {
            let mut cells: Vec<Option<TableCell>> = targets.iter().map(|t| read_cell(out, b, t, &checksum)).collect();
            let missing: Vec<TargetSpec> = targets
                .iter()
                .zip(&cells)
                .filter(|(_, c)| c.is_none())
                .map(|(t, _)| *t)
                .collect();
            let resumed = targets.len() - missing.len();
            if !missing.is_empty() {
                let owned;
                let ds = match datasets {
                    Some(all) => &all[b],
                    None => {
                        owned = load_or_generate(out, cfg, b, band)?;
                        &owned
                    }
                };
                let fresh = band_cells(ds, b, &missing, &cfg.stages, &cfg.impostor_policy, cfg.master_seed)?;
                for cell in fresh {
                    write_cell(out, &cell, &checksum)?;
                    let slot = targets.iter().position(|t| *t == cell.target).unwrap();
                    cells[slot] = Some(cell);
                }
            }
            info!(
                "band {}: {} cell(s) searched, {resumed} resumed",
                band.value(),
                missing.len()
            );
            Ok(cells.into_iter().map(Option::unwrap).collect())
        })
        .collect::<anyhow::Result<_>>()?;
    Ok(per_band.into_iter().flatten().collect())
}

fn describe(target: &TargetSpec) -> String {
    match *target {
        TargetSpec::Eer { target } => format!("EER {target}"),
        TargetSpec::FrrAtFar { far_level, frr_target } => format!("FRR {frr_target} at FAR {far_level}"),
    }
}

/// Writes the search tables and records unfinished cells.
fn finish_search(run: &mut Run, cells: &[TableCell]) -> anyhow::Result<Exit> {
    run.write_artifact(REQUIRED_FEATURES, |w| report::write_required_features(w, cells))?;
    run.write_artifact(SEARCH_TRACE, |w| report::write_search_trace(w, cells))?;
    let mut exit = Exit::Success;
    for c in cells {
        let subject = format!("band {} {}", c.band_target.value(), describe(&c.target));
        match &c.outcome {
            CellOutcome::Found(r) => println!("{subject}: {} features", r.n_required),
            CellOutcome::NotReachable { best_metric, best_n } => {
                println!("{subject}: not reached (best mean {best_metric} at {best_n} features)");
                run.failure(
                    subject,
                    format!("target not reached; best mean metric {best_metric} at {best_n} features"),
                );
                exit = exit.max(Exit::NotReachable);
            }
            CellOutcome::Failed { message } => {
                println!("{subject}: failed: {message}");
                run.failure(subject, message.clone());
                exit = exit.max(Exit::Failure);
            }
        }
    }
    Ok(exit)
}

pub fn search(run: &mut Run, cfg: &ExperimentConfig) -> anyhow::Result<Exit> {
    cfg.validate_for_search()?;
    let cells = search_cells(run, cfg, &cfg.targets()?, None)?;
    finish_search(run, &cells)
}

fn write_fit_tables(run: &mut Run, summary: &FitSummary, svg: bool) -> anyhow::Result<()> {
    run.write_artifact(FITS, |w| report::write_fits(w, &summary.fits))?;
    run.write_artifact(FIT_POINTS, |w| report::write_fit_points(w, &summary.fits))?;
    if svg {
        run.write_artifact(FIT_SVG, |w| report::write_fit_svg(w, &summary.fits))?;
    }
    for tf in &summary.fits {
        let f = &tf.fit;
        println!(
            "{}: log10 N = {:.3} {:+.3} * ICC  (R2 {:.4}, F {:.1}, p {:.2e})",
            describe(&tf.target),
            f.intercept,
            f.slope,
            f.r_squared,
            f.f_value,
            f.p_value
        );
    }
    for (target, why) in &summary.skipped {
        run.failure(format!("fit {}", describe(target)), why.clone());
    }
    Ok(())
}

pub fn fit(run: &mut Run, input: &Path, svg: bool) -> anyhow::Result<Exit> {
    let file = fs::File::open(input).with_context(|| format!("cannot open {}", input.display()))?;
    let counts = report::read_required_features(BufReader::new(file))?;
    let summary = fit_all_targets(&counts);
    write_fit_tables(run, &summary, svg)?;
    if summary.fits.is_empty() {
        bail!("no target could be fitted");
    }
    Ok(if summary.skipped.is_empty() { Exit::Success } else { Exit::NotReachable })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictTarget {
    /// Percent.
    Eer(f64),
    /// Percents.
    FrrAtFar { frr: f64, far: f64 },
}

/// Feature count from the bundled planning coefficients.
pub fn predict(icc: f64, target: PredictTarget) -> anyhow::Result<String> {
    let icc_target = IccTarget::new(icc).map_err(|e| ConfigError::invalid(format!("--icc: {e}")))?;
    let spec = match target {
        PredictTarget::Eer(pct) => TargetSpec::Eer { target: pct_to_fraction(pct) },
        PredictTarget::FrrAtFar { frr, far } => TargetSpec::FrrAtFar {
            far_level: pct_to_fraction(far),
            frr_target: pct_to_fraction(frr),
        },
    };
    let table = reference_coefficients();
    let Some(&(_, slope, intercept)) = table.iter().find(|(t, _, _)| *t == spec) else {
        let known: Vec<String> = table.iter().map(|(t, _, _)| describe(t)).collect();
        return Err(ConfigError::invalid(format!(
            "no bundled coefficients for {} (targets are percents; available: {})",
            describe(&spec),
            known.join(", ")
        ))
        .into());
    };
    let fit = iccplan_core::regression::reference_fit(slope, intercept);
    let p = predict_feature_count(&PlanningQuery { icc: icc_target, fit });
    let mut text = format!(
        "{} features for {} at ICC {icc} (log10 N = {intercept} {slope:+} * ICC = {:.4})",
        p.n,
        describe(&spec),
        p.log10_n
    );
    if let TargetSpec::Eer { target } = spec {
        if let Some(n) = reference_eer_count(icc, target) {
            text.push_str(&format!("\npublished simulation count at this ICC: {n}"));
        }
    }
    if p.extrapolated {
        log::warn!(
            "ICC {icc} is outside the fitted range {}..{}; this is an extrapolation",
            fit.icc_min,
            fit.icc_max
        );
        text.push_str(&format!(
            "\nwarning: extrapolated outside ICC {}..{}",
            fit.icc_min, fit.icc_max
        ));
    }
    Ok(text)
}

/// generate -> icc -> search -> fit. With `drop_unresolvable`, targets the
/// subject count cannot resolve are removed and reported instead of failing.
pub fn reproduce(run: &mut Run, cfg: &ExperimentConfig, drop_unresolvable: bool, svg: bool) -> anyhow::Result<Exit> {
    let mut cfg = cfg.clone();
    cfg.validate()?;
    if drop_unresolvable {
        for (target, why) in cfg.drop_unresolvable()? {
            run.warn(format!("dropping {}: {why}", describe(&target)));
            run.dropped(describe(&target), why);
        }
    }
    run.set_config(&cfg);
    cfg.validate_for_search()?;
    if cfg.n_subjects < 3 {
        return Err(ConfigError::invalid("ICC needs at least 3 subjects").into());
    }

    let datasets: Vec<FeatureDataset> = cfg
        .band_targets()?
        .into_par_iter()
        .enumerate()
        .map(|(i, t)| Ok(generate_band(band_config(&cfg, i, t)?)?))
        .collect::<anyhow::Result<_>>()?;
    write_icc_tables(run, &summaries(&datasets)?)?;

    let cells = search_cells(run, &cfg, &cfg.targets()?, Some(&datasets))?;
    drop(datasets);
    let exit = finish_search(run, &cells)?;

    let summary = fit_all_targets(&TargetCount::from_table(&cells));
    write_fit_tables(run, &summary, svg)?;
    Ok(exit)
}
