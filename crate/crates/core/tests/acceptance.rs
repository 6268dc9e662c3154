//! Acceptance criteria. Each test prints one `[PASS]`/`[FAIL]` line; run with
//! `cargo test -p iccplan-core --test acceptance -- --nocapture --test-threads=1`.
//! The paper-scale variants of criteria 4 and 5 take many CPU-hours and are
//! `#[ignore]`d; run them with `-- --ignored`.

mod common;

use std::sync::OnceLock;

use common::*;
use iccplan_core::regression::{fit_all_targets, FitSummary, TargetCount};
use iccplan_core::search::TableCell;
use iccplan_core::*;
use rand::Rng;
use sha2::{Digest, Sha256};

const MASTER_SEED: u64 = 20_240_101;

// pinned tolerances
const NOISE_SD_07: f64 = 0.654654;
const NOISE_SD_TOL: f64 = 1e-5;
const ICC_MEAN_TOL: f64 = 0.005;
const FIT_COEF_TOL: f64 = 0.002;
const FIT_R2_TOL: f64 = 0.001;
const FIT_F_REL_TOL: f64 = 0.01;
const SLOPE_RANGE: (f64, f64) = (-2.25, -1.85);
const MIN_R2: f64 = 0.99;
const CELL_REL_TOL: f64 = 0.15;
const CELL_ABS_TOL: f64 = 2.0;
const TABLE_IV_SLOPE_TOL: f64 = 0.15;
const ORACLE_CASES: usize = 100;
const ORACLE_EXACT_TOL: f64 = 1e-9;
const WHITEN_TOL: f64 = 1e-8;

fn targets(values: &[f64]) -> Vec<IccTarget> {
    values.iter().map(|&v| IccTarget::new(v).unwrap()).collect()
}

fn eer_specs(values: &[f64]) -> Vec<TargetSpec> {
    values.iter().map(|&t| TargetSpec::eer(t).unwrap()).collect()
}

fn frr_specs(levels: &[f64]) -> Vec<TargetSpec> {
    levels.iter().map(|&l| TargetSpec::frr_at_far(l, 0.01).unwrap()).collect()
}

struct Run {
    cells: Vec<TableCell>,
    fits: FitSummary,
}

fn run_table(n_subjects: usize, stages: &[SearchStage], specs: &[TargetSpec]) -> Run {
    let bands = generate_bands(&targets(&BAND_TARGETS), n_subjects, 350, MASTER_SEED).unwrap();
    let cells = required_features_table(&bands, specs, stages, &ImpostorPolicy::FullCross, MASTER_SEED).unwrap();
    let fits = fit_all_targets(&TargetCount::from_table(&cells));
    Run { cells, fits }
}

/// 1,000 subjects, EER 5/2/1% plus FRR 1% at the two FAR levels that
/// 999,000 impostor pairs can resolve; stages of 1 then 20 replications.
fn desk_run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let mut specs = eer_specs(&EER_TARGETS[..3]);
        specs.extend(frr_specs(&FAR_LEVELS[..2]));
        let stages = [SearchStage::new(1, 350, 1), SearchStage::new(1, 350, 20)];
        run_table(1_000, &stages, &specs)
    })
}

fn paper_run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let mut specs = eer_specs(&EER_TARGETS);
        specs.extend(frr_specs(&FAR_LEVELS));
        run_table(10_000, &SearchStage::default_schedule(350), &specs)
    })
}

fn print_counts(run: &Run) {
    for cell in &run.cells {
        let n = cell.found().map_or("-".to_string(), |r| r.n_required.to_string());
        let far = cell.target.far_level().map_or(String::new(), |l| format!(" at FAR {l}"));
        println!(
            "    band {:.2} {} {}{far}: n = {n}",
            cell.band_target.value(),
            cell.target.kind(),
            cell.target.target_value()
        );
    }
    for (target, why) in &run.fits.skipped {
        println!("    skipped {target:?}: {why}");
    }
}

/// Primary check: every EER target fitted with slope in range and R² high.
fn check_eer_fits(run: &Run, expected_targets: usize) -> (bool, String) {
    let eer: Vec<_> = run.fits.fits.iter().filter(|f| f.target.kind() == "eer").collect();
    let mut ok = eer.len() == expected_targets;
    let mut detail = Vec::new();
    for tf in &eer {
        let good = (SLOPE_RANGE.0..=SLOPE_RANGE.1).contains(&tf.fit.slope) && tf.fit.r_squared >= MIN_R2;
        ok &= good;
        detail.push(format!(
            "EER {}: slope {:.3}, R2 {:.4}",
            tf.target.target_value(),
            tf.fit.slope,
            tf.fit.r_squared
        ));
    }
    (ok, format!("{} of {expected_targets} fitted; {}", eer.len(), detail.join("; ")))
}

fn check_frr_fits(run: &Run, levels: &[f64]) -> (bool, String) {
    let mut ok = true;
    let mut detail = Vec::new();
    let mut intercepts = Vec::new();
    for (k, &level) in levels.iter().enumerate() {
        let found = run.fits.fits.iter().find(|f| f.target.far_level() == Some(level));
        match found {
            Some(tf) => {
                let good = (tf.fit.slope - TABLE_IV[k].0).abs() <= TABLE_IV_SLOPE_TOL;
                ok &= good;
                intercepts.push(tf.fit.intercept);
                detail.push(format!("FAR {level}: slope {:.3}, intercept {:.3}", tf.fit.slope, tf.fit.intercept));
            }
            None => {
                ok = false;
                detail.push(format!("FAR {level}: no fit"));
            }
        }
    }
    let ordered = intercepts.windows(2).all(|w| w[1] > w[0]);
    ok &= ordered;
    (ok, format!("{}; intercepts strictly increasing: {ordered}", detail.join("; ")))
}

fn crossing_failures(cells: &[TableCell]) -> usize {
    cells
        .iter()
        .filter_map(TableCell::found)
        .filter(|r| !r.crossing_holds())
        .count()
}

#[test]
fn criterion_1_noise_sd() {
    let v = noise_sd(IccTarget::new(0.7).unwrap());
    let grid: Vec<f64> = (1..=99).map(|k| noise_sd(IccTarget::new(k as f64 / 100.0).unwrap())).collect();
    let decreasing = grid.windows(2).all(|w| w[1] < w[0]);
    let pass = (v - NOISE_SD_07).abs() <= NOISE_SD_TOL && decreasing;
    assert!(report(
        "1",
        "noise SD",
        pass,
        &format!("noise_sd(0.7) = {v:.6}; strictly decreasing on 0.01..0.99: {decreasing}")
    ));
}

#[test]
fn criterion_2_band_icc_summary() {
    let bands = generate_bands(&targets(&BAND_TARGETS), 10_000, 350, MASTER_SEED).unwrap();
    let summaries: Vec<BandIccSummary> = bands.iter().map(|b| band_icc_summary(b).unwrap()).collect();
    drop(bands);
    let means_ok = summaries.iter().all(|s| (s.mean - s.target.value()).abs() <= ICC_MEAN_TOL);
    let sds_ok = summaries.windows(2).all(|w| w[1].sd < w[0].sd);
    let detail: Vec<String> = summaries
        .iter()
        .zip(TABLE_I)
        .map(|(s, (_, paper_sd))| format!("{:.2}: {:.4} ± {:.4} (published sd {paper_sd})", s.target.value(), s.mean, s.sd))
        .collect();
    assert!(report(
        "2",
        "band ICC at 10,000 x 350",
        means_ok && sds_ok,
        &format!("means within {ICC_MEAN_TOL}: {means_ok}; sds decreasing: {sds_ok}; {}", detail.join(", "))
    ));
}

#[test]
fn criterion_3_planning_fits_from_published_counts() {
    let counts: Vec<TargetCount> = EER_TARGETS
        .iter()
        .enumerate()
        .flat_map(|(j, &t)| {
            BAND_TARGETS.iter().zip(TABLE_II).map(move |(&icc, row)| TargetCount {
                target: TargetSpec::eer(t).unwrap(),
                icc,
                n_required: Some(row[j]),
            })
        })
        .collect();
    let summary = fit_all_targets(&counts);
    let mut pass = summary.fits.len() == 5;
    let mut detail = Vec::new();
    for (tf, (f, p, r2, slope, intercept)) in summary.fits.iter().zip(TABLE_III) {
        let fit = &tf.fit;
        let row_ok = (fit.slope - slope).abs() <= FIT_COEF_TOL
            && (fit.intercept - intercept).abs() <= FIT_COEF_TOL
            && (fit.r_squared - r2).abs() <= FIT_R2_TOL
            && ((fit.f_value - f) / f).abs() <= FIT_F_REL_TOL
            && fit.p_value.log10().floor() == p.log10().floor();
        pass &= row_ok;
        detail.push(format!(
            "EER {}: slope {:.3} intercept {:.3} R2 {:.3} F {:.0} p {:.1e}",
            tf.target.target_value(),
            fit.slope,
            fit.intercept,
            fit.r_squared,
            fit.f_value,
            fit.p_value
        ));
    }
    assert!(report("3", "planning fits from published counts", pass, &detail.join("; ")));
}

#[test]
fn criterion_4_required_features_desk() {
    let run = desk_run();
    print_counts(run);
    let (pass, detail) = check_eer_fits(run, 3);
    assert!(report("4", "required-feature fits (desk: 1,000 subjects, 20 reps)", pass, &detail));
}

#[test]
#[ignore = "paper scale: 10,000 subjects, 100 replications; many CPU-hours"]
fn criterion_4_required_features_paper() {
    let run = paper_run();
    print_counts(run);
    let (pass, detail) = check_eer_fits(run, 5);
    let mut within = 0;
    let mut checked = 0;
    for cell in run.cells.iter().filter(|c| c.target.kind() == "eer") {
        let b = BAND_TARGETS.iter().position(|&t| t == cell.band_target.value()).unwrap();
        let j = EER_TARGETS.iter().position(|&t| t == cell.target.target_value()).unwrap();
        let paper = TABLE_II[b][j] as f64;
        checked += 1;
        if let Some(r) = cell.found() {
            if (r.n_required as f64 - paper).abs() <= (CELL_REL_TOL * paper).max(CELL_ABS_TOL) {
                within += 1;
            }
        }
    }
    println!("    secondary: {within}/{checked} cells within ±15% or ±2 of the published counts");
    assert!(report("4", "required-feature fits (10,000 subjects, 100 reps)", pass, &detail));
}

#[test]
fn criterion_5_frr_at_far_desk_analogue() {
    // 999,000 impostor pairs resolve FAR down to 0.01%; the two finer
    // levels need the paper-scale run below.
    let run = desk_run();
    let (pass, detail) = check_frr_fits(run, &FAR_LEVELS[..2]);
    assert!(report("5", "FRR@FAR fits (desk analogue, FAR 0.1%/0.01%)", pass, &detail));
}

#[test]
#[ignore = "paper scale: 10,000 subjects, 100 replications; many CPU-hours"]
fn criterion_5_frr_at_far_paper() {
    let run = paper_run();
    let (pass, detail) = check_frr_fits(run, &FAR_LEVELS);
    assert!(report("5", "FRR@FAR fits (10,000 subjects, 100 reps)", pass, &detail));
}

#[test]
fn criterion_6_oracle_equivalence() {
    let mut r = rng(606);
    let mut worst = [0.0f64; 5];
    let mut pass = true;
    for case in 0..ORACLE_CASES {
        let grid = if case % 2 == 0 { 0.05 } else { 0.0 };
        let (g, i) = random_scores(&mut r, 1000, grid);
        let set = ScoreSet::new(g.clone(), i.clone());
        let res = 1.0 / g.len() as f64;

        let eer = compute_eer(&set).unwrap().value;
        let d = (eer - brute_eer(&g, &i)).abs();
        worst[0] = worst[0].max(d);
        pass &= d <= res;

        if i.len() >= 20 {
            let level = r.random_range(10.0 / i.len() as f64..0.9);
            let d = (frr_at_far(&set, level).unwrap() - brute_frr_at_far(&g, &i, level)).abs();
            worst[1] = worst[1].max(d);
            pass &= d <= res;
        }

        for p in roc_curve(&set).unwrap() {
            let d = (p.far - brute_far(&i, p.threshold)).abs().max((p.frr - brute_frr(&g, p.threshold)).abs());
            worst[2] = worst[2].max(d);
            pass &= d <= res;
        }

        let n = r.random_range(3..=20);
        let x1: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let x2: Vec<f64> = x1.iter().map(|v| v + r.random_range(-1.5..1.5)).collect();
        let d = (icc_two_session(&x1, &x2).unwrap().value() - anova_icc(&x1, &x2)).abs();
        worst[3] = worst[3].max(d);
        pass &= d <= ORACLE_EXACT_TOL;

        let k = r.random_range(3..=10);
        let pts: Vec<(f64, u64)> = (0..k).map(|j| (0.3 + 0.07 * j as f64, r.random_range(1..400))).collect();
        let fit = fit_log_linear(&pts).unwrap();
        let (b0, b1) = normal_equations(&pts);
        let d = (fit.intercept - b0).abs().max((fit.slope - b1).abs());
        worst[4] = worst[4].max(d);
        pass &= d <= ORACLE_EXACT_TOL;
    }
    assert!(report(
        "6",
        "oracle equivalence",
        pass,
        &format!(
            "{ORACLE_CASES} fixtures each; max |diff| eer {:.1e}, frr@far {:.1e}, roc {:.1e}, icc {:.1e}, fit {:.1e}",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        )
    ));
}

fn small_table_digest() -> String {
    let bands = generate_bands(&targets(&[0.45, 0.85]), 200, 40, 99).unwrap();
    let summaries: Vec<_> = bands.iter().map(|b| band_icc_summary(b).unwrap()).collect();
    let stages = [SearchStage::new(1, 40, 1), SearchStage::new(1, 40, 4)];
    let specs = [TargetSpec::eer(0.05).unwrap(), TargetSpec::frr_at_far(0.001, 0.2).unwrap()];
    let cells = required_features_table(&bands, &specs, &stages, &ImpostorPolicy::FullCross, 99).unwrap();
    let mut bytes = Vec::new();
    report::write_band_icc(&mut bytes, &summaries).unwrap();
    report::write_required_features(&mut bytes, &cells).unwrap();
    report::write_search_trace(&mut bytes, &cells).unwrap();
    assert_eq!(crossing_failures(&cells), 0);
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn criterion_7_property_suite() {
    let mut r = rng(707);
    let mut roc_ok = true;
    let mut rank_ok = true;
    for _ in 0..100 {
        let (g, i) = random_scores(&mut r, 600, 0.0);
        let roc = roc_curve(&ScoreSet::new(g.clone(), i.clone())).unwrap();
        roc_ok &= roc.windows(2).all(|w| w[1].far <= w[0].far && w[1].frr >= w[0].frr);
        let f = |v: &[f64]| v.iter().map(|x| x.exp() + x * x * x).collect::<Vec<_>>();
        let a = compute_eer(&ScoreSet::new(g.clone(), i.clone())).unwrap().value;
        let b = compute_eer(&ScoreSet::new(f(&g), f(&i))).unwrap().value;
        rank_ok &= (a - b).abs() < 1e-12;
    }

    let mut whiten_err: f64 = 0.0;
    for _ in 0..20 {
        let p = r.random_range(2..8);
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|_| {
                let base: f64 = r.random_range(-1.0..1.0);
                (0..p).map(|k| base * k as f64 + r.random_range(-1.0..1.0)).collect()
            })
            .collect();
        whiten_err = whiten_err.max(max_identity_error(&sample_covariance(&whiten(&rows).unwrap())));
    }
    let whiten_ok = whiten_err <= WHITEN_TOL;

    let digest = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(small_table_digest)
    };
    let (one, three) = (digest(1), digest(3));
    let deterministic = one == three;

    let desk_crossings = crossing_failures(&desk_run().cells);
    let crossing_ok = desk_crossings == 0;

    let pass = roc_ok && rank_ok && whiten_ok && deterministic && crossing_ok;
    assert!(report(
        "7",
        "property suite",
        pass,
        &format!(
            "roc monotone {roc_ok}; eer rank-invariant {rank_ok}; whitening max err {whiten_err:.1e}; \
             csv sha256 1 vs 3 threads equal {deterministic} ({}...); crossing violations {desk_crossings}",
            &one[..12]
        )
    ));
}
