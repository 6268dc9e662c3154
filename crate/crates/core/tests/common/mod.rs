#![allow(dead_code)]

//! Brute-force oracles and published reference values shared by the
//! integration suites. Nothing here calls into the code paths it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BAND_TARGETS: [f64; 7] = [0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95];
pub const EER_TARGETS: [f64; 5] = [0.05, 0.02, 0.01, 0.005, 0.001];
pub const FAR_LEVELS: [f64; 4] = [0.001, 0.0001, 0.00001, 0.000001];

/// Required feature counts per band (rows) and EER target (columns).
pub const TABLE_II: [[u64; 5]; 7] = [
    [82, 127, 162, 198, 281],
    [48, 74, 94, 115, 166],
    [30, 46, 59, 72, 102],
    [19, 30, 38, 46, 66],
    [13, 20, 25, 30, 43],
    [8, 12, 16, 19, 27],
    [5, 7, 8, 10, 14],
];

/// `(F, p, R², slope, intercept)` per EER target.
pub const TABLE_III: [(f64, f64, f64, f64, f64); 5] = [
    (3637.0, 2e-8, 0.999, -1.987, 2.587),
    (2801.0, 5e-8, 0.998, -2.042, 2.804),
    (1036.0, 5e-7, 0.995, -2.082, 2.930),
    (1678.0, 2e-7, 0.997, -2.084, 3.016),
    (1476.0, 2e-7, 0.997, -2.093, 3.176),
];

/// `(slope, intercept)` for FRR = 1% at each FAR level.
pub const TABLE_IV: [(f64, f64); 4] = [(-2.086, 3.060), (-2.076, 3.150), (-2.091, 3.232), (-2.064, 3.279)];

/// `(mean, sd)` of per-feature ICC per band.
pub const TABLE_I: [(f64, f64); 7] = [
    (0.350, 0.009),
    (0.450, 0.008),
    (0.549, 0.007),
    (0.650, 0.006),
    (0.750, 0.004),
    (0.850, 0.003),
    (0.950, 0.001),
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// ICC(3,1) from an explicit subjects x sessions two-way ANOVA table.
pub fn anova_icc(x1: &[f64], x2: &[f64]) -> f64 {
    let n = x1.len();
    let k = 2usize;
    let table: Vec<[f64; 2]> = x1.iter().zip(x2).map(|(&a, &b)| [a, b]).collect();
    let grand = table.iter().flatten().sum::<f64>() / (n * k) as f64;
    let row: Vec<f64> = table.iter().map(|r| (r[0] + r[1]) / k as f64).collect();
    let col: Vec<f64> = (0..k)
        .map(|j| table.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let ss_rows = k as f64 * row.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let mut ss_err = 0.0;
    for i in 0..n {
        for j in 0..k {
            ss_err += (table[i][j] - row[i] - col[j] + grand).powi(2);
        }
    }
    let msr = ss_rows / (n - 1) as f64;
    let mse = ss_err / ((n - 1) * (k - 1)) as f64;
    (msr - mse) / (msr + (k as f64 - 1.0) * mse)
}

/// `(threshold, far, frr)` at `-inf` and every distinct observed score.
pub fn brute_roc(genuine: &[f64], impostor: &[f64]) -> Vec<(f64, f64, f64)> {
    let mut thresholds: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    std::iter::once(f64::NEG_INFINITY)
        .chain(thresholds)
        .map(|t| (t, brute_far(impostor, t), brute_frr(genuine, t)))
        .collect()
}

pub fn brute_far(impostor: &[f64], t: f64) -> f64 {
    impostor.iter().filter(|&&s| s > t).count() as f64 / impostor.len() as f64
}

pub fn brute_frr(genuine: &[f64], t: f64) -> f64 {
    genuine.iter().filter(|&&s| s <= t).count() as f64 / genuine.len() as f64
}

/// EER from the full sweep: first threshold with far <= frr, linearly
/// interpolated against the previous threshold.
pub fn brute_eer(genuine: &[f64], impostor: &[f64]) -> f64 {
    let pts = brute_roc(genuine, impostor);
    for i in 0..pts.len() {
        let (_, far, frr) = pts[i];
        if far <= frr {
            if far == frr {
                return far;
            }
            let (_, fp, rp) = pts[i - 1];
            let a = (fp - rp) / ((fp - rp) - (far - frr));
            return fp + a * (far - fp);
        }
    }
    unreachable!("frr reaches 1 at the largest score")
}

/// FRR at the smallest observed threshold with far <= level.
pub fn brute_frr_at_far(genuine: &[f64], impostor: &[f64], level: f64) -> f64 {
    let mut ts: Vec<f64> = impostor.to_vec();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let t = ts
        .into_iter()
        .find(|&t| brute_far(impostor, t) <= level)
        .expect("far is 0 at the largest impostor");
    brute_frr(genuine, t)
}

/// `(intercept, slope)` from the 2x2 normal equations by Cramer's rule.
pub fn normal_equations(points: &[(f64, u64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let (mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, c) in points {
        let y = (c as f64).log10();
        sx += x;
        sxx += x * x;
        sy += y;
        sxy += x * y;
    }
    let det = n * sxx - sx * sx;
    ((sy * sxx - sx * sxy) / det, (n * sxy - sx * sy) / det)
}

/// Squared Pearson correlation of `(x, log10 n)`.
pub fn correlation_squared(points: &[(f64, u64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| (p.1 as f64).log10()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    cov * cov / (vx * vy)
}

pub fn sample_covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let p = rows[0].len();
    let mean: Vec<f64> = (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    (0..p)
        .map(|a| {
            (0..p)
                .map(|b| rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (n - 1.0))
                .collect()
        })
        .collect()
}

pub fn max_identity_error(cov: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, row) in cov.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let expect = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((v - expect).abs());
        }
    }
    worst
}

/// Random score fixture; `grid > 0` rounds scores to force ties.
pub fn random_scores(r: &mut ChaCha8Rng, max_total: usize, grid: f64) -> (Vec<f64>, Vec<f64>) {
    let ng = r.random_range(1..=max_total / 4);
    let ni = r.random_range(1..=max_total - ng);
    let shift = r.random_range(0.0..2.5);
    let mut draw = |mu: f64| {
        let v: f64 = mu + r.random_range(-1.0..1.0) + r.random_range(-1.0..1.0);
        if grid > 0.0 {
            (v / grid).round() * grid
        } else {
            v
        }
    };
    let g = (0..ng).map(|_| draw(shift)).collect();
    let i = (0..ni).map(|_| draw(0.0)).collect();
    (g, i)
}

/// Cosine similarity written out from its definition.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn report(id: &str, name: &str, pass: bool, detail: &str) -> bool {
    println!("[{}] {id} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}
