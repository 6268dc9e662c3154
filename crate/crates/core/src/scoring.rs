//! Genuine/impostor score generation for a feature subset.
//!
//! Selected features are z-scored with gallery (session-1) statistics, then
//! compared by cosine similarity. Genuine scores pair a subject's session-1
//! vector with its own session-2 vector; impostor scores pair subject `i`'s
//! session-1 vector with subject `j`'s session-2 vector for `i != j`.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featuregen::{FeatureDataset, Session};
use crate::metrics::{ImpostorCounts, ScoreTally};
use crate::rng;

/// Gallery rows per GEMM block. Fixed so results never depend on thread count.
const BLOCK_ROWS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSubset {
    indices: Vec<usize>,
}

impl FeatureSubset {
    /// Indices are stored sorted.
    pub fn new(mut indices: Vec<usize>, n_features: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidParameter("feature subset is empty".into()));
        }
        indices.sort_unstable();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n_features) {
            return Err(Error::InvalidParameter(format!(
                "feature index {bad} out of range for {n_features} features"
            )));
        }
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter("feature subset has duplicate indices".into()));
        }
        Ok(Self { indices })
    }

    pub fn all(n_features: usize) -> Self {
        Self {
            indices: (0..n_features).collect(),
        }
    }

    /// Uniform random `n`-subset drawn without replacement.
    pub fn random<R: Rng + ?Sized>(n_features: usize, n: usize, rng: &mut R) -> Result<Self> {
        if n == 0 || n > n_features {
            return Err(Error::InvalidParameter(format!(
                "cannot draw {n} of {n_features} features"
            )));
        }
        Self::new(index::sample(rng, n_features, n).into_vec(), n_features)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Which impostor pairs to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ImpostorPolicy {
    /// Every ordered pair `(i, j)`, `i != j`.
    #[default]
    FullCross,
    /// `sample_size` distinct ordered pairs drawn without replacement.
    Sampled { sample_size: usize, seed: u64 },
}

impl ImpostorPolicy {
    pub fn validate(&self, n_subjects: usize) -> Result<()> {
        if n_subjects < 2 {
            return Err(Error::InvalidParameter("impostor pairs need at least 2 subjects".into()));
        }
        if let ImpostorPolicy::Sampled { sample_size, .. } = *self {
            let available = n_subjects * (n_subjects - 1);
            if sample_size == 0 || sample_size > available {
                return Err(Error::InvalidParameter(format!(
                    "sample size {sample_size} outside 1..={available} ordered pairs"
                )));
            }
        }
        Ok(())
    }

    pub fn impostor_count(&self, n_subjects: usize) -> u64 {
        match *self {
            ImpostorPolicy::FullCross => (n_subjects as u64) * (n_subjects as u64).saturating_sub(1),
            ImpostorPolicy::Sampled { sample_size, .. } => sample_size as u64,
        }
    }

    /// Sampled `(gallery, probe)` pairs in lexicographic order; `None` for full cross.
    pub fn sampled_pairs(&self, n_subjects: usize) -> Result<Option<Vec<(u32, u32)>>> {
        self.validate(n_subjects)?;
        let ImpostorPolicy::Sampled { sample_size, seed } = *self else {
            return Ok(None);
        };
        let row = n_subjects - 1;
        let mut rng = rng::stream_rng(seed, 0);
        let mut flat = index::sample(&mut rng, n_subjects * row, sample_size).into_vec();
        flat.sort_unstable();
        Ok(Some(
            flat.into_iter()
                .map(|k| {
                    let i = k / row;
                    let r = k % row;
                    let j = if r >= i { r + 1 } else { r };
                    (i as u32, j as u32)
                })
                .collect(),
        ))
    }
}

/// Genuine and impostor similarity scores. Higher means more similar.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
    /// `(gallery subject, probe subject)` per impostor score, when known.
    pub impostor_pairs: Vec<(u32, u32)>,
}

impl ScoreSet {
    pub fn new(genuine: Vec<f64>, impostor: Vec<f64>) -> Self {
        Self {
            genuine,
            impostor,
            impostor_pairs: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.genuine.is_empty() || self.impostor.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "need at least one genuine and one impostor score, got {} and {}",
                self.genuine.len(),
                self.impostor.len()
            )));
        }
        if self.genuine.iter().chain(&self.impostor).any(|s| !s.is_finite()) {
            return Err(Error::InvalidParameter("scores must be finite".into()));
        }
        Ok(())
    }
}

/// Per-feature `(mean, sd)` over the gallery session; sd uses `n - 1`.
pub fn zscore_params(ds: &FeatureDataset, subset: &FeatureSubset) -> Result<Vec<(f64, f64)>> {
    let n = ds.n_subjects() as f64;
    subset
        .indices()
        .iter()
        .map(|&f| {
            if f >= ds.n_features() {
                return Err(Error::InvalidParameter(format!("feature {f} out of range")));
            }
            let col = ds.column(f, Session::First);
            let mean = col.iter().sum::<f64>() / n;
            let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
            let sd = (ss / (n - 1.0)).sqrt();
            if !(sd > 0.0) {
                return Err(Error::Degenerate(format!("feature {f} has zero gallery variance")));
            }
            Ok((mean, sd))
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity.
pub fn similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "vectors must have equal nonzero length, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if !(na > 0.0 && nb > 0.0) {
        return Err(Error::Degenerate("cosine similarity of a zero-norm vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Unit-normalized gallery and probe rows, ready for dot-product scoring.
pub struct PreparedScorer {
    n: usize,
    dim: usize,
    gallery: Vec<f64>,
    probe: Vec<f64>,
}

impl PreparedScorer {
    pub fn new(ds: &FeatureDataset, subset: &FeatureSubset) -> Result<Self> {
        let params = zscore_params(ds, subset)?;
        let n = ds.n_subjects();
        let dim = subset.len();
        let mut gallery = Vec::with_capacity(n * dim);
        let mut probe = Vec::with_capacity(n * dim);
        for subject in 0..n {
            for (session, out) in [(Session::First, &mut gallery), (Session::Second, &mut probe)] {
                let start = out.len();
                out.extend(
                    subset
                        .indices()
                        .iter()
                        .zip(&params)
                        .map(|(&f, &(m, s))| (ds.get(subject, f, session) - m) / s),
                );
                let row = &mut out[start..];
                let norm = dot(row, row).sqrt();
                if !(norm > 0.0) {
                    return Err(Error::Degenerate(format!(
                        "subject {subject} has a zero-norm normalized vector in {session:?} session"
                    )));
                }
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        Ok(Self { n, dim, gallery, probe })
    }

    fn gallery_row(&self, i: usize) -> &[f64] {
        &self.gallery[i * self.dim..(i + 1) * self.dim]
    }

    fn probe_row(&self, j: usize) -> &[f64] {
        &self.probe[j * self.dim..(j + 1) * self.dim]
    }

    pub fn pair_score(&self, gallery: usize, probe: usize) -> f64 {
        dot(self.gallery_row(gallery), self.probe_row(probe))
    }

    pub fn genuine(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.pair_score(i, i)).collect()
    }

    /// Scores gallery rows `rows` against every probe row into `out`
    /// (row-major, `rows.len() x n`).
    fn score_block(&self, rows: std::ops::Range<usize>, out: &mut [f64]) {
        let m = rows.len();
        debug_assert_eq!(out.len(), m * self.n);
        let a = &self.gallery[rows.start * self.dim..rows.end * self.dim];
        // SAFETY: every slice covers exactly the extents described by its
        // dimensions and strides, and `out` does not alias the inputs.
        unsafe {
            matrixmultiply::dgemm(
                m,
                self.dim,
                self.n,
                1.0,
                a.as_ptr(),
                self.dim as isize,
                1,
                self.probe.as_ptr(),
                1,
                self.dim as isize,
                0.0,
                out.as_mut_ptr(),
                self.n as isize,
                1,
            );
        }
    }

    fn blocks(&self) -> Vec<std::ops::Range<usize>> {
        (0..self.n)
            .step_by(BLOCK_ROWS)
            .map(|s| s..(s + BLOCK_ROWS).min(self.n))
            .collect()
    }

    /// Materializes impostor scores, in `(gallery, probe)` lexicographic order.
    pub fn impostor_scores(&self, policy: &ImpostorPolicy) -> Result<(Vec<f64>, Vec<(u32, u32)>)> {
        if let Some(pairs) = policy.sampled_pairs(self.n)? {
            let scores = pairs
                .par_iter()
                .map(|&(i, j)| self.pair_score(i as usize, j as usize))
                .collect();
            return Ok((scores, pairs));
        }
        let n = self.n;
        let rows: Vec<Vec<f64>> = self
            .blocks()
            .into_par_iter()
            .map(|rows| {
                let mut buf = vec![0.0; rows.len() * n];
                self.score_block(rows.clone(), &mut buf);
                let mut keep = Vec::with_capacity(rows.len() * (n - 1));
                for (r, i) in rows.enumerate() {
                    let line = &buf[r * n..(r + 1) * n];
                    keep.extend(line.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &s)| s));
                }
                keep
            })
            .collect();
        let scores: Vec<f64> = rows.into_iter().flatten().collect();
        let pairs = (0..n as u32)
            .flat_map(|i| (0..n as u32).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        Ok((scores, pairs))
    }

    /// Streams impostor scores into a tally without materializing them.
    pub fn tally(&self, policy: &ImpostorPolicy) -> Result<ScoreTally> {
        let mut tally = ScoreTally::from_genuine(&self.genuine())?;
        let index = tally.index();
        let counts = if let Some(pairs) = policy.sampled_pairs(self.n)? {
            pairs
                .par_chunks(4096)
                .fold(
                    || ImpostorCounts::new(index),
                    |mut acc, chunk| {
                        for &(i, j) in chunk {
                            acc.record(index, self.pair_score(i as usize, j as usize));
                        }
                        acc
                    },
                )
                .reduce(|| ImpostorCounts::new(index), ImpostorCounts::merged)
        } else {
            let n = self.n;
            self.blocks()
                .into_par_iter()
                .fold(
                    || (ImpostorCounts::new(index), Vec::new()),
                    |(mut acc, mut buf), rows| {
                        buf.resize(rows.len() * n, 0.0);
                        self.score_block(rows.clone(), &mut buf);
                        for (r, i) in rows.enumerate() {
                            for (j, &s) in buf[r * n..(r + 1) * n].iter().enumerate() {
                                if j != i {
                                    acc.record(index, s);
                                }
                            }
                        }
                        (acc, buf)
                    },
                )
                .map(|(acc, _)| acc)
                .reduce(|| ImpostorCounts::new(index), ImpostorCounts::merged)
        };
        tally.set_impostor_counts(counts);
        Ok(tally)
    }
}

/// Materialized genuine and impostor scores for `subset`.
pub fn score_dataset(ds: &FeatureDataset, subset: &FeatureSubset, policy: &ImpostorPolicy) -> Result<ScoreSet> {
    policy.validate(ds.n_subjects())?;
    let scorer = PreparedScorer::new(ds, subset)?;
    let (impostor, impostor_pairs) = scorer.impostor_scores(policy)?;
    Ok(ScoreSet {
        genuine: scorer.genuine(),
        impostor,
        impostor_pairs,
    })
}

/// Streaming counterpart of [`score_dataset`]: impostor scores are counted
/// against the genuine thresholds and then dropped.
pub fn tally_dataset(ds: &FeatureDataset, subset: &FeatureSubset, policy: &ImpostorPolicy) -> Result<ScoreTally> {
    policy.validate(ds.n_subjects())?;
    PreparedScorer::new(ds, subset)?.tally(policy)
}

fn covariance(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = rows.len() as f64;
    let p = rows[0].len();
    let mut mean = vec![0.0; p];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let mut cov = vec![vec![0.0; p]; p];
    for r in &centered {
        for a in 0..p {
            for b in 0..=a {
                cov[a][b] += r[a] * r[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..=a {
            cov[a][b] /= n - 1.0;
            cov[b][a] = cov[a][b];
        }
    }
    (mean, cov)
}

/// Cholesky whitening: centers the data and applies `L^-1`, where
/// `L L^T` is the sample covariance, so the output has identity covariance.
pub fn whiten(features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if features.len() < 2 {
        return Err(Error::InvalidParameter("whitening needs at least 2 subjects".into()));
    }
    let p = features[0].len();
    if p == 0 || features.iter().any(|r| r.len() != p) {
        return Err(Error::DimensionMismatch("rows must share a nonzero feature count".into()));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("features must be finite".into()));
    }
    let (mean, cov) = covariance(features);

    // lower-triangular Cholesky factor
    let scale = (0..p).map(|i| cov[i][i]).fold(0.0f64, f64::max);
    let tol = scale * 1e-12 * p as f64;
    let mut l = vec![vec![0.0; p]; p];
    for j in 0..p {
        let d = cov[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if !(d > tol) {
            return Err(Error::SingularCovariance {
                pivot: j,
                dim: p,
                deficiency: p - j,
            });
        }
        l[j][j] = d.sqrt();
        for i in j + 1..p {
            let s = cov[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            l[i][j] = s / l[j][j];
        }
    }

    // forward substitution per row: solve L y = x - mean
    Ok(features
        .iter()
        .map(|row| {
            let mut y = vec![0.0; p];
            for i in 0..p {
                let s = (0..i).map(|k| l[i][k] * y[k]).sum::<f64>();
                y[i] = (row[i] - mean[i] - s) / l[i][i];
            }
            y
        })
        .collect())
}
