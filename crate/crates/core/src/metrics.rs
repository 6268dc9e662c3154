//! Empirical error rates from genuine/impostor scores.
//!
//! Conventions: FRR at threshold `t` is the fraction of genuine scores
//! `<= t`; FAR is the fraction of impostor scores `> t`.
//!
//! Impostor scores are never sorted. Each one is located against the sorted
//! distinct genuine values and counted into a per-gap or per-tie bucket,
//! keeping the largest impostor seen in every gap. That is enough to recover
//! every corner of the empirical ROC staircase exactly, so EER and FRR at a
//! fixed FAR match a full sweep over all observed scores while memory stays
//! proportional to the genuine count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::ScoreSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRatePoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerEstimate {
    pub value: f64,
    pub threshold: f64,
    /// `1 / n_genuine`.
    pub genuine_resolution: f64,
}

/// Sorted distinct genuine scores with cumulative counts.
#[derive(Debug, Clone)]
pub struct GenuineIndex {
    values: Vec<f64>,
    /// `at_or_below[k]` = number of genuine scores `<= values[k]`.
    at_or_below: Vec<u64>,
    n: u64,
    grid: Grid,
}

/// Uniform grid over the genuine range narrowing each binary search to a
/// few candidates. `starts[c]` = number of values below the lower edge of
/// cell `c`.
#[derive(Debug, Clone)]
struct Grid {
    lo: f64,
    scale: f64,
    starts: Vec<usize>,
}

impl Grid {
    fn new(values: &[f64]) -> Self {
        let m = values.len();
        let lo = values[0];
        let span = values[m - 1] - lo;
        if !(span > 0.0) || m < 16 {
            return Self {
                lo,
                scale: 0.0,
                starts: vec![0, m],
            };
        }
        let cells = 4 * m;
        let scale = cells as f64 / span;
        let mut starts = Vec::with_capacity(cells + 1);
        let mut p = 0;
        for c in 0..cells {
            let edge = lo + c as f64 / scale;
            while p < m && values[p] < edge {
                p += 1;
            }
            starts.push(p);
        }
        starts.push(m);
        Self { lo, scale, starts }
    }

    /// Index window `[lo, hi)` that should contain the partition point of
    /// `score`, padded by one cell on each side against rounding.
    #[inline]
    fn window(&self, score: f64) -> (usize, usize) {
        let cells = self.starts.len() - 1;
        let c = ((score - self.lo) * self.scale).floor();
        if !(c >= 1.0) {
            return (0, self.starts[2.min(cells)]);
        }
        let c = (c as usize).min(cells - 1);
        (self.starts[c - 1], self.starts[(c + 2).min(cells)])
    }
}

impl GenuineIndex {
    pub fn new(genuine: &[f64]) -> Result<Self> {
        if genuine.is_empty() {
            return Err(Error::InvalidParameter("no genuine scores".into()));
        }
        if genuine.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidParameter("genuine scores must be finite".into()));
        }
        let mut sorted = genuine.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut values: Vec<f64> = Vec::new();
        let mut at_or_below = Vec::new();
        for (i, &g) in sorted.iter().enumerate() {
            if values.last() == Some(&g) {
                *at_or_below.last_mut().unwrap() = i as u64 + 1;
            } else {
                values.push(g);
                at_or_below.push(i as u64 + 1);
            }
        }
        let grid = Grid::new(&values);
        Ok(Self {
            values,
            at_or_below,
            n: genuine.len() as u64,
            grid,
        })
    }

    pub fn n_genuine(&self) -> u64 {
        self.n
    }

    pub fn distinct(&self) -> usize {
        self.values.len()
    }

    /// `(gap, tied)`: `gap` is the number of distinct genuine values below
    /// `score`; `tied` says whether `score` equals the next one.
    #[inline]
    fn locate(&self, score: f64) -> (usize, bool) {
        let v = &self.values;
        let (lo, hi) = self.grid.window(score);
        let p = lo + v[lo..hi].partition_point(|&u| u < score);
        let p = if (p == 0 || v[p - 1] < score) && (p == v.len() || v[p] >= score) {
            p
        } else {
            v.partition_point(|&u| u < score)
        };
        (p, p < v.len() && v[p] == score)
    }

    fn at_or_below_before(&self, k: usize) -> u64 {
        if k == 0 {
            0
        } else {
            self.at_or_below[k - 1]
        }
    }
}

/// Impostor counts bucketed against a [`GenuineIndex`]. Mergeable, so
/// partial tallies from any partitioning combine to the same result.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpostorCounts {
    /// Scores strictly between genuine values `k - 1` and `k` (len = distinct + 1).
    below: Vec<u64>,
    /// Scores equal to genuine value `k`.
    tied: Vec<u64>,
    /// Largest score seen in each gap.
    gap_max: Vec<f64>,
    total: u64,
}

impl ImpostorCounts {
    pub fn new(index: &GenuineIndex) -> Self {
        let m = index.distinct();
        Self {
            below: vec![0; m + 1],
            tied: vec![0; m],
            gap_max: vec![f64::NEG_INFINITY; m + 1],
            total: 0,
        }
    }

    #[inline]
    pub fn record(&mut self, index: &GenuineIndex, score: f64) {
        let (gap, tied) = index.locate(score);
        if tied {
            self.tied[gap] += 1;
        } else {
            self.below[gap] += 1;
            if score > self.gap_max[gap] {
                self.gap_max[gap] = score;
            }
        }
        self.total += 1;
    }

    pub fn merged(mut self, other: Self) -> Self {
        for (a, b) in self.below.iter_mut().zip(&other.below) {
            *a += b;
        }
        for (a, b) in self.tied.iter_mut().zip(&other.tied) {
            *a += b;
        }
        for (a, b) in self.gap_max.iter_mut().zip(&other.gap_max) {
            *a = a.max(*b);
        }
        self.total += other.total;
        self
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

/// Integer-count form of one ROC corner.
#[derive(Debug, Clone, Copy)]
struct Corner {
    threshold: f64,
    impostor_above: u64,
    genuine_at_or_below: u64,
}

/// Genuine index plus impostor counts: everything needed for ROC, EER and
/// FRR at a fixed FAR.
#[derive(Debug, Clone)]
pub struct ScoreTally {
    index: GenuineIndex,
    counts: ImpostorCounts,
}

impl ScoreTally {
    /// Tally with genuine scores only; impostors are added by recording.
    pub fn from_genuine(genuine: &[f64]) -> Result<Self> {
        let index = GenuineIndex::new(genuine)?;
        let counts = ImpostorCounts::new(&index);
        Ok(Self { index, counts })
    }

    pub fn from_scores(scores: &ScoreSet) -> Result<Self> {
        scores.validate()?;
        let mut tally = Self::from_genuine(&scores.genuine)?;
        for &s in &scores.impostor {
            tally.counts.record(&tally.index, s);
        }
        Ok(tally)
    }

    pub fn index(&self) -> &GenuineIndex {
        &self.index
    }

    pub fn record(&mut self, score: f64) {
        self.counts.record(&self.index, score);
    }

    pub fn set_impostor_counts(&mut self, counts: ImpostorCounts) {
        assert_eq!(counts.tied.len(), self.index.distinct(), "counts built for another index");
        self.counts = counts;
    }

    pub fn n_genuine(&self) -> u64 {
        self.index.n
    }

    pub fn n_impostor(&self) -> u64 {
        self.counts.total
    }

    pub fn genuine_resolution(&self) -> f64 {
        1.0 / self.index.n as f64
    }

    /// `#impostor > values[k]` for every distinct genuine value.
    fn impostor_above(&self) -> Vec<u64> {
        let m = self.index.distinct();
        let mut above = vec![0u64; m];
        let mut acc = self.counts.below[m];
        for k in (0..m).rev() {
            above[k] = acc;
            acc += self.counts.tied[k] + self.counts.below[k];
        }
        above
    }

    fn corners(&self) -> Result<Vec<Corner>> {
        if self.counts.total == 0 {
            return Err(Error::InvalidParameter("no impostor scores".into()));
        }
        let m = self.index.distinct();
        let above = self.impostor_above();
        let mut out = Vec::with_capacity(2 * m + 2);
        out.push(Corner {
            threshold: f64::NEG_INFINITY,
            impostor_above: self.counts.total,
            genuine_at_or_below: 0,
        });
        for k in 0..m {
            if self.counts.below[k] > 0 {
                out.push(Corner {
                    threshold: self.counts.gap_max[k],
                    impostor_above: above[k] + self.counts.tied[k],
                    genuine_at_or_below: self.index.at_or_below_before(k),
                });
            }
            out.push(Corner {
                threshold: self.index.values[k],
                impostor_above: above[k],
                genuine_at_or_below: self.index.at_or_below[k],
            });
        }
        if self.counts.below[m] > 0 {
            out.push(Corner {
                threshold: self.counts.gap_max[m],
                impostor_above: 0,
                genuine_at_or_below: self.index.n,
            });
        }
        Ok(out)
    }

    fn rates(&self, c: &Corner) -> (f64, f64) {
        (
            c.impostor_above as f64 / self.counts.total as f64,
            c.genuine_at_or_below as f64 / self.index.n as f64,
        )
    }

    /// ROC corners in increasing threshold order, starting at `-inf`.
    pub fn roc(&self) -> Result<Vec<ErrorRatePoint>> {
        Ok(self
            .corners()?
            .iter()
            .map(|c| {
                let (far, frr) = self.rates(c);
                ErrorRatePoint {
                    threshold: c.threshold,
                    far,
                    frr,
                }
            })
            .collect())
    }

    /// Equal error rate by linear interpolation between the two ROC corners
    /// that bracket `far = frr`.
    pub fn eer(&self) -> Result<EerEstimate> {
        let corners = self.corners()?;
        let ng = self.index.n as u128;
        let ni = self.counts.total as u128;
        // sign of far - frr, exact in integers
        let sign = |c: &Corner| {
            (c.impostor_above as u128 * ng).cmp(&(c.genuine_at_or_below as u128 * ni))
        };
        let k = corners
            .iter()
            .position(|c| sign(c) != std::cmp::Ordering::Greater)
            .expect("the last corner always has frr = 1");
        let cur = &corners[k];
        let (far_c, frr_c) = self.rates(cur);
        let resolution = self.genuine_resolution();
        if sign(cur) == std::cmp::Ordering::Equal {
            return Ok(EerEstimate {
                value: far_c,
                threshold: cur.threshold,
                genuine_resolution: resolution,
            });
        }
        let prev = &corners[k - 1];
        let (far_p, frr_p) = self.rates(prev);
        let d_prev = far_p - frr_p;
        let d_cur = far_c - frr_c;
        let alpha = d_prev / (d_prev - d_cur);
        let value = far_p + alpha * (far_c - far_p);
        let threshold = if prev.threshold.is_finite() {
            prev.threshold + alpha * (cur.threshold - prev.threshold)
        } else {
            cur.threshold
        };
        Ok(EerEstimate {
            value,
            threshold,
            genuine_resolution: resolution,
        })
    }

    /// FRR at the smallest threshold whose FAR does not exceed `far_level`.
    pub fn frr_at_far(&self, far_level: f64) -> Result<f64> {
        if !(far_level > 0.0 && far_level < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "FAR level must lie in (0, 1), got {far_level}"
            )));
        }
        let required = required_impostors(far_level);
        if self.counts.total < required {
            return Err(Error::Resolution {
                far_level,
                required,
                available: self.counts.total,
            });
        }
        // The operating threshold is the impostor order statistic t*.
        // A genuine value u lies at or below t* iff #impostor >= u already
        // exceeds the FAR budget.
        let ni = self.counts.total as f64;
        let above = self.impostor_above();
        let rejected = (0..self.index.distinct())
            .take_while(|&k| (above[k] + self.counts.tied[k]) as f64 / ni > far_level)
            .last()
            .map_or(0, |k| self.index.at_or_below[k]);
        Ok(rejected as f64 / self.index.n as f64)
    }
}

/// Minimum impostor count for resolving `far_level`: `ceil(10 / far_level)`.
pub fn required_impostors(far_level: f64) -> u64 {
    let raw = 10.0 / far_level;
    // absorb representation error such as 10 / 0.001 = 10000.000000000002
    let rounded = raw.round();
    if (raw - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        rounded as u64
    } else {
        raw.ceil() as u64
    }
}

pub fn roc_curve(scores: &ScoreSet) -> Result<Vec<ErrorRatePoint>> {
    ScoreTally::from_scores(scores)?.roc()
}

pub fn compute_eer(scores: &ScoreSet) -> Result<EerEstimate> {
    ScoreTally::from_scores(scores)?.eer()
}

pub fn frr_at_far(scores: &ScoreSet, far_level: f64) -> Result<f64> {
    ScoreTally::from_scores(scores)?.frr_at_far(far_level)
}
