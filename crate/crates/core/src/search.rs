//! Staged coarse-to-fine search for the minimum number of randomly chosen
//! features whose mean error metric falls strictly below a target.
//!
//! Stage 1 scans every feature count once to bracket the crossing. Each
//! later stage rescans the previous bracket widened by a quarter of its
//! width on both sides, with more replications. The answer is the smallest
//! count in the final stage whose mean metric is below target; the scan is
//! extended downwards when needed so that the count just below it was
//! measured at the same replication level.
//!
//! Replication `r` at feature count `N` in stage `s` draws its subset from
//! `derive(derive(band_seed, [STAGE, s]), [N, r])`. Targets do not enter the
//! derivation, so every target searched on one band sees the same draws and
//! the metrics of a draw are computed once and reused.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featuregen::{FeatureDataset, IccTarget};
use crate::metrics::required_impostors;
use crate::rng;
use crate::scoring::{tally_dataset, FeatureSubset, ImpostorPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStage {
    pub min_features: usize,
    pub max_features: usize,
    pub replications: usize,
}

impl SearchStage {
    pub fn new(min_features: usize, max_features: usize, replications: usize) -> Self {
        Self {
            min_features,
            max_features,
            replications,
        }
    }

    /// Default three-stage schedule (1, 20, 100 replications) over `n_features`.
    pub fn default_schedule(n_features: usize) -> Vec<SearchStage> {
        [1, 20, 100]
            .into_iter()
            .map(|r| SearchStage::new(1, n_features, r))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    Eer { target: f64 },
    FrrAtFar { far_level: f64, frr_target: f64 },
}

impl TargetSpec {
    pub fn eer(target: f64) -> Result<Self> {
        let t = TargetSpec::Eer { target };
        t.validate()?;
        Ok(t)
    }

    pub fn frr_at_far(far_level: f64, frr_target: f64) -> Result<Self> {
        let t = TargetSpec::FrrAtFar { far_level, frr_target };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        let ok = match *self {
            TargetSpec::Eer { target } => in_unit(target),
            TargetSpec::FrrAtFar { far_level, frr_target } => in_unit(far_level) && in_unit(frr_target),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("target rates must lie in (0, 1): {self:?}")))
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            TargetSpec::Eer { .. } => "eer",
            TargetSpec::FrrAtFar { .. } => "frr_at_far",
        }
    }

    /// The rate the mean metric must fall below.
    pub fn target_value(&self) -> f64 {
        match *self {
            TargetSpec::Eer { target } => target,
            TargetSpec::FrrAtFar { frr_target, .. } => frr_target,
        }
    }

    pub fn far_level(&self) -> Option<f64> {
        match *self {
            TargetSpec::Eer { .. } => None,
            TargetSpec::FrrAtFar { far_level, .. } => Some(far_level),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: usize,
    pub min_features: usize,
    pub max_features: usize,
    pub replications: usize,
    /// `(N, mean metric)` in increasing `N`.
    pub scan: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequiredFeatures {
    pub band_target: IccTarget,
    pub target: TargetSpec,
    pub n_required: usize,
    pub mean_metric_at_n: f64,
    /// `None` only when `n_required == 1`.
    pub mean_metric_at_n_minus_1: Option<f64>,
    pub trace: Vec<StageTrace>,
}

impl RequiredFeatures {
    /// `metric(n) < target <= metric(n - 1)`.
    pub fn crossing_holds(&self) -> bool {
        let t = self.target.target_value();
        self.mean_metric_at_n < t
            && match self.mean_metric_at_n_minus_1 {
                Some(prev) => prev >= t,
                None => self.n_required == 1,
            }
    }
}

/// Metrics of one scored replication.
#[derive(Debug, Clone)]
struct DrawMetrics {
    eer: f64,
    /// FRR per configured FAR level; `None` when the level is not resolvable.
    frr: Vec<Option<f64>>,
}

/// Scores random feature subsets of one dataset and memoizes the metrics
/// of every `(stage seed, N, replication)` draw.
pub struct MetricEvaluator<'a> {
    ds: &'a FeatureDataset,
    policy: ImpostorPolicy,
    far_levels: Vec<f64>,
    cache: Mutex<HashMap<(u64, usize), Vec<Arc<DrawMetrics>>>>,
}

impl<'a> MetricEvaluator<'a> {
    pub fn new(ds: &'a FeatureDataset, policy: ImpostorPolicy, far_levels: Vec<f64>) -> Result<Self> {
        policy.validate(ds.n_subjects())?;
        Ok(Self {
            ds,
            policy,
            far_levels,
            cache: Mutex::new(HashMap::new()),
        })
    }

    fn for_targets(ds: &'a FeatureDataset, policy: ImpostorPolicy, targets: &[TargetSpec]) -> Result<Self> {
        let mut levels: Vec<f64> = targets.iter().filter_map(TargetSpec::far_level).collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        Self::new(ds, policy, levels)
    }

    fn draw(&self, seed: u64, n: usize, rep: usize) -> Result<DrawMetrics> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng::derive_seed(seed, &[n as u64, rep as u64]));
        let subset = FeatureSubset::random(self.ds.n_features(), n, &mut rng)?;
        let tally = tally_dataset(self.ds, &subset, &self.policy)?;
        let eer = tally.eer()?.value;
        let frr = self
            .far_levels
            .iter()
            .map(|&level| match tally.frr_at_far(level) {
                Ok(v) => Ok(Some(v)),
                Err(Error::Resolution { .. }) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<Result<_>>()?;
        Ok(DrawMetrics { eer, frr })
    }

    fn metric(&self, m: &DrawMetrics, target: &TargetSpec) -> Result<f64> {
        match *target {
            TargetSpec::Eer { .. } => Ok(m.eer),
            TargetSpec::FrrAtFar { far_level, .. } => {
                let slot = self
                    .far_levels
                    .iter()
                    .position(|&l| l == far_level)
                    .ok_or_else(|| Error::InvalidParameter(format!("FAR level {far_level} not configured")))?;
                m.frr[slot].ok_or_else(|| Error::Resolution {
                    far_level,
                    required: required_impostors(far_level),
                    available: self.policy.impostor_count(self.ds.n_subjects()),
                })
            }
        }
    }

    /// Mean metric at every `N` in `ns`, `reps` replications each.
    pub fn scan(&self, seed: u64, ns: &[usize], reps: usize, target: &TargetSpec) -> Result<Vec<(usize, f64)>> {
        if reps == 0 {
            return Err(Error::InvalidParameter("replications must be positive".into()));
        }
        if let Some(&bad) = ns.iter().find(|&&n| n == 0 || n > self.ds.n_features()) {
            return Err(Error::InvalidParameter(format!(
                "feature count {bad} outside 1..={}",
                self.ds.n_features()
            )));
        }
        let missing: Vec<(usize, usize)> = {
            let cache = self.cache.lock().unwrap();
            ns.iter()
                .flat_map(|&n| {
                    let have = cache.get(&(seed, n)).map_or(0, Vec::len);
                    (have..reps).map(move |r| (n, r))
                })
                .collect()
        };
        let fresh: Vec<((usize, usize), DrawMetrics)> = missing
            .into_par_iter()
            .map(|(n, r)| self.draw(seed, n, r).map(|m| ((n, r), m)))
            .collect::<Result<_>>()?;
        let mut cache = self.cache.lock().unwrap();
        for ((n, r), m) in fresh {
            let entry = cache.entry((seed, n)).or_default();
            debug_assert_eq!(entry.len(), r);
            entry.push(Arc::new(m));
        }
        ns.iter()
            .map(|&n| {
                let draws = &cache[&(seed, n)][..reps];
                let sum = draws
                    .iter()
                    .map(|d| self.metric(d, target))
                    .sum::<Result<f64>>()?;
                Ok((n, sum / reps as f64))
            })
            .collect()
    }

    pub fn mean(&self, seed: u64, n: usize, reps: usize, target: &TargetSpec) -> Result<f64> {
        Ok(self.scan(seed, &[n], reps, target)?[0].1)
    }
}

/// Mean metric over `reps` fresh random `n`-subsets.
pub fn mean_metric(
    ds: &FeatureDataset,
    n: usize,
    reps: usize,
    target: &TargetSpec,
    policy: &ImpostorPolicy,
    seed: u64,
) -> Result<f64> {
    target.validate()?;
    MetricEvaluator::for_targets(ds, *policy, std::slice::from_ref(target))?.mean(seed, n, reps, target)
}

fn validate_stages(stages: &[SearchStage], n_features: usize) -> Result<()> {
    let first = stages
        .first()
        .ok_or_else(|| Error::InvalidParameter("no search stages".into()))?;
    if first.min_features != 1 || first.max_features != n_features {
        return Err(Error::InvalidParameter(format!(
            "first stage must scan 1..={n_features}, got {}..={}",
            first.min_features, first.max_features
        )));
    }
    for s in stages {
        if s.replications == 0 || s.min_features == 0 || s.min_features > s.max_features || s.max_features > n_features {
            return Err(Error::InvalidParameter(format!("invalid stage {s:?}")));
        }
    }
    if stages.windows(2).any(|w| w[1].replications <= w[0].replications) {
        return Err(Error::InvalidParameter("stage replications must increase".into()));
    }
    Ok(())
}

/// Seed for the staged search on band `index` under `master_seed`.
pub fn band_search_seed(master_seed: u64, index: usize) -> u64 {
    rng::derive_seed(master_seed, &[rng::SEARCH, index as u64])
}

fn search_with(eval: &MetricEvaluator<'_>, target: &TargetSpec, stages: &[SearchStage], seed: u64) -> Result<RequiredFeatures> {
    target.validate()?;
    let p = eval.ds.n_features();
    validate_stages(stages, p)?;
    let t = target.target_value();
    let mut trace = Vec::with_capacity(stages.len());
    let mut range = (1, p);

    for (s, stage) in stages.iter().enumerate() {
        let stage_seed = rng::derive_seed(seed, &[rng::STAGE, s as u64]);
        let reps = stage.replications;
        if s > 0 {
            // keep the narrowed bracket inside the stage's configured bounds when they overlap
            let lo = range.0.max(stage.min_features);
            let hi = range.1.min(stage.max_features);
            if lo <= hi {
                range = (lo, hi);
            }
        }
        let ns: Vec<usize> = (range.0..=range.1).collect();
        let mut scan: BTreeMap<usize, f64> = eval.scan(stage_seed, &ns, reps, target)?.into_iter().collect();

        let first_below = loop {
            let below = scan.iter().find(|(_, &m)| m < t).map(|(&n, _)| n);
            let (&lowest, _) = scan.first_key_value().unwrap();
            let (&highest, _) = scan.last_key_value().unwrap();
            match below {
                None if highest == p => {
                    let (&best_n, &best_metric) = scan
                        .iter()
                        .min_by(|a, b| a.1.total_cmp(b.1))
                        .unwrap();
                    return Err(Error::NotReachable {
                        target: t,
                        n_features: p,
                        best_metric,
                        best_n,
                    });
                }
                None => {
                    scan.insert(highest + 1, eval.mean(stage_seed, highest + 1, reps, target)?);
                }
                Some(n) if n == lowest && n > 1 => {
                    scan.insert(n - 1, eval.mean(stage_seed, n - 1, reps, target)?);
                }
                Some(n) => break n,
            }
        };

        let (&lowest, _) = scan.first_key_value().unwrap();
        let (&highest, _) = scan.last_key_value().unwrap();
        trace.push(StageTrace {
            stage: s + 1,
            min_features: lowest,
            max_features: highest,
            replications: reps,
            scan: scan.iter().map(|(&n, &m)| (n, m)).collect(),
        });

        if s + 1 == stages.len() {
            return Ok(RequiredFeatures {
                band_target: eval.ds.target(),
                target: *target,
                n_required: first_below,
                mean_metric_at_n: scan[&first_below],
                mean_metric_at_n_minus_1: scan.get(&(first_below - 1)).copied(),
                trace,
            });
        }

        let last_above = scan
            .iter()
            .rev()
            .find(|(_, &m)| m >= t)
            .map(|(&n, _)| n);
        let lo = first_below.saturating_sub(1).max(1);
        let hi = last_above.map_or(first_below, |n| (n + 1).max(first_below)).min(p);
        let pad = ((hi - lo) as f64 * 0.25).ceil().max(1.0) as usize;
        range = (lo.saturating_sub(pad).max(1), (hi + pad).min(p));
    }
    unreachable!("stages validated non-empty")
}

/// Staged search for one dataset and one target.
pub fn find_required_features(
    ds: &FeatureDataset,
    target: &TargetSpec,
    stages: &[SearchStage],
    policy: &ImpostorPolicy,
    seed: u64,
) -> Result<RequiredFeatures> {
    let eval = MetricEvaluator::for_targets(ds, *policy, std::slice::from_ref(target))?;
    search_with(&eval, target, stages, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Found(RequiredFeatures),
    NotReachable { best_metric: f64, best_n: usize },
    Failed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub band_index: usize,
    pub band_target: IccTarget,
    pub target: TargetSpec,
    pub outcome: CellOutcome,
}

impl TableCell {
    pub fn found(&self) -> Option<&RequiredFeatures> {
        match &self.outcome {
            CellOutcome::Found(r) => Some(r),
            _ => None,
        }
    }
}

/// Runs the search for every `(band, target)` pair. Band `b` uses
/// [`band_search_seed`]`(master_seed, b)`. Per-cell failures are recorded
/// in the outcome rather than aborting the table.
pub fn required_features_table(
    bands: &[FeatureDataset],
    targets: &[TargetSpec],
    stages: &[SearchStage],
    policy: &ImpostorPolicy,
    master_seed: u64,
) -> Result<Vec<TableCell>> {
    if bands.is_empty() || targets.is_empty() {
        return Err(Error::InvalidParameter("need at least one band and one target".into()));
    }
    for t in targets {
        t.validate()?;
    }
    let per_band: Vec<Vec<TableCell>> = bands
        .par_iter()
        .enumerate()
        .map(|(b, ds)| band_cells(ds, b, targets, stages, policy, master_seed))
        .collect::<Result<_>>()?;
    Ok(per_band.into_iter().flatten().collect())
}

/// The cells of one band, as [`required_features_table`] computes them.
/// Draws are shared across `targets`, and a cell does not depend on which
/// other targets are requested alongside it.
pub fn band_cells(
    ds: &FeatureDataset,
    band_index: usize,
    targets: &[TargetSpec],
    stages: &[SearchStage],
    policy: &ImpostorPolicy,
    master_seed: u64,
) -> Result<Vec<TableCell>> {
    let eval = MetricEvaluator::for_targets(ds, *policy, targets)?;
    let seed = band_search_seed(master_seed, band_index);
    Ok(targets
        .iter()
        .map(|target| TableCell {
            band_index,
            band_target: ds.target(),
            target: *target,
            outcome: match search_with(&eval, target, stages, seed) {
                Ok(r) => CellOutcome::Found(r),
                Err(Error::NotReachable { best_metric, best_n, .. }) => CellOutcome::NotReachable { best_metric, best_n },
                Err(e) => CellOutcome::Failed { message: e.to_string() },
            },
        })
        .collect())
}
