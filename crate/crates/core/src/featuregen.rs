//! Synthetic two-session feature generation at a target ICC.
//!
//! Every feature is built the same way: a subject-level signal drawn from
//! `Normal(0, 1)` is copied into both sessions, then each session receives
//! its own `Normal(0, noise_sd)` draw per cell. With signal variance 1 and
//! noise variance `(1 - icc) / icc` the expected between-session correlation
//! is exactly `icc`.

use std::io::{Read, Write};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Target intraclass correlation in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct IccTarget(f64);

impl IccTarget {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 && value <= 1.0 {
            Ok(Self(value))
        } else {
            Err(Error::InvalidParameter(format!(
                "target ICC must lie in (0, 1], got {value}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for IccTarget {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<IccTarget> for f64 {
    fn from(t: IccTarget) -> f64 {
        t.0
    }
}

/// Standard deviation of the per-session noise that yields `target` ICC.
pub fn noise_sd(target: IccTarget) -> f64 {
    let icc = target.value();
    ((1.0 - icc) / icc).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandConfig {
    pub target_icc: IccTarget,
    pub n_subjects: usize,
    pub n_features: usize,
    pub seed: u64,
}

impl BandConfig {
    pub fn new(target_icc: IccTarget, n_subjects: usize, n_features: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            target_icc,
            n_subjects,
            n_features,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 subjects, got {}",
                self.n_subjects
            )));
        }
        if self.n_features < 1 {
            return Err(Error::InvalidParameter("need at least 1 feature".into()));
        }
        IccTarget::new(self.target_icc.value())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Session {
    /// Enrollment (gallery) session.
    First,
    /// Verification (probe) session.
    Second,
}

impl Session {
    fn offset(self) -> usize {
        match self {
            Session::First => 0,
            Session::Second => 1,
        }
    }
}

/// Subjects x features x 2 sessions, stored subject-major:
/// `values[(subject * n_features + feature) * 2 + session]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    values: Vec<f64>,
    config: BandConfig,
}

impl FeatureDataset {
    pub fn from_parts(values: Vec<f64>, config: BandConfig) -> Result<Self> {
        config.validate()?;
        let expected = config.n_subjects * config.n_features * 2;
        if values.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "expected {expected} values for {} subjects x {} features x 2 sessions, got {}",
                config.n_subjects,
                config.n_features,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite value at flat index {pos}")));
        }
        Ok(Self { values, config })
    }

    /// Builds a dataset from per-session `[subject][feature]` tables.
    pub fn from_sessions(first: &[Vec<f64>], second: &[Vec<f64>], config: BandConfig) -> Result<Self> {
        if first.len() != config.n_subjects || second.len() != config.n_subjects {
            return Err(Error::DimensionMismatch("session tables must have one row per subject".into()));
        }
        let mut values = Vec::with_capacity(config.n_subjects * config.n_features * 2);
        for (a, b) in first.iter().zip(second) {
            if a.len() != config.n_features || b.len() != config.n_features {
                return Err(Error::DimensionMismatch("session rows must have one value per feature".into()));
            }
            for (x, y) in a.iter().zip(b) {
                values.push(*x);
                values.push(*y);
            }
        }
        Self::from_parts(values, config)
    }

    pub fn config(&self) -> &BandConfig {
        &self.config
    }

    pub fn n_subjects(&self) -> usize {
        self.config.n_subjects
    }

    pub fn n_features(&self) -> usize {
        self.config.n_features
    }

    pub fn target(&self) -> IccTarget {
        self.config.target_icc
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, subject: usize, feature: usize, session: Session) -> f64 {
        self.values[(subject * self.config.n_features + feature) * 2 + session.offset()]
    }

    /// All subjects' values of one feature in one session.
    pub fn column(&self, feature: usize, session: Session) -> Vec<f64> {
        (0..self.n_subjects()).map(|s| self.get(s, feature, session)).collect()
    }

    /// Writes the little-endian binary dump.
    ///
    /// Layout: magic `ICCBAND1` (8 bytes), then `u64` n_subjects, `u64`
    /// n_features, `u64` n_sessions (= 2), `f64` target ICC, `u64` seed,
    /// followed by `n_subjects * n_features * 2` `f64` values in
    /// subject-major, feature, session order.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.config.n_subjects as u64).to_le_bytes())?;
        w.write_all(&(self.config.n_features as u64).to_le_bytes())?;
        w.write_all(&2u64.to_le_bytes())?;
        w.write_all(&self.config.target_icc.value().to_le_bytes())?;
        w.write_all(&self.config.seed.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic, not a band dataset file".into()));
        }
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let n_subjects = u64::from_le_bytes(next(&mut r)?) as usize;
        let n_features = u64::from_le_bytes(next(&mut r)?) as usize;
        let n_sessions = u64::from_le_bytes(next(&mut r)?);
        if n_sessions != 2 {
            return Err(Error::Format(format!("expected 2 sessions, header says {n_sessions}")));
        }
        let target = IccTarget::new(f64::from_le_bytes(next(&mut r)?))?;
        let seed = u64::from_le_bytes(next(&mut r)?);
        let config = BandConfig::new(target, n_subjects, n_features, seed)?;
        let count = n_subjects
            .checked_mul(n_features)
            .and_then(|c| c.checked_mul(2))
            .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes)?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::from_parts(values, config)
    }
}

const MAGIC: &[u8; 8] = b"ICCBAND1";

/// Generates one band. Feature `f` draws from ChaCha8 stream `f` of
/// `config.seed`: all subject signals first, then session-1 noise, then
/// session-2 noise.
pub fn generate_band(config: BandConfig) -> Result<FeatureDataset> {
    config.validate()?;
    let n = config.n_subjects;
    let p = config.n_features;
    let sd = noise_sd(config.target_icc);

    let columns: Vec<(Vec<f64>, Vec<f64>)> = (0..p)
        .into_par_iter()
        .map(|feature| {
            let mut rng = rng::stream_rng(config.seed, feature as u64);
            let signal: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let first: Vec<f64> = signal
                .iter()
                .map(|s| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    s + sd * z
                })
                .collect();
            let second: Vec<f64> = signal
                .iter()
                .map(|s| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    s + sd * z
                })
                .collect();
            (first, second)
        })
        .collect();

    let mut values = vec![0.0; n * p * 2];
    for (feature, (first, second)) in columns.iter().enumerate() {
        for subject in 0..n {
            let base = (subject * p + feature) * 2;
            values[base] = first[subject];
            values[base + 1] = second[subject];
        }
    }
    FeatureDataset::from_parts(values, config)
}

/// Seed of band `index` under `master_seed`.
pub fn band_seed(master_seed: u64, index: usize) -> u64 {
    rng::derive_seed(master_seed, &[rng::BAND, index as u64])
}

/// One dataset per target, each on its own derived stream.
pub fn generate_bands(
    targets: &[IccTarget],
    n_subjects: usize,
    n_features: usize,
    master_seed: u64,
) -> Result<Vec<FeatureDataset>> {
    if targets.is_empty() {
        return Err(Error::InvalidParameter("target list is empty".into()));
    }
    targets
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            generate_band(BandConfig::new(t, n_subjects, n_features, band_seed(master_seed, i))?)
        })
        .collect()
}
