//! Experiment configuration. Files are TOML; error-rate targets are given in
//! percent and converted to fractions on the way in.

use std::fmt;
use std::path::{Path, PathBuf};

use iccplan_core::metrics::required_impostors;
use iccplan_core::{IccTarget, ImpostorPolicy, SearchStage, TargetSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigErrorKind {
    Invalid,
    /// A target needs finer score resolution than the subject count gives.
    Resolution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub kind: ConfigErrorKind,
    pub message: String,
}

impl ConfigError {
    pub fn invalid(message: impl Into<String>) -> Self {
        Self {
            kind: ConfigErrorKind::Invalid,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ConfigErrorKind::Invalid => write!(f, "invalid config: {}", self.message),
            ConfigErrorKind::Resolution => write!(f, "resolution guard: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// FRR target at a FAR level, both in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrrFarPct {
    pub frr: f64,
    pub far: f64,
}

/// One experiment. Field order matters for TOML output: plain values first,
/// then tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub bands: Vec<f64>,
    pub n_subjects: usize,
    pub n_features: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub eer_targets_pct: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Worker threads; absent or 0 uses every core.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub frr_far_targets_pct: Vec<FrrFarPct>,
    #[serde(default)]
    pub impostor_policy: ImpostorPolicy,
    pub stages: Vec<SearchStage>,
}

/// Percent to fraction, rounded to 12 significant digits so `0.1` becomes
/// exactly `0.001` rather than its nearest neighbour.
pub fn pct_to_fraction(pct: f64) -> f64 {
    format!("{:.11e}", pct / 100.0).parse().unwrap()
}

const PAPER_BANDS: [f64; 7] = [0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95];
const PAPER_SEED: u64 = 20_240_101;

fn paper_frr_far() -> Vec<FrrFarPct> {
    [0.1, 0.01, 0.001, 0.0001]
        .iter()
        .map(|&far| FrrFarPct { frr: 1.0, far })
        .collect()
}

impl ExperimentConfig {
    /// 7 bands, 10,000 subjects, 350 features, 1/20/100 replications.
    pub fn paper() -> Self {
        Self {
            bands: PAPER_BANDS.to_vec(),
            n_subjects: 10_000,
            n_features: 350,
            master_seed: PAPER_SEED,
            eer_targets_pct: vec![5.0, 2.0, 1.0, 0.5, 0.1],
            output_dir: None,
            workers: None,
            frr_far_targets_pct: paper_frr_far(),
            impostor_policy: ImpostorPolicy::FullCross,
            stages: SearchStage::default_schedule(350),
        }
    }

    /// 1,000 subjects, EER targets down to 1%, 1/20 replications. The two
    /// finest FAR levels fail the resolution guard at this size.
    pub fn desk() -> Self {
        Self {
            n_subjects: 1_000,
            eer_targets_pct: vec![5.0, 2.0, 1.0],
            stages: vec![SearchStage::new(1, 350, 1), SearchStage::new(1, 350, 20)],
            ..Self::paper()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::invalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn band_targets(&self) -> Result<Vec<IccTarget>, ConfigError> {
        self.bands
            .iter()
            .map(|&b| IccTarget::new(b).map_err(|e| ConfigError::invalid(format!("band {b}: {e}"))))
            .collect()
    }

    /// Every configured target as fractions: EER targets first, then
    /// FRR@FAR targets, each in file order.
    pub fn targets(&self) -> Result<Vec<TargetSpec>, ConfigError> {
        let eer = self.eer_targets_pct.iter().map(|&p| {
            TargetSpec::eer(pct_to_fraction(p)).map_err(|e| ConfigError::invalid(format!("EER target {p}%: {e}")))
        });
        let frr = self.frr_far_targets_pct.iter().map(|t| {
            TargetSpec::frr_at_far(pct_to_fraction(t.far), pct_to_fraction(t.frr))
                .map_err(|e| ConfigError::invalid(format!("FRR {}% at FAR {}%: {e}", t.frr, t.far)))
        });
        eer.chain(frr).collect()
    }

    pub fn n_impostor(&self) -> u64 {
        self.impostor_policy.impostor_count(self.n_subjects)
    }

    /// Targets the subject count cannot resolve, with the reason.
    pub fn resolution_issues(&self) -> Result<Vec<(TargetSpec, String)>, ConfigError> {
        let n_genuine = self.n_subjects as f64;
        let n_impostor = self.n_impostor();
        Ok(self
            .targets()?
            .into_iter()
            .filter_map(|t| match t {
                TargetSpec::Eer { target } if target < 1.0 / n_genuine => Some((
                    t,
                    format!("EER {target} is below the genuine resolution 1/{}", self.n_subjects),
                )),
                TargetSpec::FrrAtFar { far_level, .. } if n_impostor < required_impostors(far_level) => Some((
                    t,
                    format!(
                        "FAR {far_level} needs at least {} impostor scores, have {n_impostor}",
                        required_impostors(far_level)
                    ),
                )),
                _ => None,
            })
            .collect())
    }

    /// Structural checks only; see [`Self::validate_for_search`].
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.bands.is_empty() {
            return Err(ConfigError::invalid("bands is empty"));
        }
        self.band_targets()?;
        if self.n_subjects < 2 {
            return Err(ConfigError::invalid("n_subjects must be at least 2"));
        }
        if self.n_features == 0 {
            return Err(ConfigError::invalid("n_features must be positive"));
        }
        self.targets()?;
        self.impostor_policy
            .validate(self.n_subjects)
            .map_err(|e| ConfigError::invalid(format!("impostor_policy: {e}")))?;
        if self.stages.is_empty() {
            return Err(ConfigError::invalid("stages is empty"));
        }
        let first = &self.stages[0];
        if first.min_features != 1 || first.max_features != self.n_features {
            return Err(ConfigError::invalid(format!(
                "the first stage must scan 1..={}",
                self.n_features
            )));
        }
        for s in &self.stages {
            if s.replications == 0 || s.min_features == 0 || s.min_features > s.max_features || s.max_features > self.n_features {
                return Err(ConfigError::invalid(format!("invalid stage {s:?}")));
            }
        }
        if self.stages.windows(2).any(|w| w[1].replications <= w[0].replications) {
            return Err(ConfigError::invalid("stage replications must strictly increase"));
        }
        Ok(())
    }

    /// [`Self::validate`] plus a non-empty target list that passes the
    /// resolution guard.
    pub fn validate_for_search(&self) -> Result<(), ConfigError> {
        self.validate()?;
        if self.targets()?.is_empty() {
            return Err(ConfigError::invalid("no EER or FRR@FAR targets configured"));
        }
        if let Some((_, why)) = self.resolution_issues()?.into_iter().next() {
            return Err(ConfigError {
                kind: ConfigErrorKind::Resolution,
                message: why,
            });
        }
        Ok(())
    }

    /// Drops unresolvable targets, returning what was dropped and why.
    pub fn drop_unresolvable(&mut self) -> Result<Vec<(TargetSpec, String)>, ConfigError> {
        let issues = self.resolution_issues()?;
        let bad: Vec<TargetSpec> = issues.iter().map(|(t, _)| *t).collect();
        self.eer_targets_pct
            .retain(|&p| !bad.contains(&TargetSpec::Eer { target: pct_to_fraction(p) }));
        self.frr_far_targets_pct.retain(|t| {
            !bad.contains(&TargetSpec::FrrAtFar {
                far_level: pct_to_fraction(t.far),
                frr_target: pct_to_fraction(t.frr),
            })
        });
        Ok(issues)
    }

    /// Checksum of everything that affects results. Output location and
    /// worker count are excluded.
    pub fn checksum(&self) -> String {
        let canonical = Self {
            output_dir: None,
            workers: None,
            ..self.clone()
        };
        hex::encode(Sha256::digest(canonical.to_toml().as_bytes()))
    }
}
