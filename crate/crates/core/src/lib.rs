//! Monte Carlo planning toolkit relating the temporal persistence (ICC) of
//! normally distributed, mutually uncorrelated biometric features to the
//! number of features needed to reach a target error rate.
//!
//! The pipeline is:
//!
//! 1. [`featuregen`] builds two-session synthetic datasets at a target ICC.
//! 2. [`reliability`] estimates per-feature ICC and band summaries.
//! 3. [`scoring`] turns a feature subset into genuine/impostor cosine scores.
//! 4. [`metrics`] derives ROC points, EER and FRR at a fixed FAR.
//! 5. [`search`] runs the staged coarse-to-fine search for the minimum
//!    feature count that crosses a target.
//! 6. [`regression`] fits `log10(N) = intercept + slope * ICC` and inverts it.
//!
//! [`report`] holds the CSV/SVG emitters shared by the CLI and tests.

pub mod error;
pub mod featuregen;
pub mod metrics;
pub mod regression;
pub mod reliability;
pub mod report;
pub mod rng;
pub mod scoring;
pub mod search;

pub use error::{Error, Result};
pub use featuregen::{
    generate_band, generate_bands, noise_sd, BandConfig, FeatureDataset, IccTarget, Session,
};
pub use metrics::{compute_eer, frr_at_far, roc_curve, EerEstimate, ErrorRatePoint, ScoreTally};
pub use regression::{
    fit_all_targets, fit_log_linear, predict_feature_count, PlanningQuery, Prediction,
    RegressionFit,
};
pub use reliability::{band_icc_summary, icc_two_session, BandIccSummary, IccEstimate};
pub use scoring::{
    score_dataset, similarity, whiten, zscore_params, FeatureSubset, ImpostorPolicy, ScoreSet,
};
pub use search::{
    find_required_features, mean_metric, required_features_table, RequiredFeatures, SearchStage,
    TargetSpec,
};
