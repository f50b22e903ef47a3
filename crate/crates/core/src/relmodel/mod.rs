//! Per-predicate spatial relationship models: pair geometry features, a
//! Gaussian mixture density and a Platt calibration on its log-density.

mod features;
mod file;
mod gmm;
mod platt;
mod train;

use thiserror::Error;

use crate::dataset::BoundingBox;

pub use features::{pair_features, PairFeatures, FEATURE_DIM};
pub use file::{load_models, read_models, save_models, write_models, MODEL_SCHEMA_VERSION};
pub use gmm::{fit_gmm, fit_gmm_with, gmm_density, GmmFit, GmmFitOptions, GmmModel, VARIANCE_FLOOR};
pub use platt::{fit_platt, fit_platt_report, PlattFit, PlattParams, GRADIENT_TOLERANCE};
pub use train::{train_relationship_models, ModelSet, SkippedPredicate, TrainOptions, TrainReport};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("too few samples: have {have}, need at least {need}")]
    TooFewSamples { have: usize, need: usize },
    #[error("calibration needs both classes (positives {positives}, negatives {negatives})")]
    SingleClass { positives: usize, negatives: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("training image {0:?} has no ground truth")]
    MissingGroundTruth(String),
    #[error("model file: {0}")]
    File(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationshipModel {
    pub predicate: String,
    pub gmm: GmmModel,
    pub platt: PlattParams,
}

impl RelationshipModel {
    pub fn log_density(&self, subject: &BoundingBox, object: &BoundingBox) -> f64 {
        self.gmm.log_density(&pair_features(subject, object))
    }

    pub fn calibrated_prob(&self, subject: &BoundingBox, object: &BoundingBox) -> f64 {
        self.platt.prob(self.log_density(subject, object))
    }
}

/// Probability that `(subject, object)` stands in the model's relationship.
pub fn calibrated_prob(rm: &RelationshipModel, subject: &BoundingBox, object: &BoundingBox) -> f64 {
    rm.calibrated_prob(subject, object)
}
