//! Scene-graph grounding over scored candidate boxes.
//!
//! Queries are small scene graphs ([`scenegraph`]); images are candidate
//! boxes with detector scores plus optional ground truth ([`dataset`]).
//! Relationship models ([`relmodel`]) turn box pairs into calibrated
//! probabilities, [`inference`] finds the lowest-energy grounding, and
//! [`retrieval`] ranks images and computes R@k. [`audit`] holds the tools for
//! checking whether a dataset actually needs relationship reasoning.

pub mod audit;
pub mod dataset;
pub mod inference;
pub mod relmodel;
pub mod retrieval;
pub mod rng;
pub mod scenegraph;

pub use audit::{AuditError, AuditOptions, BiasReport, LinearityResult};
pub use dataset::{
    BoundingBox, CandidateBox, Dataset, DatasetError, GroundTruthInstance, ImageRecord, SynthConfig, TruthRelation,
    Vocabulary,
};
pub use inference::{BpParams, FactorGraph, Grounding, InferenceError};
pub use relmodel::{ModelError, ModelSet, RelationshipModel, TrainOptions};
pub use retrieval::{Method, QueryEvaluation, RatkCurve, RatkMode, RetrievalError};
pub use scenegraph::{NamedQuery, NodeId, QueryError, SceneGraph, SynonymMap};

/// Any error the library can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Audit(#[from] AuditError),
}
