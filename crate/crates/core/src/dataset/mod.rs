//! Images as scored candidate boxes plus optional ground truth.

mod geometry;
mod io;
mod matching;
mod split;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenegraph::SynonymMap;

pub use geometry::{GeometricPredicate, PredicateGeometry};
pub use io::{load_dataset, read_dataset, save_dataset, to_jsonl_string, write_dataset};
pub use matching::{match_query, QueryMatcher, Tally};
pub use split::split_dataset;
pub use synth::{
    generate_synthetic, mode_holds, BiasMode, MixedWeights, QueryTemplate, SynthConfig, SyntheticSet,
};

/// Tolerance on `object_scores` summing to one.
pub const SCORE_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("dataset file has no header line")]
    MissingHeader,
    #[error("image {image_id:?}, field {field}: {message}")]
    Schema {
        image_id: String,
        field: String,
        message: String,
    },
    #[error("vocabulary {which} lists {label:?} twice")]
    DuplicateLabel { which: &'static str, label: String },
    #[error("invalid bounding box ({x}, {y}, {w}, {h})")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },
    #[error("image {0:?} has no ground truth")]
    MissingGroundTruth(String),
    #[error("split of {n} images at fraction {fraction} leaves one side empty")]
    DegenerateSplit { n: usize, fraction: f64 },
    #[error("infeasible synthetic config: {0}")]
    InfeasibleConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, DatasetError> {
        let b = BoundingBox { x, y, w, h };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(DatasetError::InvalidBox { x, y, w, h })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()
            && self.w > 0.0
            && self.h > 0.0
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn horizontal_overlap(&self, other: &BoundingBox) -> f64 {
        (self.right().min(other.right()) - self.x.max(other.x)).max(0.0)
    }

    pub fn vertical_overlap(&self, other: &BoundingBox) -> f64 {
        (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0.0)
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        self.horizontal_overlap(other) * self.vertical_overlap(other)
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateBox {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub object_scores: Vec<f64>,
    pub attribute_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthInstance {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub category: String,
    #[serde(default)]
    pub attributes: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthRelation {
    pub subject: usize,
    pub predicate: String,
    pub object: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub image_id: String,
    pub candidates: Vec<CandidateBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_instances: Option<Vec<GroundTruthInstance>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_relations: Option<Vec<TruthRelation>>,
}

impl ImageRecord {
    pub fn has_ground_truth(&self) -> bool {
        self.truth_instances.is_some()
    }
}

/// Ordered label lists with reverse lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    objects: Vec<String>,
    attributes: Vec<String>,
    predicates: Vec<String>,
    object_index: BTreeMap<String, usize>,
    attribute_index: BTreeMap<String, usize>,
    predicate_index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn new(
        objects: Vec<String>,
        attributes: Vec<String>,
        predicates: Vec<String>,
    ) -> Result<Self, DatasetError> {
        fn index(which: &'static str, labels: &[String]) -> Result<BTreeMap<String, usize>, DatasetError> {
            let mut map = BTreeMap::new();
            for (i, l) in labels.iter().enumerate() {
                if map.insert(l.clone(), i).is_some() {
                    return Err(DatasetError::DuplicateLabel {
                        which,
                        label: l.clone(),
                    });
                }
            }
            Ok(map)
        }
        Ok(Vocabulary {
            object_index: index("objects", &objects)?,
            attribute_index: index("attributes", &attributes)?,
            predicate_index: index("predicates", &predicates)?,
            objects,
            attributes,
            predicates,
        })
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn predicates(&self) -> &[String] {
        &self.predicates
    }

    pub fn object_index(&self, label: &str) -> Option<usize> {
        self.object_index.get(label).copied()
    }

    pub fn attribute_index(&self, label: &str) -> Option<usize> {
        self.attribute_index.get(label).copied()
    }

    pub fn predicate_index(&self, label: &str) -> Option<usize> {
        self.predicate_index.get(label).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<ImageRecord>,
    pub vocab: Vocabulary,
    pub synonyms: SynonymMap,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Checks every load-time invariant, reporting the first violation.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = HashSet::new();
        for img in &self.images {
            if !seen.insert(img.image_id.as_str()) {
                return Err(schema(&img.image_id, "image_id", "duplicate image id"));
            }
            self.validate_image(img)?;
        }
        Ok(())
    }

    fn validate_image(&self, img: &ImageRecord) -> Result<(), DatasetError> {
        let id = img.image_id.as_str();
        let n_obj = self.vocab.objects.len();
        let n_attr = self.vocab.attributes.len();
        for (i, c) in img.candidates.iter().enumerate() {
            if !c.bbox.is_valid() {
                return Err(schema(id, &format!("candidates[{i}].box"), "non-finite or non-positive size"));
            }
            if c.object_scores.len() != n_obj {
                return Err(schema(
                    id,
                    &format!("candidates[{i}].object_scores"),
                    &format!("length {} does not match {} object categories", c.object_scores.len(), n_obj),
                ));
            }
            if c.attribute_scores.len() != n_attr {
                return Err(schema(
                    id,
                    &format!("candidates[{i}].attribute_scores"),
                    &format!("length {} does not match {} attributes", c.attribute_scores.len(), n_attr),
                ));
            }
            if c.object_scores.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(schema(id, &format!("candidates[{i}].object_scores"), "entry outside [0, 1]"));
            }
            let sum: f64 = c.object_scores.iter().sum();
            if (sum - 1.0).abs() > SCORE_SUM_TOLERANCE {
                return Err(schema(
                    id,
                    &format!("candidates[{i}].object_scores"),
                    &format!("entries sum to {sum}, expected 1"),
                ));
            }
            if c.attribute_scores.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(schema(id, &format!("candidates[{i}].attribute_scores"), "entry outside [0, 1]"));
            }
        }
        let n_inst = img.truth_instances.as_ref().map_or(0, Vec::len);
        if let Some(instances) = &img.truth_instances {
            for (i, t) in instances.iter().enumerate() {
                if !t.bbox.is_valid() {
                    return Err(schema(id, &format!("truth_instances[{i}].box"), "non-finite or non-positive size"));
                }
                let canonical = self.synonyms.canonical(&t.category);
                if self.vocab.object_index(canonical).is_none() {
                    return Err(schema(
                        id,
                        &format!("truth_instances[{i}].category"),
                        &format!("{:?} is not in the object vocabulary", t.category),
                    ));
                }
            }
        }
        if let Some(relations) = &img.truth_relations {
            if img.truth_instances.is_none() {
                return Err(schema(id, "truth_relations", "relations given without truth_instances"));
            }
            for (i, r) in relations.iter().enumerate() {
                if r.subject >= n_inst || r.object >= n_inst {
                    return Err(schema(
                        id,
                        &format!("truth_relations[{i}]"),
                        &format!("instance index out of range (have {n_inst})"),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn schema(image_id: &str, field: &str, message: &str) -> DatasetError {
    DatasetError::Schema {
        image_id: image_id.to_string(),
        field: field.to_string(),
        message: message.to_string(),
    }
}
