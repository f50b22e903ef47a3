//! Model file: JSON with every real number written as a 17-significant-digit
//! decimal, which round-trips `f64` exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::de::Deserializer;
use serde::ser::{Error as _, Serializer};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use super::{GmmModel, ModelError, ModelSet, PlattParams, RelationshipModel, FEATURE_DIM};
use crate::dataset::Vocabulary;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Real(f64);

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(S::Error::custom("non-finite number in model file"));
        }
        let raw = RawValue::from_string(format!("{:.16e}", self.0)).map_err(S::Error::custom)?;
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        f64::deserialize(d).map(Real)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredicateEntry {
    predicate: String,
    k: usize,
    weights: Vec<Real>,
    means: Vec<[Real; FEATURE_DIM]>,
    variances: Vec<[Real; FEATURE_DIM]>,
    a: Real,
    b: Real,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    schema_version: u32,
    vocab_objects: Vec<String>,
    vocab_attributes: Vec<String>,
    vocab_predicates: Vec<String>,
    models: Vec<PredicateEntry>,
}

fn to_reals(v: &[f64; FEATURE_DIM]) -> [Real; FEATURE_DIM] {
    v.map(Real)
}

fn from_reals(v: &[Real; FEATURE_DIM]) -> [f64; FEATURE_DIM] {
    v.map(|r| r.0)
}

pub fn write_models<W: Write>(set: &ModelSet, mut w: W) -> Result<(), ModelError> {
    let file = ModelFile {
        schema_version: MODEL_SCHEMA_VERSION,
        vocab_objects: set.vocab.objects().to_vec(),
        vocab_attributes: set.vocab.attributes().to_vec(),
        vocab_predicates: set.vocab.predicates().to_vec(),
        models: set
            .models
            .values()
            .map(|m| PredicateEntry {
                predicate: m.predicate.clone(),
                k: m.gmm.k(),
                weights: m.gmm.weights().iter().copied().map(Real).collect(),
                means: m.gmm.means().iter().map(to_reals).collect(),
                variances: m.gmm.variances().iter().map(to_reals).collect(),
                a: Real(m.platt.a),
                b: Real(m.platt.b),
            })
            .collect(),
    };
    serde_json::to_writer_pretty(&mut w, &file).map_err(|e| ModelError::File(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| ModelError::File(e.to_string()))
}

pub fn read_models<R: Read>(r: R) -> Result<ModelSet, ModelError> {
    let file: ModelFile = serde_json::from_reader(r).map_err(|e| ModelError::File(e.to_string()))?;
    if file.schema_version != MODEL_SCHEMA_VERSION {
        return Err(ModelError::File(format!(
            "unsupported schema version {} (expected {MODEL_SCHEMA_VERSION})",
            file.schema_version
        )));
    }
    let vocab = Vocabulary::new(file.vocab_objects, file.vocab_attributes, file.vocab_predicates)
        .map_err(|e| ModelError::File(e.to_string()))?;
    let mut models = BTreeMap::new();
    for e in file.models {
        if e.weights.len() != e.k {
            return Err(ModelError::File(format!(
                "predicate {:?}: k = {} but {} weights",
                e.predicate,
                e.k,
                e.weights.len()
            )));
        }
        let gmm = GmmModel::new(
            e.weights.iter().map(|r| r.0).collect(),
            e.means.iter().map(from_reals).collect(),
            e.variances.iter().map(from_reals).collect(),
        )?;
        let model = RelationshipModel {
            predicate: e.predicate.clone(),
            gmm,
            platt: PlattParams { a: e.a.0, b: e.b.0 },
        };
        if models.insert(e.predicate.clone(), model).is_some() {
            return Err(ModelError::File(format!("predicate {:?} listed twice", e.predicate)));
        }
    }
    Ok(ModelSet { vocab, models })
}

pub fn save_models(set: &ModelSet, path: &Path) -> Result<(), ModelError> {
    let f = File::create(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_models(set, BufWriter::new(f))
}

pub fn load_models(path: &Path) -> Result<ModelSet, ModelError> {
    let f = File::open(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_models(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set_with(values: [f64; 4]) -> ModelSet {
        let w0 = 0.1 + values[0].abs().fract() * 0.1;
        let gmm = GmmModel::new(
            vec![w0, 1.0 - w0],
            vec![values, [-values[3], values[2], values[1], values[0]]],
            vec![[values[0].abs() + 1e-4; 4], [1.0 / 3.0; 4]],
        )
        .unwrap();
        ModelSet {
            vocab: Vocabulary::new(vec!["a".into()], vec![], vec!["on".into()]).unwrap(),
            models: [(
                "on".to_string(),
                RelationshipModel {
                    predicate: "on".into(),
                    gmm,
                    platt: PlattParams {
                        a: -values[1].abs() - 0.5,
                        b: values[2],
                    },
                },
            )]
            .into_iter()
            .collect(),
        }
    }

    #[test]
    fn numbers_use_seventeen_digits() {
        let mut buf = Vec::new();
        write_models(&set_with([0.1, 0.2, 0.3, 0.4]), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("1.0000000000000001e-1"), "{text}");
        assert!(text.contains("\"schema_version\": 1"));
    }

    #[test]
    fn rejects_wrong_schema_version() {
        let text = r#"{"schema_version":7,"vocab_objects":[],"vocab_attributes":[],"vocab_predicates":[],"models":[]}"#;
        assert!(matches!(read_models(text.as_bytes()), Err(ModelError::File(_))));
    }

    proptest! {
        #[test]
        fn write_then_read_is_bit_exact(a in -1e3..1e3f64, b in -1e-3..1e-3f64, c in -1e6..1e6f64, d in any::<i32>()) {
            let set = set_with([a, b, c, d as f64 * 1e-7]);
            let mut buf = Vec::new();
            write_models(&set, &mut buf).unwrap();
            let back = read_models(buf.as_slice()).unwrap();
            prop_assert_eq!(back, set);
        }
    }
}
