//! Conditional random field over candidate boxes and MAP grounding.
//!
//! One variable per query object, whose domain is the image's candidate
//! index set. Object and attribute scores are unary factors; each query
//! relationship is a binary factor of calibrated pair probabilities. All
//! factor values are floored at [`PROB_FLOOR`] when the graph is built, and
//! the graph stores their negative logs so that energy, exact search and
//! belief propagation see identical costs.

mod bp;
mod exact;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ImageRecord, Vocabulary};
use crate::relmodel::ModelSet;
use crate::scenegraph::{NodeId, SceneGraph};

pub use bp::{map_inference_bp, BpParams};
pub use exact::{map_inference_exact, EXACT_SEARCH_LIMIT};

pub const PROB_FLOOR: f64 = 1e-10;
// Inputs this far above one are rounding noise and are clamped.
const ONE_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("unknown object category {0:?}")]
    UnknownCategory(String),
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("no trained relationship model for predicate {0:?}")]
    MissingModel(String),
    #[error("image {0:?} has no candidate boxes")]
    NoCandidates(String),
    #[error("factor shape mismatch: {0}")]
    Shape(String),
    #[error("factor value {value} is not a probability")]
    InvalidValue { value: f64 },
    #[error("assignment has {got} entries for {want} variables")]
    AssignmentLength { got: usize, want: usize },
    #[error("variable {variable}: index {index} outside domain of size {domain}")]
    OutOfDomain {
        variable: usize,
        index: usize,
        domain: usize,
    },
    #[error("exhaustive search over {size:e} assignments exceeds the limit")]
    SearchSpaceTooLarge { size: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "label")]
pub enum UnaryKind {
    Object(String),
    Attribute(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variable {
    pub node_id: NodeId,
    pub domain: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnaryFactor {
    pub variable: usize,
    pub kind: UnaryKind,
    values: Vec<f64>,
    costs: Vec<f64>,
}

impl UnaryFactor {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }
}

/// Pairwise factor stored row-major: entry `(i, j)` at `i * object_domain + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryFactor {
    pub subject: usize,
    pub object: usize,
    pub predicate: String,
    values: Vec<f64>,
    costs: Vec<f64>,
}

impl BinaryFactor {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph {
    variables: Vec<Variable>,
    unaries: Vec<UnaryFactor>,
    binaries: Vec<BinaryFactor>,
}

fn floor_values(values: Vec<f64>) -> Result<(Vec<f64>, Vec<f64>), InferenceError> {
    let mut floored = Vec::with_capacity(values.len());
    for v in values {
        if v.is_nan() || v < 0.0 || v > 1.0 + ONE_SLACK {
            return Err(InferenceError::InvalidValue { value: v });
        }
        floored.push(v.clamp(PROB_FLOOR, 1.0));
    }
    let costs = floored.iter().map(|v| -v.ln()).collect();
    Ok((floored, costs))
}

impl FactorGraph {
    pub fn new(
        variables: Vec<Variable>,
        unaries: Vec<(usize, UnaryKind, Vec<f64>)>,
        binaries: Vec<(usize, usize, String, Vec<f64>)>,
    ) -> Result<Self, InferenceError> {
        if let Some(v) = variables.iter().find(|v| v.domain == 0) {
            return Err(InferenceError::Shape(format!("variable for node {} has an empty domain", v.node_id)));
        }
        let nv = variables.len();
        let mut us = Vec::with_capacity(unaries.len());
        for (variable, kind, values) in unaries {
            if variable >= nv || values.len() != variables[variable].domain {
                return Err(InferenceError::Shape(format!(
                    "unary {kind:?} on variable {variable} has {} values",
                    values.len()
                )));
            }
            let (values, costs) = floor_values(values)?;
            us.push(UnaryFactor {
                variable,
                kind,
                values,
                costs,
            });
        }
        let mut bs = Vec::with_capacity(binaries.len());
        for (subject, object, predicate, values) in binaries {
            if subject >= nv || object >= nv || subject == object {
                return Err(InferenceError::Shape(format!(
                    "binary {predicate:?} connects variables {subject} and {object}"
                )));
            }
            let want = variables[subject].domain * variables[object].domain;
            if values.len() != want {
                return Err(InferenceError::Shape(format!(
                    "binary {predicate:?} has {} values, expected {want}",
                    values.len()
                )));
            }
            let (values, costs) = floor_values(values)?;
            bs.push(BinaryFactor {
                subject,
                object,
                predicate,
                values,
                costs,
            });
        }
        Ok(FactorGraph {
            variables,
            unaries: us,
            binaries: bs,
        })
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn unaries(&self) -> &[UnaryFactor] {
        &self.unaries
    }

    pub fn binaries(&self) -> &[BinaryFactor] {
        &self.binaries
    }

    /// Number of complete assignments, as a float to survive overflow.
    pub fn search_space(&self) -> f64 {
        self.variables.iter().map(|v| v.domain as f64).product()
    }

    /// True when the binary factors form a forest (no cycles, no parallel
    /// factors between one pair of variables).
    pub fn is_tree(&self) -> bool {
        let mut parent: Vec<usize> = (0..self.variables.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for b in &self.binaries {
            let (rs, ro) = (find(&mut parent, b.subject), find(&mut parent, b.object));
            if rs == ro {
                return false;
            }
            parent[rs] = ro;
        }
        true
    }

    fn check_assignment(&self, assignment: &[usize]) -> Result<(), InferenceError> {
        if assignment.len() != self.variables.len() {
            return Err(InferenceError::AssignmentLength {
                got: assignment.len(),
                want: self.variables.len(),
            });
        }
        for (i, (&x, v)) in assignment.iter().zip(&self.variables).enumerate() {
            if x >= v.domain {
                return Err(InferenceError::OutOfDomain {
                    variable: i,
                    index: x,
                    domain: v.domain,
                });
            }
        }
        Ok(())
    }

    /// Energy without bounds checks; unaries first, then binaries, each in
    /// storage order.
    fn energy_unchecked(&self, assignment: &[usize]) -> f64 {
        let mut e = 0.0;
        for u in &self.unaries {
            e += u.costs[assignment[u.variable]];
        }
        for b in &self.binaries {
            let d_o = self.variables[b.object].domain;
            e += b.costs[assignment[b.subject] * d_o + assignment[b.object]];
        }
        e
    }
}

/// `E = −Σ ln(factor value)` over every unary and binary factor.
pub fn energy(fg: &FactorGraph, assignment: &[usize]) -> Result<f64, InferenceError> {
    fg.check_assignment(assignment)?;
    Ok(fg.energy_unchecked(assignment))
}

/// `(Π unary values, Π unary values × Π binary values)` at `assignment`.
pub fn factorization_components(fg: &FactorGraph, assignment: &[usize]) -> Result<(f64, f64), InferenceError> {
    fg.check_assignment(assignment)?;
    let mut unary_cost = 0.0;
    for u in &fg.unaries {
        unary_cost += u.costs[assignment[u.variable]];
    }
    let mut binary_cost = 0.0;
    for b in &fg.binaries {
        let d_o = fg.variables[b.object].domain;
        binary_cost += b.costs[assignment[b.subject] * d_o + assignment[b.object]];
    }
    Ok(((-unary_cost).exp(), (-(unary_cost + binary_cost)).exp()))
}

/// A MAP assignment of query nodes to candidate indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grounding {
    pub node_ids: Vec<NodeId>,
    pub assignment: Vec<usize>,
    pub energy: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl Grounding {
    pub fn candidate_for(&self, node: NodeId) -> Option<usize> {
        self.node_ids
            .iter()
            .position(|&n| n == node)
            .map(|i| self.assignment[i])
    }

    pub(crate) fn from_assignment(fg: &FactorGraph, assignment: Vec<usize>, converged: bool, iterations: usize) -> Self {
        Grounding {
            node_ids: fg.variables.iter().map(|v| v.node_id).collect(),
            energy: fg.energy_unchecked(&assignment),
            assignment,
            converged,
            iterations,
        }
    }
}

/// Builds the grounding CRF of `sg` over the candidates of `img`.
///
/// Labels are looked up verbatim; normalize the query against the dataset's
/// synonym map beforehand.
pub fn build_factor_graph(
    sg: &SceneGraph,
    img: &ImageRecord,
    models: &ModelSet,
    vocab: &Vocabulary,
) -> Result<FactorGraph, InferenceError> {
    if img.candidates.is_empty() {
        return Err(InferenceError::NoCandidates(img.image_id.clone()));
    }
    let n = img.candidates.len();
    let variables: Vec<Variable> = sg
        .objects()
        .iter()
        .map(|o| Variable {
            node_id: o.id,
            domain: n,
        })
        .collect();

    let mut unaries = Vec::new();
    for (v, o) in sg.objects().iter().enumerate() {
        let c = vocab
            .object_index(&o.category)
            .ok_or_else(|| InferenceError::UnknownCategory(o.category.clone()))?;
        let values = img.candidates.iter().map(|cand| cand.object_scores[c]).collect();
        unaries.push((v, UnaryKind::Object(o.category.clone()), values));
    }
    for a in sg.attributes() {
        let idx = vocab
            .attribute_index(&a.attribute)
            .ok_or_else(|| InferenceError::UnknownAttribute(a.attribute.clone()))?;
        let v = sg.node_index(a.id).expect("validated node");
        let values = img.candidates.iter().map(|cand| cand.attribute_scores[idx]).collect();
        unaries.push((v, UnaryKind::Attribute(a.attribute.clone()), values));
    }

    let mut binaries = Vec::new();
    for r in sg.relationships() {
        let model = models
            .get(&r.predicate)
            .ok_or_else(|| InferenceError::MissingModel(r.predicate.clone()))?;
        let mut values = Vec::with_capacity(n * n);
        for s in &img.candidates {
            for o in &img.candidates {
                values.push(model.calibrated_prob(&s.bbox, &o.bbox));
            }
        }
        binaries.push((
            sg.node_index(r.subject).expect("validated node"),
            sg.node_index(r.object).expect("validated node"),
            r.predicate.clone(),
            values,
        ));
    }
    FactorGraph::new(variables, unaries, binaries)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dataset::{BoundingBox, CandidateBox};
    use crate::relmodel::{GmmModel, PlattParams, RelationshipModel};
    use std::collections::BTreeMap;

    pub(crate) fn unary_graph(values: Vec<f64>) -> FactorGraph {
        FactorGraph::new(
            vec![Variable {
                node_id: 0,
                domain: values.len(),
            }],
            vec![(0, UnaryKind::Object("x".into()), values)],
            vec![],
        )
        .unwrap()
    }

    fn vocab() -> Vocabulary {
        Vocabulary::new(
            vec!["woman".into(), "sunglasses".into(), "dog".into()],
            vec!["standing".into(), "dark".into()],
            vec!["wearing".into()],
        )
        .unwrap()
    }

    fn models() -> ModelSet {
        let wearing = RelationshipModel {
            predicate: "wearing".into(),
            gmm: GmmModel::new(vec![1.0], vec![[0.0, -0.3, -1.0, -1.5]], vec![[0.2; 4]]).unwrap(),
            platt: PlattParams { a: -0.8, b: 0.5 },
        };
        ModelSet {
            vocab: vocab(),
            models: BTreeMap::from([("wearing".to_string(), wearing)]),
        }
    }

    fn image(n: usize) -> ImageRecord {
        ImageRecord {
            image_id: "img".into(),
            candidates: (0..n)
                .map(|i| CandidateBox {
                    bbox: BoundingBox::new(i as f64 * 10.0, 5.0, 20.0 + i as f64, 40.0).unwrap(),
                    object_scores: vec![0.5, 0.3, 0.2],
                    attribute_scores: vec![0.7, 0.1],
                })
                .collect(),
            truth_instances: None,
            truth_relations: None,
        }
    }

    #[test]
    fn structure_of_two_object_query() {
        let sg = SceneGraph::from_parts(&[(0, "woman"), (1, "sunglasses")], &[], &[(0, "wearing", 1)]).unwrap();
        let fg = build_factor_graph(&sg, &image(5), &models(), &vocab()).unwrap();
        assert_eq!(fg.variables().len(), 2);
        assert!(fg.variables().iter().all(|v| v.domain == 5));
        assert_eq!(fg.unaries().len(), 2);
        assert_eq!(fg.binaries().len(), 1);
        assert_eq!(fg.binaries()[0].values().len(), 25);
    }

    #[test]
    fn standing_woman_wearing_dark_sunglasses() {
        let sg = SceneGraph::from_parts(
            &[(0, "woman"), (1, "sunglasses")],
            &[(0, "standing"), (1, "dark")],
            &[(0, "wearing", 1)],
        )
        .unwrap();
        let fg = build_factor_graph(&sg, &image(4), &models(), &vocab()).unwrap();
        let kinds: Vec<(usize, &UnaryKind)> = fg.unaries().iter().map(|u| (u.variable, &u.kind)).collect();
        assert_eq!(
            kinds,
            vec![
                (0, &UnaryKind::Object("woman".into())),
                (1, &UnaryKind::Object("sunglasses".into())),
                (0, &UnaryKind::Attribute("standing".into())),
                (1, &UnaryKind::Attribute("dark".into())),
            ]
        );
        assert_eq!(fg.binaries()[0].predicate, "wearing");
    }

    #[test]
    fn missing_model_and_labels_are_named() {
        let sg = SceneGraph::from_parts(&[(0, "woman"), (1, "dog")], &[], &[(0, "walking", 1)]).unwrap();
        assert_eq!(
            build_factor_graph(&sg, &image(3), &models(), &vocab()),
            Err(InferenceError::MissingModel("walking".into()))
        );
        let sg = SceneGraph::from_parts(&[(0, "cat")], &[], &[]).unwrap();
        assert_eq!(
            build_factor_graph(&sg, &image(3), &models(), &vocab()),
            Err(InferenceError::UnknownCategory("cat".into()))
        );
        let sg = SceneGraph::from_parts(&[(0, "dog")], &[(0, "fluffy")], &[]).unwrap();
        assert_eq!(
            build_factor_graph(&sg, &image(3), &models(), &vocab()),
            Err(InferenceError::UnknownAttribute("fluffy".into()))
        );
        let sg = SceneGraph::from_parts(&[(0, "dog")], &[], &[]).unwrap();
        assert!(matches!(
            build_factor_graph(&sg, &image(0), &models(), &vocab()),
            Err(InferenceError::NoCandidates(_))
        ));
    }

    #[test]
    fn energy_identities() {
        let fg = unary_graph(vec![1.0, (-3.0f64).exp(), 0.0]);
        assert_eq!(energy(&fg, &[0]).unwrap(), 0.0);
        assert!((energy(&fg, &[1]).unwrap() - 3.0).abs() < 1e-12);
        let floored = energy(&fg, &[2]).unwrap();
        assert!((floored - 23.025_850_929_940_457).abs() < 1e-9);
        assert!(matches!(energy(&fg, &[3]), Err(InferenceError::OutOfDomain { .. })));
        assert!(matches!(energy(&fg, &[0, 0]), Err(InferenceError::AssignmentLength { .. })));
    }

    #[test]
    fn rejects_non_probabilities() {
        assert!(matches!(
            FactorGraph::new(
                vec![Variable { node_id: 0, domain: 1 }],
                vec![(0, UnaryKind::Object("x".into()), vec![1.5])],
                vec![],
            ),
            Err(InferenceError::InvalidValue { .. })
        ));
    }

    #[test]
    fn factorization_examples() {
        let fg = unary_graph(vec![0.1, 0.2]);
        let (x, y) = factorization_components(&fg, &[0]).unwrap();
        assert!((x - 0.1).abs() < 1e-15 && x == y);

        let fg = FactorGraph::new(
            vec![Variable { node_id: 0, domain: 1 }, Variable { node_id: 1, domain: 1 }],
            vec![
                (0, UnaryKind::Object("a".into()), vec![0.5]),
                (1, UnaryKind::Object("b".into()), vec![0.2]),
            ],
            vec![(0, 1, "r".into(), vec![0.5])],
        )
        .unwrap();
        let (x, y) = factorization_components(&fg, &[0, 0]).unwrap();
        assert!((x - 0.1).abs() < 1e-15);
        assert!((y - 0.05).abs() < 1e-15);
        assert!((-y.ln() - energy(&fg, &[0, 0]).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn tree_detection() {
        let vars = vec![Variable { node_id: 0, domain: 2 }, Variable { node_id: 1, domain: 2 }, Variable { node_id: 2, domain: 2 }];
        let b = |s, o| (s, o, "r".to_string(), vec![0.5; 4]);
        assert!(FactorGraph::new(vars.clone(), vec![], vec![b(0, 1), b(2, 1)]).unwrap().is_tree());
        assert!(!FactorGraph::new(vars.clone(), vec![], vec![b(0, 1), b(1, 2), b(2, 0)]).unwrap().is_tree());
        assert!(!FactorGraph::new(vars, vec![], vec![b(0, 1), b(1, 0)]).unwrap().is_tree());
    }
}
