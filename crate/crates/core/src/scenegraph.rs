//! Scene-graph queries: objects, attributes and pairwise relationships.
//!
//! Graphs are validated on construction, so every `SceneGraph` in the
//! process satisfies: unique node ids, no dangling references and no
//! self-relationships.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("node {0} is referenced but not declared")]
    DanglingNode(NodeId),
    #[error("node id {0} is declared more than once")]
    DuplicateNode(NodeId),
    #[error("relationship {predicate:?} relates node {node} to itself")]
    SelfRelationship { node: NodeId, predicate: String },
    #[error("synonym {label:?} maps to {target:?}, which is not a fixed point")]
    SynonymChain { label: String, target: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectNode {
    pub id: NodeId,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeNode {
    pub id: NodeId,
    pub attribute: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Relationship {
    pub subject: NodeId,
    pub predicate: String,
    pub object: NodeId,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSceneGraph {
    objects: Vec<ObjectNode>,
    #[serde(default)]
    attributes: Vec<AttributeNode>,
    #[serde(default)]
    relationships: Vec<Relationship>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSceneGraph")]
pub struct SceneGraph {
    objects: Vec<ObjectNode>,
    attributes: Vec<AttributeNode>,
    relationships: Vec<Relationship>,
}

impl TryFrom<RawSceneGraph> for SceneGraph {
    type Error = QueryError;

    fn try_from(raw: RawSceneGraph) -> Result<Self, Self::Error> {
        SceneGraph::new(raw.objects, raw.attributes, raw.relationships)
    }
}

impl SceneGraph {
    pub fn new(
        objects: Vec<ObjectNode>,
        attributes: Vec<AttributeNode>,
        relationships: Vec<Relationship>,
    ) -> Result<Self, QueryError> {
        let mut ids = HashSet::new();
        for o in &objects {
            if !ids.insert(o.id) {
                return Err(QueryError::DuplicateNode(o.id));
            }
        }
        for a in &attributes {
            if !ids.contains(&a.id) {
                return Err(QueryError::DanglingNode(a.id));
            }
        }
        for r in &relationships {
            for id in [r.subject, r.object] {
                if !ids.contains(&id) {
                    return Err(QueryError::DanglingNode(id));
                }
            }
            if r.subject == r.object {
                return Err(QueryError::SelfRelationship {
                    node: r.subject,
                    predicate: r.predicate.clone(),
                });
            }
        }
        Ok(SceneGraph {
            objects,
            attributes,
            relationships,
        })
    }

    /// Shorthand constructor from tuples, mostly for fixtures.
    pub fn from_parts(
        objects: &[(NodeId, &str)],
        attributes: &[(NodeId, &str)],
        relationships: &[(NodeId, &str, NodeId)],
    ) -> Result<Self, QueryError> {
        SceneGraph::new(
            objects
                .iter()
                .map(|&(id, c)| ObjectNode {
                    id,
                    category: c.to_string(),
                })
                .collect(),
            attributes
                .iter()
                .map(|&(id, a)| AttributeNode {
                    id,
                    attribute: a.to_string(),
                })
                .collect(),
            relationships
                .iter()
                .map(|&(s, p, o)| Relationship {
                    subject: s,
                    predicate: p.to_string(),
                    object: o,
                })
                .collect(),
        )
    }

    pub fn objects(&self) -> &[ObjectNode] {
        &self.objects
    }

    pub fn attributes(&self) -> &[AttributeNode] {
        &self.attributes
    }

    pub fn relationships(&self) -> &[Relationship] {
        &self.relationships
    }

    /// Position of `id` in [`SceneGraph::objects`].
    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    pub fn attributes_of(&self, id: NodeId) -> impl Iterator<Item = &str> {
        self.attributes
            .iter()
            .filter(move |a| a.id == id)
            .map(|a| a.attribute.as_str())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scene graph serializes")
    }

    /// Compact human-readable rendering, e.g. `clear glasses on woman`.
    pub fn describe(&self) -> String {
        let phrase = |id: NodeId| {
            let idx = self.node_index(id).expect("validated node");
            let mut words: Vec<&str> = self.attributes_of(id).collect();
            words.push(&self.objects[idx].category);
            words.join(" ")
        };
        if self.relationships.is_empty() {
            return self
                .objects
                .iter()
                .map(|o| phrase(o.id))
                .collect::<Vec<_>>()
                .join(", ");
        }
        self.relationships
            .iter()
            .map(|r| format!("{} {} {}", phrase(r.subject), r.predicate, phrase(r.object)))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Parses a query document (JSON) into a validated graph.
pub fn parse_scene_graph(text: &str) -> Result<SceneGraph, QueryError> {
    let raw: RawSceneGraph = serde_json::from_str(text).map_err(|e| QueryError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    SceneGraph::try_from(raw)
}

/// A scene graph with a stable identifier, as used throughout evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedQuery {
    pub id: String,
    pub graph: SceneGraph,
}

/// Surface label to canonical label mapping.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, String>", into = "BTreeMap<String, String>")]
pub struct SynonymMap {
    entries: BTreeMap<String, String>,
}

impl TryFrom<BTreeMap<String, String>> for SynonymMap {
    type Error = QueryError;

    fn try_from(entries: BTreeMap<String, String>) -> Result<Self, Self::Error> {
        SynonymMap::new(entries)
    }
}

impl From<SynonymMap> for BTreeMap<String, String> {
    fn from(m: SynonymMap) -> Self {
        m.entries
    }
}

impl SynonymMap {
    /// Canonical labels must be fixed points: if a target also appears as a
    /// key, it has to map to itself.
    pub fn new(entries: BTreeMap<String, String>) -> Result<Self, QueryError> {
        for (label, target) in &entries {
            if let Some(next) = entries.get(target) {
                if next != target {
                    return Err(QueryError::SynonymChain {
                        label: label.clone(),
                        target: target.clone(),
                    });
                }
            }
        }
        Ok(SynonymMap { entries })
    }

    pub fn from_pairs(pairs: &[(&str, &str)]) -> Result<Self, QueryError> {
        SynonymMap::new(
            pairs
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        )
    }

    pub fn from_json(text: &str) -> Result<Self, QueryError> {
        let entries: BTreeMap<String, String> =
            serde_json::from_str(text).map_err(|e| QueryError::Syntax {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        SynonymMap::new(entries)
    }

    pub fn canonical<'a>(&'a self, label: &'a str) -> &'a str {
        self.entries.get(label).map(String::as_str).unwrap_or(label)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }
}

/// Replaces every category, attribute and predicate by its canonical label.
pub fn normalize_labels(sg: &SceneGraph, syn: &SynonymMap) -> SceneGraph {
    SceneGraph {
        objects: sg
            .objects
            .iter()
            .map(|o| ObjectNode {
                id: o.id,
                category: syn.canonical(&o.category).to_string(),
            })
            .collect(),
        attributes: sg
            .attributes
            .iter()
            .map(|a| AttributeNode {
                id: a.id,
                attribute: syn.canonical(&a.attribute).to_string(),
            })
            .collect(),
        relationships: sg
            .relationships
            .iter()
            .map(|r| Relationship {
                subject: r.subject,
                predicate: syn.canonical(&r.predicate).to_string(),
                object: r.object,
            })
            .collect(),
    }
}

// Above this many tied orderings the first one is used; the key stays
// deterministic but may separate isomorphic graphs with many identical nodes.
const MAX_TIED_ORDERINGS: usize = 40_320;

/// Deterministic key that is equal for two graphs iff they are isomorphic
/// (same labelled nodes, attribute multisets and relationship triples).
pub fn canonical_key(sg: &SceneGraph) -> String {
    let n = sg.objects.len();
    let signatures: Vec<(String, Vec<String>)> = sg
        .objects
        .iter()
        .map(|o| {
            let mut attrs: Vec<String> = sg.attributes_of(o.id).map(str::to_string).collect();
            attrs.sort();
            (o.category.clone(), attrs)
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| signatures[a].cmp(&signatures[b]));

    // Runs of equal signatures; only orderings within a run are ambiguous.
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=n {
        if i == n || signatures[order[i]] != signatures[order[start]] {
            groups.push((start, i));
            start = i;
        }
    }
    let combos = groups
        .iter()
        .map(|&(s, e)| (1..=(e - s)).product::<usize>())
        .try_fold(1usize, |acc, f| acc.checked_mul(f))
        .unwrap_or(usize::MAX);

    let ordered_sigs: Vec<&(String, Vec<String>)> = order.iter().map(|&i| &signatures[i]).collect();
    let mut best: Option<String> = None;
    let mut remaining = combos.min(MAX_TIED_ORDERINGS);
    loop {
        let mut rank = vec![0usize; n];
        for (r, &node) in order.iter().enumerate() {
            rank[node] = r;
        }
        let mut rels: Vec<(usize, &str, usize)> = sg
            .relationships
            .iter()
            .map(|r| {
                let s = sg.node_index(r.subject).expect("validated node");
                let o = sg.node_index(r.object).expect("validated node");
                (rank[s], r.predicate.as_str(), rank[o])
            })
            .collect();
        rels.sort();
        let key = serde_json::to_string(&(&ordered_sigs, &rels)).expect("key serializes");
        if best.as_ref().is_none_or(|b| key < *b) {
            best = Some(key);
        }

        remaining -= 1;
        if remaining == 0 || !advance_groups(&mut order, &groups) {
            break;
        }
    }
    best.unwrap_or_default()
}

/// Odometer over per-group permutations; false once every combination has
/// been visited.
fn advance_groups(order: &mut [usize], groups: &[(usize, usize)]) -> bool {
    for &(s, e) in groups {
        if next_permutation(&mut order[s..e]) {
            return true;
        }
        // next_permutation left the slice sorted again; carry into next group.
    }
    false
}

fn next_permutation(xs: &mut [usize]) -> bool {
    if xs.len() < 2 {
        return false;
    }
    let mut i = xs.len() - 1;
    while i > 0 && xs[i - 1] >= xs[i] {
        i -= 1;
    }
    if i == 0 {
        xs.reverse();
        return false;
    }
    let mut j = xs.len() - 1;
    while xs[j] <= xs[i - 1] {
        j -= 1;
    }
    xs.swap(i - 1, j);
    xs[i..].reverse();
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    const GLASSES: &str = r#"{"objects":[{"id":0,"category":"glasses"},{"id":1,"category":"woman"}],"attributes":[{"id":0,"attribute":"clear"}],"relationships":[{"subject":0,"predicate":"on","object":1}]}"#;

    #[test]
    fn parses_minimal_graph() {
        let sg = parse_scene_graph(r#"{"objects":[{"id":0,"category":"man"}]}"#).unwrap();
        assert_eq!(sg.objects().len(), 1);
        assert!(sg.attributes().is_empty());
        assert!(sg.relationships().is_empty());
    }

    #[test]
    fn parses_clear_glasses_on_woman() {
        let sg = parse_scene_graph(GLASSES).unwrap();
        assert_eq!(sg.objects().len(), 2);
        assert_eq!(sg.attributes().len(), 1);
        assert_eq!(sg.relationships().len(), 1);
        assert_eq!(sg.describe(), "clear glasses on woman");
    }

    #[test]
    fn rejects_dangling_reference() {
        let text = r#"{"objects":[{"id":0,"category":"man"}],"relationships":[{"subject":0,"predicate":"on","object":5}]}"#;
        assert_eq!(parse_scene_graph(text), Err(QueryError::DanglingNode(5)));
    }

    #[test]
    fn rejects_duplicate_and_self_edges() {
        let dup = r#"{"objects":[{"id":0,"category":"man"},{"id":0,"category":"horse"}]}"#;
        assert_eq!(parse_scene_graph(dup), Err(QueryError::DuplicateNode(0)));
        let selfie = r#"{"objects":[{"id":0,"category":"man"}],"relationships":[{"subject":0,"predicate":"on","object":0}]}"#;
        assert!(matches!(
            parse_scene_graph(selfie),
            Err(QueryError::SelfRelationship { node: 0, .. })
        ));
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_scene_graph("{\n  \"objects\": [\n  {\"id\": 0,, }\n]}").unwrap_err();
        match err {
            QueryError::Syntax { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn serialize_then_parse_is_identity() {
        let sg = parse_scene_graph(GLASSES).unwrap();
        assert_eq!(parse_scene_graph(&sg.to_json()).unwrap(), sg);
    }

    #[test]
    fn normalization_examples() {
        let syn = SynonymMap::from_pairs(&[("street", "road")]).unwrap();
        let sg = SceneGraph::from_parts(&[(0, "bus"), (1, "street")], &[(1, "gray")], &[(0, "on", 1)])
            .unwrap();
        assert_eq!(normalize_labels(&sg, &syn).describe(), "bus on gray road");
        assert_eq!(normalize_labels(&sg, &SynonymMap::default()), sg);

        let syn = SynonymMap::from_pairs(&[("guy", "person"), ("man", "person")]).unwrap();
        let sg = SceneGraph::from_parts(&[(0, "man"), (1, "guy")], &[], &[(0, "next to", 1)]).unwrap();
        assert_eq!(normalize_labels(&sg, &syn).describe(), "person next to person");
    }

    #[test]
    fn synonym_chains_are_rejected() {
        let err = SynonymMap::from_pairs(&[("guy", "man"), ("man", "person")]).unwrap_err();
        assert!(matches!(err, QueryError::SynonymChain { .. }));
        // explicit fixed point is fine
        SynonymMap::from_pairs(&[("guy", "man"), ("man", "man")]).unwrap();
    }

    #[test]
    fn key_ignores_order_and_ids() {
        let a = SceneGraph::from_parts(
            &[(0, "man"), (1, "horse"), (2, "hat")],
            &[(0, "tall")],
            &[(0, "on", 1), (0, "wearing", 2)],
        )
        .unwrap();
        let b = SceneGraph::from_parts(
            &[(9, "hat"), (7, "man"), (3, "horse")],
            &[(7, "tall")],
            &[(7, "wearing", 9), (7, "on", 3)],
        )
        .unwrap();
        assert_eq!(canonical_key(&a), canonical_key(&b));
    }

    #[test]
    fn key_separates_attribute_difference() {
        let plain = SceneGraph::from_parts(&[(0, "man"), (1, "bench")], &[], &[(0, "on", 1)]).unwrap();
        let sitting =
            SceneGraph::from_parts(&[(0, "man"), (1, "bench")], &[(0, "sitting")], &[(0, "on", 1)])
                .unwrap();
        assert_ne!(canonical_key(&plain), canonical_key(&sitting));
    }

    #[test]
    fn key_handles_same_category_nodes() {
        // "standing man next to man": which man is standing must not matter
        let a = SceneGraph::from_parts(&[(0, "man"), (1, "man")], &[(0, "standing")], &[(0, "next to", 1)])
            .unwrap();
        let b = SceneGraph::from_parts(&[(0, "man"), (1, "man")], &[(1, "standing")], &[(1, "next to", 0)])
            .unwrap();
        let c = SceneGraph::from_parts(&[(0, "man"), (1, "man")], &[(1, "standing")], &[(0, "next to", 1)])
            .unwrap();
        assert_eq!(canonical_key(&a), canonical_key(&b));
        assert_ne!(canonical_key(&a), canonical_key(&c));
        let d = SceneGraph::from_parts(&[(0, "man"), (1, "man")], &[], &[(0, "next to", 1)]).unwrap();
        let e = SceneGraph::from_parts(&[(0, "man"), (1, "man")], &[], &[(1, "next to", 0)]).unwrap();
        assert_eq!(canonical_key(&d), canonical_key(&e));
    }
}
