//! Ground-truth matching of a query against one annotated image.

use std::collections::{BTreeSet, HashSet};

use super::{DatasetError, ImageRecord};
use crate::scenegraph::{SceneGraph, SynonymMap};

/// Counts over injective assignments of query nodes to category-matching
/// truth instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Tally {
    pub total: usize,
    pub satisfying: usize,
}

/// Query and image truth, both reduced to canonical labels.
#[derive(Debug, Clone)]
pub struct QueryMatcher {
    node_categories: Vec<String>,
    node_attributes: Vec<BTreeSet<String>>,
    relations: Vec<(usize, String, usize)>,
    instance_categories: Vec<String>,
    instance_attributes: Vec<BTreeSet<String>>,
    truth_relations: HashSet<(usize, String, usize)>,
}

impl QueryMatcher {
    pub fn new(img: &ImageRecord, sg: &SceneGraph, syn: &SynonymMap) -> Result<Self, DatasetError> {
        let instances = img
            .truth_instances
            .as_ref()
            .ok_or_else(|| DatasetError::MissingGroundTruth(img.image_id.clone()))?;
        let canon = |s: &str| syn.canonical(s).to_string();
        Ok(QueryMatcher {
            node_categories: sg.objects().iter().map(|o| canon(&o.category)).collect(),
            node_attributes: sg
                .objects()
                .iter()
                .map(|o| sg.attributes_of(o.id).map(canon).collect())
                .collect(),
            relations: sg
                .relationships()
                .iter()
                .map(|r| {
                    (
                        sg.node_index(r.subject).expect("validated node"),
                        canon(&r.predicate),
                        sg.node_index(r.object).expect("validated node"),
                    )
                })
                .collect(),
            instance_categories: instances.iter().map(|t| canon(&t.category)).collect(),
            instance_attributes: instances
                .iter()
                .map(|t| t.attributes.iter().map(|a| canon(a)).collect())
                .collect(),
            truth_relations: img
                .truth_relations
                .iter()
                .flatten()
                .map(|r| (r.subject, canon(&r.predicate), r.object))
                .collect(),
        })
    }

    /// Distinct canonical categories named by the query, in node order.
    pub fn query_categories(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.node_categories
            .iter()
            .filter(|c| seen.insert(c.as_str()))
            .map(String::as_str)
            .collect()
    }

    pub fn instance_count(&self, category: &str) -> usize {
        self.instance_categories.iter().filter(|c| *c == category).count()
    }

    fn satisfies(&self, assignment: &[usize]) -> bool {
        let attrs_ok = self
            .node_attributes
            .iter()
            .zip(assignment)
            .all(|(want, &inst)| want.is_subset(&self.instance_attributes[inst]));
        attrs_ok
            && self.relations.iter().all(|(s, p, o)| {
                self.truth_relations
                    .contains(&(assignment[*s], p.clone(), assignment[*o]))
            })
    }

    /// Walks every injective category-matching assignment; `visit` returns
    /// false to stop early.
    fn walk(&self, visit: &mut dyn FnMut(&[usize], bool) -> bool) {
        let candidates: Vec<Vec<usize>> = self
            .node_categories
            .iter()
            .map(|c| {
                self.instance_categories
                    .iter()
                    .enumerate()
                    .filter(|(_, ic)| *ic == c)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        let mut assignment = Vec::with_capacity(candidates.len());
        let mut used = vec![false; self.instance_categories.len()];
        self.recurse(&candidates, &mut assignment, &mut used, visit);
    }

    fn recurse(
        &self,
        candidates: &[Vec<usize>],
        assignment: &mut Vec<usize>,
        used: &mut [bool],
        visit: &mut dyn FnMut(&[usize], bool) -> bool,
    ) -> bool {
        let depth = assignment.len();
        if depth == candidates.len() {
            return visit(assignment, self.satisfies(assignment));
        }
        for &inst in &candidates[depth] {
            if used[inst] {
                continue;
            }
            used[inst] = true;
            assignment.push(inst);
            let go_on = self.recurse(candidates, assignment, used, visit);
            assignment.pop();
            used[inst] = false;
            if !go_on {
                return false;
            }
        }
        true
    }

    pub fn tally(&self) -> Tally {
        let mut t = Tally::default();
        self.walk(&mut |_, ok| {
            t.total += 1;
            if ok {
                t.satisfying += 1;
            }
            true
        });
        t
    }

    pub fn any_satisfying(&self) -> bool {
        let mut found = false;
        self.walk(&mut |_, ok| {
            found = ok;
            !ok
        });
        found
    }
}

/// True iff some injective assignment of query nodes to truth instances
/// matches every category, attribute and relationship.
pub fn match_query(img: &ImageRecord, sg: &SceneGraph, syn: &SynonymMap) -> Result<bool, DatasetError> {
    Ok(QueryMatcher::new(img, sg, syn)?.any_satisfying())
}
