//! Dataset and model audits: factorization linearity, instance-count bias
//! detectors, query deduplication, positive counts and grounding collapse.
//!
//! Everything here reads the dataset and never modifies it.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{BoundingBox, Dataset, DatasetError, ImageRecord, QueryMatcher};
use crate::inference::{build_factor_graph, factorization_components, BpParams, Grounding, InferenceError};
use crate::relmodel::ModelSet;
use crate::retrieval::{positive_flags, score_dataset_irsg};
use crate::scenegraph::{canonical_key, normalize_labels, NamedQuery, NodeId, SceneGraph, SynonymMap};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.9;
pub const DEFAULT_R2_THRESHOLD: f64 = 0.8;
pub const DEFAULT_MIN_POSITIVES: usize = 10;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("linearity analysis of {query:?} needs at least 3 images, got {n}")]
    TooFewImages { query: String, n: usize },
    #[error("bias detection needs at least one positive image")]
    NoPositives,
    #[error("statistics of an empty list")]
    Empty,
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityResult {
    pub query_id: String,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `(obj_attr_product, full_product)` per image, in dataset order.
    pub points: Vec<(f64, f64)>,
}

/// Least-squares line of y on x: `(slope, intercept, r²)`.
///
/// r² is 1 when y has no spread; a constant x gives slope 0.
pub fn ols(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in points {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for &(x, y) in points {
        let r = y - (intercept + slope * x);
        ss_res += r * r;
        ss_tot += (y - my) * (y - my);
    }
    let r2 = if ss_tot == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    (slope, intercept, r2)
}

/// Regresses the full factorization on the object-attribute part at each
/// image's MAP grounding.
pub fn linearity_analysis(
    query: &NamedQuery,
    dataset: &Dataset,
    models: &ModelSet,
    bp: &BpParams,
) -> Result<LinearityResult, AuditError> {
    let groundings: Vec<Grounding> = score_dataset_irsg(&query.graph, dataset, models, bp)?
        .into_iter()
        .map(|(_, g)| g)
        .collect();
    linearity_from_groundings(query, dataset, models, &groundings)
}

fn linearity_from_groundings(
    query: &NamedQuery,
    dataset: &Dataset,
    models: &ModelSet,
    groundings: &[Grounding],
) -> Result<LinearityResult, AuditError> {
    if dataset.images.len() < 3 {
        return Err(AuditError::TooFewImages {
            query: query.id.clone(),
            n: dataset.images.len(),
        });
    }
    let sg = normalize_labels(&query.graph, &dataset.synonyms);
    let mut points = Vec::with_capacity(groundings.len());
    for (img, g) in dataset.images.iter().zip(groundings) {
        let fg = build_factor_graph(&sg, img, models, &dataset.vocab)?;
        points.push(factorization_components(&fg, &g.assignment)?);
    }
    let (slope, intercept, r_squared) = ols(&points);
    Ok(LinearityResult {
        query_id: query.id.clone(),
        slope,
        intercept,
        r_squared,
        points,
    })
}

/// Share of results with r² at or above `threshold`; 0 for no results.
pub fn fraction_strongly_linear(results: &[LinearityResult], threshold: f64) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().filter(|r| r.r_squared >= threshold).count() as f64 / results.len() as f64
}

fn fraction_where(
    sg: &SceneGraph,
    positives: &[&ImageRecord],
    syn: &SynonymMap,
    pred: impl Fn(&QueryMatcher) -> bool,
) -> Result<f64, AuditError> {
    if positives.is_empty() {
        return Err(AuditError::NoPositives);
    }
    let mut hits = 0;
    for img in positives {
        if pred(&QueryMatcher::new(img, sg, syn)?) {
            hits += 1;
        }
    }
    Ok(hits as f64 / positives.len() as f64)
}

/// Share of positives holding exactly one truth instance of every query
/// category.
pub fn detect_single_instance_bias(sg: &SceneGraph, positives: &[&ImageRecord], syn: &SynonymMap) -> Result<f64, AuditError> {
    fraction_where(sg, positives, syn, |m| {
        m.query_categories().iter().all(|c| m.instance_count(c) == 1)
    })
}

/// Share of positives with at least two instances of some query category
/// where every injective category-matching assignment satisfies the query.
pub fn detect_any_instance_bias(sg: &SceneGraph, positives: &[&ImageRecord], syn: &SynonymMap) -> Result<f64, AuditError> {
    fraction_where(sg, positives, syn, |m| {
        let multi = m.query_categories().iter().any(|c| m.instance_count(c) >= 2);
        let t = m.tally();
        multi && t.total > 0 && t.satisfying == t.total
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupGroup {
    pub canonical_key: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupResult {
    /// Every key group in key order, members in input order.
    pub groups: Vec<DedupGroup>,
    pub unique_count: usize,
}

impl DedupResult {
    pub fn duplicate_groups(&self) -> impl Iterator<Item = &DedupGroup> {
        self.groups.iter().filter(|g| g.members.len() > 1)
    }
}

pub fn dedup_queries(queries: &[NamedQuery], syn: &SynonymMap) -> DedupResult {
    let mut by_key: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for q in queries {
        let key = canonical_key(&normalize_labels(&q.graph, syn));
        by_key.entry(key).or_default().push(q.id.clone());
    }
    let groups: Vec<DedupGroup> = by_key
        .into_iter()
        .map(|(canonical_key, members)| DedupGroup { canonical_key, members })
        .collect();
    DedupResult {
        unique_count: groups.len(),
        groups,
    }
}

/// `(mean, median)`; the median of an even count is the lower middle value.
pub fn positive_count_stats(counts: &[usize]) -> Result<(f64, f64), AuditError> {
    if counts.is_empty() {
        return Err(AuditError::Empty);
    }
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    Ok((mean, sorted[(sorted.len() - 1) / 2] as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseFlag {
    pub first: NodeId,
    pub second: NodeId,
    pub iou: f64,
    pub collapsed: bool,
}

/// One entry per pair of same-category query nodes, flagged when their
/// grounded boxes overlap with IoU above `iou_threshold`.
pub fn grounding_collapse_check(
    sg: &SceneGraph,
    grounding: &Grounding,
    img: &ImageRecord,
    iou_threshold: f64,
) -> Vec<CollapseFlag> {
    let objs = sg.objects();
    let box_of = |id: NodeId| -> Option<&BoundingBox> {
        grounding
            .candidate_for(id)
            .and_then(|c| img.candidates.get(c))
            .map(|c| &c.bbox)
    };
    let mut flags = Vec::new();
    for i in 0..objs.len() {
        for j in i + 1..objs.len() {
            if objs[i].category != objs[j].category {
                continue;
            }
            if let (Some(a), Some(b)) = (box_of(objs[i].id), box_of(objs[j].id)) {
                let iou = a.iou(b);
                flags.push(CollapseFlag {
                    first: objs[i].id,
                    second: objs[j].id,
                    iou,
                    collapsed: iou > iou_threshold,
                });
            }
        }
    }
    flags
}

fn has_self_pair(sg: &SceneGraph) -> bool {
    let objs = sg.objects();
    (0..objs.len()).any(|i| (i + 1..objs.len()).any(|j| objs[i].category == objs[j].category))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    pub iou_threshold: f64,
    pub r2_threshold: f64,
    pub min_positives: usize,
    pub bp: BpParams,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            r2_threshold: DEFAULT_R2_THRESHOLD,
            min_positives: DEFAULT_MIN_POSITIVES,
            bp: BpParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearitySummary {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryAudit {
    pub query_id: String,
    pub description: String,
    pub canonical_key: String,
    pub positives: usize,
    /// Absent when the query has no positives.
    pub single_instance_fraction: Option<f64>,
    pub any_instance_fraction: Option<f64>,
    /// Share of images whose MAP grounding collapses two same-category
    /// nodes; only for queries that repeat a category.
    pub collapse_fraction: Option<f64>,
    pub linearity: Option<LinearitySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub num_images: usize,
    pub queries: Vec<QueryAudit>,
    pub duplicate_groups: Vec<DedupGroup>,
    pub unique_query_count: usize,
    pub positive_count_mean: Option<f64>,
    pub positive_count_median: Option<f64>,
    /// Queries with at least `min_positives` positives.
    pub clean_queries: Vec<String>,
    pub fraction_strongly_linear: Option<f64>,
    pub options: AuditOptions,
}

/// Runs every audit over `queries`. Linearity and collapse checks need
/// `models`; without them those fields stay empty. Queries are reported in
/// canonical-key order.
pub fn audit_queries(
    queries: &[NamedQuery],
    dataset: &Dataset,
    models: Option<&ModelSet>,
    opts: &AuditOptions,
) -> Result<(BiasReport, Vec<LinearityResult>), AuditError> {
    let syn = &dataset.synonyms;
    let mut order: Vec<(String, usize)> = queries
        .iter()
        .enumerate()
        .map(|(i, q)| (canonical_key(&normalize_labels(&q.graph, syn)), i))
        .collect();
    order.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| queries[a.1].id.cmp(&queries[b.1].id)));

    let bp = opts.bp;
    let mut audits = Vec::with_capacity(queries.len());
    let mut linearity = Vec::new();
    for (key, i) in order {
        let q = &queries[i];
        let flags = positive_flags(&q.graph, dataset)?;
        let positives: Vec<&ImageRecord> = dataset
            .images
            .iter()
            .zip(&flags)
            .filter(|(_, p)| **p)
            .map(|(img, _)| img)
            .collect();
        let (single, any) = if positives.is_empty() {
            log::warn!("query {} has no positive images; bias fractions omitted", q.id);
            (None, None)
        } else {
            (
                Some(detect_single_instance_bias(&q.graph, &positives, syn)?),
                Some(detect_any_instance_bias(&q.graph, &positives, syn)?),
            )
        };

        let mut collapse_fraction = None;
        let mut summary = None;
        if let Some(models) = models {
            let groundings: Vec<Grounding> = score_dataset_irsg(&q.graph, dataset, models, &bp)?
                .into_iter()
                .map(|(_, g)| g)
                .collect();
            if has_self_pair(&q.graph) && !groundings.is_empty() {
                let sg = normalize_labels(&q.graph, syn);
                let collapsed = dataset
                    .images
                    .iter()
                    .zip(&groundings)
                    .filter(|(img, g)| {
                        grounding_collapse_check(&sg, g, img, opts.iou_threshold)
                            .iter()
                            .any(|f| f.collapsed)
                    })
                    .count();
                collapse_fraction = Some(collapsed as f64 / groundings.len() as f64);
            }
            let lin = linearity_from_groundings(q, dataset, models, &groundings)?;
            summary = Some(LinearitySummary {
                slope: lin.slope,
                intercept: lin.intercept,
                r_squared: lin.r_squared,
            });
            linearity.push(lin);
        }

        audits.push(QueryAudit {
            query_id: q.id.clone(),
            description: q.graph.describe(),
            canonical_key: key,
            positives: positives.len(),
            single_instance_fraction: single,
            any_instance_fraction: any,
            collapse_fraction,
            linearity: summary,
        });
    }

    let dedup = dedup_queries(queries, syn);
    let counts: Vec<usize> = audits.iter().map(|a| a.positives).collect();
    let stats = positive_count_stats(&counts).ok();
    let report = BiasReport {
        num_images: dataset.images.len(),
        clean_queries: audits
            .iter()
            .filter(|a| a.positives >= opts.min_positives)
            .map(|a| a.query_id.clone())
            .collect(),
        queries: audits,
        duplicate_groups: dedup.duplicate_groups().cloned().collect(),
        unique_query_count: dedup.unique_count,
        positive_count_mean: stats.map(|s| s.0),
        positive_count_median: stats.map(|s| s.1),
        fraction_strongly_linear: models.map(|_| fraction_strongly_linear(&linearity, opts.r2_threshold)),
        options: *opts,
    };
    Ok((report, linearity))
}

/// Scatter points as `x,y` rows.
pub fn write_scatter_csv(points: &[(f64, f64)], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "x,y")?;
    for (x, y) in points {
        writeln!(w, "{x},{y}")?;
    }
    Ok(())
}
