//! Image scoring, ranking and the R@k retrieval metric.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{match_query, Dataset, DatasetError, ImageRecord, Vocabulary};
use crate::inference::{build_factor_graph, map_inference_bp, BpParams, Grounding, InferenceError, PROB_FLOOR};
use crate::relmodel::ModelSet;
use crate::scenegraph::{normalize_labels, NamedQuery, SceneGraph};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("query {0:?} has no positive images")]
    NoPositives(String),
    #[error("query {0:?} has no negative images")]
    NoNegatives(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("evaluation of {query:?} has {scores} scores for {images} images")]
    Shape { query: String, scores: usize, images: usize },
    #[error("non-finite score for image {image:?} in query {query:?}")]
    NonFinite { query: String, image: String },
    #[error("methods are not evaluated on the same queries")]
    MethodMismatch,
    #[error("no evaluations to average")]
    Empty,
    #[error("IRSG scoring requires trained relationship models")]
    MissingModels,
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Irsg,
    Baseline,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Irsg => "irsg",
            Method::Baseline => "baseline",
        }
    }

    /// Energies rank ascending, baseline probabilities descending.
    pub fn lower_is_better(self) -> bool {
        matches!(self, Method::Irsg)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "irsg" => Ok(Method::Irsg),
            "baseline" => Ok(Method::Baseline),
            _ => Err(format!("unknown method {s:?} (expected irsg or baseline)")),
        }
    }
}

/// How positives are pooled when computing R@k.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatkMode {
    /// Each positive is ranked alone against all negatives.
    #[default]
    PerPositive,
    /// Only the best-ranked positive counts; the result is 0 or 1.
    TopPositive,
}

impl FromStr for RatkMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-positive" => Ok(RatkMode::PerPositive),
            "top-positive" => Ok(RatkMode::TopPositive),
            _ => Err(format!("unknown R@k mode {s:?} (expected per-positive or top-positive)")),
        }
    }
}

impl fmt::Display for RatkMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RatkMode::PerPositive => "per-positive",
            RatkMode::TopPositive => "top-positive",
        })
    }
}

/// Runs BP on the query's CRF for one image and returns its energy.
pub fn score_image_irsg(
    sg: &SceneGraph,
    img: &ImageRecord,
    models: &ModelSet,
    vocab: &Vocabulary,
    bp: &BpParams,
) -> Result<(f64, Grounding), InferenceError> {
    let fg = build_factor_graph(sg, img, models, vocab)?;
    let g = map_inference_bp(&fg, bp);
    Ok((g.energy, g))
}

/// Geometric mean over query objects of the best candidate score for the
/// object's category. Attributes and relationships are ignored.
pub fn score_image_baseline(sg: &SceneGraph, img: &ImageRecord, vocab: &Vocabulary) -> Result<f64, InferenceError> {
    if img.candidates.is_empty() {
        return Err(InferenceError::NoCandidates(img.image_id.clone()));
    }
    let mut log_sum = 0.0;
    for o in sg.objects() {
        let c = vocab
            .object_index(&o.category)
            .ok_or_else(|| InferenceError::UnknownCategory(o.category.clone()))?;
        let best = img
            .candidates
            .iter()
            .map(|cand| cand.object_scores[c])
            .fold(0.0, f64::max)
            .max(PROB_FLOOR);
        log_sum += best.ln();
    }
    Ok((log_sum / sg.objects().len() as f64).exp())
}

/// IRSG scores for every image of `dataset`, in dataset order. The query is
/// normalized against the dataset's synonym map first.
pub fn score_dataset_irsg(
    sg: &SceneGraph,
    dataset: &Dataset,
    models: &ModelSet,
    bp: &BpParams,
) -> Result<Vec<(f64, Grounding)>, InferenceError> {
    let sg = normalize_labels(sg, &dataset.synonyms);
    dataset
        .images
        .par_iter()
        .map(|img| score_image_irsg(&sg, img, models, &dataset.vocab, bp))
        .collect()
}

pub fn score_dataset_baseline(sg: &SceneGraph, dataset: &Dataset) -> Result<Vec<f64>, InferenceError> {
    let sg = normalize_labels(sg, &dataset.synonyms);
    dataset
        .images
        .par_iter()
        .map(|img| score_image_baseline(&sg, img, &dataset.vocab))
        .collect()
}

/// Ground-truth positive flags of `sg` over `dataset`.
pub fn positive_flags(sg: &SceneGraph, dataset: &Dataset) -> Result<Vec<bool>, DatasetError> {
    dataset
        .images
        .iter()
        .map(|img| match_query(img, sg, &dataset.synonyms))
        .collect()
}

/// Scores of one query under one method over a fixed image set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEvaluation {
    pub query_id: String,
    pub method: Method,
    pub image_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub positives: Vec<bool>,
}

impl QueryEvaluation {
    pub fn new(
        query_id: impl Into<String>,
        method: Method,
        image_ids: Vec<String>,
        scores: Vec<f64>,
        positives: Vec<bool>,
    ) -> Result<Self, RetrievalError> {
        let query_id = query_id.into();
        if scores.len() != image_ids.len() || positives.len() != image_ids.len() {
            return Err(RetrievalError::Shape {
                query: query_id,
                scores: scores.len(),
                images: image_ids.len(),
            });
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(RetrievalError::NonFinite {
                query: query_id,
                image: image_ids[i].clone(),
            });
        }
        Ok(QueryEvaluation {
            query_id,
            method,
            image_ids,
            scores,
            positives,
        })
    }

    pub fn num_positives(&self) -> usize {
        self.positives.iter().filter(|p| **p).count()
    }

    pub fn num_negatives(&self) -> usize {
        self.positives.len() - self.num_positives()
    }

    fn at_least_as_good(&self, a: f64, b: f64) -> bool {
        if self.method.lower_is_better() {
            a <= b
        } else {
            a >= b
        }
    }

    /// Image indices best first; ties keep dataset order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        if self.method.lower_is_better() {
            idx.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]));
        } else {
            idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        }
        idx
    }

    fn check_pools(&self) -> Result<(), RetrievalError> {
        if self.num_positives() == 0 {
            return Err(RetrievalError::NoPositives(self.query_id.clone()));
        }
        if self.num_negatives() == 0 {
            return Err(RetrievalError::NoNegatives(self.query_id.clone()));
        }
        Ok(())
    }

    /// For each positive, the number of negatives scoring at least as well.
    fn competitor_counts(&self) -> Vec<usize> {
        let negatives: Vec<f64> = self
            .scores
            .iter()
            .zip(&self.positives)
            .filter(|(_, p)| !**p)
            .map(|(s, _)| *s)
            .collect();
        self.scores
            .iter()
            .zip(&self.positives)
            .filter(|(_, p)| **p)
            .map(|(&s, _)| negatives.iter().filter(|&&n| self.at_least_as_good(n, s)).count())
            .collect()
    }
}

pub fn recall_at_k(eval: &QueryEvaluation, k: usize) -> Result<f64, RetrievalError> {
    recall_at_k_mode(eval, k, RatkMode::PerPositive)
}

pub fn recall_at_k_mode(eval: &QueryEvaluation, k: usize, mode: RatkMode) -> Result<f64, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    eval.check_pools()?;
    let counts = eval.competitor_counts();
    Ok(recall_from_counts(&counts, k, mode))
}

fn recall_from_counts(counts: &[usize], k: usize, mode: RatkMode) -> f64 {
    match mode {
        RatkMode::PerPositive => counts.iter().filter(|&&c| c < k).count() as f64 / counts.len() as f64,
        RatkMode::TopPositive => {
            let best = counts.iter().copied().min().expect("non-empty");
            if best < k {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// R@k for k = 1 ..= |S_n| + 1; entry `i` holds R@(i + 1).
pub fn ratk_curve(eval: &QueryEvaluation, mode: RatkMode) -> Result<Vec<f64>, RetrievalError> {
    eval.check_pools()?;
    let counts = eval.competitor_counts();
    Ok((1..=eval.num_negatives() + 1)
        .map(|k| recall_from_counts(&counts, k, mode))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatkCurve {
    pub method: Method,
    /// Entry `i` holds mean R@(i + 1).
    pub recall: Vec<f64>,
}

/// Per-method unweighted mean of the query curves up to `k_max`, truncated
/// to the smallest pool. Curves come back in [`Method`] order.
pub fn averaged_curves(evals: &[QueryEvaluation], k_max: usize, mode: RatkMode) -> Result<Vec<RatkCurve>, RetrievalError> {
    if evals.is_empty() {
        return Err(RetrievalError::Empty);
    }
    if k_max == 0 {
        return Err(RetrievalError::ZeroK);
    }
    let mut by_method: BTreeMap<Method, Vec<&QueryEvaluation>> = BTreeMap::new();
    for e in evals {
        by_method.entry(e.method).or_default().push(e);
    }
    let query_sets: Vec<Vec<&str>> = by_method
        .values()
        .map(|v| {
            let mut ids: Vec<&str> = v.iter().map(|e| e.query_id.as_str()).collect();
            ids.sort_unstable();
            ids
        })
        .collect();
    if query_sets.windows(2).any(|w| w[0] != w[1]) {
        return Err(RetrievalError::MethodMismatch);
    }

    let smallest_pool = evals.iter().map(|e| e.num_negatives() + 1).min().expect("non-empty");
    let k_len = if k_max > smallest_pool {
        log::warn!("k_max {k_max} exceeds the smallest pool size {smallest_pool}; truncating");
        smallest_pool
    } else {
        k_max
    };

    let mut curves = Vec::with_capacity(by_method.len());
    for (method, group) in by_method {
        let mut sum = vec![0.0; k_len];
        for e in &group {
            let c = ratk_curve(e, mode)?;
            sum.iter_mut().zip(&c).for_each(|(s, v)| *s += v);
        }
        let n = group.len() as f64;
        curves.push(RatkCurve {
            method,
            recall: sum.into_iter().map(|s| s / n).collect(),
        });
    }
    Ok(curves)
}

/// Scores one query under each requested method over `dataset`.
pub fn evaluate_query(
    query: &NamedQuery,
    dataset: &Dataset,
    models: Option<&ModelSet>,
    methods: &[Method],
    bp: &BpParams,
) -> Result<Vec<QueryEvaluation>, RetrievalError> {
    let positives = positive_flags(&query.graph, dataset)?;
    let image_ids: Vec<String> = dataset.images.iter().map(|i| i.image_id.clone()).collect();
    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let scores = match method {
            Method::Irsg => {
                let models = models.ok_or(RetrievalError::MissingModels)?;
                score_dataset_irsg(&query.graph, dataset, models, bp)?
                    .into_iter()
                    .map(|(e, _)| e)
                    .collect()
            }
            Method::Baseline => score_dataset_baseline(&query.graph, dataset)?,
        };
        out.push(QueryEvaluation::new(
            query.id.clone(),
            method,
            image_ids.clone(),
            scores,
            positives.clone(),
        )?);
    }
    Ok(out)
}

/// `k,method,mean_recall`, one row per method and k.
pub fn write_ratk_csv(curves: &[RatkCurve], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "k,method,mean_recall")?;
    for c in curves {
        for (i, r) in c.recall.iter().enumerate() {
            writeln!(w, "{},{},{}", i + 1, c.method, r)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryCurve {
    pub query_id: String,
    pub method: Method,
    /// Entry `i` holds R@(i + 1).
    pub recall: Vec<f64>,
}

/// Each evaluation's own curve, cut at `k_max`.
pub fn query_curves(evals: &[QueryEvaluation], k_max: usize, mode: RatkMode) -> Result<Vec<QueryCurve>, RetrievalError> {
    evals
        .iter()
        .map(|e| {
            let mut recall = ratk_curve(e, mode)?;
            recall.truncate(k_max);
            Ok(QueryCurve {
                query_id: e.query_id.clone(),
                method: e.method,
                recall,
            })
        })
        .collect()
}

/// `query_id,method,k,recall`, one row per query, method and k.
pub fn write_per_query_csv(curves: &[QueryCurve], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "query_id,method,k,recall")?;
    for c in curves {
        for (i, r) in c.recall.iter().enumerate() {
            writeln!(w, "{},{},{},{}", c.query_id, c.method, i + 1, r)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{BoundingBox, CandidateBox};
    use crate::rng::substream;
    use proptest::prelude::*;
    use rand::Rng;
    use std::collections::BTreeMap;

    fn eval(method: Method, scores: &[f64], positives: &[bool]) -> QueryEvaluation {
        let ids = (0..scores.len()).map(|i| format!("i{i}")).collect();
        QueryEvaluation::new("q", method, ids, scores.to_vec(), positives.to_vec()).unwrap()
    }

    fn vocab() -> Vocabulary {
        Vocabulary::new(vec!["man".into(), "shirt".into()], vec![], vec![]).unwrap()
    }

    fn image(scores: &[[f64; 2]]) -> ImageRecord {
        ImageRecord {
            image_id: "img".into(),
            candidates: scores
                .iter()
                .map(|s| CandidateBox {
                    bbox: BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
                    object_scores: s.to_vec(),
                    attribute_scores: vec![],
                })
                .collect(),
            truth_instances: None,
            truth_relations: None,
        }
    }

    #[test]
    fn baseline_examples() {
        let one = SceneGraph::from_parts(&[(0, "man")], &[], &[]).unwrap();
        let s = score_image_baseline(&one, &image(&[[0.8, 0.2], [0.3, 0.7]]), &vocab()).unwrap();
        assert!((s - 0.8).abs() < 1e-15);

        let two = SceneGraph::from_parts(&[(0, "man"), (1, "shirt")], &[], &[]).unwrap();
        let s = score_image_baseline(&two, &image(&[[0.9, 0.1], [0.6, 0.4]]), &vocab()).unwrap();
        assert!((s - 0.6).abs() < 1e-12);

        let dup = SceneGraph::from_parts(&[(0, "man"), (1, "man")], &[], &[]).unwrap();
        let s = score_image_baseline(&dup, &image(&[[0.7, 0.3], [0.2, 0.8]]), &vocab()).unwrap();
        assert!((s - 0.7).abs() < 1e-12);

        let cat = SceneGraph::from_parts(&[(0, "cat")], &[], &[]).unwrap();
        assert!(matches!(
            score_image_baseline(&cat, &image(&[[0.5, 0.5]]), &vocab()),
            Err(InferenceError::UnknownCategory(_))
        ));
    }

    #[test]
    fn halved_unary_costs_ln2() {
        let sg = SceneGraph::from_parts(&[(0, "man")], &[], &[]).unwrap();
        let models = ModelSet {
            vocab: vocab(),
            models: BTreeMap::new(),
        };
        let bp = BpParams::default();
        let (e1, _) = score_image_irsg(&sg, &image(&[[0.8, 0.2]]), &models, &vocab(), &bp).unwrap();
        let (e2, _) = score_image_irsg(&sg, &image(&[[0.4, 0.6]]), &models, &vocab(), &bp).unwrap();
        assert!((e2 - e1 - 2f64.ln()).abs() < 1e-12);
        let (e0, _) = score_image_irsg(&sg, &image(&[[1.0, 0.0]]), &models, &vocab(), &bp).unwrap();
        assert_eq!(e0, 0.0);
        let (again, _) = score_image_irsg(&sg, &image(&[[0.4, 0.6]]), &models, &vocab(), &bp).unwrap();
        assert_eq!(again.to_bits(), e2.to_bits());
    }

    #[test]
    fn recall_examples() {
        let mut scores = vec![0.0];
        scores.extend((1..10).map(|i| i as f64));
        let mut pos = vec![true];
        pos.extend([false; 9]);
        assert_eq!(recall_at_k(&eval(Method::Irsg, &scores, &pos), 1).unwrap(), 1.0);

        let e = eval(Method::Irsg, &[2.0, 1.0, 3.0], &[true, false, false]);
        assert_eq!(recall_at_k(&e, 1).unwrap(), 0.0);
        assert_eq!(recall_at_k(&e, 2).unwrap(), 1.0);

        let e = eval(Method::Irsg, &[1.0, 1.0, 3.0], &[true, false, false]);
        assert_eq!(recall_at_k(&e, 1).unwrap(), 0.0);
        assert_eq!(recall_at_k(&e, 2).unwrap(), 1.0);

        // same pool under the baseline's descending order
        let e = eval(Method::Baseline, &[0.5, 0.5, 0.1], &[true, false, false]);
        assert_eq!(recall_at_k(&e, 1).unwrap(), 0.0);
        assert_eq!(recall_at_k(&e, 2).unwrap(), 1.0);
    }

    #[test]
    fn recall_errors() {
        let e = eval(Method::Irsg, &[1.0, 2.0], &[false, false]);
        assert!(matches!(recall_at_k(&e, 1), Err(RetrievalError::NoPositives(_))));
        let e = eval(Method::Irsg, &[1.0, 2.0], &[true, true]);
        assert!(matches!(recall_at_k(&e, 1), Err(RetrievalError::NoNegatives(_))));
        let e = eval(Method::Irsg, &[1.0, 2.0], &[true, false]);
        assert!(matches!(recall_at_k(&e, 0), Err(RetrievalError::ZeroK)));
        assert!(QueryEvaluation::new("q", Method::Irsg, vec!["a".into()], vec![f64::NAN], vec![true]).is_err());
    }

    #[test]
    fn top_positive_mode() {
        // positives rank 2nd and 4th
        let e = eval(Method::Irsg, &[1.0, 2.0, 3.0, 4.0], &[false, true, false, true]);
        assert_eq!(recall_at_k_mode(&e, 1, RatkMode::TopPositive).unwrap(), 0.0);
        assert_eq!(recall_at_k_mode(&e, 2, RatkMode::TopPositive).unwrap(), 1.0);
        assert_eq!(recall_at_k_mode(&e, 2, RatkMode::PerPositive).unwrap(), 0.5);
    }

    #[test]
    fn averaging() {
        let a = eval(Method::Irsg, &[2.0, 1.0, 3.0, 4.0, 5.0], &[true, false, false, false, false]);
        let b = eval(Method::Irsg, &[0.0, 1.0, 3.0, 4.0, 5.0], &[true, false, false, false, false]);
        let single = averaged_curves(std::slice::from_ref(&a), 5, RatkMode::PerPositive).unwrap();
        assert_eq!(single[0].recall, ratk_curve(&a, RatkMode::PerPositive).unwrap());
        let both = averaged_curves(&[a, b], 3, RatkMode::PerPositive).unwrap();
        assert_eq!(both[0].recall, vec![0.5, 1.0, 1.0]);
    }

    #[test]
    fn averaging_truncates_and_checks_methods() {
        let a = eval(Method::Irsg, &[2.0, 1.0, 3.0], &[true, false, false]);
        let c = averaged_curves(std::slice::from_ref(&a), 100, RatkMode::PerPositive).unwrap();
        assert_eq!(c[0].recall.len(), 3);
        let mut other = eval(Method::Baseline, &[2.0, 1.0, 3.0], &[true, false, false]);
        other.query_id = "other".into();
        assert!(matches!(
            averaged_curves(&[a, other], 3, RatkMode::PerPositive),
            Err(RetrievalError::MethodMismatch)
        ));
    }

    #[test]
    fn csv_layout() {
        let a = eval(Method::Irsg, &[2.0, 1.0], &[true, false]);
        let curves = averaged_curves(std::slice::from_ref(&a), 2, RatkMode::PerPositive).unwrap();
        let mut buf = Vec::new();
        write_ratk_csv(&curves, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "k,method,mean_recall\n1,irsg,0\n2,irsg,1\n");
        let mut buf = Vec::new();
        write_per_query_csv(&query_curves(&[a], 10, RatkMode::PerPositive).unwrap(), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "query_id,method,k,recall\nq,irsg,1,0\nq,irsg,2,1\n");
    }

    #[test]
    fn curves_are_monotone_and_complete() {
        let mut rng = substream(11, "ratk-curves");
        for _ in 0..200 {
            let n = rng.random_range(2..40);
            let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..10) as f64) / 3.0).collect();
            let mut pos: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
            pos[0] = true;
            pos[1] = false;
            for mode in [RatkMode::PerPositive, RatkMode::TopPositive] {
                let c = ratk_curve(&eval(Method::Irsg, &scores, &pos), mode).unwrap();
                assert!(c.windows(2).all(|w| w[0] <= w[1]));
                assert_eq!(*c.last().unwrap(), 1.0);
            }
        }
    }

    proptest! {
        #[test]
        fn invariant_under_monotone_transform(
            raw in proptest::collection::vec((0u8..20, any::<bool>()), 2..30),
            k in 1usize..30,
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64).collect();
            let mut pos: Vec<bool> = raw.iter().map(|(_, p)| *p).collect();
            pos[0] = true;
            pos[1] = false;
            let base = recall_at_k(&eval(Method::Irsg, &scores, &pos), k).unwrap();
            let warped: Vec<f64> = scores.iter().map(|s| (0.3 * s).exp() * 7.0 - 2.0).collect();
            prop_assert_eq!(base, recall_at_k(&eval(Method::Irsg, &warped, &pos), k).unwrap());
            // a decreasing map flips the ordering convention
            let flipped: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + s)).collect();
            prop_assert_eq!(base, recall_at_k(&eval(Method::Baseline, &flipped, &pos), k).unwrap());
        }
    }
}
