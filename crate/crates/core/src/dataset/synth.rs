//! Deterministic synthetic scenes with planted dataset biases.
//!
//! Each image is either a planted positive for one query (round-robin over
//! the query list), a hard negative (query categories present but the
//! relationship never satisfied), or a background scene. Every image is
//! re-checked against every query: whenever it is a positive for some query
//! it must exhibit the image's bias mode, otherwise it is resampled.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::geometry::{GeometricPredicate, PredicateGeometry};
use super::matching::QueryMatcher;
use super::{
    BoundingBox, CandidateBox, Dataset, DatasetError, GroundTruthInstance, ImageRecord, TruthRelation,
    Vocabulary,
};
use crate::rng::substream;
use crate::scenegraph::{NamedQuery, SceneGraph, SynonymMap};

/// Resampling budget per image before the config is declared infeasible.
pub const MAX_ATTEMPTS: usize = 1000;
const PLACEMENT_TRIES: usize = 50;
const JITTER_FRACTION: f64 = 0.05;
const WEARING_OBJECT_SCALE: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    /// Positives hold exactly one instance of each query category.
    SingleInstance,
    /// Positives hold several subject instances, all of which satisfy the query.
    AnyInstance,
    /// Positives hold several subject instances, exactly one satisfying.
    Disambiguating,
    /// Per-image draw among the three modes above.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixedWeights {
    pub single_instance: f64,
    pub any_instance: f64,
    pub disambiguating: f64,
}

impl Default for MixedWeights {
    fn default() -> Self {
        MixedWeights {
            single_instance: 0.8,
            any_instance: 0.15,
            disambiguating: 0.05,
        }
    }
}

/// Two-node query `subject predicate object`, with optional attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryTemplate {
    pub subject: String,
    #[serde(default)]
    pub subject_attributes: Vec<String>,
    pub predicate: String,
    pub object: String,
    #[serde(default)]
    pub object_attributes: Vec<String>,
}

impl QueryTemplate {
    pub fn new(subject: &str, predicate: &str, object: &str) -> Self {
        QueryTemplate {
            subject: subject.into(),
            subject_attributes: vec![],
            predicate: predicate.into(),
            object: object.into(),
            object_attributes: vec![],
        }
    }

    pub fn with_subject_attribute(mut self, attr: &str) -> Self {
        self.subject_attributes.push(attr.into());
        self
    }

    pub fn with_object_attribute(mut self, attr: &str) -> Self {
        self.object_attributes.push(attr.into());
        self
    }

    pub fn to_graph(&self) -> SceneGraph {
        let attrs: Vec<(u32, &str)> = self
            .subject_attributes
            .iter()
            .map(|a| (0, a.as_str()))
            .chain(self.object_attributes.iter().map(|a| (1, a.as_str())))
            .collect();
        SceneGraph::from_parts(
            &[(0, &self.subject), (1, &self.object)],
            &attrs,
            &[(0, &self.predicate, 1)],
        )
        .expect("two distinct nodes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub canvas_width: f64,
    pub canvas_height: f64,
    pub num_images: usize,
    pub object_categories: Vec<String>,
    pub attributes: Vec<String>,
    pub predicates: Vec<String>,
    pub queries: Vec<QueryTemplate>,
    pub bias_mode: BiasMode,
    pub mixed_weights: MixedWeights,
    /// Fraction of images planted as a positive for some query.
    pub positive_rate: f64,
    /// Fraction of images planted as a hard negative for some query.
    pub hard_negative_rate: f64,
    /// Upper bound on subject instances in multi-instance modes (at least 2).
    pub max_subject_copies: usize,
    pub extra_objects_min: usize,
    pub extra_objects_max: usize,
    pub background_objects_min: usize,
    pub background_objects_max: usize,
    /// Hard cap on ground-truth instances per image.
    pub max_instances: usize,
    /// Probability that an instance carries each attribute at random.
    pub attribute_rate: f64,
    /// Box side range as a fraction of the canvas side.
    pub box_min_fraction: f64,
    pub box_max_fraction: f64,
    pub distractors_per_image: usize,
    /// Logit offset of the true category over unit-Gaussian noise logits.
    pub score_boost: f64,
    /// Logit offset (±) of attribute scores for present/absent attributes.
    pub attribute_boost: f64,
    /// Standard deviation of attribute logit noise.
    pub attribute_noise: f64,
    pub min_positives: usize,
    /// When set, the categories of a query co-occur only in its positives
    /// and its planted hard negatives.
    pub cooccurrence_bias: bool,
    pub synonyms: BTreeMap<String, String>,
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            canvas_width: 640.0,
            canvas_height: 480.0,
            num_images: 1200,
            object_categories: strings(&[
                "person", "horse", "bench", "skateboard", "helmet", "sunglasses", "couch", "pillow", "dog",
                "car", "road", "tire", "table", "cup", "shirt", "kite",
            ]),
            attributes: strings(&["standing", "sitting", "black", "white", "red", "wooden"]),
            predicates: strings(&["on", "wearing", "left_of", "above"]),
            queries: vec![
                QueryTemplate::new("person", "wearing", "helmet"),
                QueryTemplate::new("person", "wearing", "sunglasses"),
                QueryTemplate::new("pillow", "on", "couch"),
                QueryTemplate::new("person", "on", "skateboard"),
                QueryTemplate::new("person", "on", "bench"),
                QueryTemplate::new("person", "on", "horse"),
                QueryTemplate::new("tire", "on", "road").with_subject_attribute("black"),
                QueryTemplate::new("cup", "on", "table"),
                QueryTemplate::new("dog", "left_of", "car"),
                QueryTemplate::new("person", "wearing", "shirt").with_object_attribute("white"),
                QueryTemplate::new("kite", "above", "person"),
                QueryTemplate::new("person", "left_of", "car").with_subject_attribute("standing"),
            ],
            bias_mode: BiasMode::Mixed,
            mixed_weights: MixedWeights::default(),
            positive_rate: 0.5,
            hard_negative_rate: 0.0,
            max_subject_copies: 3,
            extra_objects_min: 1,
            extra_objects_max: 3,
            background_objects_min: 2,
            background_objects_max: 5,
            max_instances: 6,
            attribute_rate: 0.25,
            box_min_fraction: 0.08,
            box_max_fraction: 0.3,
            distractors_per_image: 4,
            score_boost: 2.0,
            attribute_boost: 1.0,
            attribute_noise: 1.0,
            min_positives: 0,
            cooccurrence_bias: false,
            synonyms: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    pub dataset: Dataset,
    pub queries: Vec<NamedQuery>,
}

/// Whether an image that matches `sg` exhibits the bias `mode`. For
/// `Mixed`, any of the concrete modes qualifies.
pub fn mode_holds(mode: BiasMode, img: &ImageRecord, sg: &SceneGraph, syn: &SynonymMap) -> Result<bool, DatasetError> {
    let m = QueryMatcher::new(img, sg, syn)?;
    Ok(matcher_mode_holds(mode, &m, sg, syn))
}

fn matcher_mode_holds(mode: BiasMode, m: &QueryMatcher, sg: &SceneGraph, syn: &SynonymMap) -> bool {
    match mode {
        BiasMode::SingleInstance => m.query_categories().iter().all(|c| m.instance_count(c) == 1),
        BiasMode::AnyInstance => {
            let multi = m.query_categories().iter().any(|c| m.instance_count(c) >= 2);
            let t = m.tally();
            multi && t.total > 0 && t.satisfying == t.total
        }
        BiasMode::Disambiguating => {
            let subject_category = sg
                .relationships()
                .first()
                .map(|r| sg.objects()[sg.node_index(r.subject).expect("validated")].category.as_str())
                .or_else(|| sg.objects().first().map(|o| o.category.as_str()));
            let multi = subject_category.is_some_and(|c| m.instance_count(syn.canonical(c)) >= 2);
            multi && m.tally().satisfying == 1
        }
        BiasMode::Mixed => [BiasMode::SingleInstance, BiasMode::AnyInstance, BiasMode::Disambiguating]
            .into_iter()
            .any(|mm| matcher_mode_holds(mm, m, sg, syn)),
    }
}

#[derive(Debug, Clone, Copy)]
enum Role {
    Positive(usize),
    HardNegative(usize),
    Background,
}

struct Plan<'a> {
    cfg: &'a SynthConfig,
    geometry: PredicateGeometry,
    predicates: Vec<GeometricPredicate>,
    templates: Vec<(&'a QueryTemplate, GeometricPredicate)>,
    graphs: Vec<SceneGraph>,
    synonyms: SynonymMap,
}

impl SynthConfig {
    fn check(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InfeasibleConfig(m));
        if !(self.canvas_width > 0.0 && self.canvas_height > 0.0) {
            return bad("canvas dimensions must be positive".into());
        }
        if self.num_images == 0 {
            return bad("num_images must be at least 1".into());
        }
        if self.queries.is_empty() {
            return bad("at least one query template is required".into());
        }
        if !(0.0 < self.box_min_fraction
            && self.box_min_fraction <= self.box_max_fraction
            && self.box_max_fraction < 1.0)
        {
            return bad("box fractions must satisfy 0 < min <= max < 1".into());
        }
        for (name, v) in [
            ("positive_rate", self.positive_rate),
            ("hard_negative_rate", self.hard_negative_rate),
            ("attribute_rate", self.attribute_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if self.positive_rate + self.hard_negative_rate > 1.0 {
            return bad("positive_rate + hard_negative_rate exceeds 1".into());
        }
        let w = self.mixed_weights;
        if [w.single_instance, w.any_instance, w.disambiguating].iter().any(|x| *x < 0.0 || !x.is_finite())
            || w.single_instance + w.any_instance + w.disambiguating <= 0.0
        {
            return bad("mixed_weights must be non-negative with a positive sum".into());
        }
        if !(2..=6).contains(&self.max_instances) {
            return bad("max_instances must lie in 2..=6".into());
        }
        if self.max_subject_copies < 2 || self.max_subject_copies + 1 > self.max_instances {
            return bad("max_subject_copies must be >= 2 and leave room for the object".into());
        }
        if self.extra_objects_min > self.extra_objects_max
            || self.background_objects_min > self.background_objects_max
            || self.background_objects_max > self.max_instances
        {
            return bad("object count ranges are inconsistent".into());
        }
        for (name, v) in [
            ("score_boost", self.score_boost),
            ("attribute_boost", self.attribute_boost),
            ("attribute_noise", self.attribute_noise),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        Ok(())
    }

    fn plan(&self) -> Result<Plan<'_>, DatasetError> {
        self.check()?;
        let vocab = Vocabulary::new(self.object_categories.clone(), self.attributes.clone(), self.predicates.clone())?;
        let infeasible = DatasetError::InfeasibleConfig;
        let predicates = self
            .predicates
            .iter()
            .map(|p| p.parse::<GeometricPredicate>().map_err(infeasible))
            .collect::<Result<Vec<_>, _>>()?;
        let mut templates = Vec::new();
        for t in &self.queries {
            for c in [&t.subject, &t.object] {
                if vocab.object_index(c).is_none() {
                    return Err(infeasible(format!("query category {c:?} is not in object_categories")));
                }
            }
            for a in t.subject_attributes.iter().chain(&t.object_attributes) {
                if vocab.attribute_index(a).is_none() {
                    return Err(infeasible(format!("query attribute {a:?} is not in attributes")));
                }
            }
            if vocab.predicate_index(&t.predicate).is_none() {
                return Err(infeasible(format!("query predicate {:?} is not in predicates", t.predicate)));
            }
            if t.subject == t.object {
                return Err(infeasible(format!(
                    "template {} {} {} repeats a category; same-category queries cannot be planted",
                    t.subject, t.predicate, t.object
                )));
            }
            templates.push((t, t.predicate.parse::<GeometricPredicate>().map_err(infeasible)?));
        }
        let geometry = PredicateGeometry {
            canvas_width: self.canvas_width,
            canvas_height: self.canvas_height,
        };
        let synonyms = SynonymMap::new(self.synonyms.clone())
            .map_err(|e| DatasetError::InfeasibleConfig(e.to_string()))?;
        Ok(Plan {
            cfg: self,
            geometry,
            predicates,
            graphs: templates.iter().map(|(t, _)| t.to_graph()).collect(),
            templates,
            synonyms,
        })
    }
}

/// Generates a dataset and its query set; a pure function of `(config, seed)`.
pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<SyntheticSet, DatasetError> {
    let plan = config.plan()?;
    let mut rng = substream(seed, "generator");
    let n_queries = plan.templates.len();
    let mut next_positive = 0usize;
    let mut images = Vec::with_capacity(config.num_images);

    for i in 0..config.num_images {
        let u: f64 = rng.random();
        let role = if u < config.positive_rate {
            let q = next_positive % n_queries;
            next_positive += 1;
            Role::Positive(q)
        } else if u < config.positive_rate + config.hard_negative_rate {
            Role::HardNegative(rng.random_range(0..n_queries))
        } else {
            Role::Background
        };
        let mode = match config.bias_mode {
            BiasMode::Mixed => draw_mode(&config.mixed_weights, &mut rng),
            m => m,
        };
        let image_id = format!("syn{i:05}");
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let Some(instances) = plan.instances(role, mode, &mut rng) else {
                continue;
            };
            let relations = plan.relations(&instances);
            let img = ImageRecord {
                image_id: image_id.clone(),
                candidates: vec![],
                truth_instances: Some(instances),
                truth_relations: Some(relations),
            };
            if plan.accept(&img, role, mode)? {
                accepted = Some(img);
                break;
            }
        }
        let mut img = accepted.ok_or_else(|| {
            DatasetError::InfeasibleConfig(format!(
                "image {image_id}: no valid scene for {role:?} in mode {mode:?} after {MAX_ATTEMPTS} attempts"
            ))
        })?;
        img.candidates = plan.detect(img.truth_instances.as_deref().unwrap_or(&[]), &mut rng);
        images.push(img);
    }

    let dataset = Dataset {
        images,
        vocab: Vocabulary::new(
            config.object_categories.clone(),
            config.attributes.clone(),
            config.predicates.clone(),
        )?,
        synonyms: plan.synonyms.clone(),
    };
    let queries: Vec<NamedQuery> = plan
        .graphs
        .iter()
        .enumerate()
        .map(|(i, g)| NamedQuery {
            id: format!("q{i:02}_{}", g.describe().replace(' ', "_")),
            graph: g.clone(),
        })
        .collect();

    if config.min_positives > 0 {
        for q in &queries {
            let mut count = 0;
            for img in &dataset.images {
                if QueryMatcher::new(img, &q.graph, &dataset.synonyms)?.any_satisfying() {
                    count += 1;
                }
            }
            if count < config.min_positives {
                return Err(DatasetError::InfeasibleConfig(format!(
                    "query {} has {count} positives, fewer than min_positives = {}",
                    q.id, config.min_positives
                )));
            }
        }
    }
    Ok(SyntheticSet { dataset, queries })
}

fn draw_mode(w: &MixedWeights, rng: &mut ChaCha8Rng) -> BiasMode {
    let total = w.single_instance + w.any_instance + w.disambiguating;
    let u: f64 = rng.random::<f64>() * total;
    if u < w.single_instance {
        BiasMode::SingleInstance
    } else if u < w.single_instance + w.any_instance {
        BiasMode::AnyInstance
    } else {
        BiasMode::Disambiguating
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

impl Plan<'_> {
    fn random_box(&self, scale: f64, rng: &mut ChaCha8Rng) -> BoundingBox {
        let (cw, ch) = (self.cfg.canvas_width, self.cfg.canvas_height);
        let (lo, hi) = (self.cfg.box_min_fraction, self.cfg.box_max_fraction);
        let w = rng.random_range(lo..=hi) * cw * scale;
        let h = rng.random_range(lo..=hi) * ch * scale;
        let x = rng.random_range(0.0..=(cw - w));
        let y = rng.random_range(0.0..=(ch - h));
        BoundingBox { x, y, w, h }
    }

    fn inside_canvas(&self, b: &BoundingBox) -> bool {
        b.is_valid() && b.x >= 0.0 && b.y >= 0.0 && b.right() <= self.cfg.canvas_width && b.bottom() <= self.cfg.canvas_height
    }

    fn object_box(&self, pred: GeometricPredicate, rng: &mut ChaCha8Rng) -> BoundingBox {
        let scale = if pred == GeometricPredicate::Wearing { WEARING_OBJECT_SCALE } else { 1.0 };
        self.random_box(scale, rng)
    }

    /// A subject box for which `pred(subject, object)` holds.
    fn related_subject(&self, pred: GeometricPredicate, object: &BoundingBox, rng: &mut ChaCha8Rng) -> Option<BoundingBox> {
        for _ in 0..PLACEMENT_TRIES {
            let candidate = match pred {
                GeometricPredicate::On => {
                    let mut s = self.random_box(1.0, rng);
                    let lo = object.x - 0.4 * s.w;
                    let hi = object.right() - 0.6 * s.w;
                    if lo > hi {
                        continue;
                    }
                    s.x = rng.random_range(lo..=hi);
                    let bottom = object.y + rng.random_range(-0.08..=0.08) * object.h;
                    s.y = bottom - s.h;
                    s
                }
                GeometricPredicate::Wearing => {
                    let w = object.w * rng.random_range(1.5..=3.5);
                    let h = object.h * rng.random_range(1.5..=3.5);
                    BoundingBox {
                        x: rng.random_range((object.right() - w)..=object.x),
                        y: rng.random_range((object.bottom() - h)..=object.y),
                        w,
                        h,
                    }
                }
                GeometricPredicate::LeftOf | GeometricPredicate::Above => self.random_box(1.0, rng),
            };
            if self.inside_canvas(&candidate) && self.geometry.holds(pred, &candidate, object) {
                return Some(candidate);
            }
        }
        None
    }

    fn unrelated_subject(&self, pred: GeometricPredicate, object: &BoundingBox, rng: &mut ChaCha8Rng) -> Option<BoundingBox> {
        (0..PLACEMENT_TRIES)
            .map(|_| self.random_box(1.0, rng))
            .find(|s| !self.geometry.holds(pred, s, object))
    }

    fn random_attributes(&self, required: &[String], rng: &mut ChaCha8Rng) -> std::collections::BTreeSet<String> {
        let mut attrs: std::collections::BTreeSet<String> = required.iter().cloned().collect();
        for a in &self.cfg.attributes {
            if rng.random::<f64>() < self.cfg.attribute_rate {
                attrs.insert(a.clone());
            }
        }
        attrs
    }

    fn instances(&self, role: Role, mode: BiasMode, rng: &mut ChaCha8Rng) -> Option<Vec<GroundTruthInstance>> {
        let mut out = Vec::new();
        let query = match role {
            Role::Positive(q) | Role::HardNegative(q) => Some(q),
            Role::Background => None,
        };
        if let Some(q) = query {
            let (t, pred) = self.templates[q];
            let object = self.object_box(pred, rng);
            out.push(GroundTruthInstance {
                bbox: object,
                category: t.object.clone(),
                attributes: self.random_attributes(&t.object_attributes, rng),
            });
            let copies = rng.random_range(2..=self.cfg.max_subject_copies);
            let (related, unrelated) = match (role, mode) {
                (Role::Positive(_), BiasMode::SingleInstance) => (1, 0),
                (Role::Positive(_), BiasMode::AnyInstance) => (copies, 0),
                (Role::Positive(_), _) => (1, copies - 1),
                (_, BiasMode::SingleInstance) => (0, 1),
                _ => (0, copies),
            };
            for k in 0..related + unrelated {
                let bbox = if k < related {
                    self.related_subject(pred, &object, rng)?
                } else {
                    self.unrelated_subject(pred, &object, rng)?
                };
                out.push(GroundTruthInstance {
                    bbox,
                    category: t.subject.clone(),
                    attributes: self.random_attributes(&t.subject_attributes, rng),
                });
            }
            let extras = rng
                .random_range(self.cfg.extra_objects_min..=self.cfg.extra_objects_max)
                .min(self.cfg.max_instances.saturating_sub(out.len()));
            let pool: Vec<&String> = self
                .cfg
                .object_categories
                .iter()
                .filter(|c| **c != t.subject && **c != t.object)
                .collect();
            if !pool.is_empty() {
                for _ in 0..extras {
                    let category = pool[rng.random_range(0..pool.len())].clone();
                    out.push(GroundTruthInstance {
                        bbox: self.random_box(1.0, rng),
                        category,
                        attributes: self.random_attributes(&[], rng),
                    });
                }
            }
        } else {
            let n = rng.random_range(self.cfg.background_objects_min..=self.cfg.background_objects_max);
            for _ in 0..n {
                let cats = &self.cfg.object_categories;
                out.push(GroundTruthInstance {
                    bbox: self.random_box(1.0, rng),
                    category: cats[rng.random_range(0..cats.len())].clone(),
                    attributes: self.random_attributes(&[], rng),
                });
            }
        }
        out.shuffle(rng);
        Some(out)
    }

    fn relations(&self, instances: &[GroundTruthInstance]) -> Vec<TruthRelation> {
        let mut rels = Vec::new();
        for (i, s) in instances.iter().enumerate() {
            for (j, o) in instances.iter().enumerate() {
                if i == j {
                    continue;
                }
                for &p in &self.predicates {
                    if self.geometry.holds(p, &s.bbox, &o.bbox) {
                        rels.push(TruthRelation {
                            subject: i,
                            predicate: p.name().to_string(),
                            object: j,
                        });
                    }
                }
            }
        }
        rels
    }

    fn accept(&self, img: &ImageRecord, role: Role, mode: BiasMode) -> Result<bool, DatasetError> {
        for (q, sg) in self.graphs.iter().enumerate() {
            let m = QueryMatcher::new(img, sg, &self.synonyms)?;
            let positive = m.any_satisfying();
            match role {
                Role::Positive(p) if p == q && !positive => return Ok(false),
                Role::HardNegative(h) if h == q && positive => return Ok(false),
                _ => {}
            }
            if positive && !matcher_mode_holds(mode, &m, sg, &self.synonyms) {
                return Ok(false);
            }
            if self.cfg.cooccurrence_bias
                && !positive
                && !matches!(role, Role::HardNegative(h) if h == q)
                && m.query_categories().iter().all(|c| m.instance_count(c) > 0)
            {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn softmax_scores(&self, boosted: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let logits: Vec<f64> = (0..self.cfg.object_categories.len())
            .map(|c| normal(rng) + if Some(c) == boosted { self.cfg.score_boost } else { 0.0 })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.iter().map(|e| e / total).collect()
    }

    fn attribute_scores(&self, present: Option<&std::collections::BTreeSet<String>>, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.cfg
            .attributes
            .iter()
            .map(|a| {
                let sign = if present.is_some_and(|p| p.contains(a)) { 1.0 } else { -1.0 };
                let z = self.cfg.attribute_noise * normal(rng) + sign * self.cfg.attribute_boost;
                1.0 / (1.0 + (-z).exp())
            })
            .collect()
    }

    /// Simulated detector: jittered truth boxes plus uniform distractors.
    fn detect(&self, instances: &[GroundTruthInstance], rng: &mut ChaCha8Rng) -> Vec<CandidateBox> {
        let mut out = Vec::with_capacity(instances.len() + self.cfg.distractors_per_image);
        for t in instances {
            let b = t.bbox;
            let sigma = JITTER_FRACTION * b.w.max(b.h);
            let bbox = BoundingBox {
                x: b.x + sigma * normal(rng),
                y: b.y + sigma * normal(rng),
                w: (b.w + sigma * normal(rng)).max(1.0),
                h: (b.h + sigma * normal(rng)).max(1.0),
            };
            let category = self.cfg.object_categories.iter().position(|c| *c == t.category);
            out.push(CandidateBox {
                bbox,
                object_scores: self.softmax_scores(category, rng),
                attribute_scores: self.attribute_scores(Some(&t.attributes), rng),
            });
        }
        for _ in 0..self.cfg.distractors_per_image {
            let bbox = self.random_box(1.0, rng);
            out.push(CandidateBox {
                bbox,
                object_scores: self.softmax_scores(None, rng),
                attribute_scores: self.attribute_scores(None, rng),
            });
        }
        out.shuffle(rng);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::to_jsonl_string;

    fn small(mode: BiasMode) -> SynthConfig {
        SynthConfig {
            num_images: 120,
            bias_mode: mode,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn cooccurrence_bias_keeps_query_categories_apart() {
        let cfg = SynthConfig {
            cooccurrence_bias: true,
            ..small(BiasMode::SingleInstance)
        };
        let set = generate_synthetic(&cfg, 3).unwrap();
        for img in &set.dataset.images {
            for q in &set.queries {
                let m = QueryMatcher::new(img, &q.graph, &set.dataset.synonyms).unwrap();
                if m.query_categories().iter().all(|c| m.instance_count(c) > 0) {
                    assert!(m.any_satisfying(), "{} co-occurs in {}", q.id, img.image_id);
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small(BiasMode::Mixed);
        let a = generate_synthetic(&cfg, 42).unwrap();
        let b = generate_synthetic(&cfg, 42).unwrap();
        assert_eq!(to_jsonl_string(&a.dataset), to_jsonl_string(&b.dataset));
        let c = generate_synthetic(&cfg, 43).unwrap();
        assert_ne!(to_jsonl_string(&a.dataset), to_jsonl_string(&c.dataset));
    }

    #[test]
    fn output_passes_validation() {
        let set = generate_synthetic(&small(BiasMode::Mixed), 1).unwrap();
        set.dataset.validate().unwrap();
        assert_eq!(set.queries.len(), SynthConfig::default().queries.len());
        assert!(set.queries[0].id.starts_with("q00_person_wearing_helmet"));
    }

    #[test]
    fn disambiguating_positives_have_one_satisfying_assignment() {
        let cfg = SynthConfig {
            hard_negative_rate: 0.3,
            ..small(BiasMode::Disambiguating)
        };
        let set = generate_synthetic(&cfg, 5).unwrap();
        let mut positives = 0;
        for q in &set.queries {
            let subject = &q.graph.objects()[0].category;
            for img in &set.dataset.images {
                let m = QueryMatcher::new(img, &q.graph, &set.dataset.synonyms).unwrap();
                if m.any_satisfying() {
                    positives += 1;
                    assert!(m.instance_count(subject) >= 2);
                    assert_eq!(m.tally().satisfying, 1);
                }
            }
        }
        assert!(positives >= 60);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = small(BiasMode::SingleInstance);
        cfg.predicates.push("next_to".into());
        assert!(matches!(generate_synthetic(&cfg, 0), Err(DatasetError::InfeasibleConfig(_))));

        let mut cfg = small(BiasMode::SingleInstance);
        cfg.queries = vec![QueryTemplate::new("person", "left_of", "person")];
        assert!(matches!(generate_synthetic(&cfg, 0), Err(DatasetError::InfeasibleConfig(_))));

        // boxes nearly canvas-sized cannot be stacked for "on"
        let mut cfg = small(BiasMode::SingleInstance);
        cfg.box_min_fraction = 0.9;
        cfg.box_max_fraction = 0.95;
        cfg.queries = vec![QueryTemplate::new("person", "on", "horse")];
        assert!(matches!(generate_synthetic(&cfg, 0), Err(DatasetError::InfeasibleConfig(_))));
    }

    #[test]
    fn min_positives_is_enforced() {
        let cfg = SynthConfig {
            min_positives: 1000,
            ..small(BiasMode::SingleInstance)
        };
        assert!(matches!(generate_synthetic(&cfg, 0), Err(DatasetError::InfeasibleConfig(_))));
    }
}
