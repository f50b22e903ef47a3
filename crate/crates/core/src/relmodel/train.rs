use std::collections::{BTreeMap, HashSet};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gmm::{fit_gmm_with, GmmFitOptions};
use super::platt::fit_platt_report;
use super::{pair_features, ModelError, PairFeatures, RelationshipModel};
use crate::dataset::{Dataset, Vocabulary};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    /// Mixture components per predicate.
    pub k: usize,
    /// Unrelated pairs sampled per related pair for calibration.
    pub neg_ratio: usize,
    pub gmm: GmmFitOptions,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            k: 3,
            neg_ratio: 5,
            gmm: GmmFitOptions::default(),
        }
    }
}

/// Trained relationship models together with the vocabulary they were
/// trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet {
    pub vocab: Vocabulary,
    pub models: BTreeMap<String, RelationshipModel>,
}

impl ModelSet {
    pub fn get(&self, predicate: &str) -> Option<&RelationshipModel> {
        self.models.get(predicate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedPredicate {
    pub predicate: String,
    pub positives: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub models: ModelSet,
    pub skipped: Vec<SkippedPredicate>,
    /// (predicate, positives, negatives) used for each trained model.
    pub sample_counts: Vec<(String, usize, usize)>,
}

/// Fits one GMM + Platt model per predicate found in the training truth.
///
/// Positives are the truth-related instance pairs; calibration negatives
/// are unrelated ordered pairs from the same images, `neg_ratio` per
/// positive (or the whole pool when smaller).
pub fn train_relationship_models(train: &Dataset, opts: &TrainOptions, seed: u64) -> Result<TrainReport, ModelError> {
    let syn = &train.synonyms;
    let mut positives: BTreeMap<String, Vec<PairFeatures>> = BTreeMap::new();
    let mut related: BTreeMap<String, HashSet<(usize, usize, usize)>> = BTreeMap::new();
    for (img_idx, img) in train.images.iter().enumerate() {
        let instances = img
            .truth_instances
            .as_ref()
            .ok_or_else(|| ModelError::MissingGroundTruth(img.image_id.clone()))?;
        for r in img.truth_relations.iter().flatten() {
            let p = syn.canonical(&r.predicate).to_string();
            if related.entry(p.clone()).or_default().insert((img_idx, r.subject, r.object)) {
                positives
                    .entry(p)
                    .or_default()
                    .push(pair_features(&instances[r.subject].bbox, &instances[r.object].bbox));
            }
        }
    }

    let mut models = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut sample_counts = Vec::new();
    for (predicate, pos) in &positives {
        let need = 5 * opts.k;
        if pos.len() < need {
            log::warn!(
                "skipping predicate {predicate:?}: {} related pairs, need at least {need}",
                pos.len()
            );
            skipped.push(SkippedPredicate {
                predicate: predicate.clone(),
                positives: pos.len(),
                reason: format!("fewer than {need} related pairs"),
            });
            continue;
        }

        let rel = &related[predicate];
        let mut pool = Vec::new();
        for (img_idx, img) in train.images.iter().enumerate() {
            let n = img.truth_instances.as_ref().map_or(0, Vec::len);
            for s in 0..n {
                for o in 0..n {
                    if s != o && !rel.contains(&(img_idx, s, o)) {
                        pool.push((img_idx, s, o));
                    }
                }
            }
        }
        let wanted = (opts.neg_ratio * pos.len()).min(pool.len());
        let mut neg_rng = substream(seed, &format!("negatives/{predicate}"));
        let mut picks = index::sample(&mut neg_rng, pool.len(), wanted).into_vec();
        picks.sort_unstable();
        let negatives: Vec<PairFeatures> = picks
            .iter()
            .map(|&i| {
                let (img_idx, s, o) = pool[i];
                let inst = train.images[img_idx].truth_instances.as_ref().expect("checked above");
                pair_features(&inst[s].bbox, &inst[o].bbox)
            })
            .collect();

        let em_seed: u64 = substream(seed, &format!("em/{predicate}")).random();
        let fit = fit_gmm_with(pos, opts.k, em_seed, &opts.gmm)?;
        if !fit.converged {
            log::warn!("EM for {predicate:?} stopped at the iteration cap before converging");
        }

        let scores: Vec<f64> = pos
            .iter()
            .chain(&negatives)
            .map(|x| fit.model.log_density(x))
            .collect();
        let labels: Vec<bool> = (0..scores.len()).map(|i| i < pos.len()).collect();
        let platt = match fit_platt_report(&scores, &labels) {
            Ok(p) => p.params,
            Err(ModelError::SingleClass { .. }) => {
                log::warn!("skipping predicate {predicate:?}: no unrelated pairs for calibration");
                skipped.push(SkippedPredicate {
                    predicate: predicate.clone(),
                    positives: pos.len(),
                    reason: "no unrelated pairs for calibration".into(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        if !platt.is_increasing() {
            log::warn!("calibration for {predicate:?} is not increasing in density (a = {})", platt.a);
        }
        sample_counts.push((predicate.clone(), pos.len(), negatives.len()));
        models.insert(
            predicate.clone(),
            RelationshipModel {
                predicate: predicate.clone(),
                gmm: fit.model,
                platt,
            },
        );
    }
    Ok(TrainReport {
        models: ModelSet {
            vocab: train.vocab.clone(),
            models,
        },
        skipped,
        sample_counts,
    })
}
