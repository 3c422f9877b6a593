//! Manifest-level workflows shared by the command-line tool and tests.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composite::composite_masks;
use crate::config::PipelineConfig;
use crate::dataset::{ingest_detections, write_jsonl, DetectionRecord, Manifest, Scene, Split};
use crate::error::{Error, Result};
use crate::explain::{gradient_activation, probability_drop, saliency_heatmap, FeatureImportance, MaskImportance};
use crate::geometry::{filter_candidates, FilterThresholds};
use crate::metrics::{evaluate, F1Report};
use crate::model::{predict, train, ModelState, TrainReport, TrainingExample};
use crate::priors::{assemble_features, PriorRecord, DEFAULT_EPS};
use crate::taxonomy::{class_index, Taxonomy, CLASS_NAMES, NUM_CLASSES};
use crate::tensor::write_atomic;

fn check_taxonomy(expected: &Taxonomy, found: &Taxonomy, what: &str) -> Result<()> {
    if expected != found {
        return Err(Error::ConfigMismatch(format!(
            "{what} categories {:?} differ from {:?}",
            found.names(),
            expected.names()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub records: usize,
    pub candidates: usize,
    pub accepted: usize,
}

/// Filters every record's detections, writing accepted detections to
/// `accepted/<image_id>.jsonl` and the composite to the record's composite
/// path.
pub fn filter_manifest(m: &Manifest, thresholds: &FilterThresholds) -> Result<FilterSummary> {
    thresholds.validate()?;
    let per_record = m
        .records
        .par_iter()
        .map(|rec| {
            let dets = m.load_detections(rec)?;
            let cands = ingest_detections(&dets, &m.categories)?;
            let [h, w] = rec.image_size;
            let kept = filter_candidates(&cands, thresholds, &m.categories)
                .map_err(|e| e.in_record(&rec.image_id))?;
            let comp = composite_masks(&kept, h as usize, w as usize, m.categories.len())
                .map_err(|e| e.in_record(&rec.image_id))?;
            let accepted: Vec<DetectionRecord> = kept
                .iter()
                .map(|c| DetectionRecord::from_candidate(&rec.image_id, c))
                .collect();
            write_jsonl(&m.resolve(&format!("accepted/{}.jsonl", rec.image_id)), &accepted)?;
            let json = serde_json::to_vec(&comp.to_record(&rec.image_id, &m.categories)?)?;
            write_atomic(&m.resolve(&rec.composite), &json)?;
            Ok((dets.len(), kept.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FilterSummary {
        records: per_record.len(),
        candidates: per_record.iter().map(|p| p.0).sum(),
        accepted: per_record.iter().map(|p| p.1).sum(),
    })
}

/// Loads the scenes of one split (all records when `split` is `None`), in
/// manifest order.
pub fn load_scenes(m: &Manifest, split: Option<Split>) -> Result<Vec<Scene>> {
    let table = m.county_table()?;
    m.records
        .par_iter()
        .filter(|r| split.is_none_or(|s| r.split == s))
        .map(|r| m.load_scene(r, &table))
        .collect()
}

/// Raw prior vector per scene.
pub fn feature_records(scenes: &[Scene], taxonomy: &Taxonomy) -> Result<Vec<PriorRecord>> {
    scenes
        .par_iter()
        .map(|s| {
            let f = assemble_features(&s.composite, taxonomy, s.county, DEFAULT_EPS)
                .map_err(|e| e.in_record(&s.image_id))?;
            Ok(PriorRecord {
                image_id: s.image_id.clone(),
                f: f.to_vec(),
                county_fips: s.county_fips.clone(),
            })
        })
        .collect()
}

pub fn training_examples(scenes: &[Scene], taxonomy: &Taxonomy) -> Result<Vec<TrainingExample>> {
    scenes
        .par_iter()
        .map(|s| {
            let label = s
                .label
                .ok_or_else(|| Error::invalid("training record without label").in_record(&s.image_id))?;
            Ok(TrainingExample {
                image_id: s.image_id.clone(),
                input: s.model_input(taxonomy, DEFAULT_EPS)?,
                label,
            })
        })
        .collect()
}

/// Trains on the `train` split with model selection on `val`.
pub fn train_manifest(m: &Manifest, cfg: &PipelineConfig) -> Result<(ModelState, TrainReport)> {
    check_taxonomy(&cfg.taxonomy, &m.categories, "manifest")?;
    let train_set = training_examples(&load_scenes(m, Some(Split::Train))?, &m.categories)?;
    let val_set = training_examples(&load_scenes(m, Some(Split::Val))?, &m.categories)?;
    let Some(first) = train_set.first() else {
        return Err(Error::InsufficientData("manifest has no training records".into()));
    };
    let model = cfg.model.resolve(first.input.features.ncols(), m.categories.len());
    train(&train_set, &val_set, model, m.categories.clone(), &cfg.train)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: String,
    pub label: String,
    pub probs: Vec<f64>,
}

pub fn predict_scenes(state: &ModelState, scenes: &[Scene]) -> Result<Vec<PredictionRecord>> {
    state.ensure_trained()?;
    scenes
        .par_iter()
        .map(|s| {
            let p = predict(state, &s.model_input(&state.taxonomy, DEFAULT_EPS)?)
                .map_err(|e| e.in_record(&s.image_id))?;
            Ok(PredictionRecord {
                image_id: s.image_id.clone(),
                label: CLASS_NAMES[p.label].to_string(),
                probs: p.probs,
            })
        })
        .collect()
}

/// Predictions for `split` of a manifest after checking the model matches it.
pub fn predict_manifest(state: &ModelState, m: &Manifest, split: Option<Split>) -> Result<Vec<PredictionRecord>> {
    check_taxonomy(&state.taxonomy, &m.categories, "manifest")?;
    predict_scenes(state, &load_scenes(m, split)?)
}

/// Scores predictions against the manifest labels of the same image ids.
pub fn evaluate_predictions(m: &Manifest, preds: &[PredictionRecord]) -> Result<F1Report> {
    let labels: std::collections::HashMap<&str, Option<&str>> = m
        .records
        .iter()
        .map(|r| (r.image_id.as_str(), r.label.as_deref()))
        .collect();
    let mut p = Vec::with_capacity(preds.len());
    let mut l = Vec::with_capacity(preds.len());
    for pr in preds {
        let truth = labels
            .get(pr.image_id.as_str())
            .ok_or_else(|| Error::invalid("prediction for unknown image").in_record(&pr.image_id))?
            .ok_or_else(|| Error::invalid("record has no label").in_record(&pr.image_id))?;
        let parse = |name: &str| {
            class_index(name)
                .ok_or_else(|| Error::invalid(format!("unknown class `{name}`")).in_record(&pr.image_id))
        };
        p.push(parse(&pr.label)?);
        l.push(parse(truth)?);
    }
    evaluate(&p, &l, NUM_CLASSES)
}

#[derive(Debug, Clone)]
pub struct Explanations {
    pub features: Vec<FeatureImportance>,
    pub masks: Vec<MaskImportance>,
}

/// Runs all three explanation methods for each scene and writes
/// `feature_importance.jsonl`, `mask_importance.jsonl` and `heatmaps/`.
pub fn explain_scenes(state: &ModelState, scenes: &[Scene], out: &Path) -> Result<Explanations> {
    state.ensure_trained()?;
    let results = scenes
        .par_iter()
        .map(|s| {
            let f = gradient_activation(state, s)?;
            let m = probability_drop(state, s)?;
            saliency_heatmap(state, s)?.write(&out.join("heatmaps"))?;
            Ok((f, m))
        })
        .collect::<Result<Vec<_>>>()?;
    let (features, masks): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    write_jsonl(&out.join("feature_importance.jsonl"), &features)?;
    write_jsonl(&out.join("mask_importance.jsonl"), &masks)?;
    Ok(Explanations { features, masks })
}
