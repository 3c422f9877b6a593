//! Interchange records, dataset manifests and scene loading.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::composite::{resize_composite, CompositeMask, CompositeRecord};
use crate::error::{Error, Result};
use crate::geometry::{Candidate, DetectionBox};
use crate::mask::{BinaryMask, CocoRle, PixelRect};
use crate::model::ModelInput;
use crate::priors::{assemble_features, CountyPriorTable};
use crate::taxonomy::{class_index, Taxonomy, CLASS_NAMES};
use crate::tensor::{write_atomic, FeatureTensor};

/// One detection with its box-prompted mask, as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub category_id: usize,
    pub rle: CocoRle,
    #[serde(rename = "box")]
    pub bbox: [u32; 4],
    pub score: f64,
}

impl DetectionRecord {
    pub fn from_candidate(image_id: &str, c: &Candidate) -> Self {
        let r = c.detection.rect;
        Self {
            image_id: image_id.to_string(),
            category_id: c.category(),
            rle: c.mask.to_coco(),
            bbox: [r.x0, r.y0, r.x1, r.y1],
            score: c.detection.confidence,
        }
    }

    pub fn to_candidate(&self) -> Result<Candidate> {
        let mask = BinaryMask::from_coco(&self.rle)?;
        let [x0, y0, x1, y1] = self.bbox;
        let det = DetectionBox::new(PixelRect::new(x0, y0, x1, y1), self.category_id, self.score);
        det.validate(mask.width(), mask.height())?;
        Ok(Candidate::new(mask, det))
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            Error::invalid(format!("{}:{}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, it)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

/// Parses detection records into candidates. Empty masks and zero-area boxes
/// are dropped with a warning; any other defect is an error.
pub fn ingest_detections(records: &[DetectionRecord], taxonomy: &Taxonomy) -> Result<Vec<Candidate>> {
    let mut out = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let [x0, y0, x1, y1] = rec.bbox;
        if x0 >= x1 || y0 >= y1 {
            log::warn!("{}: detection {i} has a zero-area box; skipped", rec.image_id);
            continue;
        }
        taxonomy.check(rec.category_id).map_err(|e| e.in_record(&rec.image_id))?;
        let cand = rec.to_candidate().map_err(|e| e.in_record(&rec.image_id))?;
        if cand.mask.is_empty() {
            log::warn!("{}: detection {i} has an empty mask; skipped", rec.image_id);
            continue;
        }
        out.push(cand);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image_id: String,
    pub county_fips: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub split: Split,
    /// `[H, W]` of the source image.
    pub image_size: [u32; 2],
    pub detections: String,
    pub features: String,
    pub composite: String,
}

impl ManifestRecord {
    pub fn label_index(&self) -> Result<Option<usize>> {
        self.label
            .as_deref()
            .map(|l| {
                class_index(l).ok_or_else(|| {
                    Error::invalid(format!("unknown label `{l}`")).in_record(&self.image_id)
                })
            })
            .transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub categories: Taxonomy,
    pub classes: Vec<String>,
    /// County prior CSV, relative to the manifest directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counties: Option<String>,
    pub records: Vec<ManifestRecord>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(categories: Taxonomy) -> Self {
        Self {
            format: "cafo-manifest".into(),
            version: 1,
            categories,
            classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            counties: None,
            records: Vec::new(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    /// Loads and validates: unique ids, known labels, and existing detection
    /// and feature files.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_slice(&bytes)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != "cafo-manifest" || self.version != 1 {
            return Err(Error::invalid(format!(
                "unsupported manifest {} v{}",
                self.format, self.version
            )));
        }
        if self.classes != CLASS_NAMES {
            return Err(Error::invalid(format!("unexpected class list {:?}", self.classes)));
        }
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(&r.image_id) {
                return Err(Error::invalid(format!("duplicate image_id {}", r.image_id)));
            }
            r.label_index()?;
            let blob = self.resolve(&r.features);
            for p in [
                self.resolve(&r.detections),
                FeatureTensor::sidecar_path(&blob),
                blob,
            ] {
                if !p.is_file() {
                    return Err(Error::invalid(format!("missing file {}", p.display()))
                        .in_record(&r.image_id));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }

    pub fn county_table(&self) -> Result<CountyPriorTable> {
        match &self.counties {
            Some(rel) => {
                let p = self.resolve(rel);
                let f = fs::File::open(&p).map_err(|e| Error::io(&p, e))?;
                CountyPriorTable::from_csv(f)
            }
            None => Ok(CountyPriorTable::default()),
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn load_composite(&self, rec: &ManifestRecord) -> Result<CompositeMask> {
        let p = self.resolve(&rec.composite);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e).in_record(&rec.image_id))?;
        let cr: CompositeRecord = serde_json::from_slice(&bytes)?;
        let c = CompositeMask::from_record(&cr).map_err(|e| e.in_record(&rec.image_id))?;
        if c.channels() != self.categories.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} channels", self.categories.len()),
                actual: format!("{} channels", c.channels()),
            }
            .in_record(&rec.image_id));
        }
        Ok(c)
    }

    pub fn load_detections(&self, rec: &ManifestRecord) -> Result<Vec<DetectionRecord>> {
        let recs: Vec<DetectionRecord> = read_jsonl(&self.resolve(&rec.detections))?;
        if let Some(bad) = recs.iter().find(|d| d.image_id != rec.image_id) {
            return Err(Error::invalid(format!(
                "detection for {} found in file of {}",
                bad.image_id, rec.image_id
            )));
        }
        Ok(recs)
    }

    pub fn load_scene(&self, rec: &ManifestRecord, table: &CountyPriorTable) -> Result<Scene> {
        let features = FeatureTensor::read(&self.resolve(&rec.features))
            .map_err(|e| e.in_record(&rec.image_id))?;
        let composite = self.load_composite(rec)?;
        let [h, w] = rec.image_size;
        if composite.height() != h as usize || composite.width() != w as usize {
            return Err(Error::DimensionMismatch {
                expected: format!("{h}x{w}"),
                actual: format!("{}x{}", composite.height(), composite.width()),
            }
            .in_record(&rec.image_id));
        }
        Ok(Scene {
            image_id: rec.image_id.clone(),
            county_fips: rec.county_fips.clone(),
            county: table.lookup_or_uniform(&rec.county_fips),
            label: rec.label_index()?,
            split: rec.split,
            features,
            composite,
        })
    }
}

/// Everything the classifier needs for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image_id: String,
    pub county_fips: String,
    pub county: [f64; 4],
    pub label: Option<usize>,
    pub split: Split,
    pub features: FeatureTensor,
    pub composite: CompositeMask,
}

/// Builds the classifier input from features and a full-resolution composite;
/// the prior vector is raw (unstandardized).
pub fn scene_input(
    features: &FeatureTensor,
    composite: &CompositeMask,
    county: [f64; 4],
    taxonomy: &Taxonomy,
    eps: f64,
) -> Result<ModelInput> {
    let prior = assemble_features(composite, taxonomy, county, eps)?.to_vec();
    grid_input(features, composite, prior)
}

/// Classifier input with an externally supplied prior vector.
pub fn grid_input(features: &FeatureTensor, composite: &CompositeMask, prior: Vec<f64>) -> Result<ModelInput> {
    let resized = resize_composite(&composite.to_soft(), features.height, features.width)?;
    let mask = Array2::from_shape_vec(
        (features.height * features.width, resized.channels),
        resized.data,
    )
    .expect("resized mask shape");
    Ok(ModelInput {
        height: features.height,
        width: features.width,
        features: features.to_matrix(),
        mask,
        prior,
    })
}

impl Scene {
    pub fn model_input(&self, taxonomy: &Taxonomy, eps: f64) -> Result<ModelInput> {
        scene_input(&self.features, &self.composite, self.county, taxonomy, eps)
            .map_err(|e| e.in_record(&self.image_id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detection_record_json_shape() {
        let r = PixelRect::new(1, 2, 4, 5);
        let c = Candidate::new(BinaryMask::rect(6, 6, r).unwrap(), DetectionBox::new(r, 2, 0.75));
        let rec = DetectionRecord::from_candidate("img", &c);
        let json = serde_json::to_value(&rec).unwrap();
        assert_eq!(json["box"], serde_json::json!([1, 2, 4, 5]));
        assert_eq!(json["rle"]["size"], serde_json::json!([6, 6]));
        assert_eq!(rec.to_candidate().unwrap(), c);
    }

    #[test]
    fn ingestion_skips_degenerate() {
        let r = PixelRect::new(1, 1, 3, 3);
        let good = DetectionRecord::from_candidate(
            "a",
            &Candidate::new(BinaryMask::rect(4, 4, r).unwrap(), DetectionBox::new(r, 0, 0.5)),
        );
        let mut empty = good.clone();
        empty.rle = BinaryMask::empty(4, 4).unwrap().to_coco();
        let mut flat = good.clone();
        flat.bbox = [1, 1, 1, 3];
        let out = ingest_detections(&[empty, good, flat], &Taxonomy::default()).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn ingestion_rejects_unknown_category() {
        let r = PixelRect::new(0, 0, 2, 2);
        let mut rec = DetectionRecord::from_candidate(
            "a",
            &Candidate::new(BinaryMask::rect(4, 4, r).unwrap(), DetectionBox::new(r, 0, 0.5)),
        );
        rec.category_id = 11;
        assert!(ingest_detections(&[rec], &Taxonomy::default()).is_err());
    }
}
