//! Geometric functionals over (mask, box) pairs and per-category candidate
//! filtering.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, PixelRect};
use crate::taxonomy::{RuleKind, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub rect: PixelRect,
    pub category: usize,
    pub confidence: f64,
}

impl DetectionBox {
    pub fn new(rect: PixelRect, category: usize, confidence: f64) -> Self {
        Self {
            rect,
            category,
            confidence,
        }
    }

    /// Checks the box is non-degenerate, inside a `width × height` image and
    /// carries a unit-interval confidence.
    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        let r = &self.rect;
        if r.x0 >= r.x1 || r.y0 >= r.y1 {
            return Err(Error::invalid(format!("degenerate box {r:?}")));
        }
        if r.x1 > width || r.y1 > height {
            return Err(Error::invalid(format!(
                "box {r:?} outside {width}x{height} image"
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::invalid(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        Ok(())
    }
}

/// Containment, coverage, rectangularity and relative size of a mask with
/// respect to its detection box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Functionals {
    pub containment: f64,
    pub coverage: f64,
    pub rectangularity: f64,
    pub relative_size: f64,
}

pub fn geometric_functionals(mask: &BinaryMask, detection: &DetectionBox) -> Result<Functionals> {
    let Some(bbox) = mask.bbox() else {
        return Err(Error::EmptyMask);
    };
    let box_area = detection.rect.area();
    if box_area == 0 {
        return Err(Error::invalid("zero-area detection box"));
    }
    let area = mask.area() as f64;
    let inside = mask.area_within(&detection.rect) as f64;
    let bbox_area = bbox.area() as f64;
    let box_area = box_area as f64;
    Ok(Functionals {
        containment: inside / area,
        coverage: inside / box_area,
        rectangularity: area / bbox_area,
        relative_size: bbox_area / box_area,
    })
}

/// Acceptance thresholds for each rule family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterThresholds {
    pub barn_containment: f64,
    pub barn_rectangularity: f64,
    pub barn_size_min: f64,
    pub barn_size_max: f64,
    pub pond_coverage: f64,
    pub silo_containment: f64,
    pub silo_rectangularity: f64,
    pub silo_size_max: f64,
    pub feedlot_coverage: f64,
    pub feedlot_size_min: f64,
    pub silage_coverage: f64,
    pub default_coverage: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            barn_containment: 0.90,
            barn_rectangularity: 0.70,
            barn_size_min: 0.50,
            barn_size_max: 1.50,
            pond_coverage: 0.60,
            silo_containment: 0.90,
            silo_rectangularity: 0.60,
            silo_size_max: 0.50,
            feedlot_coverage: 0.50,
            feedlot_size_min: 0.50,
            silage_coverage: 0.30,
            default_coverage: 0.30,
        }
    }
}

impl FilterThresholds {
    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("barn_containment", self.barn_containment),
            ("barn_rectangularity", self.barn_rectangularity),
            ("pond_coverage", self.pond_coverage),
            ("silo_containment", self.silo_containment),
            ("silo_rectangularity", self.silo_rectangularity),
            ("feedlot_coverage", self.feedlot_coverage),
            ("silage_coverage", self.silage_coverage),
            ("default_coverage", self.default_coverage),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("threshold {name}={v} outside [0, 1]")));
            }
        }
        let ratios = [
            ("barn_size_min", self.barn_size_min),
            ("barn_size_max", self.barn_size_max),
            ("silo_size_max", self.silo_size_max),
            ("feedlot_size_min", self.feedlot_size_min),
        ];
        for (name, v) in ratios {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("threshold {name}={v} must be >= 0")));
            }
        }
        if self.barn_size_min > self.barn_size_max {
            return Err(Error::invalid("barn_size_min exceeds barn_size_max"));
        }
        Ok(())
    }

    /// Rule check for everything except the pond argmax step.
    fn passes(&self, rule: RuleKind, f: &Functionals) -> bool {
        match rule {
            RuleKind::Barn => {
                f.containment >= self.barn_containment
                    && f.rectangularity >= self.barn_rectangularity
                    && f.relative_size >= self.barn_size_min
                    && f.relative_size <= self.barn_size_max
            }
            RuleKind::Pond => f.coverage >= self.pond_coverage,
            RuleKind::Silo => {
                f.containment >= self.silo_containment
                    && f.rectangularity >= self.silo_rectangularity
                    && f.relative_size <= self.silo_size_max
            }
            RuleKind::Feedlot => {
                f.coverage >= self.feedlot_coverage && f.relative_size >= self.feedlot_size_min
            }
            RuleKind::Silage => f.coverage >= self.silage_coverage,
            RuleKind::Default => f.coverage >= self.default_coverage,
        }
    }
}

/// A mask proposed for a detection; the category travels with the box.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub mask: BinaryMask,
    pub detection: DetectionBox,
}

impl Candidate {
    pub fn new(mask: BinaryMask, detection: DetectionBox) -> Self {
        Self { mask, detection }
    }

    pub fn category(&self) -> usize {
        self.detection.category
    }
}

/// Indices (ascending) of the candidates that pass their category's rule.
///
/// Pond candidates sharing a detection box compete: only the one with the
/// largest coverage (first one on ties) is judged against the threshold.
pub fn accepted_indices(
    cands: &[Candidate],
    th: &FilterThresholds,
    taxonomy: &Taxonomy,
) -> Result<Vec<usize>> {
    let mut keep = Vec::new();
    // pond group key -> (best index, best intersection count, coverage)
    let mut ponds: HashMap<(PixelRect, usize), (usize, u64, f64)> = HashMap::new();
    let mut pond_order = Vec::new();

    for (i, c) in cands.iter().enumerate() {
        let rule = taxonomy.rule(c.category())?;
        let f = geometric_functionals(&c.mask, &c.detection)?;
        if rule == RuleKind::Pond {
            let key = (c.detection.rect, c.category());
            let inside = c.mask.area_within(&c.detection.rect);
            match ponds.get_mut(&key) {
                Some(best) if inside > best.1 => *best = (i, inside, f.coverage),
                Some(_) => {}
                None => {
                    ponds.insert(key, (i, inside, f.coverage));
                    pond_order.push(key);
                }
            }
        } else if th.passes(rule, &f) {
            keep.push(i);
        }
    }
    for key in pond_order {
        let (i, _, coverage) = ponds[&key];
        if coverage >= th.pond_coverage {
            keep.push(i);
        }
    }
    keep.sort_unstable();
    Ok(keep)
}

pub fn filter_candidates(
    cands: &[Candidate],
    th: &FilterThresholds,
    taxonomy: &Taxonomy,
) -> Result<Vec<Candidate>> {
    Ok(accepted_indices(cands, th, taxonomy)?
        .into_iter()
        .map(|i| cands[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x0: u32, y0: u32, x1: u32, y1: u32) -> PixelRect {
        PixelRect::new(x0, y0, x1, y1)
    }

    #[test]
    fn block_in_double_width_box() {
        let m = BinaryMask::rect(16, 16, rect(0, 0, 4, 4)).unwrap();
        let o = DetectionBox::new(rect(0, 0, 8, 4), 0, 0.9);
        let f = geometric_functionals(&m, &o).unwrap();
        assert_eq!(f.containment, 1.0);
        assert_eq!(f.coverage, 0.5);
        assert_eq!(f.rectangularity, 1.0);
        assert_eq!(f.relative_size, 0.5);
    }

    #[test]
    fn exact_fill_is_identity() {
        let r = rect(3, 2, 9, 7);
        let m = BinaryMask::rect(12, 12, r).unwrap();
        let f = geometric_functionals(&m, &DetectionBox::new(r, 0, 1.0)).unwrap();
        assert_eq!(
            (f.containment, f.coverage, f.rectangularity, f.relative_size),
            (1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn l_shape() {
        let m = BinaryMask::from_fn(8, 8, |x, y| (y < 2 && x < 4) || ((2..4).contains(&y) && x < 2))
            .unwrap();
        assert_eq!(m.area(), 12);
        let o = DetectionBox::new(m.bbox().unwrap(), 0, 1.0);
        let f = geometric_functionals(&m, &o).unwrap();
        assert_eq!(f.containment, 1.0);
        assert_eq!(f.coverage, 0.75);
        assert_eq!(f.rectangularity, 0.75);
        assert_eq!(f.relative_size, 1.0);
    }

    #[test]
    fn empty_mask_errors() {
        let m = BinaryMask::empty(4, 4).unwrap();
        let o = DetectionBox::new(rect(0, 0, 2, 2), 0, 1.0);
        assert!(matches!(geometric_functionals(&m, &o), Err(Error::EmptyMask)));
    }

    #[test]
    fn perfect_barn_accepted() {
        let r = rect(2, 2, 10, 6);
        let c = Candidate::new(BinaryMask::rect(16, 16, r).unwrap(), DetectionBox::new(r, 0, 1.0));
        let out = filter_candidates(&[c], &FilterThresholds::default(), &Taxonomy::default()).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn pond_keeps_only_max_coverage() {
        let o = DetectionBox::new(rect(0, 0, 10, 10), 1, 0.8);
        // 40 px -> psi 0.4, 90 px -> psi 0.9
        let low = BinaryMask::rect(16, 16, rect(0, 0, 4, 10)).unwrap();
        let high = BinaryMask::rect(16, 16, rect(0, 0, 9, 10)).unwrap();
        let cands = vec![Candidate::new(low, o), Candidate::new(high, o)];
        let th = FilterThresholds {
            pond_coverage: 0.6,
            ..Default::default()
        };
        assert_eq!(accepted_indices(&cands, &th, &Taxonomy::default()).unwrap(), vec![1]);
    }

    #[test]
    fn pond_tie_prefers_lowest_index() {
        let o = DetectionBox::new(rect(0, 0, 4, 4), 1, 0.8);
        let a = BinaryMask::rect(8, 8, rect(0, 0, 4, 3)).unwrap();
        let b = BinaryMask::rect(8, 8, rect(0, 1, 4, 4)).unwrap();
        let cands = vec![Candidate::new(a, o), Candidate::new(b, o)];
        let out = accepted_indices(&cands, &FilterThresholds::default(), &Taxonomy::default()).unwrap();
        assert_eq!(out, vec![0]);
    }

    #[test]
    fn unrectangular_barn_rejected() {
        // checkerboard-ish half fill: rho = 0.5
        let m = BinaryMask::from_fn(16, 16, |x, y| x < 4 && y < 4 && (x + y) % 2 == 0).unwrap();
        let o = DetectionBox::new(m.bbox().unwrap(), 0, 1.0);
        let f = geometric_functionals(&m, &o).unwrap();
        assert!(f.rectangularity < 0.7);
        let out = accepted_indices(&[Candidate::new(m, o)], &FilterThresholds::default(), &Taxonomy::default())
            .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn unknown_category() {
        let r = rect(0, 0, 2, 2);
        let c = Candidate::new(BinaryMask::rect(4, 4, r).unwrap(), DetectionBox::new(r, 9, 1.0));
        let err = filter_candidates(&[c], &FilterThresholds::default(), &Taxonomy::default());
        assert!(matches!(err, Err(Error::UnknownCategory { id: 9, .. })));
    }

    #[test]
    fn threshold_validation() {
        assert!(FilterThresholds::default().validate().is_ok());
        let bad = FilterThresholds {
            barn_size_min: 2.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn box_validation() {
        assert!(DetectionBox::new(rect(0, 0, 4, 4), 0, 0.5).validate(4, 4).is_ok());
        assert!(DetectionBox::new(rect(0, 0, 5, 4), 0, 0.5).validate(4, 4).is_err());
        assert!(DetectionBox::new(rect(2, 0, 2, 4), 0, 0.5).validate(4, 4).is_err());
        assert!(DetectionBox::new(rect(0, 0, 1, 1), 0, 1.5).validate(4, 4).is_err());
    }
}
