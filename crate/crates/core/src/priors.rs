//! Engineered prior feature vector: area ratios, barn–pond proximity and
//! county livestock mix, plus training-set standardization.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::chamfer::chamfer_distance;
use crate::composite::CompositeMask;
use crate::error::{Error, Result};
use crate::taxonomy::Taxonomy;

pub const DEFAULT_EPS: f64 = 1e-6;
pub const STD_FLOOR: f64 = 1e-6;
pub const COUNTY_PRIOR_NAMES: [&str; 4] = ["prior_swine", "prior_poultry", "prior_dairy", "prior_beef"];
pub const UNIFORM_PRIOR: [f64; 4] = [0.25; 4];

/// County FIPS code → livestock mix `[swine, poultry, dairy, beef]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CountyPriorTable {
    rows: BTreeMap<String, [f64; 4]>,
}

#[derive(Debug, Deserialize, Serialize)]
struct CountyRow {
    county_fips: String,
    q_swine: f64,
    q_poultry: f64,
    q_dairy: f64,
    q_beef: f64,
}

impl CountyPriorTable {
    pub fn insert(&mut self, fips: impl Into<String>, q: [f64; 4]) -> Result<()> {
        let fips = fips.into();
        if q.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!("county {fips}: prior {q:?} outside [0, 1]")));
        }
        let s: f64 = q.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("county {fips}: priors sum to {s}, not 1")));
        }
        self.rows.insert(fips, q);
        Ok(())
    }

    pub fn get(&self, fips: &str) -> Option<[f64; 4]> {
        self.rows.get(fips).copied()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Parses `county_fips,q_swine,q_poultry,q_dairy,q_beef` CSV; rows off the
    /// simplex are rejected.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut table = Self::default();
        for row in rdr.deserialize() {
            let row: CountyRow = row?;
            table.insert(
                row.county_fips,
                [row.q_swine, row.q_poultry, row.q_dairy, row.q_beef],
            )?;
        }
        Ok(table)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        for (fips, q) in &self.rows {
            wtr.serialize(CountyRow {
                county_fips: fips.clone(),
                q_swine: q[0],
                q_poultry: q[1],
                q_dairy: q[2],
                q_beef: q[3],
            })?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn lookup_or_uniform(&self, fips: &str) -> [f64; 4] {
        self.get(fips).unwrap_or_else(|| {
            log::warn!("county {fips} missing from prior table; using uniform prior");
            UNIFORM_PRIOR
        })
    }
}

/// `r_k = area(C_k) / (Σ_j area(C_j) + eps)` with `area` the mean over pixels.
pub fn area_ratios(c: &CompositeMask, eps: f64) -> Vec<f64> {
    let hw = (c.height() * c.width()) as f64;
    let areas: Vec<f64> = (0..c.channels())
        .map(|k| c.channel_sum(k) as f64 / hw)
        .collect();
    let total: f64 = areas.iter().sum::<f64>() + eps;
    areas.into_iter().map(|a| a / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorFeatureVector {
    pub area_ratios: Vec<f64>,
    pub barn_pond: f64,
    pub county: [f64; 4],
}

impl PriorFeatureVector {
    pub fn len(&self) -> usize {
        self.area_ratios.len() + 5
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat `[r_1..r_K, d_bp, q]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.area_ratios.clone();
        v.push(self.barn_pond);
        v.extend_from_slice(&self.county);
        v
    }

    pub fn from_slice(f: &[f64]) -> Result<Self> {
        if f.len() < 6 {
            return Err(Error::invalid(format!("prior vector of length {} too short", f.len())));
        }
        let k = f.len() - 5;
        Ok(Self {
            area_ratios: f[..k].to_vec(),
            barn_pond: f[k],
            county: [f[k + 1], f[k + 2], f[k + 3], f[k + 4]],
        })
    }
}

/// Names of the prior slots in vector order.
pub fn slot_names(taxonomy: &Taxonomy) -> Vec<String> {
    taxonomy
        .names()
        .iter()
        .map(|n| format!("area_{n}"))
        .chain(std::iter::once("barn_pond_proximity".to_string()))
        .chain(COUNTY_PRIOR_NAMES.iter().map(|s| s.to_string()))
        .collect()
}

pub fn assemble_features(
    c: &CompositeMask,
    taxonomy: &Taxonomy,
    county: [f64; 4],
    eps: f64,
) -> Result<PriorFeatureVector> {
    if c.channels() != taxonomy.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} channels", taxonomy.len()),
            actual: format!("{} channels", c.channels()),
        });
    }
    let barn = c.channel_mask(taxonomy.barn())?;
    let pond = c.channel_mask(taxonomy.pond())?;
    Ok(PriorFeatureVector {
        area_ratios: area_ratios(c, eps),
        barn_pond: chamfer_distance(&barn, &pond)?,
        county,
    })
}

/// Per-dimension training-set mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStandardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStandardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "standardizer needs at least 2 samples, got {}",
                rows.len()
            )));
        }
        let dim = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: format!("{dim} features"),
                actual: format!("{} features", bad.len()),
            });
        }
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..dim)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
            .collect();
        let std = (0..dim)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                var.sqrt().max(STD_FLOOR)
            })
            .collect();
        Ok(Self { mean, std })
    }

    /// Pass-through standardizer of the given dimension.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn standardize(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} features", self.dim()),
                actual: format!("{} features", f.len()),
            });
        }
        Ok(f
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s.max(STD_FLOOR))
            .collect())
    }

    pub fn inverse(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s.max(STD_FLOOR) + m)
            .collect()
    }
}

/// One line of the prior-feature JSON-lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorRecord {
    pub image_id: String,
    pub f: Vec<f64>,
    pub county_fips: String,
}
