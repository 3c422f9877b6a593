use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::CLASS_NAMES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    /// F1 per class; 0 where precision or recall is undefined.
    pub per_class: Vec<f64>,
    /// Number of true instances per class.
    pub support: Vec<usize>,
    /// Unweighted mean over classes with non-zero support.
    pub macro_f1: f64,
}

pub fn evaluate(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<F1Report> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut support = vec![0usize; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= num_classes || l >= num_classes {
            return Err(Error::invalid(format!("class index out of range ({p}, {l})")));
        }
        support[l] += 1;
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
        }
    }
    let per_class: Vec<f64> = (0..num_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + (support[c] - tp[c]);
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect();
    let present: Vec<f64> = (0..num_classes)
        .filter(|&c| support[c] > 0)
        .map(|c| per_class[c])
        .collect();
    let macro_f1 = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(F1Report {
        per_class,
        support,
        macro_f1,
    })
}

impl F1Report {
    /// Plain-text table, one column per class followed by macro-F1.
    pub fn table(&self, title: &str) -> String {
        let names: Vec<&str> = (0..self.per_class.len())
            .map(|c| CLASS_NAMES.get(c).copied().unwrap_or("?"))
            .collect();
        let mut out = format!("{:<16}", "Model");
        for n in &names {
            out.push_str(&format!(" {n:>9}"));
        }
        out.push_str(&format!(" {:>9}\n", "macro-F1"));
        out.push_str(&format!("{title:<16}"));
        for v in &self.per_class {
            out.push_str(&format!(" {v:>9.3}"));
        }
        out.push_str(&format!(" {:>9.3}\n", self.macro_f1));
        out
    }
}
