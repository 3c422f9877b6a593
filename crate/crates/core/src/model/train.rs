//! Mini-batch Adam training, prediction and validation-based model selection.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backward::loss_and_gradients;
use super::forward::{classify_forward, ForwardCache, ModelInput};
use super::{ModelConfig, ModelState, Params};
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::priors::FeatureStandardizer;
use crate::taxonomy::{Taxonomy, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Draw each epoch's samples with probability inversely proportional to
    /// class frequency instead of a plain shuffle.
    pub class_balanced: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            epochs: 50,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            class_balanced: false,
            seed: 0,
        }
    }
}

/// A labelled sample whose `input.prior` holds the raw (unstandardized) prior
/// vector.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub image_id: String,
    pub input: ModelInput,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub val_macro_f1: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub best_val_macro_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: usize,
    pub probs: Vec<f64>,
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl ModelState {
    /// Copy of `raw` with the prior vector standardized.
    pub fn standardized(&self, raw: &ModelInput) -> Result<ModelInput> {
        let mut input = raw.clone();
        if self.config.enable_pfv {
            input.prior = self.standardizer.standardize(&raw.prior)?;
        }
        Ok(input)
    }

    /// Forward pass on an input carrying a raw prior vector.
    pub fn forward(&self, raw: &ModelInput) -> Result<ForwardCache> {
        classify_forward(&self.standardized(raw)?, &self.params, &self.config)
    }
}

pub fn predict(state: &ModelState, raw: &ModelInput) -> Result<Prediction> {
    let cache = state.forward(raw)?;
    let probs = cache.probs.to_vec();
    Ok(Prediction {
        label: argmax(&probs),
        probs,
    })
}

pub fn evaluate_split(state: &ModelState, examples: &[TrainingExample]) -> Result<Vec<usize>> {
    use rayon::prelude::*;
    examples
        .par_iter()
        .map(|ex| {
            predict(state, &ex.input)
                .map(|p| p.label)
                .map_err(|e| e.in_record(&ex.image_id))
        })
        .collect()
}

struct Adam {
    m: Params,
    v: Params,
    step: i32,
}

impl Adam {
    fn new(p: &Params) -> Self {
        Self {
            m: p.zeros_like(),
            v: p.zeros_like(),
            step: 0,
        }
    }

    fn update(&mut self, p: &mut Params, g: &Params, tc: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - tc.beta1.powi(self.step);
        let bc2 = 1.0 - tc.beta2.powi(self.step);
        let tensors = p
            .tensors_mut()
            .into_iter()
            .zip(g.tensors())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()));
        for (((_, w), (_, g)), ((_, m), (_, v))) in tensors {
            for i in 0..w.len() {
                m[i] = tc.beta1 * m[i] + (1.0 - tc.beta1) * g[i];
                v[i] = tc.beta2 * v[i] + (1.0 - tc.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                w[i] -= tc.lr * mhat / (vhat.sqrt() + tc.adam_eps);
            }
        }
    }
}

fn epoch_order(labels: &[usize], balanced: bool, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = labels.len();
    if !balanced {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        return idx;
    }
    let mut counts = [0usize; NUM_CLASSES];
    for &l in labels {
        counts[l] += 1;
    }
    let weights: Vec<f64> = labels.iter().map(|&l| 1.0 / counts[l] as f64).collect();
    let total: f64 = weights.iter().sum();
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cumulative.push(acc);
    }
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            cumulative.partition_point(|&c| c < u).min(n - 1)
        })
        .collect()
}

/// Trains a fresh model and returns the state with the best validation
/// macro-F1 (the final state when `val` is empty).
pub fn train(
    train_set: &[TrainingExample],
    val_set: &[TrainingExample],
    config: ModelConfig,
    taxonomy: Taxonomy,
    tc: &TrainConfig,
) -> Result<(ModelState, TrainReport)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::InsufficientData("empty training split".into()));
    }
    if tc.batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    let mut state = ModelState::initialize(config, taxonomy, tc.seed)?;
    if config.enable_pfv {
        let rows: Vec<Vec<f64>> = train_set.iter().map(|e| e.input.prior.clone()).collect();
        state.standardizer = FeatureStandardizer::fit(&rows)?;
    }
    let inputs: Vec<ModelInput> = train_set
        .iter()
        .map(|e| state.standardized(&e.input).map_err(|err| err.in_record(&e.image_id)))
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = train_set.iter().map(|e| e.label).collect();
    let val_labels: Vec<usize> = val_set.iter().map(|e| e.label).collect();

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    shuffle_rng.set_stream(1);
    let mut adam = Adam::new(&state.params);
    let mut report = TrainReport {
        epoch_loss: Vec::with_capacity(tc.epochs),
        val_macro_f1: Vec::with_capacity(tc.epochs),
        best_epoch: None,
        best_val_macro_f1: None,
    };
    let mut best: Option<Params> = None;

    for epoch in 0..tc.epochs {
        let order = epoch_order(&labels, tc.class_balanced, &mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<(&ModelInput, usize)> =
                chunk.iter().map(|&i| (&inputs[i], labels[i])).collect();
            let (loss, grads) = loss_and_gradients(&batch, &state.params, &state.config)?;
            adam.update(&mut state.params, &grads, tc);
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        report.epoch_loss.push(loss_sum / seen as f64);

        if !val_set.is_empty() {
            state.trained = true;
            let preds = evaluate_split(&state, val_set)?;
            let f1 = evaluate(&preds, &val_labels, NUM_CLASSES)?.macro_f1;
            report.val_macro_f1.push(f1);
            if report.best_val_macro_f1.is_none_or(|b| f1 > b) {
                report.best_val_macro_f1 = Some(f1);
                report.best_epoch = Some(epoch);
                best = Some(state.params.clone());
            }
            log::debug!("epoch {epoch}: loss {:.5} val macro-F1 {f1:.4}", report.epoch_loss[epoch]);
        }
    }
    if let Some(p) = best {
        state.params = p;
    }
    state.trained = true;
    Ok((state, report))
}
