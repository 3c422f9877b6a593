//! Gradient-activation feature importance, probability-drop channel
//! importance and saliency heatmaps for a trained classifier.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::composite::CompositeMask;
use crate::dataset::{scene_input, Scene};
use crate::error::Result;
use crate::model::{logit_grad_wrt_fused, predict, ForwardCache, ModelState};
use crate::priors::{slot_names, DEFAULT_EPS};
use crate::taxonomy::{CLASS_NAMES, NEGATIVE_CLASS};
use crate::tensor::write_atomic;

/// Class to explain: the most probable positive class. The flag is set when
/// the overall argmax is the negative class.
pub fn explained_class(probs: &[f64]) -> (usize, bool) {
    let mut best = 0;
    let mut overall = 0;
    for (c, &p) in probs.iter().enumerate() {
        if c != NEGATIVE_CLASS && p > probs[best] {
            best = c;
        }
        if p > probs[overall] {
            overall = c;
        }
    }
    (best, overall == NEGATIVE_CLASS)
}

/// `s = |g| ⊙ |h|`.
pub fn importance_scores(gradient: &[f64], activation: &[f64]) -> Vec<f64> {
    gradient
        .iter()
        .zip(activation)
        .map(|(g, h)| g.abs() * h.abs())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedScore {
    pub name: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub image_id: String,
    pub explained_class: String,
    pub negative_predicted: bool,
    /// `∂ŷ_c / ∂h`, one entry per head input.
    pub gradient: Vec<f64>,
    /// Scores over the whole head input.
    pub scores: Vec<f64>,
    /// Per-dimension scores of the pooled visual block.
    pub visual: Vec<f64>,
    pub visual_total: f64,
    /// Named prior slots; empty when the prior branch is disabled.
    pub priors: Vec<NamedScore>,
}

pub fn gradient_activation(state: &ModelState, scene: &Scene) -> Result<FeatureImportance> {
    state.ensure_trained()?;
    let input = scene.model_input(&state.taxonomy, DEFAULT_EPS)?;
    let cache = state.forward(&input)?;
    Ok(feature_importance(state, &cache, &scene.image_id))
}

/// Feature importance from a completed forward pass.
pub fn feature_importance(state: &ModelState, cache: &ForwardCache, image_id: &str) -> FeatureImportance {
    let probs = cache.probs.to_vec();
    let (class, negative_predicted) = explained_class(&probs);
    // linear head: the gradient is the weight row itself
    let gradient = state.params.w_head.row(class).to_vec();
    let h = cache.head_input.to_vec();
    let scores = importance_scores(&gradient, &h);
    let d = state.config.feature_dim;
    let visual = scores[..d].to_vec();
    let priors = if state.config.enable_pfv {
        slot_names(&state.taxonomy)
            .into_iter()
            .zip(&scores[d..])
            .map(|(name, &score)| NamedScore { name, score })
            .collect()
    } else {
        Vec::new()
    };
    FeatureImportance {
        image_id: image_id.to_string(),
        explained_class: CLASS_NAMES[class].to_string(),
        negative_predicted,
        gradient,
        visual_total: visual.iter().sum(),
        visual,
        scores,
        priors,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelDrop {
    pub category: String,
    /// Positive part of the probability decrease with the channel cleared.
    pub removed: f64,
    /// Positive part of the probability decrease with the channel saturated.
    pub saturated: f64,
    /// Mean of the two.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskImportance {
    pub image_id: String,
    pub explained_class: String,
    pub negative_predicted: bool,
    pub probs: Vec<f64>,
    pub channels: Vec<ChannelDrop>,
}

impl MaskImportance {
    /// Channel with the largest `delta`; the first one wins ties.
    pub fn top_channel(&self) -> Option<&ChannelDrop> {
        let mut best: Option<&ChannelDrop> = None;
        for c in &self.channels {
            if best.is_none_or(|b| c.delta > b.delta) {
                best = Some(c);
            }
        }
        best
    }
}

/// Re-runs the model with each composite channel cleared and saturated at
/// full resolution; prior features are recomputed from the modified mask.
pub fn probability_drop(state: &ModelState, scene: &Scene) -> Result<MaskImportance> {
    state.ensure_trained()?;
    let eval = |c: &CompositeMask| -> Result<Vec<f64>> {
        let input = scene_input(&scene.features, c, scene.county, &state.taxonomy, DEFAULT_EPS)
            .map_err(|e| e.in_record(&scene.image_id))?;
        Ok(predict(state, &input)?.probs)
    };
    let probs = eval(&scene.composite)?;
    let (class, negative_predicted) = explained_class(&probs);
    let base = probs[class];
    let mut channels = Vec::with_capacity(scene.composite.channels());
    for k in 0..scene.composite.channels() {
        let removed = (base - eval(&scene.composite.with_channel_filled(k, false))?[class]).max(0.0);
        let saturated = (base - eval(&scene.composite.with_channel_filled(k, true))?[class]).max(0.0);
        channels.push(ChannelDrop {
            category: state.taxonomy.name(k).unwrap_or("?").to_string(),
            removed,
            saturated,
            delta: 0.5 * (removed + saturated),
        });
    }
    Ok(MaskImportance {
        image_id: scene.image_id.clone(),
        explained_class: CLASS_NAMES[class].to_string(),
        negative_predicted,
        probs,
        channels,
    })
}

/// Non-negative grid map normalized so its maximum is 1 (or all zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub image_id: String,
    pub explained_class: String,
    pub height: usize,
    pub width: usize,
    /// Row-major values in `[0, 1]`.
    pub values: Vec<f64>,
}

pub fn saliency_heatmap(state: &ModelState, scene: &Scene) -> Result<Heatmap> {
    state.ensure_trained()?;
    let input = scene.model_input(&state.taxonomy, DEFAULT_EPS)?;
    let cache = state.forward(&input)?;
    Ok(heatmap_from_cache(state, &cache, &scene.image_id))
}

pub fn heatmap_from_cache(state: &ModelState, cache: &ForwardCache, image_id: &str) -> Heatmap {
    let (class, _) = explained_class(cache.probs.as_slice().expect("contiguous"));
    let grad = logit_grad_wrt_fused(cache, &state.params, &state.config, class);
    let values = normalized_saliency(&grad, &cache.fused);
    Heatmap {
        image_id: image_id.to_string(),
        explained_class: CLASS_NAMES[class].to_string(),
        height: cache.height,
        width: cache.width,
        values,
    }
}

/// `Σ_d |G ⊙ E'|` per row, divided by the maximum.
pub fn normalized_saliency(grad: &Array2<f64>, fused: &Array2<f64>) -> Vec<f64> {
    let mut heat: Vec<f64> = grad
        .rows()
        .into_iter()
        .zip(fused.rows())
        .map(|(g, e)| g.iter().zip(e.iter()).map(|(a, b)| (a * b).abs()).sum())
        .collect();
    let max = heat.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        for v in &mut heat {
            *v /= max;
        }
    }
    heat
}

impl Heatmap {
    /// Binary PGM (P5), values scaled to 0..=255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut header = String::new();
        let _ = write!(header, "P5\n{} {}\n255\n", self.width, self.height);
        let mut out = header.into_bytes();
        out.extend(self.values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out
    }

    /// Writes `<dir>/<image_id>.pgm` and the float values as `<image_id>.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(format!("{}.pgm", self.image_id)), &self.to_pgm())?;
        write_atomic(
            &dir.join(format!("{}.json", self.image_id)),
            &serde_json::to_vec(self)?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;
    use crate::model::{ModelConfig, Params};
    use crate::priors::FeatureStandardizer;
    use crate::taxonomy::Taxonomy;
    use crate::tensor::FeatureTensor;
    use crate::Error;

    fn scene(barn_rows: usize) -> Scene {
        let mut c = CompositeMask::zeros(8, 8, 7);
        for y in 0..barn_rows {
            for x in 0..8 {
                c.set(y, x, 0, true);
            }
        }
        Scene {
            image_id: "s".into(),
            county_fips: "00000".into(),
            county: [0.25; 4],
            label: None,
            split: Split::Test,
            features: FeatureTensor::new(2, 2, 2, vec![0.5, -1.0, 0.25, 2.0, 1.0, 1.0, -0.5, 0.0]).unwrap(),
            composite: c,
        }
    }

    /// Only the barn-area prior slot reaches the poultry logit.
    fn barn_driven_state(flags: bool) -> ModelState {
        let cfg = ModelConfig {
            attn_dim: 2,
            hidden_dim: 2,
            pool_hidden: 2,
            ..ModelConfig::new(2, 7)
        }
        .with_flags(flags, flags, flags, flags);
        let mut p = Params::zeros(&cfg);
        if cfg.enable_pfv {
            p.w_head[[1, cfg.feature_dim]] = 4.0;
        }
        let std = FeatureStandardizer::identity(cfg.prior_dim);
        ModelState::from_parts(cfg, p, std, Taxonomy::default()).unwrap()
    }

    #[test]
    fn negative_argmax_is_flagged() {
        assert_eq!(explained_class(&[0.1, 0.2, 0.05, 0.05, 0.6]), (1, true));
        assert_eq!(explained_class(&[0.4, 0.4, 0.1, 0.05, 0.05]), (0, false));
    }

    #[test]
    fn one_hot_gradient_scores() {
        let s = importance_scores(&[1.0, 0.0, 0.0], &[2.0, -3.0, 5.0]);
        assert_eq!(s, vec![2.0, 0.0, 0.0]);
        assert!(importance_scores(&[1.0, -2.0], &[0.0, 0.0]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_is_weight_row() {
        let mut st = barn_driven_state(true);
        st.params.w_head[[1, 0]] = -0.375;
        let r = gradient_activation(&st, &scene(4)).unwrap();
        assert_eq!(r.explained_class, "poultry");
        assert_eq!(r.gradient, st.params.w_head.row(1).to_vec());
        assert_eq!(r.priors.len(), 12);
        assert_eq!(r.priors[0].name, "area_barn");
        assert!(r.scores.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn barn_channel_dominates_constructed_model() {
        let st = barn_driven_state(true);
        let sc = scene(4);
        let r = probability_drop(&st, &sc).unwrap();
        // direct evaluation with the barn channel cleared
        let cleared = scene_input(
            &sc.features,
            &sc.composite.with_channel_filled(0, false),
            sc.county,
            &st.taxonomy,
            DEFAULT_EPS,
        )
        .unwrap();
        let p0 = predict(&st, &cleared).unwrap().probs[1];
        assert_eq!(r.channels[0].removed, (r.probs[1] - p0).max(0.0));
        assert!(r.channels[0].removed > 0.0);
        assert_eq!(r.top_channel().unwrap().category, "barn");
        for c in &r.channels {
            assert!(c.delta >= 0.0);
            assert_eq!(c.delta, 0.5 * (c.removed + c.saturated));
        }
    }

    #[test]
    fn flags_off_model_ignores_mask() {
        let mut st = barn_driven_state(false);
        st.params.w_head[[2, 1]] = 1.5;
        let r = probability_drop(&st, &scene(3)).unwrap();
        assert!(r.channels.iter().all(|c| c.delta == 0.0));
    }

    #[test]
    fn unmodified_composite_matches_predict() {
        let st = barn_driven_state(true);
        let sc = scene(2);
        let r = probability_drop(&st, &sc).unwrap();
        let p = predict(&st, &sc.model_input(&st.taxonomy, DEFAULT_EPS).unwrap()).unwrap();
        assert_eq!(r.probs, p.probs);
    }

    #[test]
    fn untrained_model_refused() {
        let cfg = ModelConfig::new(2, 7);
        let st = ModelState::initialize(cfg, Taxonomy::default(), 0).unwrap();
        assert!(matches!(gradient_activation(&st, &scene(1)), Err(Error::UntrainedModel)));
        assert!(matches!(probability_drop(&st, &scene(1)), Err(Error::UntrainedModel)));
        assert!(matches!(saliency_heatmap(&st, &scene(1)), Err(Error::UntrainedModel)));
    }

    #[test]
    fn concentrated_pooling_peaks_at_its_cell() {
        use crate::model::{classify_forward, ModelInput};
        let cfg = ModelConfig {
            attn_dim: 2,
            hidden_dim: 2,
            pool_hidden: 1,
            ..ModelConfig::new(3, 7)
        }
        .with_flags(false, true, true, false);
        let mut p = Params::zeros(&cfg);
        // centre taps only: the pooling weight follows channel 0 of the mask
        p.w_pool1[[0, 4]] = 30.0;
        p.w_pool2[[0, 4]] = 1.0;
        p.b_pool2[0] = -10.0;
        p.w_head.row_mut(0).fill(1.0);
        let st = ModelState::from_parts(cfg, p, FeatureStandardizer::identity(cfg.prior_dim), Taxonomy::default())
            .unwrap();
        let mut mask = Array2::zeros((9, 7));
        mask[[4, 0]] = 1.0;
        let input = ModelInput {
            height: 3,
            width: 3,
            features: Array2::from_elem((9, 3), 1.0),
            mask,
            prior: vec![0.0; cfg.prior_dim],
        };
        let cache = classify_forward(&input, &st.params, &st.config).unwrap();
        let h = heatmap_from_cache(&st, &cache, "c");
        assert_eq!(h.values[4], 1.0);
        assert!(h.values.iter().enumerate().all(|(i, &v)| i == 4 || v < 1e-3));
    }

    #[test]
    fn zero_features_give_zero_map() {
        let g = Array2::from_elem((4, 2), 1.0);
        let e = Array2::zeros((4, 2));
        assert!(normalized_saliency(&g, &e).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saliency_scale_invariant() {
        let g = Array2::from_shape_vec((3, 2), vec![0.5, -1.0, 2.0, 0.0, 0.1, 0.1]).unwrap();
        let e = Array2::from_shape_vec((3, 2), vec![1.0, 1.0, -2.0, 3.0, 0.0, 4.0]).unwrap();
        let a = normalized_saliency(&g, &e);
        let b = normalized_saliency(&(&g * 0.5), &(&e * 2.0));
        assert_eq!(a, b);
        assert_eq!(a.iter().cloned().fold(0.0, f64::max), 1.0);
    }

    #[test]
    fn pgm_layout() {
        let h = Heatmap {
            image_id: "x".into(),
            explained_class: "swine".into(),
            height: 1,
            width: 2,
            values: vec![0.0, 1.0],
        };
        assert_eq!(h.to_pgm(), b"P5\n2 1\n255\n\x00\xff".to_vec());
    }
}
