//! Mask-guided attention classifier head over precomputed backbone features.
//!
//! Pipeline per sample, with `N = H'·W'` grid positions:
//! mask-guided spatial attention (queries from features, keys/values from the
//! resized composite mask, residual fusion), mask attention pooling (3×3 conv
//! → ReLU → 3×3 conv → sigmoid, weighted average), concatenation with the
//! standardized prior vector and a linear softmax head.

mod backward;
mod conv;
mod forward;
mod persist;
mod train;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priors::FeatureStandardizer;
use crate::taxonomy::{Taxonomy, NUM_CLASSES};

pub use backward::{backward, logit_grad_wrt_fused, loss_and_gradients};
pub use conv::{conv3x3_backward, conv3x3_forward};
pub use forward::{
    classify_forward, map_forward, mgsa_forward, ForwardCache, MapCache, MgsaCache, ModelInput,
};
pub use train::{evaluate_split, predict, train, Prediction, TrainConfig, TrainReport, TrainingExample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub enable_mgsa: bool,
    pub enable_map: bool,
    pub enable_sim: bool,
    pub enable_pfv: bool,
    /// Backbone channel count `D`.
    pub feature_dim: usize,
    /// Mask channel count `K`.
    pub categories: usize,
    /// Attention dimension `d_a`.
    pub attn_dim: usize,
    /// Hidden width of the output bottleneck.
    pub hidden_dim: usize,
    /// Hidden channels of the pooling subnetwork.
    pub pool_hidden: usize,
    /// Length of the prior feature vector.
    pub prior_dim: usize,
    pub eps: f64,
}

impl ModelConfig {
    /// Default sizes for a `D`-channel backbone and `K` mask channels.
    pub fn new(feature_dim: usize, categories: usize) -> Self {
        Self {
            enable_mgsa: true,
            enable_map: true,
            enable_sim: true,
            enable_pfv: true,
            feature_dim,
            categories,
            attn_dim: 64,
            hidden_dim: (feature_dim / 2).max(8),
            pool_hidden: 16,
            prior_dim: categories + 5,
            eps: 1e-6,
        }
    }

    pub fn with_flags(mut self, mgsa: bool, map: bool, sim: bool, pfv: bool) -> Self {
        self.enable_mgsa = mgsa;
        self.enable_map = map;
        self.enable_sim = sim;
        self.enable_pfv = pfv;
        self
    }

    pub fn head_input_dim(&self) -> usize {
        self.feature_dim + if self.enable_pfv { self.prior_dim } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("feature_dim", self.feature_dim),
            ("categories", self.categories),
            ("attn_dim", self.attn_dim),
            ("hidden_dim", self.hidden_dim),
            ("pool_hidden", self.pool_hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::ConfigMismatch(format!("{name} must be >= 1")));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::ConfigMismatch("eps must be positive".into()));
        }
        Ok(())
    }
}

/// Every trainable tensor. Conv kernels are `out × (in·9)` with column index
/// `c·9 + ky·3 + kx`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub w_q: Array2<f64>,
    pub b_q: Array1<f64>,
    pub w_k: Array2<f64>,
    pub b_k: Array1<f64>,
    pub w_v: Array2<f64>,
    pub b_v: Array1<f64>,
    pub w_o1: Array2<f64>,
    pub b_o1: Array1<f64>,
    pub w_o2: Array2<f64>,
    pub b_o2: Array1<f64>,
    pub w_pool1: Array2<f64>,
    pub b_pool1: Array1<f64>,
    pub w_pool2: Array2<f64>,
    pub b_pool2: Array1<f64>,
    pub w_head: Array2<f64>,
    pub b_head: Array1<f64>,
}

pub const PARAM_NAMES: [&str; 16] = [
    "mgsa.w_q",
    "mgsa.b_q",
    "mgsa.w_k",
    "mgsa.b_k",
    "mgsa.w_v",
    "mgsa.b_v",
    "mgsa.w_o1",
    "mgsa.b_o1",
    "mgsa.w_o2",
    "mgsa.b_o2",
    "map.w_1",
    "map.b_1",
    "map.w_2",
    "map.b_2",
    "head.w",
    "head.b",
];

impl Params {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (d, k, da, dh, hp) = (
            cfg.feature_dim,
            cfg.categories,
            cfg.attn_dim,
            cfg.hidden_dim,
            cfg.pool_hidden,
        );
        Self {
            w_q: Array2::zeros((da, d)),
            b_q: Array1::zeros(da),
            w_k: Array2::zeros((da, k)),
            b_k: Array1::zeros(da),
            w_v: Array2::zeros((d, k)),
            b_v: Array1::zeros(d),
            w_o1: Array2::zeros((dh, d)),
            b_o1: Array1::zeros(dh),
            w_o2: Array2::zeros((d, dh)),
            b_o2: Array1::zeros(d),
            w_pool1: Array2::zeros((hp, k * 9)),
            b_pool1: Array1::zeros(hp),
            w_pool2: Array2::zeros((1, hp * 9)),
            b_pool2: Array1::zeros(1),
            w_head: Array2::zeros((NUM_CLASSES, cfg.head_input_dim())),
            b_head: Array1::zeros(NUM_CLASSES),
        }
    }

    /// Kaiming-uniform weights (`bound = sqrt(6 / fan_in)`), zero biases.
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(cfg);
        for w in [
            &mut p.w_q,
            &mut p.w_k,
            &mut p.w_v,
            &mut p.w_o1,
            &mut p.w_o2,
            &mut p.w_pool1,
            &mut p.w_pool2,
            &mut p.w_head,
        ] {
            let bound = (6.0 / w.ncols() as f64).sqrt();
            w.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 16] {
        [
            (PARAM_NAMES[0], slice2(&self.w_q)),
            (PARAM_NAMES[1], slice1(&self.b_q)),
            (PARAM_NAMES[2], slice2(&self.w_k)),
            (PARAM_NAMES[3], slice1(&self.b_k)),
            (PARAM_NAMES[4], slice2(&self.w_v)),
            (PARAM_NAMES[5], slice1(&self.b_v)),
            (PARAM_NAMES[6], slice2(&self.w_o1)),
            (PARAM_NAMES[7], slice1(&self.b_o1)),
            (PARAM_NAMES[8], slice2(&self.w_o2)),
            (PARAM_NAMES[9], slice1(&self.b_o2)),
            (PARAM_NAMES[10], slice2(&self.w_pool1)),
            (PARAM_NAMES[11], slice1(&self.b_pool1)),
            (PARAM_NAMES[12], slice2(&self.w_pool2)),
            (PARAM_NAMES[13], slice1(&self.b_pool2)),
            (PARAM_NAMES[14], slice2(&self.w_head)),
            (PARAM_NAMES[15], slice1(&self.b_head)),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 16] {
        [
            (PARAM_NAMES[0], slice2_mut(&mut self.w_q)),
            (PARAM_NAMES[1], slice1_mut(&mut self.b_q)),
            (PARAM_NAMES[2], slice2_mut(&mut self.w_k)),
            (PARAM_NAMES[3], slice1_mut(&mut self.b_k)),
            (PARAM_NAMES[4], slice2_mut(&mut self.w_v)),
            (PARAM_NAMES[5], slice1_mut(&mut self.b_v)),
            (PARAM_NAMES[6], slice2_mut(&mut self.w_o1)),
            (PARAM_NAMES[7], slice1_mut(&mut self.b_o1)),
            (PARAM_NAMES[8], slice2_mut(&mut self.w_o2)),
            (PARAM_NAMES[9], slice1_mut(&mut self.b_o2)),
            (PARAM_NAMES[10], slice2_mut(&mut self.w_pool1)),
            (PARAM_NAMES[11], slice1_mut(&mut self.b_pool1)),
            (PARAM_NAMES[12], slice2_mut(&mut self.w_pool2)),
            (PARAM_NAMES[13], slice1_mut(&mut self.b_pool2)),
            (PARAM_NAMES[14], slice2_mut(&mut self.w_head)),
            (PARAM_NAMES[15], slice1_mut(&mut self.b_head)),
        ]
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Params) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let expect = Self::zeros(cfg);
        for ((name, a), (_, b)) in self.tensors().iter().zip(expect.tensors()) {
            if a.len() != b.len() {
                return Err(Error::ConfigMismatch(format!(
                    "{name} has {} values, configuration implies {}",
                    a.len(),
                    b.len()
                )));
            }
        }
        if self.w_head.ncols() != cfg.head_input_dim() {
            return Err(Error::ConfigMismatch(format!(
                "head expects {} inputs, flags imply {}",
                self.w_head.ncols(),
                cfg.head_input_dim()
            )));
        }
        Ok(())
    }
}

fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("owned arrays are contiguous")
}

fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("owned arrays are contiguous")
}

fn slice1_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("owned arrays are contiguous")
}

fn slice2_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("owned arrays are contiguous")
}

/// Trained (or hand-assembled) model plus the prior standardizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: Params,
    pub standardizer: FeatureStandardizer,
    pub taxonomy: Taxonomy,
    pub trained: bool,
}

impl ModelState {
    /// Freshly initialised, untrained state.
    pub fn initialize(config: ModelConfig, taxonomy: Taxonomy, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            params: Params::init(&config, &mut rng),
            standardizer: FeatureStandardizer::identity(config.prior_dim),
            config,
            taxonomy,
            trained: false,
        })
    }

    /// Assembles a ready-to-use state from explicit parts.
    pub fn from_parts(
        config: ModelConfig,
        params: Params,
        standardizer: FeatureStandardizer,
        taxonomy: Taxonomy,
    ) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        if standardizer.dim() != config.prior_dim {
            return Err(Error::ConfigMismatch(format!(
                "standardizer has {} dims, prior vector has {}",
                standardizer.dim(),
                config.prior_dim
            )));
        }
        if taxonomy.len() != config.categories {
            return Err(Error::ConfigMismatch(format!(
                "taxonomy has {} categories, model has {}",
                taxonomy.len(),
                config.categories
            )));
        }
        Ok(Self {
            config,
            params,
            standardizer,
            taxonomy,
            trained: true,
        })
    }

    pub fn ensure_trained(&self) -> Result<()> {
        if self.trained {
            Ok(())
        } else {
            Err(Error::UntrainedModel)
        }
    }
}
