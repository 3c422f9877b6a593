use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::conv::conv3x3_forward;
use super::{ModelConfig, Params};
use crate::error::{Error, Result};

/// One sample on the feature grid: backbone features `E` (`N × D`), the
/// resized mask `C'` (`N × K`) and the standardized prior vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub height: usize,
    pub width: usize,
    pub features: Array2<f64>,
    pub mask: Array2<f64>,
    pub prior: Vec<f64>,
}

impl ModelInput {
    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let n = self.positions();
        if n == 0 {
            return Err(Error::ShapeMismatch("empty feature grid".into()));
        }
        if self.features.dim() != (n, cfg.feature_dim) {
            return Err(Error::ShapeMismatch(format!(
                "features {:?}, expected ({n}, {})",
                self.features.dim(),
                cfg.feature_dim
            )));
        }
        if self.mask.dim() != (n, cfg.categories) {
            return Err(Error::ShapeMismatch(format!(
                "mask {:?}, expected ({n}, {})",
                self.mask.dim(),
                cfg.categories
            )));
        }
        if cfg.enable_pfv && self.prior.len() != cfg.prior_dim {
            return Err(Error::ShapeMismatch(format!(
                "prior vector has {} entries, expected {}",
                self.prior.len(),
                cfg.prior_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MgsaCache {
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub value: Array2<f64>,
    /// Row-stochastic `N × N` attention.
    pub attention: Array2<f64>,
    pub attended: Array2<f64>,
    pub hidden_pre: Array2<f64>,
    pub hidden: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct MapCache {
    pub cols1: Array2<f64>,
    pub pre1: Array2<f64>,
    pub act1: Array2<f64>,
    pub cols2: Array2<f64>,
    /// Spatial attention map, length `N`, values in `(0, 1)`.
    pub attention: Array1<f64>,
    pub weight_sum: f64,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub height: usize,
    pub width: usize,
    /// Mask actually fed to the network (all-ones when SIM is disabled).
    pub mask: Array2<f64>,
    pub mgsa: Option<MgsaCache>,
    /// Fused features `E'`.
    pub fused: Array2<f64>,
    pub map: Option<MapCache>,
    pub pooled: Array1<f64>,
    pub head_input: Array1<f64>,
    pub logits: Array1<f64>,
    pub probs: Array1<f64>,
}

fn relu(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| v.max(0.0))
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Mask-guided spatial attention: `E' = W_o(softmax(QKᵀ/√d_a)·V) + E`.
pub fn mgsa_forward(
    features: ArrayView2<f64>,
    mask: ArrayView2<f64>,
    p: &Params,
    cfg: &ModelConfig,
) -> Result<(Array2<f64>, MgsaCache)> {
    if features.nrows() != mask.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "features have {} positions, mask has {}",
            features.nrows(),
            mask.nrows()
        )));
    }
    let query = features.dot(&p.w_q.t()) + &p.b_q;
    let key = mask.dot(&p.w_k.t()) + &p.b_k;
    let value = mask.dot(&p.w_v.t()) + &p.b_v;
    let mut attention = query.dot(&key.t()) / (cfg.attn_dim as f64).sqrt();
    softmax_rows(&mut attention);
    let attended = attention.dot(&value);
    let hidden_pre = attended.dot(&p.w_o1.t()) + &p.b_o1;
    let hidden = relu(&hidden_pre);
    let fused = hidden.dot(&p.w_o2.t()) + &p.b_o2 + features;
    Ok((
        fused,
        MgsaCache {
            query,
            key,
            value,
            attention,
            attended,
            hidden_pre,
            hidden,
        },
    ))
}

/// Mask attention pooling: `z = Σ a·E' / (Σ a + eps)` with
/// `a = sigmoid(conv(ReLU(conv(C'))))`.
pub fn map_forward(
    fused: ArrayView2<f64>,
    mask: ArrayView2<f64>,
    height: usize,
    width: usize,
    p: &Params,
    eps: f64,
) -> Result<(Array1<f64>, MapCache)> {
    let n = height * width;
    if fused.nrows() != n || mask.nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "grid {height}x{width} vs {} feature rows and {} mask rows",
            fused.nrows(),
            mask.nrows()
        )));
    }
    let (pre1, cols1) = conv3x3_forward(mask, height, width, &p.w_pool1, &p.b_pool1);
    let act1 = relu(&pre1);
    let (pre2, cols2) = conv3x3_forward(act1.view(), height, width, &p.w_pool2, &p.b_pool2);
    let attention: Array1<f64> = pre2.column(0).mapv(sigmoid);

    let mut weight_sum = 0.0;
    for &a in attention.iter() {
        weight_sum += a;
    }
    let denom = weight_sum + eps;
    let d = fused.ncols();
    let mut pooled = Array1::zeros(d);
    for (j, out) in pooled.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in 0..n {
            acc += attention[i] * fused[[i, j]];
        }
        *out = acc / denom;
    }
    Ok((
        pooled,
        MapCache {
            cols1,
            pre1,
            act1,
            cols2,
            attention,
            weight_sum,
        },
    ))
}

/// Uniform global average pooling over grid positions.
pub(crate) fn global_average(fused: ArrayView2<f64>) -> Array1<f64> {
    let n = fused.nrows() as f64;
    let mut out = Array1::zeros(fused.ncols());
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in 0..fused.nrows() {
            acc += fused[[i, j]];
        }
        *o = acc / n;
    }
    out
}

/// `y_c = Σ_j W[c, j]·h_j + b_c`.
pub(crate) fn linear_head(w: &Array2<f64>, b: &Array1<f64>, h: &Array1<f64>) -> Array1<f64> {
    let mut y = Array1::zeros(w.nrows());
    for (c, out) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..h.len() {
            acc += w[[c, j]] * h[j];
        }
        *out = acc + b[c];
    }
    y
}

/// Full forward pass honouring the ablation flags.
pub fn classify_forward(input: &ModelInput, p: &Params, cfg: &ModelConfig) -> Result<ForwardCache> {
    p.check_shapes(cfg)?;
    input.check(cfg)?;
    let (h, w) = (input.height, input.width);
    let mask = if cfg.enable_sim {
        input.mask.clone()
    } else {
        Array2::ones(input.mask.raw_dim())
    };

    let (fused, mgsa) = if cfg.enable_mgsa {
        let (f, c) = mgsa_forward(input.features.view(), mask.view(), p, cfg)?;
        (f, Some(c))
    } else {
        (input.features.clone(), None)
    };

    let (pooled, map) = if cfg.enable_map {
        let (z, c) = map_forward(fused.view(), mask.view(), h, w, p, cfg.eps)?;
        (z, Some(c))
    } else {
        (global_average(fused.view()), None)
    };

    let head_input = if cfg.enable_pfv {
        ndarray::concatenate(Axis(0), &[pooled.view(), ndarray::aview1(&input.prior)])
            .expect("1-d concatenation")
    } else {
        pooled.clone()
    };
    let logits = linear_head(&p.w_head, &p.b_head, &head_input);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss("logits".into()));
    }
    let probs = Array1::from(softmax(logits.as_slice().expect("contiguous")));

    Ok(ForwardCache {
        height: h,
        width: w,
        mask,
        mgsa,
        fused,
        map,
        pooled,
        head_input,
        logits,
        probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ModelConfig {
        let mut c = ModelConfig::new(1, 1);
        c.attn_dim = 1;
        c.hidden_dim = 1;
        c.pool_hidden = 1;
        c
    }

    #[test]
    fn zero_query_gives_uniform_rows() {
        let cfg = ModelConfig {
            attn_dim: 3,
            hidden_dim: 2,
            ..ModelConfig::new(2, 2)
        };
        let mut p = Params::zeros(&cfg);
        p.w_k.fill(0.7);
        p.w_v[[0, 0]] = 1.0;
        p.w_v[[1, 1]] = -2.0;
        let e = Array2::from_shape_fn((4, 2), |(i, j)| (i + j) as f64);
        let m = Array2::from_shape_fn((4, 2), |(i, j)| ((i + j) % 2) as f64);
        let (_, cache) = mgsa_forward(e.view(), m.view(), &p, &cfg).unwrap();
        assert!(cache.attention.iter().all(|&a| (a - 0.25).abs() < 1e-15));
        let mean_v = cache.value.mean_axis(Axis(0)).unwrap();
        for row in cache.attended.rows() {
            for (a, b) in row.iter().zip(mean_v.iter()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn scalar_attention_by_hand() {
        // H'=W'=2, D=K=d_a=1, all weights 1, biases 0
        let cfg = tiny_cfg();
        let mut p = Params::zeros(&cfg);
        for w in [&mut p.w_q, &mut p.w_k, &mut p.w_v, &mut p.w_o1, &mut p.w_o2] {
            w.fill(1.0);
        }
        let e = Array2::from_shape_vec((4, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = Array2::from_shape_vec((4, 1), vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let (fused, _) = mgsa_forward(e.view(), m.view(), &p, &cfg).unwrap();

        // q_i = e_i, k = v = m; s_ij = e_i * m_j; o_i = softmax(s_i)·m; E' = relu(o) + e
        for i in 0..4 {
            let ei = e[[i, 0]];
            let o = ei.exp() / (ei.exp() + 3.0);
            let expect = o.max(0.0) + ei;
            assert!((fused[[i, 0]] - expect).abs() < 1e-14, "{i}");
        }
    }

    #[test]
    fn zero_output_layer_is_residual_identity() {
        let cfg = ModelConfig {
            attn_dim: 4,
            hidden_dim: 3,
            ..ModelConfig::new(3, 2)
        };
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
        let mut p = Params::init(&cfg, &mut rng);
        p.w_o2.fill(0.0);
        p.b_o2.fill(0.0);
        let e = Array2::from_shape_fn((6, 3), |(i, j)| (i as f64 - j as f64) * 0.37);
        let m = Array2::from_shape_fn((6, 2), |(i, j)| ((i * j) % 2) as f64);
        let (fused, _) = mgsa_forward(e.view(), m.view(), &p, &cfg).unwrap();
        assert_eq!(fused, e);
    }

    #[test]
    fn constant_attention_map_is_gap() {
        let cfg = ModelConfig::new(2, 3);
        let p = Params::zeros(&cfg);
        let e = Array2::from_shape_fn((6, 2), |(i, j)| (i * 2 + j) as f64);
        let m = Array2::zeros((6, 3));
        let (z, cache) = map_forward(e.view(), m.view(), 2, 3, &p, 1e-6).unwrap();
        assert!(cache.attention.iter().all(|&a| a == 0.5));
        let gap = global_average(e.view());
        let bound = 1e-6 * 11.0 / 3.0;
        for (a, b) in z.iter().zip(gap.iter()) {
            assert!((a - b).abs() <= bound);
        }
    }

    #[test]
    fn zero_head_is_uniform() {
        let cfg = ModelConfig::new(4, 7);
        let p = Params::zeros(&cfg);
        let input = ModelInput {
            height: 2,
            width: 2,
            features: Array2::ones((4, 4)),
            mask: Array2::zeros((4, 7)),
            prior: vec![0.3; 12],
        };
        let out = classify_forward(&input, &p, &cfg).unwrap();
        assert!(out.probs.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn head_dimension_must_match_flags() {
        let cfg = ModelConfig::new(4, 7);
        let p = Params::zeros(&cfg.with_flags(true, true, true, false));
        let input = ModelInput {
            height: 1,
            width: 1,
            features: Array2::ones((1, 4)),
            mask: Array2::zeros((1, 7)),
            prior: vec![0.0; 12],
        };
        assert!(matches!(
            classify_forward(&input, &p, &cfg),
            Err(Error::ConfigMismatch(_))
        ));
    }
}
