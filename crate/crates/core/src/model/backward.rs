//! Analytic gradients of the mean cross-entropy loss.

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;

use super::conv::conv3x3_backward;
use super::forward::{classify_forward, ForwardCache, ModelInput};
use super::{ModelConfig, Params};
use crate::error::{Error, Result};
use crate::taxonomy::NUM_CLASSES;

fn cross_entropy(logits: &Array1<f64>, label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    lse - logits[label]
}

/// Backpropagates `dlogits` through the cached forward pass, accumulating
/// parameter gradients into `grads`.
pub fn backward(
    cache: &ForwardCache,
    input: &ModelInput,
    dlogits: &Array1<f64>,
    p: &Params,
    cfg: &ModelConfig,
    grads: &mut Params,
) {
    let d = cfg.feature_dim;
    let n = cache.height * cache.width;

    // head
    for c in 0..dlogits.len() {
        for j in 0..cache.head_input.len() {
            grads.w_head[[c, j]] += dlogits[c] * cache.head_input[j];
        }
        grads.b_head[c] += dlogits[c];
    }
    let dhead = p.w_head.t().dot(dlogits);
    let dpooled = dhead.slice(ndarray::s![..d]);

    // pooling
    let dfused = match &cache.map {
        Some(map) => {
            let denom = map.weight_sum + cfg.eps;
            let mut dfused = Array2::zeros((n, d));
            let mut dpre2 = Array2::zeros((n, 1));
            for i in 0..n {
                let a = map.attention[i];
                let mut da = 0.0;
                for j in 0..d {
                    dfused[[i, j]] = a * dpooled[j] / denom;
                    da += dpooled[j] * (cache.fused[[i, j]] - cache.pooled[j]);
                }
                da /= denom;
                dpre2[[i, 0]] = da * a * (1.0 - a);
            }
            let dact1 = conv3x3_backward(
                dpre2.view(),
                &map.cols2,
                &p.w_pool2,
                cache.height,
                cache.width,
                &mut grads.w_pool2,
                &mut grads.b_pool2,
                true,
            )
            .expect("input gradient requested");
            let dpre1 = dact1 * map.pre1.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            conv3x3_backward(
                dpre1.view(),
                &map.cols1,
                &p.w_pool1,
                cache.height,
                cache.width,
                &mut grads.w_pool1,
                &mut grads.b_pool1,
                false,
            );
            dfused
        }
        None => {
            let row = dpooled.mapv(|v| v / n as f64);
            row.broadcast((n, d)).expect("row broadcast").to_owned()
        }
    };

    // spatial attention
    if let Some(m) = &cache.mgsa {
        let dout = &dfused;
        grads.w_o2 += &dout.t().dot(&m.hidden);
        grads.b_o2 += &dout.sum_axis(Axis(0));
        let dhidden = dout.dot(&p.w_o2);
        let dhidden_pre = dhidden * m.hidden_pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        grads.w_o1 += &dhidden_pre.t().dot(&m.attended);
        grads.b_o1 += &dhidden_pre.sum_axis(Axis(0));
        let dattended = dhidden_pre.dot(&p.w_o1);

        let dattn = dattended.dot(&m.value.t());
        let dvalue = m.attention.t().dot(&dattended);
        // softmax rows: dS = A ⊙ (dA − rowsum(dA ⊙ A))
        let row_dot = (&dattn * &m.attention).sum_axis(Axis(1)).insert_axis(Axis(1));
        let dscores = &m.attention * &(dattn - &row_dot);
        let scale = 1.0 / (cfg.attn_dim as f64).sqrt();
        let dquery = dscores.dot(&m.key) * scale;
        let dkey = dscores.t().dot(&m.query) * scale;

        grads.w_q += &dquery.t().dot(&input.features);
        grads.b_q += &dquery.sum_axis(Axis(0));
        grads.w_k += &dkey.t().dot(&cache.mask);
        grads.b_k += &dkey.sum_axis(Axis(0));
        grads.w_v += &dvalue.t().dot(&cache.mask);
        grads.b_v += &dvalue.sum_axis(Axis(0));
    }
}

/// `∂ŷ_class / ∂E'`, an `N × D` map.
pub fn logit_grad_wrt_fused(
    cache: &ForwardCache,
    p: &Params,
    cfg: &ModelConfig,
    class: usize,
) -> Array2<f64> {
    let d = cfg.feature_dim;
    let n = cache.height * cache.width;
    let row = p.w_head.row(class);
    Array2::from_shape_fn((n, d), |(i, j)| match &cache.map {
        Some(map) => map.attention[i] * row[j] / (map.weight_sum + cfg.eps),
        None => row[j] / n as f64,
    })
}

/// Mean cross-entropy over `batch` and its gradient for every parameter.
///
/// Per-sample gradients are computed in parallel and summed in batch order,
/// so the result does not depend on the thread count.
pub fn loss_and_gradients(
    batch: &[(&ModelInput, usize)],
    p: &Params,
    cfg: &ModelConfig,
) -> Result<(f64, Params)> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let per_sample: Vec<Result<(f64, Params)>> = batch
        .par_iter()
        .map(|&(input, label)| {
            if label >= NUM_CLASSES {
                return Err(Error::invalid(format!("label {label} out of range")));
            }
            let cache = classify_forward(input, p, cfg)?;
            let loss = cross_entropy(&cache.logits, label);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(format!("loss {loss}")));
            }
            let mut dlogits = cache.probs.clone();
            dlogits[label] -= 1.0;
            dlogits *= scale;
            let mut g = p.zeros_like();
            backward(&cache, input, &dlogits, p, cfg, &mut g);
            Ok((loss, g))
        })
        .collect();

    let mut total = 0.0;
    let mut grads = p.zeros_like();
    for r in per_sample {
        let (loss, g) = r?;
        total += loss;
        grads.add_assign(&g);
    }
    if !grads.is_finite() {
        return Err(Error::NonFiniteLoss("gradient".into()));
    }
    Ok((total * scale, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_state_bias_gradient() {
        let cfg = ModelConfig::new(3, 7);
        let p = Params::zeros(&cfg);
        let input = ModelInput {
            height: 2,
            width: 2,
            features: Array2::from_elem((4, 3), 0.5),
            mask: Array2::zeros((4, 7)),
            prior: vec![0.1; 12],
        };
        let (loss, g) = loss_and_gradients(&[(&input, 2)], &p, &cfg).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
        let expect = [0.2, 0.2, -0.8, 0.2, 0.2];
        for (a, b) in g.b_head.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_label() {
        let cfg = ModelConfig::new(3, 7);
        let p = Params::zeros(&cfg);
        let input = ModelInput {
            height: 1,
            width: 1,
            features: Array2::zeros((1, 3)),
            mask: Array2::zeros((1, 7)),
            prior: vec![0.0; 12],
        };
        assert!(loss_and_gradients(&[(&input, 5)], &p, &cfg).is_err());
    }
}
