//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use cafo_core::geometry::{DetectionBox, Functionals};
use cafo_core::mask::{BinaryMask, PixelRect};
use cafo_core::model::{loss_and_gradients, ModelConfig, ModelInput, Params};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random non-empty mask: scattered pixels, one rectangle or a union of
/// rectangles.
pub fn random_mask(rng: &mut ChaCha8Rng, w: u32, h: u32) -> BinaryMask {
    let kind = rng.random_range(0..3);
    let mut dense = vec![false; (w * h) as usize];
    match kind {
        0 => {
            let p = rng.random_range(0.02..0.9);
            for v in dense.iter_mut() {
                *v = rng.random_bool(p);
            }
        }
        _ => {
            let n = if kind == 1 { 1 } else { rng.random_range(2..5) };
            for _ in 0..n {
                let r = random_rect(rng, w, h);
                for y in r.y0..r.y1 {
                    for x in r.x0..r.x1 {
                        dense[(y * w + x) as usize] = true;
                    }
                }
            }
        }
    }
    let x = rng.random_range(0..w);
    let y = rng.random_range(0..h);
    dense[(y * w + x) as usize] = true;
    BinaryMask::from_dense(w, h, &dense).unwrap()
}

/// Random non-empty rectangle inside a `w × h` image.
pub fn random_rect(rng: &mut ChaCha8Rng, w: u32, h: u32) -> PixelRect {
    let x0 = rng.random_range(0..w);
    let y0 = rng.random_range(0..h);
    let x1 = rng.random_range(x0 + 1..=w);
    let y1 = rng.random_range(y0 + 1..=h);
    PixelRect::new(x0, y0, x1, y1)
}

/// Functionals by enumerating every pixel of the dense mask.
pub fn dense_functionals(mask: &BinaryMask, det: &DetectionBox) -> Functionals {
    let (w, h) = (mask.width(), mask.height());
    let dense = mask.to_dense();
    let (mut area, mut inside) = (0u64, 0u64);
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if !dense[(y * w + x) as usize] {
                continue;
            }
            area += 1;
            let r = det.rect;
            if x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1 {
                inside += 1;
            }
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
        }
    }
    let bbox = u64::from(x1 - x0) * u64::from(y1 - y0);
    let boxa = det.rect.area() as f64;
    Functionals {
        containment: inside as f64 / area as f64,
        coverage: inside as f64 / boxa,
        rectangularity: area as f64 / bbox as f64,
        relative_size: bbox as f64 / boxa,
    }
}

/// Symmetric Chamfer distance over all pixel pairs, `None` if either mask is
/// empty.
pub fn brute_chamfer(a: &BinaryMask, b: &BinaryMask) -> Option<f64> {
    let pa: Vec<(u32, u32)> = a.foreground().collect();
    let pb: Vec<(u32, u32)> = b.foreground().collect();
    if pa.is_empty() || pb.is_empty() {
        return None;
    }
    let directed = |from: &[(u32, u32)], to: &[(u32, u32)]| {
        from.iter()
            .map(|&(x, y)| {
                to.iter()
                    .map(|&(u, v)| {
                        let dx = f64::from(x) - f64::from(u);
                        let dy = f64::from(y) - f64::from(v);
                        (dx * dx + dy * dy).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / from.len() as f64
    };
    Some(0.5 * (directed(&pa, &pb) + directed(&pb, &pa)))
}

pub const FD_STEP: f64 = 1e-4;
/// Gradient magnitudes below this are compared in absolute terms.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

pub fn desk_config() -> ModelConfig {
    ModelConfig {
        attn_dim: 8,
        hidden_dim: 4,
        pool_hidden: 3,
        ..ModelConfig::new(8, 7)
    }
}

pub fn random_inputs(cfg: &ModelConfig, rng: &mut ChaCha8Rng, count: usize) -> Vec<(ModelInput, usize)> {
    (0..count)
        .map(|i| {
            let (h, w) = (4, 4);
            let n = h * w;
            let input = ModelInput {
                height: h,
                width: w,
                features: Array2::from_shape_fn((n, cfg.feature_dim), |_| rng.random_range(-1.0..1.0)),
                mask: Array2::from_shape_fn((n, cfg.categories), |_| {
                    if rng.random_bool(0.4) {
                        rng.random_range(0.0..1.0)
                    } else {
                        0.0
                    }
                }),
                prior: (0..cfg.prior_dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
            };
            (input, i % 5)
        })
        .collect()
}

fn batch_loss(batch: &[(ModelInput, usize)], p: &Params, cfg: &ModelConfig) -> f64 {
    let refs: Vec<_> = batch.iter().map(|(i, l)| (i, *l)).collect();
    loss_and_gradients(&refs, p, cfg).unwrap().0
}

/// Largest relative error between analytic and central-difference gradients
/// over every parameter entry, with a description of where it occurred.
pub fn max_relative_error(cfg: &ModelConfig, seed: u64) -> (f64, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::init(cfg, &mut rng);
    // non-zero biases so every path is exercised
    for (name, t) in params.tensors_mut() {
        if name.contains(".b") {
            for v in t.iter_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
    let batch = random_inputs(cfg, &mut rng, 3);
    let refs: Vec<_> = batch.iter().map(|(i, l)| (i, *l)).collect();
    let (_, analytic) = loss_and_gradients(&refs, &params, cfg).unwrap();

    let mut worst = (0.0f64, String::new());
    let names: Vec<&str> = params.tensors().iter().map(|(n, _)| *n).collect();
    for (ti, name) in names.iter().enumerate() {
        let len = params.tensors()[ti].1.len();
        for j in 0..len {
            let orig = params.tensors()[ti].1[j];
            params.tensors_mut()[ti].1[j] = orig + FD_STEP;
            let up = batch_loss(&batch, &params, cfg);
            params.tensors_mut()[ti].1[j] = orig - FD_STEP;
            let down = batch_loss(&batch, &params, cfg);
            params.tensors_mut()[ti].1[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.tensors()[ti].1[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{j}] analytic {a:e} numeric {numeric:e}"));
            }
        }
    }
    worst
}

/// Uniform average over grid rows followed by `W h + b`, written out
/// independently of the library.
pub fn gap_linear_logits(features: &Array2<f64>, w: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let n = features.nrows();
    let h: Vec<f64> = (0..features.ncols())
        .map(|j| {
            let mut acc = 0.0;
            for i in 0..n {
                acc += features[[i, j]];
            }
            acc / n as f64
        })
        .collect();
    (0..w.nrows())
        .map(|c| {
            let mut acc = 0.0;
            for (j, hj) in h.iter().enumerate() {
                acc += w[[c, j]] * hj;
            }
            acc + b[c]
        })
        .collect()
}

/// Relative path → contents of every file under `dir`.
pub fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
