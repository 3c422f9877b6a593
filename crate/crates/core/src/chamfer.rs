//! Exact Euclidean distance transform and symmetric Chamfer distance.

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Squared distance from every pixel to the nearest foreground pixel of
/// `mask`, row-major. `None` when the mask is empty.
///
/// Two-pass lower-envelope transform (Felzenszwalb–Huttenlocher). All
/// intermediate values are integers well inside the `f64` mantissa, so the
/// result is exact.
pub fn squared_edt(mask: &BinaryMask) -> Option<Vec<f64>> {
    if mask.is_empty() {
        return None;
    }
    let w = mask.width() as usize;
    let h = mask.height() as usize;
    let inf = ((w * w + h * h) as f64) * 4.0 + 1.0;
    let dense = mask.to_dense();
    let mut grid: Vec<f64> = dense.iter().map(|&b| if b { 0.0 } else { inf }).collect();

    let mut buf = vec![0.0; w.max(h)];
    let mut out = vec![0.0; w.max(h)];
    let mut scratch = Envelope::new(w.max(h));

    // columns
    for x in 0..w {
        for y in 0..h {
            buf[y] = grid[y * w + x];
        }
        scratch.transform(&buf[..h], &mut out[..h]);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    // rows
    for y in 0..h {
        buf[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        scratch.transform(&buf[..w], &mut out[..w]);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    Some(grid)
}

struct Envelope {
    v: Vec<usize>,
    z: Vec<f64>,
}

impl Envelope {
    fn new(n: usize) -> Self {
        Self {
            v: vec![0; n],
            z: vec![0.0; n + 1],
        }
    }

    /// 1-D squared distance transform of sampled function `f`.
    fn transform(&mut self, f: &[f64], d: &mut [f64]) {
        let n = f.len();
        let (v, z) = (&mut self.v, &mut self.z);
        let mut k = 0usize;
        v[0] = 0;
        z[0] = f64::NEG_INFINITY;
        z[1] = f64::INFINITY;
        let meet = |q: usize, p: usize| {
            let (qf, pf) = (q as f64, p as f64);
            ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf)
        };
        for q in 1..n {
            // z[0] = -inf bounds the backtracking
            let mut s = meet(q, v[k]);
            while s <= z[k] {
                k -= 1;
                s = meet(q, v[k]);
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
        }
        k = 0;
        for (q, dq) in d.iter_mut().enumerate().take(n) {
            let qf = q as f64;
            while z[k + 1] < qf {
                k += 1;
            }
            let p = v[k] as f64;
            *dq = (qf - p) * (qf - p) + f[v[k]];
        }
    }
}

fn directed_mean(from: &BinaryMask, dist_to: &[f64]) -> f64 {
    let w = from.width() as usize;
    let (sum, n) = from
        .foreground()
        .map(|(x, y)| dist_to[y as usize * w + x as usize].sqrt())
        .fold((0.0, 0u64), |(s, n), d| (s + d, n + 1));
    sum / n as f64
}

/// Symmetric Chamfer distance in pixels, `None` when either mask is empty.
pub fn raw_chamfer(a: &BinaryMask, b: &BinaryMask) -> Result<Option<f64>> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", a.height(), a.width()),
            actual: format!("{}x{}", b.height(), b.width()),
        });
    }
    let (Some(to_a), Some(to_b)) = (squared_edt(a), squared_edt(b)) else {
        return Ok(None);
    };
    Ok(Some(0.5 * (directed_mean(a, &to_b) + directed_mean(b, &to_a))))
}

/// Symmetric Chamfer distance divided by the image diagonal; 1.0 when either
/// mask is empty.
pub fn chamfer_distance(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let raw = raw_chamfer(a, b)?;
    let (w, h) = (f64::from(a.width()), f64::from(a.height()));
    Ok(raw.map_or(1.0, |d| d / (w * w + h * h).sqrt()))
}
