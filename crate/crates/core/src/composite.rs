//! Per-category composite masks and their area-average resampling onto the
//! feature grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Candidate;
use crate::mask::{BinaryMask, CocoRle};
use crate::taxonomy::Taxonomy;

/// `H × W × K` binary tensor; channel `k` is the union of accepted masks of
/// category `k`. Stored channel-last, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositeMask {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

impl CompositeMask {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, y: usize, x: usize, k: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + k]
    }

    pub fn set(&mut self, y: usize, x: usize, k: usize, v: bool) {
        self.data[(y * self.width + x) * self.channels + k] = u8::from(v);
    }

    /// Foreground pixel count of channel `k`.
    pub fn channel_sum(&self, k: usize) -> u64 {
        self.data
            .iter()
            .skip(k)
            .step_by(self.channels)
            .map(|&v| u64::from(v))
            .sum()
    }

    /// Copy with channel `k` forced to all-zeros or all-ones.
    pub fn with_channel_filled(&self, k: usize, value: bool) -> Self {
        let mut out = self.clone();
        for v in out.data.iter_mut().skip(k).step_by(self.channels) {
            *v = u8::from(value);
        }
        out
    }

    pub fn channel_mask(&self, k: usize) -> Result<BinaryMask> {
        BinaryMask::from_fn(self.width as u32, self.height as u32, |x, y| {
            self.get(y as usize, x as usize, k) != 0
        })
    }

    /// Channel-last values as `f64`.
    pub fn to_soft(&self) -> SoftMask {
        SoftMask {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }

    pub fn to_record(&self, image_id: &str, taxonomy: &Taxonomy) -> Result<CompositeRecord> {
        let channels = (0..self.channels)
            .map(|k| {
                Ok(CompositeChannel {
                    category_id: k,
                    name: taxonomy.name(k).unwrap_or("").to_string(),
                    rle: self.channel_mask(k)?.to_coco(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(CompositeRecord {
            image_id: image_id.to_string(),
            size: [self.height as u32, self.width as u32],
            channels,
        })
    }

    pub fn from_record(rec: &CompositeRecord) -> Result<Self> {
        let [h, w] = rec.size;
        let k = rec.channels.len();
        let mut out = Self::zeros(h as usize, w as usize, k);
        for (slot, ch) in rec.channels.iter().enumerate() {
            if ch.category_id != slot {
                return Err(Error::invalid(format!(
                    "composite channel {slot} carries category id {}",
                    ch.category_id
                )));
            }
            let m = BinaryMask::from_coco(&ch.rle)?;
            if m.width() != w || m.height() != h {
                return Err(Error::DimensionMismatch {
                    expected: format!("{h}x{w}"),
                    actual: format!("{}x{}", m.height(), m.width()),
                });
            }
            for (x, y) in m.foreground() {
                out.set(y as usize, x as usize, slot, true);
            }
        }
        Ok(out)
    }
}

/// On-disk form of a composite mask: one RLE per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeRecord {
    pub image_id: String,
    pub size: [u32; 2],
    pub channels: Vec<CompositeChannel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeChannel {
    pub category_id: usize,
    pub name: String,
    pub rle: CocoRle,
}

/// Pixel-wise OR of accepted masks per category.
pub fn composite_masks(
    accepted: &[Candidate],
    height: usize,
    width: usize,
    channels: usize,
) -> Result<CompositeMask> {
    let mut out = CompositeMask::zeros(height, width, channels);
    for c in accepted {
        if c.mask.height() as usize != height || c.mask.width() as usize != width {
            return Err(Error::DimensionMismatch {
                expected: format!("{height}x{width}"),
                actual: format!("{}x{}", c.mask.height(), c.mask.width()),
            });
        }
        let k = c.category();
        if k >= channels {
            return Err(Error::UnknownCategory { id: k, count: channels });
        }
        for (x, y) in c.mask.foreground() {
            out.set(y as usize, x as usize, k, true);
        }
    }
    Ok(out)
}

/// Real-valued `H × W × K` grid, channel-last; the resized mask `C'`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl SoftMask {
    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn get(&self, y: usize, x: usize, k: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + k]
    }

    pub fn channel_sum(&self, k: usize) -> f64 {
        self.data.iter().skip(k).step_by(self.channels).sum()
    }
}

/// Overlap weights of source cells onto target cells along one axis.
///
/// Target cell `i` spans `[i·n/m, (i+1)·n/m)` in source units; measured in
/// units of `1/m` the boundaries are the integers `i·n`, so overlaps are exact.
/// Returns, per target cell, `(source index, overlap / n)` pairs.
fn axis_weights(n: usize, m: usize) -> Vec<Vec<(usize, f64)>> {
    (0..m)
        .map(|i| {
            let lo = i * n;
            let hi = (i + 1) * n;
            let first = lo / m;
            let last = hi.div_ceil(m);
            (first..last)
                .filter_map(|s| {
                    let ov = hi.min((s + 1) * m).saturating_sub(lo.max(s * m));
                    (ov > 0).then(|| (s, ov as f64 / n as f64))
                })
                .collect()
        })
        .collect()
}

/// Area-average (box filter) resampling of every channel.
pub fn resize_composite(c: &SoftMask, height: usize, width: usize) -> Result<SoftMask> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("resize target must be at least 1x1"));
    }
    if height == c.height && width == c.width {
        return Ok(c.clone());
    }
    let k = c.channels;
    let wy = axis_weights(c.height, height);
    let wx = axis_weights(c.width, width);
    let mut out = SoftMask::filled(height, width, k, 0.0);
    for (i, row_w) in wy.iter().enumerate() {
        for (j, col_w) in wx.iter().enumerate() {
            let base = (i * width + j) * k;
            for &(sy, fy) in row_w {
                for &(sx, fx) in col_w {
                    let w = fy * fx;
                    let src = (sy * c.width + sx) * k;
                    for ch in 0..k {
                        out.data[base + ch] += w * c.data[src + ch];
                    }
                }
            }
            for v in &mut out.data[base..base + k] {
                *v = v.clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DetectionBox;
    use crate::mask::PixelRect;

    fn cand(r: PixelRect, k: usize) -> Candidate {
        Candidate::new(BinaryMask::rect(10, 10, r).unwrap(), DetectionBox::new(r, k, 1.0))
    }

    #[test]
    fn empty_list_gives_zeros() {
        let c = composite_masks(&[], 5, 6, 7).unwrap();
        assert_eq!(c, CompositeMask::zeros(5, 6, 7));
    }

    #[test]
    fn overlapping_barns_union() {
        let a = cand(PixelRect::new(0, 0, 4, 4), 0);
        let b = cand(PixelRect::new(2, 2, 6, 6), 0);
        let c = composite_masks(&[a, b], 10, 10, 7).unwrap();
        assert_eq!(c.channel_sum(0), 16 + 16 - 4);
        assert!((1..7).all(|k| c.channel_sum(k) == 0));
    }

    #[test]
    fn disjoint_per_category_areas() {
        let cands: Vec<_> = (0..7)
            .map(|k| cand(PixelRect::new(k as u32, 0, k as u32 + 1, k as u32 + 1), k))
            .collect();
        let c = composite_masks(&cands, 10, 10, 7).unwrap();
        for k in 0..7 {
            assert_eq!(c.channel_sum(k), k as u64 + 1);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let r = PixelRect::new(0, 0, 2, 2);
        let c = Candidate::new(BinaryMask::rect(4, 4, r).unwrap(), DetectionBox::new(r, 0, 1.0));
        assert!(matches!(
            composite_masks(&[c], 10, 10, 7),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn quadrant_downsample() {
        let mut c = CompositeMask::zeros(4, 4, 1);
        for y in 0..2 {
            for x in 2..4 {
                c.set(y, x, 0, true);
            }
        }
        let r = resize_composite(&c.to_soft(), 2, 2).unwrap();
        assert_eq!(r.data, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_and_constant() {
        let mut c = CompositeMask::zeros(5, 3, 2);
        c.set(1, 2, 1, true);
        let soft = c.to_soft();
        assert_eq!(resize_composite(&soft, 5, 3).unwrap(), soft);
        let ones = SoftMask::filled(7, 9, 2, 1.0);
        for (h, w) in [(3, 4), (7, 9), (10, 2), (1, 1)] {
            let r = resize_composite(&ones, h, w).unwrap();
            assert!(r.data.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn non_divisible_mass_preserved() {
        let mut c = CompositeMask::zeros(7, 5, 1);
        for (y, x) in [(0, 0), (3, 2), (6, 4), (5, 1)] {
            c.set(y, x, 0, true);
        }
        let r = resize_composite(&c.to_soft(), 3, 2).unwrap();
        let scale = (7.0 / 3.0) * (5.0 / 2.0);
        assert!((r.channel_sum(0) * scale - 4.0).abs() < 1e-12);
    }
}
