//! Single-instance binary masks stored as COCO-style run-length encodings.
//!
//! Runs are column-major (pixel `(x, y)` has flat index `y + height * x`) and
//! alternate background/foreground starting with background, exactly like
//! `maskApi.c`. The compressed string form uses the same LEB128-like
//! alphabet with stride-2 deltas, so masks exchanged with pycocotools decode
//! identically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open integer pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.x1.saturating_sub(self.x0)) * u64::from(self.y1.saturating_sub(self.y0))
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Compressed RLE as it appears in JSON: `{"size": [H, W], "counts": "..."}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CocoRle {
    pub size: [u32; 2],
    pub counts: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    counts: Vec<u32>,
}

impl BinaryMask {
    fn check_dims(width: u32, height: u32) -> Result<()> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(())
    }

    pub fn empty(width: u32, height: u32) -> Result<Self> {
        Self::check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            counts: vec![width * height],
        })
    }

    /// Builds a mask by evaluating `f(x, y)` over every pixel.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Result<Self> {
        Self::check_dims(width, height)?;
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for x in 0..width {
            for y in 0..height {
                let v = f(x, y);
                if v != current {
                    counts.push(run);
                    run = 0;
                    current = v;
                }
                run += 1;
            }
        }
        counts.push(run);
        Ok(Self {
            width,
            height,
            counts,
        })
    }

    /// `dense` is row-major, `dense[y * width + x]`.
    pub fn from_dense(width: u32, height: u32, dense: &[bool]) -> Result<Self> {
        let n = width as usize * height as usize;
        if dense.len() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("{n} pixels"),
                actual: format!("{} pixels", dense.len()),
            });
        }
        Self::from_fn(width, height, |x, y| dense[(y * width + x) as usize])
    }

    pub fn from_pixels(
        width: u32,
        height: u32,
        pixels: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<Self> {
        Self::check_dims(width, height)?;
        let mut dense = vec![false; width as usize * height as usize];
        for (x, y) in pixels {
            if x >= width || y >= height {
                return Err(Error::invalid(format!(
                    "pixel ({x}, {y}) outside {width}x{height} mask"
                )));
            }
            dense[(y * width + x) as usize] = true;
        }
        Self::from_dense(width, height, &dense)
    }

    /// Filled rectangle, clipped to the image.
    pub fn rect(width: u32, height: u32, r: PixelRect) -> Result<Self> {
        Self::from_fn(width, height, |x, y| r.contains(x, y))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Raw column-major run lengths.
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Foreground runs split at column boundaries, as `(x, y_start, y_end)`.
    pub fn column_segments(&self) -> impl Iterator<Item = (u32, u32, u32)> + '_ {
        let h = u64::from(self.height);
        let mut pos = 0u64;
        self.counts
            .iter()
            .enumerate()
            .flat_map(move |(i, &c)| {
                let start = pos;
                pos += u64::from(c);
                let end = pos;
                let fg = i % 2 == 1;
                let mut s = start;
                std::iter::from_fn(move || {
                    if !fg || s >= end {
                        return None;
                    }
                    let x = s / h;
                    let y = s % h;
                    let seg_end = end.min((x + 1) * h);
                    let len = seg_end - s;
                    s = seg_end;
                    Some((x as u32, y as u32, (y + len) as u32))
                })
            })
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| u64::from(c)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    /// Tight bounding box of the foreground, `None` when empty.
    pub fn bbox(&self) -> Option<PixelRect> {
        let mut out: Option<PixelRect> = None;
        for (x, ys, ye) in self.column_segments() {
            let r = out.get_or_insert(PixelRect::new(x, ys, x + 1, ye));
            r.x0 = r.x0.min(x);
            r.x1 = r.x1.max(x + 1);
            r.y0 = r.y0.min(ys);
            r.y1 = r.y1.max(ye);
        }
        out
    }

    /// Number of foreground pixels inside `r`.
    pub fn area_within(&self, r: &PixelRect) -> u64 {
        self.column_segments()
            .filter(|&(x, _, _)| x >= r.x0 && x < r.x1)
            .map(|(_, ys, ye)| u64::from(ye.min(r.y1).saturating_sub(ys.max(r.y0))))
            .sum()
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        if x >= self.width || y >= self.height {
            return false;
        }
        let idx = u64::from(y) + u64::from(self.height) * u64::from(x);
        let mut pos = 0u64;
        for (i, &c) in self.counts.iter().enumerate() {
            pos += u64::from(c);
            if idx < pos {
                return i % 2 == 1;
            }
        }
        false
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<bool> {
        let w = self.width as usize;
        let mut dense = vec![false; w * self.height as usize];
        for (x, ys, ye) in self.column_segments() {
            for y in ys..ye {
                dense[y as usize * w + x as usize] = true;
            }
        }
        dense
    }

    pub fn foreground(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.column_segments()
            .flat_map(|(x, ys, ye)| (ys..ye).map(move |y| (x, y)))
    }

    pub fn to_coco(&self) -> CocoRle {
        CocoRle {
            size: [self.height, self.width],
            counts: encode_counts(&self.counts),
        }
    }

    pub fn from_coco(rle: &CocoRle) -> Result<Self> {
        let [height, width] = rle.size;
        Self::check_dims(width, height)?;
        let counts = decode_counts(&rle.counts)?;
        let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        let n = u64::from(width) * u64::from(height);
        if total != n {
            return Err(Error::invalid(format!(
                "RLE counts sum to {total}, expected {n} for {height}x{width}"
            )));
        }
        // Re-canonicalise so that equal masks compare equal.
        let dense_cols = Self {
            width,
            height,
            counts,
        };
        let dense = dense_cols.to_dense();
        Self::from_dense(width, height, &dense)
    }
}

fn encode_counts(counts: &[u32]) -> String {
    let mut s = String::new();
    for (i, &cnt) in counts.iter().enumerate() {
        let mut x = i64::from(cnt);
        if i > 2 {
            x -= i64::from(counts[i - 2]);
        }
        loop {
            let mut c = (x & 0x1f) as u8;
            x >>= 5;
            let more = if c & 0x10 != 0 { x != -1 } else { x != 0 };
            if more {
                c |= 0x20;
            }
            s.push((c + 48) as char);
            if !more {
                break;
            }
        }
    }
    s
}

fn decode_counts(s: &str) -> Result<Vec<u32>> {
    let bytes = s.as_bytes();
    let mut counts: Vec<u32> = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let mut x: i64 = 0;
        let mut shift = 0;
        let mut more = true;
        while more {
            let Some(&b) = bytes.get(i) else {
                return Err(Error::invalid("truncated RLE string"));
            };
            if !(48..48 + 64).contains(&b) || shift > 55 {
                return Err(Error::invalid(format!("bad RLE byte {b:#x}")));
            }
            let c = i64::from(b - 48);
            i += 1;
            x |= (c & 0x1f) << shift;
            more = c & 0x20 != 0;
            shift += 5;
        }
        if x & (1 << (shift - 1)) != 0 {
            x |= !0i64 << shift;
        }
        if counts.len() > 2 {
            x += i64::from(counts[counts.len() - 2]);
        }
        let c = u32::try_from(x).map_err(|_| Error::invalid("negative or oversized RLE run"))?;
        counts.push(c);
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_area_and_bbox() {
        let m = BinaryMask::rect(8, 6, PixelRect::new(2, 1, 5, 4)).unwrap();
        assert_eq!(m.area(), 9);
        assert_eq!(m.bbox(), Some(PixelRect::new(2, 1, 5, 4)));
        assert!(m.get(2, 1) && m.get(4, 3));
        assert!(!m.get(5, 3) && !m.get(1, 1));
    }

    #[test]
    fn empty_mask_has_no_bbox() {
        let m = BinaryMask::empty(4, 4).unwrap();
        assert!(m.is_empty());
        assert_eq!(m.bbox(), None);
        assert_eq!(m.counts(), &[16]);
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(BinaryMask::empty(0, 3).is_err());
        assert!(BinaryMask::from_pixels(3, 3, [(3, 0)]).is_err());
    }

    #[test]
    fn area_within_clips_segments() {
        // full 4x4 block; box covers the right half only
        let m = BinaryMask::rect(8, 4, PixelRect::new(0, 0, 4, 4)).unwrap();
        assert_eq!(m.area_within(&PixelRect::new(2, 1, 8, 4)), 6);
    }

    #[test]
    fn coco_string_matches_reference() {
        // 3x4 column-major mask [0,0,0,1,1,1,0,0,1,1,0,0]
        let col_major = [0, 0, 0, 1, 1, 1, 0, 0, 1, 1, 0, 0];
        let m = BinaryMask::from_fn(4, 3, |x, y| col_major[(y + 3 * x) as usize] == 1).unwrap();
        assert_eq!(m.counts(), &[3, 3, 2, 2, 2]);
        let rle = m.to_coco();
        assert_eq!(rle.size, [3, 4]);
        assert_eq!(BinaryMask::from_coco(&rle).unwrap(), m);
    }

    #[test]
    fn coco_rejects_wrong_total() {
        let rle = CocoRle {
            size: [2, 2],
            counts: "12".to_string(),
        };
        assert!(BinaryMask::from_coco(&rle).is_err());
    }

    #[test]
    fn large_runs_roundtrip() {
        let m = BinaryMask::rect(200, 300, PixelRect::new(10, 20, 190, 290)).unwrap();
        let back = BinaryMask::from_coco(&m.to_coco()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.area(), 180 * 270);
    }
}
