//! Seeded synthetic scenes whose class is decidable from the accepted
//! infrastructure layout, with pseudo-backbone features derived from the
//! drawn masks.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chamfer::chamfer_distance;
use crate::composite::{composite_masks, CompositeMask};
use crate::dataset::{write_jsonl, DetectionRecord, Manifest, ManifestRecord, Split};
use crate::error::{Error, Result};
use crate::geometry::{accepted_indices, filter_candidates, Candidate, DetectionBox, FilterThresholds};
use crate::mask::{BinaryMask, PixelRect};
use crate::priors::CountyPriorTable;
use crate::taxonomy::{class_index, RuleKind, Taxonomy, NEGATIVE_CLASS, NUM_CLASSES};
use crate::tensor::{write_atomic, FeatureTensor};

/// Maximum normalized barn–pond distance in a swine scene.
pub const SWINE_MAX_PROXIMITY: f64 = 0.1;
const MAX_ATTEMPTS: usize = 500;
const PLACE_TRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Side of the square image in pixels.
    pub image_size: u32,
    /// Side of one feature-grid cell in pixels.
    pub cell: u32,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    /// Probability of each optional extra structure per scene.
    pub extra_prob: f64,
    pub max_distractors: usize,
    pub counties: usize,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            cell: 8,
            feature_dim: 16,
            noise_sigma: 0.1,
            extra_prob: 0.3,
            max_distractors: 2,
            counties: 12,
            train_frac: 0.7,
            val_frac: 0.15,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(48..=1024).contains(&self.image_size) {
            return Err(Error::invalid("synth image_size must be in 48..=1024"));
        }
        if self.cell == 0 || !self.image_size.is_multiple_of(self.cell) {
            return Err(Error::invalid("synth cell must divide image_size"));
        }
        if self.feature_dim == 0 || self.counties == 0 {
            return Err(Error::invalid("synth feature_dim and counties must be >= 1"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("synth noise_sigma must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.extra_prob) {
            return Err(Error::invalid("synth extra_prob must be in [0, 1]"));
        }
        let fr = [self.train_frac, self.val_frac];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || self.train_frac + self.val_frac > 1.0 {
            return Err(Error::invalid("synth split fractions must be in [0, 1] and sum <= 1"));
        }
        Ok(())
    }

    fn grid(&self) -> usize {
        (self.image_size / self.cell) as usize
    }
}

/// Class label and the seed of its private random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneRecipe {
    pub label: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub image_id: String,
    pub image_size: u32,
    pub label: usize,
    pub county_fips: String,
    pub split: Split,
    /// Every detection, distractors included, in emission order.
    pub candidates: Vec<Candidate>,
    /// Whether each candidate is meant to survive filtering.
    pub positive: Vec<bool>,
    pub features: FeatureTensor,
}

impl SyntheticScene {
    /// Composite built from the intended survivors only.
    pub fn ground_truth_composite(&self, taxonomy: &Taxonomy) -> Result<CompositeMask> {
        let kept: Vec<Candidate> = self
            .candidates
            .iter()
            .zip(&self.positive)
            .filter(|(_, &p)| p)
            .map(|(c, _)| c.clone())
            .collect();
        let s = self.image_size as usize;
        composite_masks(&kept, s, s, taxonomy.len())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub config: SynthConfig,
    pub seed: u64,
    pub taxonomy: Taxonomy,
    pub counties: CountyPriorTable,
    pub scenes: Vec<SyntheticScene>,
}

/// Category indices the generator draws.
#[derive(Debug, Clone)]
struct Palette {
    barn: usize,
    pond: usize,
    silo: usize,
    silage: usize,
    feedlot: usize,
    extras: Vec<usize>,
    all: usize,
}

impl Palette {
    fn new(t: &Taxonomy) -> Result<Self> {
        let find = |kind| {
            (0..t.len()).find(|&k| t.rule(k).ok() == Some(kind)).ok_or_else(|| {
                Error::invalid(format!("synthetic scenes need a {kind:?} category"))
            })
        };
        Ok(Self {
            barn: t.barn(),
            pond: t.pond(),
            silo: find(RuleKind::Silo)?,
            silage: find(RuleKind::Silage)?,
            feedlot: find(RuleKind::Feedlot)?,
            extras: (0..t.len())
                .filter(|&k| t.rule(k).ok() == Some(RuleKind::Default))
                .collect(),
            all: t.len(),
        })
    }
}

/// Class the layout encodes, read from a composite alone: feedlot ⇒ beef,
/// silo or silage ⇒ dairy, pond ⇒ swine, barn ⇒ poultry, none ⇒ negative.
pub fn rule_oracle(c: &CompositeMask, taxonomy: &Taxonomy) -> usize {
    let present = |kind: RuleKind| {
        (0..c.channels()).any(|k| taxonomy.rule(k).ok() == Some(kind) && c.channel_sum(k) > 0)
    };
    let name = if present(RuleKind::Feedlot) {
        "beef"
    } else if present(RuleKind::Silo) || present(RuleKind::Silage) {
        "dairy"
    } else if present(RuleKind::Pond) {
        "swine"
    } else if present(RuleKind::Barn) {
        "poultry"
    } else {
        return NEGATIVE_CLASS;
    };
    class_index(name).expect("known class")
}

/// County table: county `j` favours positive class `j mod 4`.
pub fn synthetic_counties(n: usize) -> Result<CountyPriorTable> {
    let mut t = CountyPriorTable::default();
    for j in 0..n {
        let mut q = [0.15; 4];
        q[j % 4] = 0.55;
        t.insert(county_fips(j), q)?;
    }
    Ok(t)
}

fn county_fips(j: usize) -> String {
    format!("{:05}", 19001 + 2 * j)
}

/// Generates `n` scenes with balanced labels (`i mod 5`).
pub fn generate(cfg: &SynthConfig, taxonomy: &Taxonomy, n: usize, seed: u64) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let palette = Palette::new(taxonomy)?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let encoder = Array2::from_shape_simple_fn((cfg.feature_dim, taxonomy.len()), || {
        normal.sample(&mut master)
    });
    let recipes: Vec<SceneRecipe> = (0..n)
        .map(|i| SceneRecipe {
            label: i % NUM_CLASSES,
            seed: master.random(),
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut master);
    let n_train = (n as f64 * cfg.train_frac).round() as usize;
    let n_val = ((n as f64 * cfg.val_frac).round() as usize).min(n - n_train);
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    let scenes = recipes
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let id = format!("syn_{i:05}");
            build_scene(cfg, taxonomy, &palette, &encoder, *r, &id, splits[i]).map_err(|e| e.in_record(&id))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDataset {
        config: *cfg,
        seed,
        taxonomy: taxonomy.clone(),
        counties: synthetic_counties(cfg.counties)?,
        scenes,
    })
}

fn build_scene(
    cfg: &SynthConfig,
    taxonomy: &Taxonomy,
    palette: &Palette,
    encoder: &Array2<f64>,
    recipe: SceneRecipe,
    image_id: &str,
    split: Split,
) -> Result<SyntheticScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let county = if recipe.label != NEGATIVE_CLASS && rng.random_bool(0.7) {
        let same: Vec<usize> = (0..cfg.counties).filter(|j| j % 4 == recipe.label).collect();
        if same.is_empty() {
            rng.random_range(0..cfg.counties)
        } else {
            same[rng.random_range(0..same.len())]
        }
    } else {
        rng.random_range(0..cfg.counties)
    };
    for _ in 0..MAX_ATTEMPTS {
        let mut b = Builder::new(cfg.image_size, &mut rng);
        if !b.archetype(recipe.label, palette) {
            continue;
        }
        b.extras(cfg.extra_prob, palette);
        let distractors = if recipe.label == NEGATIVE_CLASS {
            b.rng.random_range(1..=cfg.max_distractors + 1)
        } else {
            b.rng.random_range(0..=cfg.max_distractors)
        };
        for _ in 0..distractors {
            b.distractor(palette);
        }
        let Builder { cands, positive, .. } = b;
        if !layout_holds(&cands, &positive, taxonomy, palette, recipe.label)? {
            continue;
        }
        let features = pseudo_features(cfg, encoder, &cands, taxonomy.len(), &mut rng)?;
        return Ok(SyntheticScene {
            image_id: image_id.to_string(),
            image_size: cfg.image_size,
            label: recipe.label,
            county_fips: county_fips(county),
            split,
            candidates: cands,
            positive,
            features,
        });
    }
    Err(Error::invalid(format!(
        "no valid layout for class {} after {MAX_ATTEMPTS} attempts",
        recipe.label
    )))
}

/// The default filter keeps exactly the intended survivors and swine ponds
/// sit next to a barn.
fn layout_holds(
    cands: &[Candidate],
    positive: &[bool],
    taxonomy: &Taxonomy,
    palette: &Palette,
    label: usize,
) -> Result<bool> {
    let th = &FilterThresholds::default();
    let expect: Vec<usize> = (0..cands.len()).filter(|&i| positive[i]).collect();
    if accepted_indices(cands, th, taxonomy)? != expect {
        return Ok(false);
    }
    if Some(label) == class_index("swine") {
        let size = cands[0].mask.height() as usize;
        let c = composite_masks(&filter_candidates(cands, th, taxonomy)?, size, size, palette.all)?;
        let d = chamfer_distance(&c.channel_mask(palette.barn)?, &c.channel_mask(palette.pond)?)?;
        if d >= SWINE_MAX_PROXIMITY {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `E = P·Bᵀ + noise`, with `P` the per-cell coverage fraction of each
/// category over every drawn mask.
fn pseudo_features(
    cfg: &SynthConfig,
    encoder: &Array2<f64>,
    cands: &[Candidate],
    channels: usize,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureTensor> {
    let g = cfg.grid();
    let s = cfg.image_size as usize;
    let cell = cfg.cell as usize;
    let mut drawn = vec![false; s * s * channels];
    for c in cands {
        let k = c.category();
        for (x, y) in c.mask.foreground() {
            drawn[(y as usize * s + x as usize) * channels + k] = true;
        }
    }
    let mut presence = Array2::<f64>::zeros((g * g, channels));
    for y in 0..s {
        for x in 0..s {
            let row = (y / cell) * g + x / cell;
            for k in 0..channels {
                if drawn[(y * s + x) * channels + k] {
                    presence[[row, k]] += 1.0;
                }
            }
        }
    }
    presence /= (cell * cell) as f64;
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let e = presence.dot(&encoder.t());
    let data = e.iter().map(|&v| (v + noise.sample(rng)) as f32).collect();
    FeatureTensor::new(g, g, cfg.feature_dim, data)
}

/// Maps local drawing coordinates into the image, optionally transposed.
#[derive(Debug, Clone, Copy)]
struct Frame {
    x0: u32,
    y0: u32,
    transpose: bool,
}

impl Frame {
    fn rect(&self, r: PixelRect) -> PixelRect {
        if self.transpose {
            PixelRect::new(self.x0 + r.y0, self.y0 + r.x0, self.x0 + r.y1, self.y0 + r.x1)
        } else {
            PixelRect::new(self.x0 + r.x0, self.y0 + r.y0, self.x0 + r.x1, self.y0 + r.y1)
        }
    }

    fn local(&self, x: u32, y: u32) -> (i64, i64) {
        let (lx, ly) = (i64::from(x) - i64::from(self.x0), i64::from(y) - i64::from(self.y0));
        if self.transpose {
            (ly, lx)
        } else {
            (lx, ly)
        }
    }
}

struct Builder<'a> {
    size: u32,
    unit: f64,
    rng: &'a mut ChaCha8Rng,
    occupied: Vec<PixelRect>,
    cands: Vec<Candidate>,
    positive: Vec<bool>,
}

impl<'a> Builder<'a> {
    fn new(size: u32, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            size,
            unit: f64::from(size) / 64.0,
            rng,
            occupied: Vec::new(),
            cands: Vec::new(),
            positive: Vec::new(),
        }
    }

    /// Integer drawn from a range given in 64-pixel image units.
    fn dim(&mut self, lo: u32, hi: u32) -> u32 {
        let lo = ((f64::from(lo) * self.unit).round() as u32).max(1);
        let hi = ((f64::from(hi) * self.unit).round() as u32).max(lo);
        self.rng.random_range(lo..=hi)
    }

    /// Finds a free spot for a `w × h` footprint, keeping `margin` pixels
    /// from earlier footprints.
    fn place(&mut self, w: u32, h: u32, margin: u32) -> Option<PixelRect> {
        if w > self.size || h > self.size {
            return None;
        }
        for _ in 0..PLACE_TRIES {
            let x = self.rng.random_range(0..=self.size - w);
            let y = self.rng.random_range(0..=self.size - h);
            let r = PixelRect::new(x, y, x + w, y + h);
            let clear = self.occupied.iter().all(|o| {
                r.x1 + margin <= o.x0 || o.x1 + margin <= r.x0 || r.y1 + margin <= o.y0 || o.y1 + margin <= r.y0
            });
            if clear {
                self.occupied.push(r);
                return Some(r);
            }
        }
        None
    }

    /// Frame for a local `lw × lh` layout, randomly transposed.
    fn frame(&mut self, lw: u32, lh: u32, margin: u32) -> Option<Frame> {
        let transpose = self.rng.random_bool(0.5);
        let (w, h) = if transpose { (lh, lw) } else { (lw, lh) };
        let r = self.place(w, h, margin)?;
        Some(Frame {
            x0: r.x0,
            y0: r.y0,
            transpose,
        })
    }

    fn mask(&self, f: Frame, pred: impl Fn(i64, i64) -> bool) -> BinaryMask {
        BinaryMask::from_fn(self.size, self.size, |x, y| {
            let (lx, ly) = f.local(x, y);
            lx >= 0 && ly >= 0 && pred(lx, ly)
        })
        .expect("non-zero image size")
    }

    fn push(&mut self, mask: BinaryMask, bx: PixelRect, category: usize, positive: bool) {
        let score = self.rng.random_range(0.5..1.0);
        self.cands.push(Candidate::new(mask, DetectionBox::new(bx, category, score)));
        self.positive.push(positive);
    }

    fn rect_mask(&self, f: Frame, r: PixelRect) -> BinaryMask {
        self.mask(f, move |x, y| {
            x >= i64::from(r.x0) && x < i64::from(r.x1) && y >= i64::from(r.y0) && y < i64::from(r.y1)
        })
    }

    /// Barn rectangle whose box extends by up to one pixel along its length.
    fn barn(&mut self, f: Frame, r: PixelRect, category: usize) {
        let mask = self.rect_mask(f, r);
        let ext0 = self.rng.random_range(0..=1).min(r.x0);
        let ext1 = self.rng.random_range(0..=1);
        let lbox = PixelRect::new(r.x0 - ext0, r.y0, r.x1 + ext1, r.y1);
        let mut bx = f.rect(lbox);
        bx.x1 = bx.x1.min(self.size);
        bx.y1 = bx.y1.min(self.size);
        self.push(mask, bx, category, true);
    }

    fn archetype(&mut self, label: usize, p: &Palette) -> bool {
        match crate::taxonomy::CLASS_NAMES[label] {
            "poultry" => self.poultry(p),
            "swine" => self.swine(p),
            "dairy" => self.dairy(p),
            "beef" => self.beef(p),
            _ => Some(()),
        }
        .is_some()
    }

    /// Three to five long parallel barns.
    fn poultry(&mut self, p: &Palette) -> Option<()> {
        let n = self.rng.random_range(3..=5u32);
        let len = self.dim(28, 44);
        let wid = self.dim(3, 5);
        let gap = self.dim(2, 4);
        let f = self.frame(len + 2, n * wid + (n - 1) * gap, 2)?;
        for i in 0..n {
            let y = i * (wid + gap);
            self.barn(f, PixelRect::new(1, y, len + 1, y + wid), p.barn);
        }
        Some(())
    }

    /// One or two barns with an irregular pond right beside them, plus a
    /// weaker pond proposal for the same box.
    fn swine(&mut self, p: &Palette) -> Option<()> {
        let bw = self.dim(14, 22);
        let bh = self.dim(5, 8);
        let two = self.rng.random_bool(0.4);
        let bgap = self.dim(2, 3);
        let a = self.dim(5, 7);
        let b = self.dim(4, 6);
        let pgap = self.rng.random_range(1..=2u32);
        let lw = (bw + 2).max(2 * a + 1);
        let barns_h = if two { 2 * bh + bgap } else { bh };
        let lh = barns_h + pgap + 2 * b + 1;
        let f = self.frame(lw, lh, 2)?;
        let bx0 = (lw - bw) / 2;
        self.barn(f, PixelRect::new(bx0, 0, bx0 + bw, bh), p.barn);
        if two {
            self.barn(f, PixelRect::new(bx0, bh + bgap, bx0 + bw, 2 * bh + bgap), p.barn);
        }
        let cx = f64::from(lw - 1) / 2.0;
        let cy = f64::from(barns_h + pgap + b);
        let phase = self.rng.random_range(0.0..std::f64::consts::TAU);
        let (a, b) = (f64::from(a), f64::from(b));
        let blob = move |scale: f64| {
            move |x: i64, y: i64| {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let wobble = 1.0 + 0.12 * (3.0 * dy.atan2(dx) + phase).sin();
                (dx / (a * scale)).powi(2) + (dy / (b * scale)).powi(2) <= wobble * wobble
            }
        };
        let pond = self.mask(f, blob(1.0));
        let bx = pond.bbox()?;
        let weak = self.mask(f, blob(0.5));
        self.push(pond, bx, p.pond, true);
        if !weak.is_empty() {
            self.push(weak, bx, p.pond, false);
        }
        Some(())
    }

    /// Barns, round silos in loose boxes, and silage bunkers.
    fn dairy(&mut self, p: &Palette) -> Option<()> {
        for _ in 0..self.rng.random_range(1..=2) {
            let (w, h) = (self.dim(12, 20), self.dim(5, 8));
            let f = self.frame(w + 2, h, 2)?;
            self.barn(f, PixelRect::new(1, 0, w + 1, h), p.barn);
        }
        for _ in 0..self.rng.random_range(1..=3) {
            let r = self.dim(2, 3);
            let pad = (2 * r + 1).div_ceil(4) + self.rng.random_range(1..=2);
            let side = 2 * r + 1 + 2 * pad;
            let f = self.frame(side, side, 1)?;
            let c = i64::from(pad + r);
            let rr = i64::from(r * (r + 1));
            let mask = self.mask(f, move |x, y| (x - c).pow(2) + (y - c).pow(2) <= rr);
            let bx = f.rect(PixelRect::new(0, 0, side, side));
            self.push(mask, bx, p.silo, true);
        }
        for _ in 0..self.rng.random_range(1..=2) {
            let (w, h) = (self.dim(10, 16), self.dim(3, 5));
            let f = self.frame(w, h, 1)?;
            let r = PixelRect::new(0, 0, w, h);
            let mask = self.rect_mask(f, r);
            self.push(mask, f.rect(r), p.silage, true);
        }
        Some(())
    }

    /// One large feedlot with cut corners, sometimes with a barn.
    fn beef(&mut self, p: &Palette) -> Option<()> {
        let (w, h) = (self.dim(28, 44), self.dim(22, 34));
        let cut = i64::from(self.dim(3, 7));
        let f = self.frame(w, h, 2)?;
        let (wi, hi) = (i64::from(w), i64::from(h));
        let mask = self.mask(f, move |x, y| {
            x < wi
                && y < hi
                && x + y >= cut
                && (wi - 1 - x) + y >= cut
                && x + (hi - 1 - y) >= cut
                && (wi - 1 - x) + (hi - 1 - y) >= cut
        });
        self.push(mask, f.rect(PixelRect::new(0, 0, w, h)), p.feedlot, true);
        if self.rng.random_bool(0.5) {
            let (bw, bh) = (self.dim(10, 16), self.dim(4, 7));
            if let Some(f) = self.frame(bw + 2, bh, 2) {
                self.barn(f, PixelRect::new(1, 0, bw + 1, bh), p.barn);
            }
        }
        Some(())
    }

    /// Optional structures that carry no class information.
    fn extras(&mut self, prob: f64, p: &Palette) {
        for &k in &p.extras {
            if !self.rng.random_bool(prob) {
                continue;
            }
            let (w, h) = (self.dim(3, 14), self.dim(3, 12));
            let pad = self.rng.random_range(0..=2u32);
            let Some(f) = self.frame(w + 2 * pad, h + 2 * pad, 1) else {
                continue;
            };
            let mask = self.rect_mask(f, PixelRect::new(pad, pad, pad + w, pad + h));
            self.push(mask, f.rect(PixelRect::new(0, 0, w + 2 * pad, h + 2 * pad)), k, true);
        }
    }

    /// A box/mask pair that fails its category's rule: a thin diagonal band
    /// or a mask offset from its box.
    fn distractor(&mut self, p: &Palette) {
        let category = self.rng.random_range(0..p.all);
        if self.rng.random_bool(0.5) {
            let s = self.dim(12, 20);
            let Some(f) = self.frame(s, s, 1) else {
                return;
            };
            let anti = self.rng.random_bool(0.5);
            let last = i64::from(s) - 1;
            let mask = self.mask(f, move |x, y| {
                x <= last && y <= last && if anti { (x + y - last).abs() <= 1 } else { (x - y).abs() <= 1 }
            });
            self.push(mask, f.rect(PixelRect::new(0, 0, s, s)), category, false);
        } else {
            let (w, h) = (self.dim(6, 12), self.dim(6, 12));
            let dx = (3 * w).div_ceil(4) + self.rng.random_range(0..=2);
            let Some(f) = self.frame(dx + w, h, 1) else {
                return;
            };
            let mask = self.rect_mask(f, PixelRect::new(0, 0, w, h));
            self.push(mask, f.rect(PixelRect::new(dx, 0, dx + w, h)), category, false);
        }
    }
}

impl SyntheticDataset {
    /// Writes the manifest, county table, detections, features and filtered
    /// composites under `dir`.
    pub fn write(&self, dir: &Path, thresholds: &FilterThresholds) -> Result<Manifest> {
        let mut manifest = Manifest::new(self.taxonomy.clone());
        manifest.counties = Some("counties.csv".into());
        manifest.base_dir = dir.to_path_buf();
        write_atomic(&dir.join("counties.csv"), self.counties.to_csv()?.as_bytes())?;
        let s = self.config.image_size;
        let records = self
            .scenes
            .par_iter()
            .map(|sc| {
                let id = &sc.image_id;
                let rec = ManifestRecord {
                    image_id: id.clone(),
                    county_fips: sc.county_fips.clone(),
                    label: Some(crate::taxonomy::CLASS_NAMES[sc.label].to_string()),
                    split: sc.split,
                    image_size: [s, s],
                    detections: format!("detections/{id}.jsonl"),
                    features: format!("features/{id}.bin"),
                    composite: format!("composite/{id}.json"),
                };
                let dets: Vec<DetectionRecord> = sc
                    .candidates
                    .iter()
                    .map(|c| DetectionRecord::from_candidate(id, c))
                    .collect();
                write_jsonl(&dir.join(&rec.detections), &dets)?;
                sc.features.write(&dir.join(&rec.features))?;
                let kept = filter_candidates(&sc.candidates, thresholds, &self.taxonomy)?;
                let comp = composite_masks(&kept, s as usize, s as usize, self.taxonomy.len())?;
                let json = serde_json::to_vec(&comp.to_record(id, &self.taxonomy)?)?;
                write_atomic(&dir.join(&rec.composite), &json)?;
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()?;
        manifest.records = records;
        manifest.save(&dir.join("manifest.json"))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, seed: u64) -> SyntheticDataset {
        generate(&SynthConfig::default(), &Taxonomy::default(), n, seed).unwrap()
    }

    #[test]
    fn empty_dataset() {
        let d = small(0, 1);
        assert!(d.scenes.is_empty());
        let dir = tempfile::tempdir().unwrap();
        let m = d.write(dir.path(), &FilterThresholds::default()).unwrap();
        assert!(m.records.is_empty());
        assert!(Manifest::load(&dir.path().join("manifest.json")).is_ok());
    }

    #[test]
    fn oracle_recovers_every_label() {
        let d = small(40, 3);
        let t = Taxonomy::default();
        for sc in &d.scenes {
            let c = sc.ground_truth_composite(&t).unwrap();
            assert_eq!(rule_oracle(&c, &t), sc.label, "{}", sc.image_id);
        }
    }

    #[test]
    fn same_seed_same_scenes() {
        let a = small(10, 9);
        let b = small(10, 9);
        for (x, y) in a.scenes.iter().zip(&b.scenes) {
            assert_eq!(x.candidates, y.candidates);
            assert_eq!(x.features, y.features);
            assert_eq!(x.split, y.split);
        }
    }
}
