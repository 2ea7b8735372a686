//! Seeded synthetic instances and datasets.
//!
//! Ground-truth regions are random rectangles and ellipses. Proposals are
//! axis-aligned slabs of each region with per-pixel boundary flips, plus
//! background distractors, so some subset of proposals always reconstructs
//! each class to within `epsilon_target` IoU. Probability maps are the ground
//! truth blended towards the uniform map with structured corruption, steered by
//! a `fidelity` knob in [0, 1].
//!
//! Everything is a pure function of the seed.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::annotation::AnnotationMap;
use crate::error::{Error, Result};
use crate::mask::{clip_union, BinaryMask};
use crate::metric::{binary_overlap, Metric};
use crate::raster::{FeatureRaster, ProbStack};

pub const MAX_ATTEMPTS: usize = 100;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-trial seed derivation: trial `i` of base seed `s` uses
/// `splitmix64(s + (i + 1)·γ)` with γ the 64-bit golden-ratio constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSequence {
    base: u64,
}

impl SeedSequence {
    pub fn new(base: u64) -> Self {
        Self { base }
    }

    pub fn seed(&self, index: u64) -> u64 {
        splitmix64(self.base.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
    }
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal sample (Box-Muller).
pub fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub height: usize,
    pub width: usize,
    /// Total classes including background.
    pub classes: usize,
    pub blobs_per_class: (usize, usize),
    pub fragments_per_blob: (usize, usize),
    pub distractors: usize,
    /// Probability of flipping each fragment boundary pixel.
    pub boundary_noise: f64,
    /// 1 reproduces the ground truth, 0 gives the uniform map.
    pub fidelity: f64,
    pub epsilon_target: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            classes: 2,
            blobs_per_class: (1, 2),
            fragments_per_blob: (1, 3),
            distractors: 3,
            boundary_noise: 0.01,
            fidelity: 1.0,
            epsilon_target: 0.02,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidShape(msg));
        if self.height < 8 || self.width < 8 {
            return bad(format!("dims must be at least 8x8, got {}x{}", self.height, self.width));
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        for (name, (lo, hi)) in [
            ("blobs_per_class", self.blobs_per_class),
            ("fragments_per_blob", self.fragments_per_blob),
        ] {
            if lo == 0 || lo > hi {
                return bad(format!("{name} range {lo}..={hi} is invalid"));
            }
        }
        if !(0.0..=1.0).contains(&self.boundary_noise) {
            return bad(format!("boundary_noise {} outside [0, 1]", self.boundary_noise));
        }
        if !(0.0..=1.0).contains(&self.fidelity) {
            return bad(format!("fidelity {} outside [0, 1]", self.fidelity));
        }
        if !(self.epsilon_target > 0.0 && self.epsilon_target < 1.0) {
            return bad(format!("epsilon_target {} outside (0, 1)", self.epsilon_target));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalOrigin {
    /// Slab `fragment` of ground-truth blob `blob` of foreground class `class`.
    Fragment {
        class: usize,
        blob: usize,
    },
    Distractor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticInstance {
    pub gt: AnnotationMap,
    pub proposals: Vec<BinaryMask>,
    pub origins: Vec<ProposalOrigin>,
    /// Per foreground class, the fragment indices whose union approximates
    /// the ground truth to within `epsilon_target`.
    pub cover: Vec<Vec<usize>>,
    pub probs: ProbStack,
    pub epsilon_target: f64,
    pub seed: u64,
}

impl SyntheticInstance {
    pub fn dims(&self) -> (usize, usize) {
        self.gt.dims()
    }
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    ellipse: bool,
}

impl Blob {
    fn contains(&self, row: usize, col: usize) -> bool {
        let dy = (row as f64 + 0.5 - self.cy) / self.ry;
        let dx = (col as f64 + 0.5 - self.cx) / self.rx;
        if self.ellipse {
            dy * dy + dx * dx <= 1.0
        } else {
            dy.abs() <= 1.0 && dx.abs() <= 1.0
        }
    }

    fn raster(&self, h: usize, w: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |r, c| self.contains(r, c)).expect("dims validated")
    }

    fn random<R: Rng>(rng: &mut R, h: usize, w: usize) -> Self {
        let ry = rng.random_range((h as f64 / 10.0).max(1.5)..=(h as f64 / 5.0).max(2.0));
        let rx = rng.random_range((w as f64 / 10.0).max(1.5)..=(w as f64 / 5.0).max(2.0));
        let cy = rng.random_range(ry..=(h as f64 - ry));
        let cx = rng.random_range(rx..=(w as f64 - rx));
        Blob {
            cy,
            cx,
            ry,
            rx,
            ellipse: rng.random_bool(0.5),
        }
    }
}

fn dilate(m: &BinaryMask) -> BinaryMask {
    let (h, w) = m.dims();
    BinaryMask::from_fn(h, w, |r, c| {
        (r.saturating_sub(1)..=(r + 1).min(h - 1))
            .any(|rr| (c.saturating_sub(1)..=(c + 1).min(w - 1)).any(|cc| m.get(rr, cc)))
    })
    .expect("same dims")
}

/// Splits `blob` into `parts` slabs along a random axis; empty slabs are dropped.
fn split_blob<R: Rng>(rng: &mut R, blob: &BinaryMask, parts: usize) -> Vec<BinaryMask> {
    let (h, w) = blob.dims();
    let vertical = rng.random_bool(0.5);
    let coord = |i: usize| if vertical { i % w } else { i / w };
    let (lo, hi) = blob
        .iter_ones()
        .map(coord)
        .fold((usize::MAX, 0), |(a, b), x| (a.min(x), b.max(x)));
    if lo > hi {
        return Vec::new();
    }
    let parts = parts.min(hi - lo + 1);
    // choose parts-1 distinct cut positions in lo+1..=hi
    let mut positions: Vec<usize> = (lo + 1..=hi).collect();
    for i in 0..positions.len() {
        let j = rng.random_range(i..positions.len());
        positions.swap(i, j);
    }
    let mut cuts: Vec<usize> = positions.into_iter().take(parts - 1).collect();
    cuts.sort_unstable();
    let mut bounds = vec![lo];
    bounds.extend(cuts);
    bounds.push(hi + 1);
    bounds
        .windows(2)
        .map(|win| {
            BinaryMask::from_fn(h, w, |r, c| {
                let x = if vertical { c } else { r };
                x >= win[0] && x < win[1] && blob.get(r, c)
            })
            .expect("same dims")
        })
        .filter(|m| !m.is_empty())
        .collect()
}

fn flip_boundary<R: Rng>(rng: &mut R, m: &BinaryMask, rate: f64) -> BinaryMask {
    if rate <= 0.0 {
        return m.clone();
    }
    let (h, w) = m.dims();
    let mut out = m.clone();
    for r in 0..h {
        for c in 0..w {
            let v = m.get(r, c);
            let boundary = [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)].iter().any(|&(dr, dc)| {
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w
                    && m.get(rr as usize, cc as usize) != v
            });
            if boundary && rng.random_bool(rate) {
                out.set(r, c, !v);
            }
        }
    }
    out
}

fn shuffle<T, R: Rng>(rng: &mut R, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Shapes shared by the instance and dataset generators.
struct Geometry {
    gt: AnnotationMap,
    blobs: Vec<Vec<Blob>>,
    proposals: Vec<BinaryMask>,
    origins: Vec<ProposalOrigin>,
    cover: Vec<Vec<usize>>,
}

fn try_geometry<R: Rng>(rng: &mut R, p: &SynthParams) -> Option<Geometry> {
    let (h, w) = (p.height, p.width);
    let fg = p.classes - 1;
    let mut occupied = BinaryMask::new(h, w).ok()?;
    let mut blobs: Vec<Vec<Blob>> = vec![Vec::new(); fg];
    let mut class_masks = vec![BinaryMask::new(h, w).ok()?; fg];
    for c in 0..fg {
        let n = rng.random_range(p.blobs_per_class.0..=p.blobs_per_class.1);
        for _ in 0..n {
            let placed = (0..50).find_map(|_| {
                let b = Blob::random(rng, h, w);
                let m = b.raster(h, w);
                (!m.is_empty() && !dilate(&m).intersects(&occupied).ok()?).then_some((b, m))
            });
            let (b, m) = placed?;
            occupied.union_with(&m).ok()?;
            class_masks[c].union_with(&m).ok()?;
            blobs[c].push(b);
        }
    }

    let mut proposals = Vec::new();
    let mut origins = Vec::new();
    for (c, class_blobs) in blobs.iter().enumerate() {
        for (bi, b) in class_blobs.iter().enumerate() {
            let parts = rng.random_range(p.fragments_per_blob.0..=p.fragments_per_blob.1);
            for frag in split_blob(rng, &b.raster(h, w), parts) {
                let noisy = flip_boundary(rng, &frag, p.boundary_noise);
                if !noisy.is_empty() {
                    proposals.push(noisy);
                    origins.push(ProposalOrigin::Fragment { class: c, blob: bi });
                }
            }
        }
    }
    for _ in 0..p.distractors {
        let placed = (0..20).find_map(|_| {
            let m = Blob::random(rng, h, w).raster(h, w);
            (!m.is_empty() && !m.intersects(&occupied).ok()?).then_some(m)
        });
        if let Some(m) = placed {
            proposals.push(m);
            origins.push(ProposalOrigin::Distractor);
        }
    }

    let mut order: Vec<usize> = (0..proposals.len()).collect();
    shuffle(rng, &mut order);
    let proposals: Vec<BinaryMask> = order.iter().map(|&i| proposals[i].clone()).collect();
    let origins: Vec<ProposalOrigin> = order.iter().map(|&i| origins[i]).collect();

    let cover: Vec<Vec<usize>> = (0..fg)
        .map(|c| {
            origins
                .iter()
                .enumerate()
                .filter(|(_, o)| matches!(o, ProposalOrigin::Fragment { class, .. } if *class == c))
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    for (c, set) in cover.iter().enumerate() {
        let union = clip_union((h, w), &proposals, set).ok()?;
        let iou = binary_overlap(&union, &class_masks[c], Metric::BinaryIou).ok()?;
        if iou < 1.0 - p.epsilon_target {
            return None;
        }
    }
    let gt = AnnotationMap::from_class_masks((h, w), class_masks).ok()?;
    Some(Geometry {
        gt,
        blobs,
        proposals,
        origins,
        cover,
    })
}

fn corrupted_probs<R: Rng>(rng: &mut R, p: &SynthParams, geo: &Geometry) -> ProbStack {
    let (h, w) = (p.height, p.width);
    let fg = p.classes - 1;
    let f = p.fidelity;
    let mut pred = vec![fg as u16; h * w];
    // later classes first so the lowest class wins on overlap
    for c in (0..fg).rev() {
        let mut masks = Vec::new();
        for b in &geo.blobs[c] {
            let mut b = *b;
            let reach = (1.0 - f) * 2.0;
            b.cy += rng.random_range(-reach..=reach) * b.ry;
            b.cx += rng.random_range(-reach..=reach) * b.rx;
            let scale = 1.0 + rng.random_range(-0.5..=0.5) * (1.0 - f);
            b.ry *= scale;
            b.rx *= scale;
            masks.push(b.raster(h, w));
        }
        if rng.random_bool(1.0 - f) {
            masks.push(Blob::random(rng, h, w).raster(h, w));
        }
        for m in masks {
            for i in m.iter_ones() {
                pred[i] = c as u16;
            }
        }
    }
    let classes = p.classes;
    let n = h * w;
    let base = ((1.0 - f) / classes as f64) as f32;
    let peak = (f + (1.0 - f) / classes as f64) as f32;
    let mut data = vec![base; classes * n];
    for (i, &l) in pred.iter().enumerate() {
        data[l as usize * n + i] = peak;
    }
    ProbStack::new(h, w, classes, data)
        .expect("shape from params")
        .with_normalized(true)
}

pub fn gen_synthetic_instance(seed: u64, params: &SynthParams) -> Result<SyntheticInstance> {
    params.validate()?;
    let mut rng = rng_from_seed(seed);
    for _ in 0..MAX_ATTEMPTS {
        if let Some(geo) = try_geometry(&mut rng, params) {
            let probs = corrupted_probs(&mut rng, params, &geo);
            return Ok(SyntheticInstance {
                gt: geo.gt,
                proposals: geo.proposals,
                origins: geo.origins,
                cover: geo.cover,
                probs,
                epsilon_target: params.epsilon_target,
                seed,
            });
        }
    }
    Err(Error::GenerationFailed {
        attempts: MAX_ATTEMPTS,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pool {
    Labeled,
    Unlabeled,
    Test,
}

impl Pool {
    pub fn name(self) -> &'static str {
        match self {
            Pool::Labeled => "labeled",
            Pool::Unlabeled => "unlabeled",
            Pool::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "labeled" => Some(Pool::Labeled),
            "unlabeled" => Some(Pool::Unlabeled),
            "test" => Some(Pool::Test),
            _ => None,
        }
    }
}

/// Parameters of a seeded image collection with per-pixel features.
///
/// Features have two channels: an intensity level per class and a texture
/// level that separates foreground from background, both with Gaussian noise
/// of standard deviation `0.5·(1 − fidelity)`. The intensity channel also
/// carries a linear illumination ramp of peak `drift·drift_scale` in a random
/// direction, so a model fitted on low-drift images misreads high-drift ones.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetParams {
    pub geometry: SynthParams,
    pub human: usize,
    pub unlabeled: usize,
    pub test: usize,
    pub feature_fidelity: (f64, f64),
    pub human_drift: (f64, f64),
    pub pool_drift: (f64, f64),
    pub drift_scale: f64,
}

impl DatasetParams {
    /// 64x64 binary task: 20 labeled, 180 unlabeled and 50 held-out images
    /// with mid-range feature fidelity.
    pub fn benchmark() -> Self {
        Self {
            geometry: SynthParams {
                height: 64,
                width: 64,
                ..SynthParams::default()
            },
            human: 20,
            unlabeled: 180,
            test: 50,
            feature_fidelity: (0.6, 0.8),
            human_drift: (0.0, 0.2),
            pool_drift: (0.0, 1.0),
            drift_scale: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        for (name, (lo, hi)) in [
            ("feature_fidelity", self.feature_fidelity),
            ("human_drift", self.human_drift),
            ("pool_drift", self.pool_drift),
        ] {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(Error::InvalidShape(format!("{name} range {lo}..={hi} is invalid")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImage {
    pub id: String,
    pub pool: Pool,
    pub gt: AnnotationMap,
    pub proposals: Vec<BinaryMask>,
    pub features: FeatureRaster,
    pub fidelity: f64,
    pub drift: f64,
}

fn features_for<R: Rng>(
    rng: &mut R,
    gt: &AnnotationMap,
    fidelity: f64,
    drift: f64,
    scale: f64,
) -> FeatureRaster {
    let (h, w) = gt.dims();
    let n = h * w;
    let fg = gt.foreground();
    let labels = gt.label_map();
    let sigma = 0.5 * (1.0 - fidelity);
    let direction = rng.random_range(0..4u8);
    let mut data = vec![0.0f32; 2 * n];
    for (i, &l) in labels.iter().enumerate() {
        let (r, c) = (i / w, i % w);
        let t = match direction {
            0 => c as f64 / (w - 1) as f64,
            1 => 1.0 - c as f64 / (w - 1) as f64,
            2 => r as f64 / (h - 1) as f64,
            _ => 1.0 - r as f64 / (h - 1) as f64,
        };
        let l = l as usize;
        let (level, texture) = if l < fg {
            ((l + 1) as f64 / fg as f64, 0.5)
        } else {
            (0.0, 0.0)
        };
        data[i] = (level + drift * scale * t + sigma * gaussian(rng)) as f32;
        data[n + i] = (texture + sigma * gaussian(rng)) as f32;
    }
    FeatureRaster::new(2, h, w, data).expect("shape from annotation")
}

/// Deterministic image collection: labeled images first, then unlabeled, then
/// held-out, ids `img0000`, `img0001`, ...
pub fn gen_synthetic_dataset(seed: u64, params: &DatasetParams) -> Result<Vec<SyntheticImage>> {
    params.validate()?;
    let seeds = SeedSequence::new(seed);
    let total = params.human + params.unlabeled + params.test;
    let mut images = Vec::with_capacity(total);
    for i in 0..total {
        let pool = if i < params.human {
            Pool::Labeled
        } else if i < params.human + params.unlabeled {
            Pool::Unlabeled
        } else {
            Pool::Test
        };
        let mut rng = rng_from_seed(seeds.seed(i as u64));
        let geo = (0..MAX_ATTEMPTS)
            .find_map(|_| try_geometry(&mut rng, &params.geometry))
            .ok_or(Error::GenerationFailed {
                attempts: MAX_ATTEMPTS,
            })?;
        let fidelity = rng.random_range(params.feature_fidelity.0..=params.feature_fidelity.1);
        let drift_range = if pool == Pool::Labeled {
            params.human_drift
        } else {
            params.pool_drift
        };
        let drift = rng.random_range(drift_range.0..=drift_range.1);
        let features = features_for(&mut rng, &geo.gt, fidelity, drift, params.drift_scale);
        images.push(SyntheticImage {
            id: format!("img{i:04}"),
            pool,
            gt: geo.gt,
            proposals: geo.proposals,
            features,
            fidelity,
            drift,
        });
    }
    Ok(images)
}
