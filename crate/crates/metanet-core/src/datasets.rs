//! Labeled image sets: a compact binary format, synthetic glyph generation,
//! and the rotation / pixel-permutation augmentations.
//!
//! Pixels are stored as bytes (`value/255` when read as reals), which makes
//! encode/decode round trips bit-exact. All generators quantize to the byte
//! grid, so generated sets survive a save/load cycle unchanged.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{stream_rng, Rng};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MN01";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Test,
}

/// A set of grayscale images with dense class labels `0..class_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    height: usize,
    width: usize,
    class_count: usize,
    labels: Vec<u32>,
    pixels: Vec<u8>,
    partition: Partition,
    class_index: Vec<Vec<usize>>,
}

impl LabeledImageSet {
    pub fn new(
        height: usize,
        width: usize,
        class_count: usize,
        labels: Vec<u32>,
        pixels: Vec<u8>,
        partition: Partition,
    ) -> Result<Self> {
        if height == 0 || width == 0 || class_count == 0 {
            return Err(Error::Dataset("empty dimensions or class count".into()));
        }
        if pixels.len() != labels.len() * height * width {
            return Err(Error::Dataset(format!(
                "pixel payload holds {} bytes, {} images of {}x{} need {}",
                pixels.len(),
                labels.len(),
                height,
                width,
                labels.len() * height * width
            )));
        }
        let mut class_index = vec![Vec::new(); class_count];
        for (i, &l) in labels.iter().enumerate() {
            let l = l as usize;
            if l >= class_count {
                return Err(Error::Dataset(format!(
                    "label {l} out of range for class count {class_count}"
                )));
            }
            class_index[l].push(i);
        }
        if let Some(empty) = class_index.iter().position(|v| v.is_empty()) {
            return Err(Error::Dataset(format!("class {empty} has no examples")));
        }
        Ok(LabeledImageSet {
            height,
            width,
            class_count,
            labels,
            pixels,
            partition,
            class_index,
        })
    }

    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn partition(&self) -> Partition {
        self.partition
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Example indices belonging to one class.
    pub fn class_examples(&self, class: usize) -> &[usize] {
        &self.class_index[class]
    }

    pub fn image_bytes(&self, idx: usize) -> &[u8] {
        let n = self.pixel_count();
        &self.pixels[idx * n..(idx + 1) * n]
    }

    /// Image `idx` as a flat tensor of reals in `[0,1]`.
    pub fn image_tensor(&self, idx: usize) -> Tensor {
        let data = self
            .image_bytes(idx)
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        Tensor::from_vec(data)
    }

    /// FNV-1a digest of each class's image content, for cross-partition
    /// disjointness checks.
    pub fn class_digests(&self) -> Vec<u64> {
        (0..self.class_count)
            .map(|c| {
                let mut h: u64 = 0xcbf29ce484222325;
                for &idx in &self.class_index[c] {
                    for &b in self.image_bytes(idx) {
                        h ^= b as u64;
                        h = h.wrapping_mul(0x100000001b3);
                    }
                }
                h
            })
            .collect()
    }

    /// Serialize to the `MN01` wire format.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.labels.len() + self.pixels.len());
        out.extend_from_slice(MAGIC);
        for v in [
            self.labels.len() as u32,
            self.height as u32,
            self.width as u32,
            self.class_count as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Parse the `MN01` wire format.
    pub fn decode(bytes: &[u8], partition: Partition) -> Result<Self> {
        let need = |n: usize, what: &str| -> Result<()> {
            if bytes.len() < n {
                Err(Error::Decode(format!(
                    "truncated dataset file: missing {what}"
                )))
            } else {
                Ok(())
            }
        };
        need(4, "magic")?;
        if &bytes[..4] != MAGIC {
            return Err(Error::Decode(format!(
                "bad magic {:02x?}, expected {MAGIC:02x?}",
                &bytes[..4]
            )));
        }
        need(20, "header")?;
        let u32_at = |off: usize| {
            u32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]])
        };
        let count = u32_at(4) as usize;
        let height = u32_at(8) as usize;
        let width = u32_at(12) as usize;
        let class_count = u32_at(16) as usize;
        let labels_end = 20 + 4 * count;
        need(labels_end, "labels")?;
        let labels: Vec<u32> = (0..count).map(|i| u32_at(20 + 4 * i)).collect();
        let pix_end = labels_end + count * height * width;
        need(pix_end, "pixels")?;
        if bytes.len() != pix_end {
            return Err(Error::Decode(format!(
                "{} trailing bytes after pixel payload",
                bytes.len() - pix_end
            )));
        }
        LabeledImageSet::new(
            height,
            width,
            class_count,
            labels,
            bytes[labels_end..pix_end].to_vec(),
            partition,
        )
    }

    /// New set from a subset of classes, relabeled densely in the given
    /// order.
    pub fn subset_classes(&self, classes: &[usize], partition: Partition) -> Result<Self> {
        let n = self.pixel_count();
        let mut labels = Vec::new();
        let mut pixels = Vec::new();
        for (new_label, &c) in classes.iter().enumerate() {
            if c >= self.class_count {
                return Err(Error::Dataset(format!("class {c} out of range")));
            }
            for &idx in &self.class_index[c] {
                labels.push(new_label as u32);
                pixels.extend_from_slice(&self.pixels[idx * n..(idx + 1) * n]);
            }
        }
        LabeledImageSet::new(self.height, self.width, classes.len(), labels, pixels, partition)
    }
}

/// Split into class-disjoint train/test sets: the first `n_train` classes
/// and the following `n_test` classes.
pub fn split_classes(
    set: &LabeledImageSet,
    n_train: usize,
    n_test: usize,
) -> Result<(LabeledImageSet, LabeledImageSet)> {
    if n_train == 0 || n_test == 0 || n_train + n_test > set.class_count() {
        return Err(Error::Config(format!(
            "split {n_train}/{n_test} does not fit {} classes",
            set.class_count()
        )));
    }
    let train_ids: Vec<usize> = (0..n_train).collect();
    let test_ids: Vec<usize> = (n_train..n_train + n_test).collect();
    Ok((
        set.subset_classes(&train_ids, Partition::Train)?,
        set.subset_classes(&test_ids, Partition::Test)?,
    ))
}

// ── Synthetic glyphs ────────────────────────────────────────────────────

const SIDE: usize = 28;

#[derive(Clone, Copy)]
enum Stroke {
    Line {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        w: f64,
    },
    Arc {
        cx: f64,
        cy: f64,
        r: f64,
        a0: f64,
        span: f64,
        w: f64,
    },
}

fn stroke_distance(s: &Stroke, px: f64, py: f64) -> (f64, f64) {
    match *s {
        Stroke::Line { x0, y0, x1, y1, w } => {
            let (dx, dy) = (x1 - x0, y1 - y0);
            let len2 = dx * dx + dy * dy;
            let t = (((px - x0) * dx + (py - y0) * dy) / len2).clamp(0.0, 1.0);
            let (cx, cy) = (x0 + t * dx, y0 + t * dy);
            (math::sqrt(math::sq(px - cx) + math::sq(py - cy)), w)
        }
        Stroke::Arc {
            cx,
            cy,
            r,
            a0,
            span,
            w,
        } => {
            let (vx, vy) = (px - cx, py - cy);
            let rho = math::sqrt(vx * vx + vy * vy);
            let ang = math::atan2(vy, vx);
            let two_pi = core::f64::consts::TAU;
            let rel = math::rem_euclid(ang - a0, two_pi);
            let d = if rel <= span {
                (rho - r).abs()
            } else {
                // Distance to the nearer endpoint.
                let e0 = (cx + r * math::cos(a0), cy + r * math::sin(a0));
                let e1 = (
                    cx + r * math::cos(a0 + span),
                    cy + r * math::sin(a0 + span),
                );
                let d0 = math::sqrt(math::sq(px - e0.0) + math::sq(py - e0.1));
                let d1 = math::sqrt(math::sq(px - e1.0) + math::sq(py - e1.1));
                d0.min(d1)
            };
            (d, w)
        }
    }
}

fn lattice_point(rng: &mut Rng) -> (f64, f64) {
    let grid = [6.0, 10.0, 14.0, 18.0, 22.0];
    let x = grid[rng.random_range(0..grid.len())] + rng.random_range(-1.5..1.5);
    let y = grid[rng.random_range(0..grid.len())] + rng.random_range(-1.5..1.5);
    (x, y)
}

fn draw_prototype(rng: &mut Rng) -> Vec<Stroke> {
    let n = rng.random_range(3..=6);
    let mut strokes = Vec::with_capacity(n);
    for _ in 0..n {
        let w = rng.random_range(1.1..1.9);
        if rng.random_range(0.0..1.0) < 0.7 {
            // Line between lattice points, redrawn until long enough.
            let mut p0 = lattice_point(rng);
            let mut p1 = lattice_point(rng);
            for _ in 0..20 {
                let len2 = math::sq(p1.0 - p0.0) + math::sq(p1.1 - p0.1);
                if len2 >= 36.0 {
                    break;
                }
                p0 = lattice_point(rng);
                p1 = lattice_point(rng);
            }
            strokes.push(Stroke::Line {
                x0: p0.0,
                y0: p0.1,
                x1: p1.0,
                y1: p1.1,
                w,
            });
        } else {
            strokes.push(Stroke::Arc {
                cx: rng.random_range(9.0..19.0),
                cy: rng.random_range(9.0..19.0),
                r: rng.random_range(3.5..8.0),
                a0: rng.random_range(0.0..core::f64::consts::TAU),
                span: rng.random_range(1.6..4.5),
                w,
            });
        }
    }
    strokes
}

fn render(strokes: &[Stroke], theta: f64, dx: f64, dy: f64, wscale: f64) -> Vec<u8> {
    let c = (SIDE as f64 - 1.0) / 2.0;
    let (sin_t, cos_t) = (math::sin(-theta), math::cos(-theta));
    let mut out = vec![0u8; SIDE * SIDE];
    for py in 0..SIDE {
        for px in 0..SIDE {
            // Inverse transform into prototype space.
            let (ux, uy) = (px as f64 - dx - c, py as f64 - dy - c);
            let gx = cos_t * ux - sin_t * uy + c;
            let gy = sin_t * ux + cos_t * uy + c;
            let mut intensity: f64 = 0.0;
            for s in strokes {
                let (d, w) = stroke_distance(s, gx, gy);
                let half = 0.5 * w * wscale;
                let v = (1.0 - (d - half)).clamp(0.0, 1.0);
                intensity = intensity.max(v);
            }
            out[py * SIDE + px] = math::round(intensity * 255.0) as u8;
        }
    }
    out
}

/// Procedural glyph classes: a few random strokes per class, with small
/// per-example affine jitter (±2 px translation, ±10° rotation, stroke
/// width noise). Deterministic in `seed`.
pub fn gen_synthetic_glyphs(
    class_count: usize,
    per_class: usize,
    seed: u64,
) -> Result<LabeledImageSet> {
    if class_count < 2 || per_class < 2 {
        return Err(Error::Config(format!(
            "need at least 2 classes of 2 images, got {class_count} x {per_class}"
        )));
    }
    let mut rng = stream_rng(seed, crate::rng::stream::DATASET);
    let mut labels = Vec::with_capacity(class_count * per_class);
    let mut pixels = Vec::with_capacity(class_count * per_class * SIDE * SIDE);
    let deg10 = 10.0 * core::f64::consts::PI / 180.0;
    for class in 0..class_count {
        let strokes = draw_prototype(&mut rng);
        for _ in 0..per_class {
            let theta = rng.random_range(-deg10..deg10);
            let dx = rng.random_range(-2.0..2.0);
            let dy = rng.random_range(-2.0..2.0);
            let wscale = rng.random_range(0.85..1.15);
            pixels.extend_from_slice(&render(&strokes, theta, dx, dy, wscale));
            labels.push(class as u32);
        }
    }
    LabeledImageSet::new(SIDE, SIDE, class_count, labels, pixels, Partition::Train)
}

// ── Rotation augmentation ───────────────────────────────────────────────

fn rot90(img: &[u8], side: usize) -> Vec<u8> {
    let mut out = vec![0u8; side * side];
    for y in 0..side {
        for x in 0..side {
            out[y * side + x] = img[x * side + (side - 1 - y)];
        }
    }
    out
}

/// Rotated copies (90/180/270 degrees) become new classes: rotation `k` of
/// class `c` gets class id `k*class_count + c`.
pub fn augment_rotations(set: &LabeledImageSet) -> Result<LabeledImageSet> {
    if set.height() != set.width() {
        return Err(Error::Dataset(format!(
            "rotation augmentation needs square images, got {}x{}",
            set.height(),
            set.width()
        )));
    }
    let side = set.height();
    let orig_classes = set.class_count();
    let mut labels = Vec::with_capacity(set.count() * 4);
    let mut pixels = Vec::with_capacity(set.count() * 4 * side * side);
    for k in 0..4u32 {
        for idx in 0..set.count() {
            let mut img = set.image_bytes(idx).to_vec();
            for _ in 0..k {
                img = rot90(&img, side);
            }
            labels.push(k * orig_classes as u32 + set.labels()[idx]);
            pixels.extend_from_slice(&img);
        }
    }
    LabeledImageSet::new(
        side,
        side,
        orig_classes * 4,
        labels,
        pixels,
        set.partition(),
    )
}

// ── Pixel permutation families ──────────────────────────────────────────

/// A deterministic family of pixel shuffles; index 0 is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationFamily {
    pub seed: u64,
    perms: Vec<Vec<u32>>,
}

impl PermutationFamily {
    pub fn new(pixel_count: usize, shuffle_count: usize, seed: u64) -> Result<Self> {
        if shuffle_count == 0 {
            return Err(Error::Config("permutation family cannot be empty".into()));
        }
        let mut rng = stream_rng(seed, crate::rng::stream::DATASET + 1);
        let identity: Vec<u32> = (0..pixel_count as u32).collect();
        let mut perms = Vec::with_capacity(shuffle_count);
        perms.push(identity.clone());
        for _ in 1..shuffle_count {
            let mut p = identity.clone();
            p.shuffle(&mut rng);
            perms.push(p);
        }
        Ok(PermutationFamily { seed, perms })
    }

    pub fn shuffle_count(&self) -> usize {
        self.perms.len()
    }

    pub fn permutation(&self, i: usize) -> &[u32] {
        &self.perms[i]
    }
}

/// Each (class, shuffle) pair becomes a class: shuffle `s` of class `c` is
/// class `s*class_count + c`.
pub fn apply_permutation_family(
    set: &LabeledImageSet,
    family: &PermutationFamily,
) -> Result<LabeledImageSet> {
    let n = set.pixel_count();
    if family.perms.iter().any(|p| p.len() != n) {
        return Err(Error::Dataset(format!(
            "permutation domain {} does not match pixel count {n}",
            family.perms[0].len()
        )));
    }
    let orig_classes = set.class_count();
    let mut labels = Vec::with_capacity(set.count() * family.shuffle_count());
    let mut pixels = Vec::with_capacity(set.count() * family.shuffle_count() * n);
    for (s, perm) in family.perms.iter().enumerate() {
        for idx in 0..set.count() {
            let img = set.image_bytes(idx);
            pixels.extend(perm.iter().map(|&src| img[src as usize]));
            labels.push((s * orig_classes) as u32 + set.labels()[idx]);
        }
    }
    LabeledImageSet::new(
        set.height(),
        set.width(),
        orig_classes * family.shuffle_count(),
        labels,
        pixels,
        set.partition(),
    )
}
