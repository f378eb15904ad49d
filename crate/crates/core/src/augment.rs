//! The four augmentation operators and the seeded policy that composes them.
//!
//! Every operator preserves geometry and keeps values inside `[0, 1]`.
//! Stochastic behaviour is a pure function of an explicit seed.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, ImageRecord, Source, Split};
use crate::image::Image;
use crate::rng;
use crate::{Error, Result};

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    fn validate(&self, what: &str, bounds: Option<(f64, f64)>) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo > self.hi {
            return Err(Error::InvalidParameter(alloc::format!(
                "{what} interval [{}, {}] is empty or non-finite",
                self.lo, self.hi
            )));
        }
        if let Some((min, max)) = bounds {
            if self.lo < min || self.hi > max {
                return Err(Error::InvalidParameter(alloc::format!(
                    "{what} interval [{}, {}] must lie within [{min}, {max}]",
                    self.lo, self.hi
                )));
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut rng::Rng) -> f64 {
        rng::uniform(rng, self.lo, self.hi)
    }
}

/// One operator with its parameter ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OpSpec {
    Rotation { degrees: Interval },
    Contrast { factor: Interval },
    SaltPepper { probability: Interval },
    /// Box sides as fractions of the image height and width.
    Occlusion { height: Interval, width: Interval },
}

impl OpSpec {
    pub fn kind(&self) -> OpKind {
        match self {
            OpSpec::Rotation { .. } => OpKind::Rotation,
            OpSpec::Contrast { .. } => OpKind::Contrast,
            OpSpec::SaltPepper { .. } => OpKind::SaltPepper,
            OpSpec::Occlusion { .. } => OpKind::Occlusion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            OpSpec::Rotation { degrees } => degrees.validate("rotation degrees", None),
            OpSpec::Contrast { factor } => factor.validate("contrast factor", Some((0.0, f64::MAX))),
            OpSpec::SaltPepper { probability } => {
                probability.validate("salt-pepper probability", Some((0.0, 1.0)))
            }
            OpSpec::Occlusion { height, width } => {
                height.validate("occlusion height", Some((0.0, 1.0)))?;
                width.validate("occlusion width", Some((0.0, 1.0)))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Rotation,
    Contrast,
    SaltPepper,
    Occlusion,
}

/// Clipped rectangle in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

/// An operator instance with its sampled parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AppliedOp {
    Rotation { degrees: f64 },
    Contrast { factor: f64 },
    SaltPepper { probability: f64, seed: u64 },
    Occlusion { region: Region },
}

impl AppliedOp {
    pub fn kind(&self) -> OpKind {
        match self {
            AppliedOp::Rotation { .. } => OpKind::Rotation,
            AppliedOp::Contrast { .. } => OpKind::Contrast,
            AppliedOp::SaltPepper { .. } => OpKind::SaltPepper,
            AppliedOp::Occlusion { .. } => OpKind::Occlusion,
        }
    }

    pub fn apply(&self, image: &Image) -> Result<Image> {
        match *self {
            AppliedOp::Rotation { degrees } => Ok(rotate(image, degrees)),
            AppliedOp::Contrast { factor } => contrast(image, factor),
            AppliedOp::SaltPepper { probability, seed } => salt_pepper(image, probability, seed),
            AppliedOp::Occlusion { region } => Ok(occlude(image, region)),
        }
    }
}

/// Which images get augmented and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub ops: Vec<OpSpec>,
    pub augment_rate: f64,
    pub min_ops: usize,
    pub max_ops: usize,
    pub seed: u64,
}

impl Default for AugmentationPolicy {
    /// All four operators with moderate ranges, 25% of train images, one to
    /// four operators per augmented image.
    fn default() -> Self {
        AugmentationPolicy {
            ops: alloc::vec![
                OpSpec::Rotation { degrees: Interval::new(-45.0, 45.0) },
                OpSpec::Contrast { factor: Interval::new(0.5, 1.5) },
                OpSpec::SaltPepper { probability: Interval::new(0.01, 0.05) },
                OpSpec::Occlusion { height: Interval::new(0.1, 0.4), width: Interval::new(0.1, 0.4) },
            ],
            augment_rate: 0.25,
            min_ops: 1,
            max_ops: 4,
            seed: 0,
        }
    }
}

impl AugmentationPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.ops.is_empty() {
            return Err(Error::InvalidParameter("policy has no operators".into()));
        }
        for op in &self.ops {
            op.validate()?;
        }
        if !(0.0..=1.0).contains(&self.augment_rate) {
            return Err(Error::InvalidParameter(alloc::format!(
                "augment_rate {} outside [0, 1]",
                self.augment_rate
            )));
        }
        if self.min_ops < 1 || self.min_ops > self.max_ops || self.max_ops > self.ops.len() {
            return Err(Error::InvalidParameter(alloc::format!(
                "need 1 <= min_ops ({}) <= max_ops ({}) <= {} operators",
                self.min_ops,
                self.max_ops,
                self.ops.len()
            )));
        }
        Ok(())
    }

    /// Sample which operators to apply, with concrete parameters, for an
    /// image of `geometry`. Operators keep the policy's listed order.
    pub fn draw(&self, height: usize, width: usize, draw_seed: u64) -> Vec<AppliedOp> {
        let mut r = rng::seeded(rng::mix64(self.seed ^ rng::mix64(draw_seed)));
        let k = r.random_range(self.min_ops..=self.max_ops);
        let mut chosen = rand::seq::index::sample(&mut r, self.ops.len(), k).into_vec();
        chosen.sort_unstable();
        chosen
            .into_iter()
            .map(|i| match self.ops[i] {
                OpSpec::Rotation { degrees } => AppliedOp::Rotation { degrees: degrees.sample(&mut r) },
                OpSpec::Contrast { factor } => AppliedOp::Contrast { factor: factor.sample(&mut r) },
                OpSpec::SaltPepper { probability } => AppliedOp::SaltPepper {
                    probability: probability.sample(&mut r),
                    seed: r.random(),
                },
                OpSpec::Occlusion { height: hf, width: wf } => {
                    let h = side(hf.sample(&mut r), height);
                    let w = side(wf.sample(&mut r), width);
                    let row = r.random_range(0..=height - h);
                    let col = r.random_range(0..=width - w);
                    AppliedOp::Occlusion { region: Region { row, col, height: h, width: w } }
                }
            })
            .collect()
    }
}

fn side(fraction: f64, len: usize) -> usize {
    (libm::round(fraction * len as f64) as usize).min(len)
}

/// Rotate counter-clockwise about the image centre.
///
/// Multiples of 90 degrees on square images (and 180 on any image) are exact
/// index permutations; other angles use bilinear sampling with black fill.
pub fn rotate(image: &Image, degrees: f64) -> Image {
    let deg = libm::fmod(degrees, 360.0);
    let deg = if deg < 0.0 { deg + 360.0 } else { deg };
    let (h, w) = (image.height(), image.width());
    let src = image.data();
    let mut out = alloc::vec![0.0f32; src.len()];
    let copy = |out: &mut [f32], dst: (usize, usize), from: (usize, usize)| {
        let d = (dst.0 * w + dst.1) * 3;
        let s = (from.0 * w + from.1) * 3;
        out[d..d + 3].copy_from_slice(&src[s..s + 3]);
    };
    if deg == 0.0 {
        return image.clone();
    }
    if deg == 180.0 {
        for r in 0..h {
            for c in 0..w {
                copy(&mut out, (r, c), (h - 1 - r, w - 1 - c));
            }
        }
        return Image::from_parts(image.geometry(), out);
    }
    if h == w && (deg == 90.0 || deg == 270.0) {
        for r in 0..h {
            for c in 0..w {
                let from = if deg == 90.0 { (c, w - 1 - r) } else { (h - 1 - c, r) };
                copy(&mut out, (r, c), from);
            }
        }
        return Image::from_parts(image.geometry(), out);
    }

    let theta = deg.to_radians();
    let (sin, cos) = (libm::sin(theta), libm::cos(theta));
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    for r in 0..h {
        for c in 0..w {
            let (xo, yo) = (c as f64 - cx, r as f64 - cy);
            let xs = xo * cos - yo * sin + cx;
            let ys = xo * sin + yo * cos + cy;
            let px = bilinear_black(image, ys, xs);
            let d = (r * w + c) * 3;
            out[d..d + 3].copy_from_slice(&px);
        }
    }
    Image::from_parts(image.geometry(), out)
}

// Samples outside the frame read as black.
fn bilinear_black(image: &Image, y: f64, x: f64) -> [f32; 3] {
    let (h, w) = (image.height() as i64, image.width() as i64);
    let y0 = libm::floor(y) as i64;
    let x0 = libm::floor(x) as i64;
    let fy = (y - y0 as f64) as f32;
    let fx = (x - x0 as f64) as f32;
    let mut acc = [0.0f32; 3];
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let (yy, xx) = (y0 + dy, x0 + dx);
            let wgt = wy * wx;
            if wgt == 0.0 || yy < 0 || xx < 0 || yy >= h || xx >= w {
                continue;
            }
            let px = image.pixel(yy as usize, xx as usize);
            for ch in 0..3 {
                acc[ch] += wgt * px[ch];
            }
        }
    }
    acc.map(|v| v.clamp(0.0, 1.0))
}

/// `clamp(mean + factor * (x - mean), 0, 1)` with per-channel image means.
pub fn contrast(image: &Image, factor: f64) -> Result<Image> {
    if !(factor >= 0.0) || !factor.is_finite() {
        return Err(Error::InvalidParameter(alloc::format!(
            "contrast factor {factor} must be a finite value >= 0"
        )));
    }
    let data = image.data();
    let n = image.geometry().pixels() as f64;
    let mut mean = [0.0f64; 3];
    for px in data.chunks_exact(3) {
        for ch in 0..3 {
            mean[ch] += f64::from(px[ch]);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let out = data
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let m = mean[i % 3];
            (m + factor * (f64::from(v) - m)).clamp(0.0, 1.0) as f32
        })
        .collect();
    Ok(Image::from_parts(image.geometry(), out))
}

/// Replace each pixel, independently with probability `p`, by black or
/// white (equal odds).
pub fn salt_pepper(image: &Image, p: f64, seed: u64) -> Result<Image> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(alloc::format!("salt-pepper probability {p} outside [0, 1]")));
    }
    let mut r = rng::seeded(seed);
    let mut out = image.data().to_vec();
    for px in out.chunks_exact_mut(3) {
        let flip = r.random::<f64>() < p;
        let white = r.random::<bool>();
        if flip {
            px.fill(if white { 1.0 } else { 0.0 });
        }
    }
    Ok(Image::from_parts(image.geometry(), out))
}

/// Zero every channel inside `region`, clipped to the frame.
pub fn occlude(image: &Image, region: Region) -> Image {
    let (h, w) = (image.height(), image.width());
    let r0 = region.row.min(h);
    let c0 = region.col.min(w);
    let r1 = region.row.saturating_add(region.height).min(h);
    let c1 = region.col.saturating_add(region.width).min(w);
    let mut out = image.data().to_vec();
    for r in r0..r1 {
        out[(r * w + c0) * 3..(r * w + c1) * 3].fill(0.0);
    }
    Image::from_parts(image.geometry(), out)
}

/// Draw and apply a random combination of the policy's operators.
pub fn apply_policy(image: &Image, policy: &AugmentationPolicy, draw_seed: u64) -> Result<(Image, Vec<AppliedOp>)> {
    policy.validate()?;
    let ops = policy.draw(image.height(), image.width(), draw_seed);
    let mut current = image.clone();
    for op in &ops {
        current = op.apply(&current)?;
    }
    Ok((current, ops))
}

/// One augmented sibling to materialise.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationJob {
    pub parent_id: String,
    pub record: ImageRecord,
    pub draw_seed: u64,
}

/// Select train records at `augment_rate` (independent Bernoulli draws keyed
/// by record id) and describe one augmented sibling for each.
///
/// Returns the extended manifest and the jobs whose images must be written
/// to each new record's `path`.
pub fn build_augmented_set(
    manifest: &DatasetManifest,
    policy: &AugmentationPolicy,
) -> Result<(DatasetManifest, Vec<AugmentationJob>)> {
    policy.validate()?;
    let mut jobs = Vec::new();
    for r in manifest.records() {
        if r.split != Split::Train || r.source == Source::Augmented {
            continue;
        }
        let mut pick = rng::seeded(rng::derive(policy.seed, "augment-select", &r.id));
        if !(pick.random::<f64>() < policy.augment_rate) {
            continue;
        }
        let n = 1 + manifest
            .records()
            .iter()
            .filter(|o| o.parent_id.as_deref() == Some(r.id.as_str()))
            .count();
        let record = ImageRecord {
            id: alloc::format!("{}.aug{n}", r.id),
            path: augmented_path(&r.path, n),
            label: r.label.clone(),
            split: Split::Train,
            source: Source::Augmented,
            parent_id: Some(r.id.clone()),
        };
        let draw_seed = rng::derive(policy.seed, "augment-draw", &record.id);
        jobs.push(AugmentationJob { parent_id: r.id.clone(), record, draw_seed });
    }
    if jobs.is_empty() {
        return Ok((manifest.clone(), jobs));
    }
    let extended = manifest.with_appended(jobs.iter().map(|j| j.record.clone()).collect())?;
    Ok((extended, jobs))
}

/// `dir/name.png` becomes `dir/name.augN.png`.
pub fn augmented_path(path: &str, n: usize) -> String {
    let file_start = path.rfind('/').map_or(0, |i| i + 1);
    let stem_end = path[file_start..].rfind('.').map_or(path.len(), |i| file_start + i);
    alloc::format!("{}.aug{n}.png", &path[..stem_end])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ClassCatalog;
    use crate::image::Geometry;
    use alloc::vec;

    fn ramp(h: usize, w: usize) -> Image {
        let mut data = Vec::new();
        for r in 0..h {
            for c in 0..w {
                data.extend([
                    r as f32 / h as f32,
                    c as f32 / w as f32,
                    ((r * w + c) % 17) as f32 / 16.0,
                ]);
            }
        }
        Image::new(Geometry::new(h, w), data).unwrap()
    }

    #[test]
    fn rotate_zero_and_full_turn_identity() {
        let img = ramp(6, 9);
        assert_eq!(rotate(&img, 0.0), img);
        assert_eq!(rotate(&img, 360.0), img);
        assert_eq!(rotate(&img, -720.0), img);
    }

    #[test]
    fn rotate_180_reverses_both_axes() {
        let img = ramp(5, 8);
        let out = rotate(&img, 180.0);
        for r in 0..5 {
            for c in 0..8 {
                assert_eq!(out.pixel(r, c), img.pixel(4 - r, 7 - c));
            }
        }
        assert_eq!(rotate(&img, -180.0), out);
    }

    #[test]
    fn rotate_90_four_times_is_identity() {
        let img = ramp(7, 7);
        let mut cur = img.clone();
        for _ in 0..4 {
            cur = rotate(&cur, 90.0);
        }
        assert_eq!(cur, img);
        assert_eq!(rotate(&rotate(&img, 90.0), 270.0), img);
    }

    #[test]
    fn rotate_90_moves_right_edge_to_top() {
        let mut data = vec![0.0; 3 * 3 * 3];
        // mark the middle of the right column
        let i = (1 * 3 + 2) * 3;
        data[i..i + 3].fill(1.0);
        let img = Image::new(Geometry::new(3, 3), data).unwrap();
        let out = rotate(&img, 90.0);
        assert_eq!(out.pixel(0, 1), [1.0; 3]);
        // same convention on the interpolating path
        let general = rotate(&img, 90.000_001);
        assert!(general.pixel(0, 1)[0] > 0.99);
    }

    #[test]
    fn rotate_45_white_corners_black() {
        let img = Image::filled(Geometry::new(64, 64), 1.0);
        let out = rotate(&img, 45.0);
        for (r, c) in [(0, 0), (0, 63), (63, 0), (63, 63)] {
            assert_eq!(out.pixel(r, c), [0.0; 3], "corner ({r},{c})");
        }
        assert_eq!(out.pixel(32, 32), [1.0; 3]);
        assert_eq!(out.geometry(), img.geometry());
    }

    #[test]
    fn contrast_cases() {
        let img = ramp(8, 8);
        assert_eq!(contrast(&img, 1.0).unwrap(), img);
        let flat = contrast(&img, 0.0).unwrap();
        for ch in 0..3 {
            let first = flat.get(0, 0, ch);
            assert!((0..8).all(|r| (0..8).all(|c| flat.get(r, c, ch) == first)));
        }
        let two = Image::new(Geometry::new(1, 2), vec![0.2, 0.2, 0.2, 0.8, 0.8, 0.8]).unwrap();
        assert_eq!(contrast(&two, 2.0).unwrap().data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert!(contrast(&img, -0.5).is_err());
        assert!(contrast(&img, f64::NAN).is_err());
    }

    #[test]
    fn salt_pepper_bounds() {
        let img = ramp(10, 10);
        assert_eq!(salt_pepper(&img, 0.0, 4).unwrap(), img);
        let all = salt_pepper(&img, 1.0, 4).unwrap();
        assert!(all.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(salt_pepper(&img, 1.1, 4).is_err());
        assert_eq!(salt_pepper(&img, 0.3, 9).unwrap(), salt_pepper(&img, 0.3, 9).unwrap());
    }

    #[test]
    fn occlude_cases() {
        let img = ramp(30, 40);
        let full = occlude(&img, Region { row: 0, col: 0, height: 30, width: 40 });
        assert!(full.data().iter().all(|&v| v == 0.0));
        assert_eq!(occlude(&img, Region { row: 3, col: 4, height: 0, width: 10 }), img);
        let grey = Image::filled(img.geometry(), 0.5);
        let clipped = occlude(&grey, Region { row: 25, col: 35, height: 100, width: 100 });
        let zeroed = (0..30).flat_map(|r| (0..40).map(move |c| (r, c))).filter(|&(r, c)| clipped.pixel(r, c) == [0.0; 3]).count();
        assert_eq!(zeroed, 5 * 5);
    }

    #[test]
    fn policy_validation() {
        let mut p = AugmentationPolicy::default();
        p.validate().unwrap();
        p.min_ops = 0;
        assert!(p.validate().is_err());
        p.min_ops = 3;
        p.max_ops = 2;
        assert!(p.validate().is_err());
        let mut p = AugmentationPolicy::default();
        p.max_ops = 5;
        assert!(p.validate().is_err());
        let mut p = AugmentationPolicy::default();
        p.ops[2] = OpSpec::SaltPepper { probability: Interval::new(0.5, 1.2) };
        assert!(p.validate().is_err());
        let mut p = AugmentationPolicy::default();
        p.ops[0] = OpSpec::Rotation { degrees: Interval::new(10.0, -10.0) };
        assert!(p.validate().is_err());
    }

    #[test]
    fn forced_full_frame_occlusion() {
        let policy = AugmentationPolicy {
            ops: vec![OpSpec::Occlusion { height: Interval::point(1.0), width: Interval::point(1.0) }],
            augment_rate: 1.0,
            min_ops: 1,
            max_ops: 1,
            seed: 11,
        };
        let (out, ops) = apply_policy(&ramp(12, 12), &policy, 5).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert_eq!(ops.iter().map(AppliedOp::kind).collect::<Vec<_>>(), vec![OpKind::Occlusion]);
    }

    #[test]
    fn augmented_paths() {
        assert_eq!(augmented_path("images/a.b/x.png", 1), "images/a.b/x.aug1.png");
        assert_eq!(augmented_path("x.jpg", 2), "x.aug2.png");
        assert_eq!(augmented_path("dir/noext", 1), "dir/noext.aug1.png");
    }

    #[test]
    fn rate_zero_is_identity_and_rate_one_doubles() {
        let cat = ClassCatalog::from_labels(["A", "B"]).unwrap();
        let recs = (0..100)
            .map(|i| ImageRecord::new(alloc::format!("r{i}"), alloc::format!("img/r{i}.png"), if i % 3 == 0 { "A" } else { "B" }).with_split(Split::Train))
            .collect();
        let m = DatasetManifest::new(cat, recs, 0).unwrap();
        let mut p = AugmentationPolicy { augment_rate: 0.0, ..AugmentationPolicy::default() };
        let (same, jobs) = build_augmented_set(&m, &p).unwrap();
        assert_eq!(same, m);
        assert!(jobs.is_empty());
        p.augment_rate = 1.0;
        let (ext, jobs) = build_augmented_set(&m, &p).unwrap();
        assert_eq!(jobs.len(), 100);
        assert_eq!(ext.len(), 200);
        for j in &jobs {
            let parent = ext.record(&j.parent_id).unwrap();
            assert_eq!(j.record.parent_id.as_deref(), Some(parent.id.as_str()));
            assert_ne!(parent.source, Source::Augmented);
        }
    }
}
