//! Backbone adapters.
//!
//! Each named architecture is served by a compact convolutional feature
//! extractor with the architecture's input geometry, preprocessing
//! convention and penultimate channel width:
//!
//! | name           | input   | preprocessing            | channels |
//! |----------------|---------|--------------------------|----------|
//! | `vgg16`        | 224x224 | BGR, ImageNet mean       | 512      |
//! | `vgg19`        | 224x224 | BGR, ImageNet mean       | 512      |
//! | `resnet50`     | 224x224 | BGR, ImageNet mean       | 2048     |
//! | `inception_v3` | 299x299 | scale to `[-1, 1]`       | 2048     |
//!
//! The network is a stem (adaptive average pool to 56x56, two 3x3
//! convolution + ReLU + 2x2 max-pool stages) followed by a pointwise
//! projection to the channel width with ReLU, then either global average
//! pooling (`channels` features) or 2x2 grid average pooling
//! (`4 * channels` features).
//!
//! With `pretrained` weights the first stage is a fixed bank of colour and
//! orientation filters and the later stages come from a fixed per-architecture
//! seed. With `random` weights every stage is drawn from the caller's seed and
//! the projection stage is trainable.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::image::{Geometry, Image};
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneName {
    Vgg16,
    Vgg19,
    Resnet50,
    InceptionV3,
}

impl BackboneName {
    pub const ALL: [BackboneName; 4] =
        [BackboneName::Vgg16, BackboneName::Vgg19, BackboneName::Resnet50, BackboneName::InceptionV3];

    pub fn as_str(&self) -> &'static str {
        match self {
            BackboneName::Vgg16 => "vgg16",
            BackboneName::Vgg19 => "vgg19",
            BackboneName::Resnet50 => "resnet50",
            BackboneName::InceptionV3 => "inception_v3",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.as_str() == name)
            .ok_or_else(|| Error::UnknownBackbone(name.into()))
    }

    pub fn input_geometry(&self) -> Geometry {
        match self {
            BackboneName::InceptionV3 => Geometry::SQUARE_299,
            _ => Geometry::SQUARE_224,
        }
    }

    fn layout(&self) -> Layout {
        match self {
            BackboneName::Vgg16 => Layout { stem1: 16, stem2: 32, channels: 512 },
            BackboneName::Vgg19 => Layout { stem1: 16, stem2: 48, channels: 512 },
            BackboneName::Resnet50 => Layout { stem1: 24, stem2: 32, channels: 2048 },
            BackboneName::InceptionV3 => Layout { stem1: 24, stem2: 48, channels: 2048 },
        }
    }

    fn preprocessing(&self) -> Preprocessing {
        match self {
            BackboneName::InceptionV3 => Preprocessing::SymmetricUnit,
            _ => Preprocessing::CaffeMean,
        }
    }

    fn checkpoint_seed(&self) -> u64 {
        rng::derive(0x5eed_ba5e, "checkpoint", self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    Pretrained,
    Random,
}

/// Named architecture, its input geometry and the width of the features it
/// hands to the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub name: BackboneName,
    pub input_geometry: Geometry,
    pub feature_dim: usize,
    pub weight_source: WeightSource,
    pub global_average_pooling: bool,
}

impl BackboneSpec {
    /// Spec as reported by the adapter for `name`.
    pub fn new(name: BackboneName, weight_source: WeightSource, global_average_pooling: bool) -> Self {
        let channels = name.layout().channels;
        BackboneSpec {
            name,
            input_geometry: name.input_geometry(),
            feature_dim: if global_average_pooling { channels } else { GRID_CELLS * channels },
            weight_source,
            global_average_pooling,
        }
    }

    /// Fails when geometry or feature width disagree with the adapter.
    pub fn validate(&self) -> Result<()> {
        let reported = BackboneSpec::new(self.name, self.weight_source, self.global_average_pooling);
        if self.input_geometry != reported.input_geometry {
            return Err(Error::GeometryMismatch {
                expected: (reported.input_geometry.height, reported.input_geometry.width),
                found: (self.input_geometry.height, self.input_geometry.width),
            });
        }
        if self.feature_dim != reported.feature_dim {
            return Err(Error::InvalidConfig(alloc::format!(
                "{} reports feature_dim {}, spec says {}",
                self.name.as_str(),
                reported.feature_dim,
                self.feature_dim
            )));
        }
        Ok(())
    }

    pub fn is_frozen(&self) -> bool {
        self.weight_source == WeightSource::Pretrained
    }
}

const STEM_INPUT: usize = 56;
const STEM_OUTPUT: usize = 14;
const GRID_CELLS: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Layout {
    stem1: usize,
    stem2: usize,
    channels: usize,
}

#[derive(Debug, Clone, Copy)]
enum Preprocessing {
    /// Reverse to BGR and subtract the ImageNet channel means.
    CaffeMean,
    /// Map `[0, 1]` to `[-1, 1]`.
    SymmetricUnit,
}

const BGR_MEAN: [f32; 3] = [103.939 / 255.0, 116.779 / 255.0, 123.68 / 255.0];

/// 3x3 convolution, weights laid out `[out][ky][kx][in]`, padding 1.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Conv3 {
    pub input: usize,
    pub output: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv3 {
    fn he(input: usize, output: usize, r: &mut rng::Rng) -> Self {
        let bound = libm::sqrtf(6.0 / (9 * input) as f32);
        let weight = (0..output * 9 * input).map(|_| r.random_range(-bound..bound)).collect();
        Conv3 { input, output, weight, bias: vec![0.0; output] }
    }

    // x: side*side*input, returns side*side*output after ReLU.
    fn forward_relu(&self, x: &[f32], side: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; side * side * self.output];
        let mut patch = vec![0.0f32; 9 * self.input];
        for r in 0..side {
            for c in 0..side {
                patch.fill(0.0);
                for ky in 0..3 {
                    let yy = r as isize + ky as isize - 1;
                    if yy < 0 || yy >= side as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let xx = c as isize + kx as isize - 1;
                        if xx < 0 || xx >= side as isize {
                            continue;
                        }
                        let src = (yy as usize * side + xx as usize) * self.input;
                        let dst = (ky * 3 + kx) * self.input;
                        patch[dst..dst + self.input].copy_from_slice(&x[src..src + self.input]);
                    }
                }
                let o = (r * side + c) * self.output;
                for (k, w) in self.weight.chunks_exact(9 * self.input).enumerate() {
                    let v = dot(w, &patch) + self.bias[k];
                    out[o + k] = v.max(0.0);
                }
            }
        }
        out
    }
}

/// Pointwise (1x1) projection, weights `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Pointwise {
    pub input: usize,
    pub output: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        for j in 0..8 {
            acc[j] += a[i * 8 + j] * b[i * 8 + j];
        }
    }
    let mut s: f32 = acc.iter().sum();
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// A feature extractor for one of the named architectures.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    spec: BackboneSpec,
    conv1: Conv3,
    conv2: Conv3,
    pub(crate) projection: Pointwise,
}

/// Intermediate encoding of an image, ready for the trainable stages.
///
/// For frozen backbones this is the pooled feature vector; for trainable
/// ones it is the stem feature map feeding the projection stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded(pub(crate) Vec<f32>);

impl Encoded {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

impl Backbone {
    /// Instantiate the adapter. `seed` is only used for random weights.
    pub fn new(spec: BackboneSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layout = spec.name.layout();
        let (conv1, stage_seed) = match spec.weight_source {
            WeightSource::Pretrained => (filter_bank(layout.stem1), spec.name.checkpoint_seed()),
            WeightSource::Random => {
                let s = rng::derive(seed, "backbone", spec.name.as_str());
                (Conv3::he(3, layout.stem1, &mut rng::seeded(s)), s)
            }
        };
        let mut r = rng::seeded(rng::mix64(stage_seed));
        let conv2 = Conv3::he(layout.stem1, layout.stem2, &mut r);
        let bound = libm::sqrtf(6.0 / layout.stem2 as f32);
        let projection = Pointwise {
            input: layout.stem2,
            output: layout.channels,
            weight: (0..layout.stem2 * layout.channels).map(|_| r.random_range(-bound..bound)).collect(),
            bias: vec![0.0; layout.channels],
        };
        Ok(Backbone { spec, conv1, conv2, projection })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    pub fn input_geometry(&self) -> Geometry {
        self.spec.input_geometry
    }

    /// Whether the projection stage is trained along with the head.
    pub fn trainable_projection(&self) -> bool {
        !self.spec.is_frozen()
    }

    pub fn trainable_parameter_count(&self) -> usize {
        if self.trainable_projection() {
            self.projection.weight.len() + self.projection.bias.len()
        } else {
            0
        }
    }

    /// Encode for training: pooled features when frozen, stem maps otherwise.
    pub fn encode(&self, image: &Image) -> Result<Encoded> {
        let stem = self.stem(image)?;
        if self.trainable_projection() {
            Ok(Encoded(stem))
        } else {
            Ok(Encoded(self.project_and_pool(&stem)))
        }
    }

    /// Pooled backbone features of width `feature_dim`.
    pub fn features(&self, image: &Image) -> Result<Vec<f32>> {
        let stem = self.stem(image)?;
        Ok(self.project_and_pool(&stem))
    }

    fn stem(&self, image: &Image) -> Result<Vec<f32>> {
        image.require_geometry(self.spec.input_geometry)?;
        let pre = preprocess(image, self.spec.name.preprocessing());
        let pooled = adaptive_avg_pool(&pre, image.height(), image.width(), STEM_INPUT);
        let a = max_pool2(&self.conv1.forward_relu(&pooled, STEM_INPUT), STEM_INPUT, self.conv1.output);
        let b = max_pool2(&self.conv2.forward_relu(&a, STEM_INPUT / 2), STEM_INPUT / 2, self.conv2.output);
        Ok(b)
    }

    /// Pre-activation projection at every stem position.
    pub(crate) fn project(&self, stem: &[f32]) -> Vec<f32> {
        let p = &self.projection;
        let mut z = vec![0.0f32; STEM_OUTPUT * STEM_OUTPUT * p.output];
        for (pos, x) in stem.chunks_exact(p.input).enumerate() {
            let row = &mut z[pos * p.output..(pos + 1) * p.output];
            for (k, w) in p.weight.chunks_exact(p.input).enumerate() {
                row[k] = dot(w, x) + p.bias[k];
            }
        }
        z
    }

    fn project_and_pool(&self, stem: &[f32]) -> Vec<f32> {
        let z = self.project(stem);
        self.pool_relu(&z)
    }

    // Cell index of a stem position under the active pooling.
    pub(crate) fn cell_of(&self, pos: usize) -> usize {
        if self.spec.global_average_pooling {
            0
        } else {
            let half = STEM_OUTPUT / 2;
            let (r, c) = (pos / STEM_OUTPUT, pos % STEM_OUTPUT);
            (r / half) * 2 + c / half
        }
    }

    pub(crate) fn positions_per_cell(&self) -> f32 {
        if self.spec.global_average_pooling {
            (STEM_OUTPUT * STEM_OUTPUT) as f32
        } else {
            (STEM_OUTPUT * STEM_OUTPUT / GRID_CELLS) as f32
        }
    }

    pub(crate) fn pool_relu(&self, z: &[f32]) -> Vec<f32> {
        let ch = self.projection.output;
        let mut out = vec![0.0f32; self.spec.feature_dim];
        for (pos, row) in z.chunks_exact(ch).enumerate() {
            let cell = self.cell_of(pos);
            let dst = &mut out[cell * ch..(cell + 1) * ch];
            for (d, &v) in dst.iter_mut().zip(row) {
                *d += v.max(0.0);
            }
        }
        let n = self.positions_per_cell();
        out.iter_mut().for_each(|v| *v /= n);
        out
    }

    /// Stable fingerprint of every backbone weight, for freeze checks.
    pub fn fingerprint(&self) -> u64 {
        let mut h = rng::fnv1a(self.spec.name.as_str().as_bytes());
        for t in [
            &self.conv1.weight,
            &self.conv1.bias,
            &self.conv2.weight,
            &self.conv2.bias,
            &self.projection.weight,
            &self.projection.bias,
        ] {
            for v in t.iter() {
                h = rng::mix64(h ^ u64::from(v.to_bits()));
            }
        }
        h
    }

    pub(crate) fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f32])> {
        vec![
            ("backbone.conv1.weight", vec![self.conv1.output, 3, 3, self.conv1.input], &self.conv1.weight[..]),
            ("backbone.conv1.bias", vec![self.conv1.output], &self.conv1.bias[..]),
            ("backbone.conv2.weight", vec![self.conv2.output, 3, 3, self.conv2.input], &self.conv2.weight[..]),
            ("backbone.conv2.bias", vec![self.conv2.output], &self.conv2.bias[..]),
            ("backbone.projection.weight", vec![self.projection.output, self.projection.input], &self.projection.weight[..]),
            ("backbone.projection.bias", vec![self.projection.output], &self.projection.bias[..]),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Vec<f32>)> {
        vec![
            ("backbone.conv1.weight", &mut self.conv1.weight),
            ("backbone.conv1.bias", &mut self.conv1.bias),
            ("backbone.conv2.weight", &mut self.conv2.weight),
            ("backbone.conv2.bias", &mut self.conv2.bias),
            ("backbone.projection.weight", &mut self.projection.weight),
            ("backbone.projection.bias", &mut self.projection.bias),
        ]
    }
}

fn preprocess(image: &Image, mode: Preprocessing) -> Vec<f32> {
    let mut out = Vec::with_capacity(image.data().len());
    for px in image.data().chunks_exact(3) {
        match mode {
            Preprocessing::CaffeMean => {
                out.extend([px[2] - BGR_MEAN[0], px[1] - BGR_MEAN[1], px[0] - BGR_MEAN[2]]);
            }
            Preprocessing::SymmetricUnit => out.extend(px.iter().map(|v| v * 2.0 - 1.0)),
        }
    }
    out
}

fn adaptive_avg_pool(x: &[f32], h: usize, w: usize, side: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; side * side * 3];
    for r in 0..side {
        let (y0, y1) = (r * h / side, ((r + 1) * h).div_ceil(side));
        for c in 0..side {
            let (x0, x1) = (c * w / side, ((c + 1) * w).div_ceil(side));
            let mut acc = [0.0f32; 3];
            for yy in y0..y1 {
                for xx in x0..x1 {
                    let i = (yy * w + xx) * 3;
                    acc[0] += x[i];
                    acc[1] += x[i + 1];
                    acc[2] += x[i + 2];
                }
            }
            let n = ((y1 - y0) * (x1 - x0)) as f32;
            let o = (r * side + c) * 3;
            for ch in 0..3 {
                out[o + ch] = acc[ch] / n;
            }
        }
    }
    out
}

fn max_pool2(x: &[f32], side: usize, channels: usize) -> Vec<f32> {
    let half = side / 2;
    let mut out = vec![f32::MIN; half * half * channels];
    for r in 0..half * 2 {
        for c in 0..half * 2 {
            let src = &x[(r * side + c) * channels..(r * side + c + 1) * channels];
            let dst = &mut out[((r / 2) * half + c / 2) * channels..((r / 2) * half + c / 2 + 1) * channels];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = d.max(v);
            }
        }
    }
    out
}

// Colour-opponent projections crossed with oriented 3x3 kernels.
fn filter_bank(count: usize) -> Conv3 {
    const COLORS: [[f32; 3]; 3] = [
        [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        [0.5, -0.5, 0.0],
        [-0.25, -0.25, 0.5],
    ];
    const KERNELS: [[f32; 9]; 8] = [
        [1.0 / 9.0; 9],
        [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0],
        [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0],
        [0.0, 1.0, 2.0, -1.0, 0.0, 1.0, -2.0, -1.0, 0.0],
        [2.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, -1.0, -2.0],
        [0.0, -1.0, 0.0, -1.0, 4.0, -1.0, 0.0, -1.0, 0.0],
        [1.0, -2.0, 1.0, 1.0, -2.0, 1.0, 1.0, -2.0, 1.0],
        [1.0, 1.0, 1.0, -2.0, -2.0, -2.0, 1.0, 1.0, 1.0],
    ];
    let mut weight = Vec::with_capacity(count * 27);
    let mut bias = Vec::with_capacity(count);
    for i in 0..count {
        // alternate signs so each response pair keeps both polarities after ReLU
        let sign = if (i / (COLORS.len() * KERNELS.len())) % 2 == 0 { 1.0 } else { -1.0 };
        let k = &KERNELS[(i / COLORS.len()) % KERNELS.len()];
        let color = &COLORS[i % COLORS.len()];
        for tap in k {
            weight.extend(color.iter().map(|c| sign * c * tap * 4.0));
        }
        bias.push(if i < COLORS.len() { 0.5 } else { 0.0 });
    }
    Conv3 { input: 3, output: count, weight, bias }
}
