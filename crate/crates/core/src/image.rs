//! Standardized RGB images.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Height and width in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Geometry {
    pub height: usize,
    pub width: usize,
}

impl Geometry {
    /// Input size of VGG16, VGG19 and ResNet50.
    pub const SQUARE_224: Geometry = Geometry::new(224, 224);
    /// Input size of InceptionV3.
    pub const SQUARE_299: Geometry = Geometry::new(299, 299);

    pub const fn new(height: usize, width: usize) -> Self {
        Geometry { height, width }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    fn as_pair(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// Decoded 8-bit pixels with 1 (gray), 3 (RGB) or 4 (RGBA) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub channels: u8,
    pub data: Vec<u8>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, channels: u8, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage("zero-dimension image".into()));
        }
        if !matches!(channels, 1 | 3 | 4) {
            return Err(Error::InvalidImage(alloc::format!(
                "unsupported channel count {channels}"
            )));
        }
        if data.len() != width * height * usize::from(channels) {
            return Err(Error::InvalidImage("pixel buffer length mismatch".into()));
        }
        Ok(RawImage { width, height, channels, data })
    }
}

/// An H x W x 3 image with every value in `[0, 1]`, stored row-major with
/// interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    geometry: Geometry,
    data: Vec<f32>,
}

impl Image {
    pub fn new(geometry: Geometry, data: Vec<f32>) -> Result<Self> {
        if geometry.height == 0 || geometry.width == 0 {
            return Err(Error::InvalidImage("zero-dimension image".into()));
        }
        if data.len() != geometry.pixels() * 3 {
            return Err(Error::InvalidImage(alloc::format!(
                "expected {} values, found {}",
                geometry.pixels() * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(alloc::format!("value {v} outside [0, 1]")));
        }
        Ok(Image { geometry, data })
    }

    pub fn filled(geometry: Geometry, value: f32) -> Self {
        let value = value.clamp(0.0, 1.0);
        Image { geometry, data: vec![value; geometry.pixels() * 3] }
    }

    /// Internal constructor for operators that guarantee the invariants.
    /// Every pixel set to `rgb`, each channel clamped to `[0, 1]`.
    pub fn solid(geometry: Geometry, rgb: [f32; 3]) -> Self {
        let px = rgb.map(|v| v.clamp(0.0, 1.0));
        Image { geometry, data: px.iter().copied().cycle().take(geometry.pixels() * 3).collect() }
    }

    pub(crate) fn from_parts(geometry: Geometry, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), geometry.pixels() * 3);
        Image { geometry, data }
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.geometry.width + col) * 3 + channel]
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.geometry.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Quantize to 8-bit RGB (round to nearest).
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| libm::roundf(v * 255.0) as u8)
            .collect()
    }

    pub fn require_geometry(&self, expected: Geometry) -> Result<()> {
        if self.geometry != expected {
            return Err(Error::GeometryMismatch {
                expected: expected.as_pair(),
                found: self.geometry.as_pair(),
            });
        }
        Ok(())
    }

    /// Stretch or shrink to `target` with bilinear interpolation; the aspect
    /// ratio is not preserved. Returns an identical copy when the geometry
    /// already matches.
    pub fn resized(&self, target: Geometry) -> Image {
        if target == self.geometry {
            return self.clone();
        }
        let (sh, sw) = (self.geometry.height, self.geometry.width);
        let (th, tw) = (target.height, target.width);
        let scale_y = sh as f32 / th as f32;
        let scale_x = sw as f32 / tw as f32;
        let mut out = Vec::with_capacity(target.pixels() * 3);
        for r in 0..th {
            let (y0, y1, fy) = sample_axis(r, scale_y, sh);
            for c in 0..tw {
                let (x0, x1, fx) = sample_axis(c, scale_x, sw);
                for ch in 0..3 {
                    let top = self.get(y0, x0, ch) * (1.0 - fx) + self.get(y0, x1, ch) * fx;
                    let bottom = self.get(y1, x0, ch) * (1.0 - fx) + self.get(y1, x1, ch) * fx;
                    let v = top * (1.0 - fy) + bottom * fy;
                    out.push(v.clamp(0.0, 1.0));
                }
            }
        }
        Image::from_parts(target, out)
    }
}

// Half-pixel-centre source coordinate for destination index `i`.
fn sample_axis(i: usize, scale: f32, len: usize) -> (usize, usize, f32) {
    let src = ((i as f32 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f32);
    let lo = libm::floorf(src) as usize;
    let hi = (lo + 1).min(len - 1);
    (lo, hi, src - lo as f32)
}

/// Convert decoded pixels to a `[0, 1]` RGB image at exactly `target`.
///
/// Grayscale is replicated across channels and alpha is dropped.
pub fn standardize(raw: &RawImage, target: Geometry) -> Result<Image> {
    if raw.width == 0 || raw.height == 0 {
        return Err(Error::InvalidImage("zero-dimension image".into()));
    }
    if target.height == 0 || target.width == 0 {
        return Err(Error::InvalidImage("zero-dimension target geometry".into()));
    }
    let channels = usize::from(raw.channels);
    if !matches!(channels, 1 | 3 | 4) || raw.data.len() != raw.width * raw.height * channels {
        return Err(Error::InvalidImage("malformed pixel buffer".into()));
    }
    let mut data = Vec::with_capacity(raw.width * raw.height * 3);
    for px in raw.data.chunks_exact(channels) {
        let rgb = if channels == 1 { [px[0]; 3] } else { [px[0], px[1], px[2]] };
        data.extend(rgb.iter().map(|&v| f32::from(v) / 255.0));
    }
    let native = Image::from_parts(Geometry::new(raw.height, raw.width), data);
    Ok(native.resized(target))
}
