//! Image decoding and PNG output.

use std::io::Cursor;
use std::path::Path;

use bombus_core::image::{standardize, Geometry, Image, RawImage};
use image::{DynamicImage, ImageFormat};

use crate::{read_bytes, write_file, Error, Result};

/// Decode PNG or JPEG bytes, keeping 1, 3 or 4 channels.
pub fn decode(bytes: &[u8]) -> Result<RawImage> {
    if bytes.is_empty() {
        return Err(Error::Decode("empty input".into()));
    }
    let img = image::load_from_memory(bytes).map_err(|e| Error::Decode(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = match img {
        DynamicImage::ImageLuma8(b) => RawImage::new(w, h, 1, b.into_raw()),
        DynamicImage::ImageRgb8(b) => RawImage::new(w, h, 3, b.into_raw()),
        DynamicImage::ImageRgba8(b) => RawImage::new(w, h, 4, b.into_raw()),
        other if other.color().has_alpha() => RawImage::new(w, h, 4, other.to_rgba8().into_raw()),
        other => RawImage::new(w, h, 3, other.to_rgb8().into_raw()),
    };
    Ok(raw?)
}

/// Decode and standardize in one step.
pub fn decode_standardized(bytes: &[u8], geometry: Geometry) -> Result<Image> {
    Ok(standardize(&decode(bytes)?, geometry)?)
}

pub fn load_image(path: &Path, geometry: Geometry) -> Result<Image> {
    let bytes = read_bytes(path)?;
    decode_standardized(&bytes, geometry).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
}

pub fn encode_png(image: &Image) -> Vec<u8> {
    let buf = image::RgbImage::from_raw(image.width() as u32, image.height() as u32, image.to_rgb8())
        .expect("buffer matches geometry");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn save_png(path: &Path, image: &Image) -> Result<()> {
    write_file(path, encode_png(image))
}
