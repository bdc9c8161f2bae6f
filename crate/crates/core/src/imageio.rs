//! Binary PGM (P5) and PPM (P6) images.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// 8-bit image with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let (subtype, color) = match self.channels {
            1 => (PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8),
            3 => (PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8),
            c => return Err(Error::invalid(format!("unsupported channel count {c}"))),
        };
        let mut out = Vec::new();
        PnmEncoder::new(&mut out)
            .with_subtype(subtype)
            .write_image(&self.pixels, self.width, self.height, color)?;
        Ok(out)
    }

    pub fn decode(bytes: &[u8], channels: u8) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Pnm)?;
        let (width, height) = (img.width(), img.height());
        let pixels = match channels {
            1 => img.into_luma8().into_raw(),
            3 => img.into_rgb8().into_raw(),
            c => return Err(Error::invalid(format!("unsupported channel count {c}"))),
        };
        Ok(Self { width, height, channels, pixels })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>, channels: u8) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?, channels)
    }

    /// Planar `[3, H, W]` (or `[1, H, W]`) tensor in `[0, 1]`.
    pub fn to_planar(&self) -> Tensor<f32> {
        let (c, h, w) = (self.channels as usize, self.height as usize, self.width as usize);
        Tensor::from_fn(&[c, h, w], |i| {
            let (ch, rest) = (i / (h * w), i % (h * w));
            self.pixels[rest * c + ch] as f32 / 255.0
        })
    }

    /// Inverse of [`to_planar`](Self::to_planar); values are clamped to `[0, 1]` and rounded.
    pub fn from_planar(t: &Tensor<f32>) -> Result<Self> {
        let [c, h, w] = t.shape()[..] else {
            return Err(Error::shape("image", format!("expected [C, H, W], got {:?}", t.shape())));
        };
        if c != 1 && c != 3 {
            return Err(Error::shape("image", format!("expected 1 or 3 channels, got {c}")));
        }
        let mut pixels = vec![0u8; c * h * w];
        for (i, &v) in t.data().iter().enumerate() {
            let (ch, rest) = (i / (h * w), i % (h * w));
            pixels[rest * c + ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        Ok(Self { width: w as u32, height: h as u32, channels: c as u8, pixels })
    }
}
