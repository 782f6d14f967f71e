//! 8-bit grayscale and RGB images with PNM file I/O.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ColorType, ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};

/// Interleaved 8-bit samples, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if !(channels == 1 || channels == 3) {
            return Err(Error::input(format!("{channels} colour channels; expected 1 or 3")));
        }
        if width == 0 || height == 0 || data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Image { width, height, channels, data })
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn sample(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Round and clip real samples into an image.
    pub fn from_f64(width: usize, height: usize, channels: usize, samples: &[f64]) -> Result<Self> {
        let data = samples.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        Image::new(width, height, channels, data)
    }

    /// Read a binary PGM (P5) or PPM (P6) file.
    pub fn read_pnm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::decode_pnm(&bytes)
    }

    pub fn decode_pnm(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Pnm)
            .map_err(|e| Error::format(format!("PNM: {e}")))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img.color() {
            ColorType::L8 | ColorType::L16 | ColorType::La8 | ColorType::La16 => {
                Image::new(w, h, 1, img.to_luma8().into_raw())
            }
            _ => Image::new(w, h, 3, img.to_rgb8().into_raw()),
        }
    }

    /// Binary PGM for one channel, binary PPM for three.
    pub fn encode_pnm(&self) -> Result<Vec<u8>> {
        let (subtype, color) = if self.channels == 1 {
            (PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8)
        } else {
            (PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8)
        };
        let mut out = Vec::new();
        PnmEncoder::new(&mut out)
            .with_subtype(subtype)
            .write_image(&self.data, self.width as u32, self.height as u32, color)
            .map_err(|e| Error::format(format!("PNM: {e}")))?;
        Ok(out)
    }

    pub fn write_pnm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_pnm()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pnm_round_trip() {
        for channels in [1, 3] {
            let data: Vec<u8> = (0..5 * 3 * channels).map(|i| (i * 17 % 256) as u8).collect();
            let img = Image::new(5, 3, channels, data).unwrap();
            let bytes = img.encode_pnm().unwrap();
            assert_eq!(&bytes[..2], if channels == 1 { b"P5" } else { b"P6" });
            assert_eq!(Image::decode_pnm(&bytes).unwrap(), img);
        }
        assert!(Image::decode_pnm(b"P5 garbage").is_err());
        assert!(Image::new(2, 2, 2, vec![0; 8]).is_err());
    }
}
