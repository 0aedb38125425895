// SPDX-License-Identifier: Apache-2.0

//! 8-bit raster buffer used for artworks, face crops and video frames.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("invalid image geometry {width}x{height}x{channels}")]
    InvalidGeometry {
        width: usize,
        height: usize,
        channels: usize,
    },
    #[error("pixel buffer holds {got} bytes, expected {expected}")]
    BufferSize { expected: usize, got: usize },
    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major interleaved pixels, `x` right and `y` down. 1 (gray) or 3 (RGB)
/// channels.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl ImageBuffer {
    pub fn from_raw(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(ImageError::InvalidGeometry { width, height, channels });
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(ImageError::BufferSize {
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Uniform image. Panics on zero dimensions or a channel count other
    /// than 1 or 3.
    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Self::from_raw(width, height, channels, vec![value; width * height * channels])
            .expect("valid geometry")
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::from_raw(width, height, channels, data).expect("valid geometry")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    fn offset(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let o = self.offset(x, y);
        &self.data[o..o + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let o = self.offset(x, y);
        let c = self.channels;
        &mut self.data[o..o + c]
    }

    pub fn row(&self, y: usize) -> &[u8] {
        let start = self.offset(0, y);
        &self.data[start..start + self.width * self.channels]
    }

    pub fn row_mut(&mut self, y: usize) -> &mut [u8] {
        let start = self.offset(0, y);
        let len = self.width * self.channels;
        &mut self.data[start..start + len]
    }

    /// Converts between gray and RGB (BT.601 luma for RGB to gray).
    pub fn to_channels(&self, channels: usize) -> ImageBuffer {
        match (self.channels, channels) {
            (a, b) if a == b => self.clone(),
            (1, 3) => Self::from_fn(self.width, self.height, 3, |x, y, _| self.pixel(x, y)[0]),
            (3, 1) => Self::from_fn(self.width, self.height, 1, |x, y, _| {
                let p = self.pixel(x, y);
                (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).round() as u8
            }),
            (_, c) => panic!("unsupported channel count {c}"),
        }
    }

    fn to_dynamic(&self) -> DynamicImage {
        let (w, h) = (self.width as u32, self.height as u32);
        match self.channels {
            1 => DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, self.data.clone()).expect("sized")),
            _ => DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, self.data.clone()).expect("sized")),
        }
    }

    fn from_dynamic(img: DynamicImage) -> Result<Self, ImageError> {
        match img {
            DynamicImage::ImageLuma8(g) => {
                let (w, h) = g.dimensions();
                Self::from_raw(w as usize, h as usize, 1, g.into_raw())
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                Self::from_raw(w as usize, h as usize, 3, rgb.into_raw())
            }
        }
    }

    /// Gray images stay single-channel; everything else becomes RGB.
    pub fn load(path: &Path) -> Result<Self, ImageError> {
        Self::from_dynamic(image::open(path)?)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, ImageError> {
        Self::from_dynamic(image::load_from_memory_with_format(bytes, ImageFormat::Png)?)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        let mut out = Cursor::new(Vec::new());
        self.to_dynamic().write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_geometry() {
        assert!(ImageBuffer::from_raw(0, 3, 3, vec![]).is_err());
        assert!(ImageBuffer::from_raw(2, 2, 4, vec![0; 16]).is_err());
        assert!(ImageBuffer::from_raw(2, 2, 3, vec![0; 11]).is_err());
    }

    #[test]
    fn addressing_is_row_major() {
        let img = ImageBuffer::from_fn(3, 2, 3, |x, y, c| (y * 100 + x * 10 + c) as u8);
        assert_eq!(img.pixel(2, 1), &[120, 121, 122]);
        assert_eq!(img.row(1)[0], 100);
    }

    #[test]
    fn png_round_trip_is_lossless() {
        for channels in [1, 3] {
            let img = ImageBuffer::from_fn(7, 5, channels, |x, y, c| (x * 31 + y * 17 + c * 5) as u8);
            let back = ImageBuffer::decode_png(&img.encode_png().unwrap()).unwrap();
            assert_eq!(back, img);
        }
    }
}
