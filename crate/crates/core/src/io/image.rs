//! Linear RGB float images and 8-bit PNG I/O.

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use crate::geometry::Vec3;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    /// Row-major interleaved RGB.
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, &Vec3::zeros())
    }

    pub fn filled(width: u32, height: u32, rgb: &Vec3) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(3 * n);
        for _ in 0..n {
            data.extend_from_slice(rgb.as_slice());
        }
        Self { width, height, data }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), 3 * width as usize * height as usize, "image buffer size");
        Self { width, height, data }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn get(&self, x: u32, y: u32) -> Vec3 {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        Vec3::new(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    pub fn set(&mut self, x: u32, y: u32, rgb: &Vec3) {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        self.data[i..i + 3].copy_from_slice(rgb.as_slice());
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Every `stride`-th pixel, matching `Camera::subsampled`.
    pub fn subsampled(&self, stride: u32) -> Image {
        if stride == 1 {
            return self.clone();
        }
        let (w, h) = (self.width.div_ceil(stride), self.height.div_ceil(stride));
        let mut out = Image::new(w, h);
        for y in 0..h {
            for x in 0..w {
                out.set(x, y, &self.get(x * stride, y * stride));
            }
        }
        out
    }

    /// Values clamped to `[0, 1]` and quantized to 8 bits, as stored in PNG.
    pub fn quantized(&self) -> Image {
        Image {
            data: self.data.iter().map(|&v| quantize(v) as f64 / 255.0).collect(),
            ..*self
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        ImageBuffer::from_fn(self.width, self.height, |x, y| {
            let c = self.get(x, y);
            Rgb([quantize(c.x), quantize(c.y), quantize(c.z)])
        })
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        }
    }

    pub fn save_png(&self, path: &Path) -> image::ImageResult<()> {
        self.to_rgb8().save_with_format(path, image::ImageFormat::Png)
    }

    pub fn load(path: &Path) -> image::ImageResult<Self> {
        Ok(Self::from_rgb8(&image::open(path)?.to_rgb8()))
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Grayscale visualization of a single-channel buffer.
pub fn gray_image(width: u32, height: u32, values: &[f64]) -> Image {
    Image::from_data(width, height, values.iter().flat_map(|&v| [v, v, v]).collect())
}
