//! Dense pixel containers and PNG import/export.
//!
//! [`Image`] stores `f64` samples interleaved per pixel, row-major, row 0 at
//! the top. [`Raster`] is a single-valued grid used for per-pixel buffers
//! (depth, face index, masks, weights).

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, &vec![0.0; channels])
    }

    pub fn filled(width: usize, height: usize, value: &[f64]) -> Self {
        let channels = value.len();
        let mut data = Vec::with_capacity(width * height * channels);
        for _ in 0..width * height {
            data.extend_from_slice(value);
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{}x{}x{} image needs {} samples, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize) -> Vec<f64>,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                let px = f(x, y);
                assert_eq!(px.len(), channels);
                data.extend_from_slice(&px);
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Pixel by flat (row-major) index.
    #[inline]
    pub fn at(&self, idx: usize) -> &[f64] {
        let i = idx * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn at_mut(&mut self, idx: usize) -> &mut [f64] {
        let i = idx * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Copy of the image restricted to the first `channels` channels, padding
    /// with zeros when more are requested.
    pub fn with_channels(&self, channels: usize) -> Image {
        let mut out = Image::new(self.width, self.height, channels);
        let keep = channels.min(self.channels);
        for i in 0..self.width * self.height {
            out.at_mut(i)[..keep].copy_from_slice(&self.at(i)[..keep]);
        }
        out
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Image {
        let mut data = Vec::with_capacity(width * height * self.channels);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Image {
            width,
            height,
            channels: self.channels,
            data,
        }
    }

    pub fn paste(&mut self, src: &Image, x0: usize, y0: usize) {
        assert_eq!(src.channels, self.channels);
        for y in 0..src.height {
            let dst = ((y0 + y) * self.width + x0) * self.channels;
            let s = y * src.width * src.channels;
            self.data[dst..dst + src.width * self.channels]
                .copy_from_slice(&src.data[s..s + src.width * src.channels]);
        }
    }

    pub fn clamped(&self) -> Image {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = v.clamp(0.0, 1.0);
        }
        out
    }

    /// Encode as 8-bit PNG (gray, RGB; extra channels dropped). Values are
    /// clamped to [0, 1] first.
    pub fn to_png8(&self) -> Result<Vec<u8>> {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let (w, h) = (self.width as u32, self.height as u32);
        let dyn_img = if self.channels >= 3 {
            let buf = ImageBuffer::<Rgb<u8>, _>::from_fn(w, h, |x, y| {
                let p = self.pixel(x as usize, y as usize);
                Rgb([q(p[0]), q(p[1]), q(p[2])])
            });
            DynamicImage::ImageRgb8(buf)
        } else {
            let buf = ImageBuffer::<Luma<u8>, _>::from_fn(w, h, |x, y| {
                Luma([q(self.pixel(x as usize, y as usize)[0])])
            });
            DynamicImage::ImageLuma8(buf)
        };
        encode_png(&dyn_img)
    }

    /// Encode channel 0 as 16-bit grayscale after mapping `[lo, hi]` onto the
    /// full range.
    pub fn to_png16(&self, lo: f64, hi: f64) -> Result<Vec<u8>> {
        let (w, h) = (self.width as u32, self.height as u32);
        let buf = ImageBuffer::<Luma<u16>, _>::from_fn(w, h, |x, y| {
            let v = self.pixel(x as usize, y as usize)[0];
            Luma([(((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 65535.0).round() as u16])
        });
        encode_png(&DynamicImage::ImageLuma16(buf))
    }

    /// Decode a PNG into [0, 1] samples. Grayscale stays single channel,
    /// everything else becomes RGB.
    pub fn from_png(bytes: &[u8]) -> Result<Image> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| Error::Image(e.to_string()))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        Ok(match img {
            DynamicImage::ImageLuma8(b) => Image {
                width: w,
                height: h,
                channels: 1,
                data: b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
            },
            DynamicImage::ImageLuma16(b) => Image {
                width: w,
                height: h,
                channels: 1,
                data: b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
            },
            DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => {
                let b = img.to_rgb16();
                Image {
                    width: w,
                    height: h,
                    channels: 3,
                    data: b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
                }
            }
            other => {
                let b = other.to_rgb8();
                Image {
                    width: w,
                    height: h,
                    channels: 3,
                    data: b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
                }
            }
        })
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Image::from_png(&bytes)
    }
}

fn encode_png(img: &DynamicImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(out.into_inner())
}

/// Single-valued H×W grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{}x{} raster needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn map<U: Clone>(&self, f: impl FnMut(&T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Raster<T> {
        let mut data = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            let s = y * self.width + x0;
            data.extend_from_slice(&self.data[s..s + width]);
        }
        Raster {
            width,
            height,
            data,
        }
    }

    pub fn paste(&mut self, src: &Raster<T>, x0: usize, y0: usize) {
        for y in 0..src.height {
            let d = (y0 + y) * self.width + x0;
            let s = y * src.width;
            self.data[d..d + src.width].clone_from_slice(&src.data[s..s + src.width]);
        }
    }
}

impl Raster<f64> {
    pub fn to_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.clone(),
        }
    }
}

impl Raster<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn to_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Peak signal-to-noise ratio in dB for signals in [0, 1], over the samples
/// selected by `include` (pixel index).
pub fn psnr_masked(a: &Image, b: &Image, mut include: impl FnMut(usize) -> bool) -> f64 {
    assert_eq!(a.dims(), b.dims());
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..a.width() * a.height() {
        if !include(i) {
            continue;
        }
        for (x, y) in a.at(i).iter().zip(b.at(i)) {
            sum += (x - y) * (x - y);
            n += 1;
        }
    }
    if n == 0 {
        return f64::NAN;
    }
    let mse = sum / n as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub fn psnr(a: &Image, b: &Image) -> f64 {
    psnr_masked(a, b, |_| true)
}
