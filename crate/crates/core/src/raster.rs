//! Single-channel floating point rasters and grayscale image I/O.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, Result};

/// Row-major single-channel raster. NaN marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
    /// Intensity of full white (255 for 8-bit sources, 65535 for 16-bit).
    pub white: f32,
}

impl Raster {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "raster data size mismatch");
        Self {
            width,
            height,
            data,
            white: 255.0,
        }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    /// Bilinear interpolation; `None` outside the pixel-center hull or when
    /// any contributing pixel is invalid.
    #[inline]
    pub fn bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if !self.contains(x, y) {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let v00 = self.get(x0, y0) as f64;
        let v10 = self.get(x1, y0) as f64;
        let v01 = self.get(x0, y1) as f64;
        let v11 = self.get(x1, y1) as f64;
        let v = (v00 * (1.0 - fx) + v10 * fx) * (1.0 - fy) + (v01 * (1.0 - fx) + v11 * fx) * fy;
        v.is_finite().then_some(v)
    }

    /// Intensities rescaled to [0, 1] by the white level.
    pub fn normalized(&self) -> Raster {
        let k = 1.0 / self.white;
        let mut out = Raster::new(self.width, self.height, self.data.iter().map(|v| v * k).collect());
        out.white = 1.0;
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Raster> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(match img {
            DynamicImage::ImageLuma8(buf) => {
                let (w, h) = buf.dimensions();
                Raster::new(w as usize, h as usize, buf.into_raw().into_iter().map(f32::from).collect())
            }
            DynamicImage::ImageLuma16(buf) => {
                let (w, h) = buf.dimensions();
                let mut r = Raster::new(
                    w as usize,
                    h as usize,
                    buf.into_raw().into_iter().map(f32::from).collect(),
                );
                r.white = 65535.0;
                r
            }
            other => {
                return Err(Error::Validation(format!(
                    "{}: expected a single-channel 8/16-bit image, got {:?}",
                    path.display(),
                    other.color()
                )))
            }
        })
    }

    /// Writes an 8-bit PNG or PGM (by extension); values are clamped and
    /// invalid pixels written as 0.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let scale = 255.0 / self.white;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| if v.is_finite() { (v * scale).round().clamp(0.0, 255.0) as u8 } else { 0 })
            .collect();
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, bytes)
                .expect("buffer matches dimensions");
        buf.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(src: &Raster, sigma: f64) -> Raster {
    if sigma <= 0.0 {
        return src.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32)
        .collect();
    let sum: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);

    let (w, h) = (src.width, src.height);
    let mut tmp = vec![0f32; w * h];
    for y in 0..h {
        let row = &src.data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let xx = (x as isize + k as isize - radius).clamp(0, w as isize - 1) as usize;
                acc += kv * row[xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        for (k, &kv) in kernel.iter().enumerate() {
            let yy = (y as isize + k as isize - radius).clamp(0, h as isize - 1) as usize;
            let src_row = &tmp[yy * w..(yy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += kv * s;
            }
        }
    }
    let mut r = Raster::new(w, h, out);
    r.white = src.white;
    r
}

/// Keeps every second pixel in both directions.
pub fn decimate(src: &Raster) -> Raster {
    let (w, h) = (src.width.div_ceil(2), src.height.div_ceil(2));
    let mut r = Raster::from_fn(w, h, |x, y| src.get(2 * x, 2 * y));
    r.white = src.white;
    r
}
