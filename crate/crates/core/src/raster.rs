//! Image and scalar-grid containers plus the resampling used across the pipeline.

use std::path::Path;

use image::{GrayImage, Luma, Rgb as PixelRgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear RGB triple with components in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rgb(pub [f64; 3]);

impl Rgb {
    pub const BLACK: Rgb = Rgb([0.0, 0.0, 0.0]);
    pub const WHITE: Rgb = Rgb([1.0, 1.0, 1.0]);

    pub fn new(r: f64, g: f64, b: f64) -> Self {
        Rgb([r, g, b])
    }

    pub fn clamped(self) -> Self {
        Rgb(self.0.map(|v| v.clamp(0.0, 1.0)))
    }

    pub fn distance(&self, other: &Rgb) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Relative luminance with sRGB linearisation.
    pub fn relative_luminance(&self) -> f64 {
        let lin = |c: f64| {
            if c <= 0.03928 {
                c / 12.92
            } else {
                ((c + 0.055) / 1.055).powf(2.4)
            }
        };
        0.2126 * lin(self.0[0]) + 0.7152 * lin(self.0[1]) + 0.0722 * lin(self.0[2])
    }

    /// Luminance contrast ratio `(L_hi + 0.05) / (L_lo + 0.05)`, always `>= 1`.
    pub fn contrast_ratio(&self, other: &Rgb) -> f64 {
        let (a, b) = (self.relative_luminance(), other.relative_luminance());
        (a.max(b) + 0.05) / (a.min(b) + 0.05)
    }

    pub fn to_hex(&self) -> String {
        let c = self.clamped().0.map(|v| (v * 255.0).round() as u8);
        format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
    }

    pub fn from_hex(hex: &str) -> Result<Self> {
        let s = hex.trim_start_matches('#');
        if s.len() != 6 || !s.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(Error::invalid(format!("bad hex color `{hex}`")));
        }
        let channel = |i: usize| u8::from_str_radix(&s[i..i + 2], 16).map(|v| v as f64 / 255.0);
        Ok(Rgb([
            channel(0).expect("validated hex"),
            channel(2).expect("validated hex"),
            channel(4).expect("validated hex"),
        ]))
    }
}

/// Row-major scalar field, used for saliency, smooth-region and layout maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "grid {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
    }

    /// Resamples to `width x height`: area averaging when shrinking an axis,
    /// bilinear interpolation when enlarging it.
    pub fn resized(&self, width: usize, height: usize) -> Grid {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let horizontal = resample_axis(&self.data, self.width, self.height, width, true);
        let data = resample_axis(&horizontal, width, self.height, height, false);
        Grid {
            width,
            height,
            data,
        }
    }

    /// Mean of the cells whose centres lie inside a normalized box.
    pub fn box_mean(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> Option<f64> {
        let (c0, c1) = pixel_span(x0, x1, self.width);
        let (r0, r1) = pixel_span(y0, y1, self.height);
        let n = (c1 - c0) * (r1 - r0);
        if n == 0 {
            return None;
        }
        let mut sum = 0.0;
        for y in r0..r1 {
            sum += self.data[y * self.width + c0..y * self.width + c1].iter().sum::<f64>();
        }
        Some(sum / n as f64)
    }

    /// Writes the grid as 8-bit grayscale, values clamped to `[0, 1]`.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let img = GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([(self.at(x as usize, y as usize).clamp(0.0, 1.0) * 255.0).round() as u8])
        });
        img.save(path)?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Grid> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| Error::load(path, e.to_string()))?
            .to_luma8();
        let data = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
        Grid::new(img.width() as usize, img.height() as usize, data)
    }
}

/// Pixel index range `[lo, hi)` whose centres fall in `[a, b)` on an axis of `n` pixels.
pub fn pixel_span(a: f64, b: f64, n: usize) -> (usize, usize) {
    let idx = |v: f64| ((v * n as f64 - 0.5).ceil().max(0.0) as usize).min(n);
    let (lo, hi) = (idx(a), idx(b));
    (lo, hi.max(lo))
}

fn resample_axis(src: &[f64], w: usize, h: usize, new_len: usize, horizontal: bool) -> Vec<f64> {
    let (old_len, lines) = if horizontal { (w, h) } else { (h, w) };
    let (out_w, out_h) = if horizontal { (new_len, h) } else { (w, new_len) };
    let mut out = vec![0.0; out_w * out_h];
    let get = |line: usize, i: usize| {
        if horizontal {
            src[line * w + i]
        } else {
            src[i * w + line]
        }
    };
    let scale = old_len as f64 / new_len as f64;
    for line in 0..lines {
        for j in 0..new_len {
            let v = if new_len < old_len {
                // Exact area average over the source interval [j*scale, (j+1)*scale).
                let (a, b) = (j as f64 * scale, (j + 1) as f64 * scale);
                let mut acc = 0.0;
                let mut i = a.floor() as usize;
                while (i as f64) < b && i < old_len {
                    let lo = a.max(i as f64);
                    let hi = b.min(i as f64 + 1.0);
                    acc += get(line, i) * (hi - lo);
                    i += 1;
                }
                acc / scale
            } else {
                let pos = ((j as f64 + 0.5) * scale - 0.5).clamp(0.0, (old_len - 1) as f64);
                let i0 = pos.floor() as usize;
                let i1 = (i0 + 1).min(old_len - 1);
                let t = pos - i0 as f64;
                get(line, i0) * (1.0 - t) + get(line, i1) * t
            };
            let (x, y) = if horizontal { (j, line) } else { (line, j) };
            out[y * out_w + x] = v;
        }
    }
    out
}

/// Interleaved raster with 1 (gray) or 3 (RGB) channels, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("unsupported channel count {channels}")));
        }
        if width == 0 || height == 0 || data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "raster {width}x{height}x{channels} does not match {} values",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(RasterImage {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        let c = color.clamped().0.map(|v| v as f32);
        RasterImage {
            width,
            height,
            channels: 3,
            data: c.iter().copied().cycle().take(width * height * 3).collect(),
        }
    }

    pub fn from_gray(grid: &Grid) -> Self {
        RasterImage {
            width: grid.width,
            height: grid.height,
            channels: 1,
            data: grid.data.iter().map(|v| v.clamp(0.0, 1.0) as f32).collect(),
        }
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * self.channels;
        if self.channels == 1 {
            let v = self.data[i] as f64;
            Rgb([v, v, v])
        } else {
            Rgb([self.data[i] as f64, self.data[i + 1] as f64, self.data[i + 2] as f64])
        }
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, color: Rgb) {
        let i = (y * self.width + x) * self.channels;
        let c = color.clamped().0;
        if self.channels == 1 {
            self.data[i] = (0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]) as f32;
        } else {
            for k in 0..3 {
                self.data[i + k] = c[k] as f32;
            }
        }
    }

    /// Luminance plane with weights 0.299 / 0.587 / 0.114.
    pub fn luminance(&self) -> Grid {
        let data = if self.channels == 1 {
            self.data.iter().map(|v| *v as f64).collect()
        } else {
            self.data
                .chunks_exact(3)
                .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
                .collect()
        };
        Grid {
            width: self.width,
            height: self.height,
            data,
        }
    }

    fn channel_grid(&self, k: usize) -> Grid {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().skip(k).step_by(self.channels).map(|v| *v as f64).collect(),
        }
    }

    pub fn resized(&self, width: usize, height: usize) -> RasterImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let planes: Vec<Grid> = (0..self.channels)
            .map(|k| self.channel_grid(k).resized(width, height))
            .collect();
        let mut data = Vec::with_capacity(width * height * self.channels);
        for i in 0..width * height {
            for p in &planes {
                data.push(p.data[i].clamp(0.0, 1.0) as f32);
            }
        }
        RasterImage {
            width,
            height,
            channels: self.channels,
            data,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::missing(path, "image file not found"));
        }
        let img = image::open(path)
            .map_err(|e| Error::load(path, e.to_string()))?
            .to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        RasterImage {
            width: img.width() as usize,
            height: img.height() as usize,
            channels: 3,
            data: img.as_raw().iter().map(|v| *v as f32 / 255.0).collect(),
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let c = self.pixel(x as usize, y as usize).0;
            PixelRgb(c.map(|v| (v * 255.0).round() as u8))
        })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8().save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

/// Serde helpers storing an [`Rgb`] as `#rrggbb`.
pub(crate) mod hex_color {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::raster::Rgb;

    pub fn serialize<S: Serializer>(c: &Rgb, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&c.to_hex())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rgb, D::Error> {
        let s = String::deserialize(d)?;
        Rgb::from_hex(&s).map_err(serde::de::Error::custom)
    }
}
