//! Spectral-residual saliency.
//!
//! The log-amplitude spectrum of a natural image is close to its local
//! average; what sticks out of that average (the residual), recombined with
//! the original phase, marks the conspicuous parts of the image.

use std::ops::Deref;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Grid, RasterImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyConfig {
    /// Width of the internal working raster, in `[32, 256]`.
    pub working_width: usize,
    /// Side of the box filter applied to the log-amplitude spectrum.
    pub box_size: usize,
    /// Gaussian blur sigma as a fraction of `working_width`.
    pub blur_fraction: f64,
    /// Added to every amplitude before the log, as a fraction of the mean
    /// amplitude. Keeps exact spectral zeros from dominating the residual.
    pub amplitude_floor: f64,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        SaliencyConfig {
            working_width: 64,
            box_size: 3,
            blur_fraction: 1.0 / 64.0,
            amplitude_floor: 0.01,
        }
    }
}

/// Per-pixel saliency in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap(pub Grid);

impl Deref for SaliencyMap {
    type Target = Grid;
    fn deref(&self) -> &Grid {
        &self.0
    }
}

impl SaliencyMap {
    /// Area-resamples the map, e.g. down to the smooth-region grid.
    pub fn resized(&self, width: usize, height: usize) -> SaliencyMap {
        SaliencyMap(self.0.resized(width, height))
    }
}

pub fn spectral_residual(image: &RasterImage, working_width: usize) -> Result<SaliencyMap> {
    let config = SaliencyConfig {
        working_width,
        ..SaliencyConfig::default()
    };
    spectral_residual_with(image, &config)
}

pub fn spectral_residual_with(image: &RasterImage, config: &SaliencyConfig) -> Result<SaliencyMap> {
    if image.width() < 8 || image.height() < 8 {
        return Err(Error::invalid(format!(
            "saliency needs at least 8x8 pixels, got {}x{}",
            image.width(),
            image.height()
        )));
    }
    if !(32..=256).contains(&config.working_width) {
        return Err(Error::Config(format!(
            "working width {} outside [32, 256]",
            config.working_width
        )));
    }
    if !(config.amplitude_floor >= 0.0 && config.blur_fraction >= 0.0) {
        return Err(Error::Config("amplitude floor and blur must be non-negative".into()));
    }
    let (out_w, out_h) = (image.width(), image.height());
    let w = config.working_width;
    let h = ((out_h as f64 * w as f64 / out_w as f64).round() as usize).max(8);
    let gray = image.luminance().resized(w, h);

    let (lo, hi) = gray.min_max();
    if hi - lo < 1e-9 {
        return Ok(SaliencyMap(Grid::filled(out_w, out_h, 0.0)));
    }

    // Removing the mean zeroes the DC term, so a global intensity shift
    // cannot change the result.
    let mean = gray.mean();
    let mut spectrum: Vec<Complex<f64>> =
        gray.data.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();
    fft2(&mut planner, &mut spectrum, w, h, false);

    let amplitude: Vec<f64> = spectrum.iter().map(|z| z.norm()).collect();
    let peak = amplitude.iter().cloned().fold(0.0, f64::max);
    let zero = peak * 1e-12 + f64::MIN_POSITIVE;
    let mean_amp = amplitude.iter().sum::<f64>() / (amplitude.len() - 1) as f64;
    let floor = config.amplitude_floor * mean_amp + f64::MIN_POSITIVE;
    let log_amp: Vec<f64> = amplitude.iter().map(|a| (a + floor).ln()).collect();
    let smoothed = box_filter_excluding_dc(&log_amp, w, h, config.box_size);

    for (i, z) in spectrum.iter_mut().enumerate() {
        if i == 0 || amplitude[i] <= zero {
            *z = Complex::new(0.0, 0.0);
            continue;
        }
        let residual = log_amp[i] - smoothed[i];
        *z = *z / amplitude[i] * residual.exp();
    }
    fft2(&mut planner, &mut spectrum, w, h, true);

    let energy: Vec<f64> = spectrum.iter().map(|z| z.norm_sqr()).collect();
    let sigma = config.blur_fraction * w as f64;
    let blurred = gaussian_blur(&energy, w, h, sigma);

    let grid = Grid::new(w, h, blurred)?;
    let (lo, hi) = grid.min_max();
    let normalized = if hi - lo <= 1e-9 * hi.abs().max(f64::MIN_POSITIVE) {
        Grid::filled(w, h, 0.0)
    } else {
        Grid::new(w, h, grid.data.iter().map(|v| (v - lo) / (hi - lo)).collect())?
    };
    let mut out = normalized.resized(out_w, out_h);
    out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(SaliencyMap(out))
}

fn fft2(planner: &mut FftPlanner<f64>, data: &mut [Complex<f64>], w: usize, h: usize, inverse: bool) {
    let row_fft = if inverse {
        planner.plan_fft_inverse(w)
    } else {
        planner.plan_fft_forward(w)
    };
    for row in data.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = if inverse {
        planner.plan_fft_inverse(h)
    } else {
        planner.plan_fft_forward(h)
    };
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = data[y * w + x];
        }
        col_fft.process(&mut column);
        for y in 0..h {
            data[y * w + x] = column[y];
        }
    }
    if inverse {
        let scale = 1.0 / (w * h) as f64;
        data.iter_mut().for_each(|z| *z *= scale);
    }
}

/// Circular box mean over the spectrum, skipping the (zeroed) DC bin.
fn box_filter_excluding_dc(values: &[f64], w: usize, h: usize, size: usize) -> Vec<f64> {
    let r = (size / 2) as isize;
    let mut out = vec![0.0; values.len()];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (mut sum, mut n) = (0.0, 0usize);
            for dy in -r..=r {
                for dx in -r..=r {
                    let yy = (y + dy).rem_euclid(h as isize) as usize;
                    let xx = (x + dx).rem_euclid(w as isize) as usize;
                    if xx == 0 && yy == 0 {
                        continue;
                    }
                    sum += values[yy * w + xx];
                    n += 1;
                }
            }
            out[y as usize * w + x as usize] = sum / n.max(1) as f64;
        }
    }
    out
}

fn gaussian_blur(values: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
        }
        i as usize
    };
    let mut tmp = vec![0.0; values.len()];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * values[y * w + reflect(x as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; values.len()];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[reflect(y as isize + k as isize - radius, h) * w + x])
                .sum();
        }
    }
    out
}
