//! Synthetic posters with known ground-truth layouts.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{size_boxes, Attribute, G1Example, G2Example, Layout, TextBox, TextElement};
use crate::raster::{Grid, RasterImage, Rgb};
use crate::saliency::{spectral_residual_with, SaliencyConfig, SaliencyMap};
use crate::smooth_region::{detect, SmoothRegionConfig, SmoothRegionMap};

pub const CANVAS_WIDTH: usize = 300;
pub const CANVAS_HEIGHT: usize = 400;
pub const MAP_WIDTH: usize = 60;
pub const MAP_HEIGHT: usize = 80;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub canvas: (usize, usize),
    pub map: (usize, usize),
    pub saliency: SaliencyConfig,
    pub smooth: SmoothRegionConfig,
    /// Minimum fraction of each box that must lie on the smooth-region map.
    pub min_coverage: f64,
    /// Vertical gap between stacked boxes.
    pub line_gap: f64,
    pub placement_tries: usize,
    pub background_tries: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            canvas: (CANVAS_WIDTH, CANVAS_HEIGHT),
            map: (MAP_WIDTH, MAP_HEIGHT),
            saliency: SaliencyConfig::default(),
            smooth: SmoothRegionConfig::default(),
            min_coverage: 0.5,
            line_gap: 0.02,
            placement_tries: 1000,
            background_tries: 10,
        }
    }
}

/// A salient blob drawn onto a background, in normalized coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSample {
    pub seed: u64,
    pub background: RasterImage,
    pub blobs: Vec<Blob>,
    pub texts: Vec<TextElement>,
    pub boxes: Layout,
    /// `L̂`: 1 on map pixels inside some box.
    pub layout_map: Grid,
    /// `Â`, derived from the background.
    pub smooth_map: SmoothRegionMap,
    /// Saliency at map resolution.
    pub saliency: SaliencyMap,
}

impl DatasetSample {
    pub fn g1_example(&self) -> G1Example {
        G1Example {
            smooth: self.smooth_map.0.clone(),
            distribution: self.layout_map.clone(),
        }
    }

    pub fn g2_example(&self) -> G2Example {
        G2Example {
            smooth: self.smooth_map.0.clone(),
            distribution: self.layout_map.clone(),
            layout: self.boxes.clone(),
        }
    }
}

const WORDS: &[&str] = &[
    "summer", "festival", "music", "night", "open", "sale", "coffee", "garden", "jazz", "city", "run", "art", "film",
    "market", "spring", "light", "ocean", "forest", "studio", "live", "dance", "book", "fair", "gala", "tour",
];

fn random_text(rng: &mut impl Rng, min_chars: usize, max_chars: usize) -> String {
    let target = rng.random_range(min_chars..=max_chars);
    let mut s = String::new();
    while s.len() < target {
        if !s.is_empty() {
            s.push(' ');
        }
        s.push_str(WORDS[rng.random_range(0..WORDS.len())]);
    }
    s.truncate(target);
    s.trim_end().to_string()
}

/// One Title, 0-2 Subtitles and 0-2 Body lines, in that order.
pub fn random_texts(rng: &mut impl Rng) -> Vec<TextElement> {
    let mut texts = vec![TextElement {
        text: random_text(rng, 4, 14),
        attribute: Attribute::Title,
    }];
    for _ in 0..rng.random_range(0..=2) {
        texts.push(TextElement {
            text: random_text(rng, 6, 22),
            attribute: Attribute::Subtitle,
        });
    }
    for _ in 0..rng.random_range(0..=2) {
        texts.push(TextElement {
            text: random_text(rng, 10, 36),
            attribute: Attribute::Body,
        });
    }
    texts
}

fn random_color(rng: &mut impl Rng, lo: f64, hi: f64) -> Rgb {
    Rgb::new(rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi))
}

/// A smooth two-colour gradient with 1-4 high-contrast textured ellipses.
pub fn random_background(rng: &mut impl Rng, width: usize, height: usize) -> (RasterImage, Vec<Blob>) {
    let (c0, c1) = (random_color(rng, 0.2, 0.9), random_color(rng, 0.2, 0.9));
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut img = RasterImage::filled(width, height, Rgb::BLACK);
    for y in 0..height {
        for x in 0..width {
            let (u, v) = (x as f64 / width as f64 - 0.5, y as f64 / height as f64 - 0.5);
            let t = ((u * dx + v * dy) / std::f64::consts::SQRT_2 + 0.5).clamp(0.0, 1.0);
            let mut c = [0.0; 3];
            for (k, ck) in c.iter_mut().enumerate() {
                *ck = c0.0[k] * (1.0 - t) + c1.0[k] * t;
            }
            img.set_pixel(x, y, Rgb(c));
        }
    }
    let count = rng.random_range(1..=4);
    let mut blobs = Vec::with_capacity(count);
    for _ in 0..count {
        let blob = Blob {
            cx: rng.random_range(0.1..0.9),
            cy: rng.random_range(0.1..0.9),
            rx: rng.random_range(0.08..0.22),
            ry: rng.random_range(0.06..0.16),
        };
        let (a, b) = (random_color(rng, 0.0, 0.3), random_color(rng, 0.7, 1.0));
        let period = rng.random_range(3..9) as f64;
        let checker = rng.random_bool(0.5);
        for y in 0..height {
            for x in 0..width {
                let u = (x as f64 + 0.5) / width as f64 - blob.cx;
                let v = (y as f64 + 0.5) / height as f64 - blob.cy;
                if (u / blob.rx).powi(2) + (v / blob.ry * (height as f64 / width as f64)).powi(2) > 1.0 {
                    continue;
                }
                let sx = (x as f64 / period).floor() as i64;
                let sy = (y as f64 / period).floor() as i64;
                let on = if checker { (sx + sy) % 2 == 0 } else { sx % 2 == 0 };
                img.set_pixel(x, y, if on { a } else { b });
            }
        }
        blobs.push(blob);
    }
    (img, blobs)
}

/// Stacks the boxes vertically from `(x0, y0)` with the given alignment.
fn stack(sizes: &[(f64, f64)], texts: &[TextElement], x0: f64, y0: f64, centred: bool, gap: f64) -> Layout {
    let block_w = sizes.iter().map(|s| s.0).fold(0.0, f64::max);
    let mut y = y0;
    let boxes = sizes
        .iter()
        .zip(texts)
        .map(|(&(w, h), t)| {
            let x = if centred { x0 + (block_w - w) / 2.0 } else { x0 };
            let b = TextBox {
                x,
                y,
                width: w,
                height: h,
                attribute: t.attribute,
            };
            y += h + gap;
            b
        })
        .collect();
    Layout { boxes }
}

fn place(
    rng: &mut impl Rng,
    texts: &[TextElement],
    smooth: &SmoothRegionMap,
    saliency: &SaliencyMap,
    config: &SynthConfig,
) -> Option<Layout> {
    let sizes = size_boxes(texts);
    let block_w = sizes.iter().map(|s| s.0).fold(0.0, f64::max);
    let block_h = sizes.iter().map(|s| s.1).sum::<f64>() + config.line_gap * (sizes.len() - 1) as f64;
    if block_w > 1.0 || block_h > 1.0 {
        return None;
    }
    let global = saliency.mean();
    for _ in 0..config.placement_tries {
        let x0 = rng.random_range(0.0..=1.0 - block_w);
        let y0 = rng.random_range(0.0..=1.0 - block_h);
        let layout = stack(&sizes, texts, x0, y0, rng.random_bool(0.5), config.line_gap);
        let ok = layout.boxes.iter().all(|b| {
            let (x0, y0, x1, y1) = b.corners();
            smooth.coverage(x0, y0, x1, y1) >= config.min_coverage
                && saliency.box_mean(x0, y0, x1, y1).is_some_and(|s| s < global)
        });
        if ok {
            return Some(layout);
        }
    }
    None
}

/// Generates one sample; identical seeds give identical samples.
pub fn generate_sample(seed: u64, config: &SynthConfig) -> Result<DatasetSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let texts = random_texts(&mut rng);
    let (cw, ch) = config.canvas;
    let (mw, mh) = config.map;
    for _ in 0..config.background_tries {
        let (background, blobs) = random_background(&mut rng, cw, ch);
        let saliency = spectral_residual_with(&background, &config.saliency)?.resized(mw, mh);
        let (_, smooth_map) = detect(&saliency, &config.smooth)?;
        if let Some(boxes) = place(&mut rng, &texts, &smooth_map, &saliency, config) {
            let layout_map = boxes.rasterize(mw, mh);
            return Ok(DatasetSample {
                seed,
                background,
                blobs,
                texts,
                boxes,
                layout_map,
                smooth_map,
                saliency,
            });
        }
    }
    Err(Error::invalid(format!(
        "seed {seed}: no valid text placement after {} backgrounds",
        config.background_tries
    )))
}

/// Per-sample seed for index `i` of a dataset seeded with `seed`.
pub fn sample_seed(seed: u64, i: usize) -> u64 {
    seed ^ i as u64
}

/// Number of validation samples in a dataset of `n` (a 9:1 split).
pub fn validation_count(n: usize) -> usize {
    n / 10
}

/// Generates `n` samples in parallel and keeps only the training maps.
pub fn generate_examples(n: usize, seed: u64, config: &SynthConfig) -> Result<Vec<G2Example>> {
    (0..n)
        .into_par_iter()
        .map(|i| generate_sample(sample_seed(seed, i), config).map(|s| s.g2_example()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub seed: u64,
    pub split: Split,
    pub background: String,
    pub layout_map: String,
    pub smooth_map: String,
    pub record: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub count: usize,
    pub canvas: (usize, usize),
    pub map: (usize, usize),
    pub samples: Vec<SampleEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub texts: Vec<TextElement>,
    pub boxes: Layout,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `n` samples with PNG backgrounds and maps, a JSON record per sample
/// and `manifest.json`. The last `n / 10` samples form the validation split.
pub fn build_dataset(n: usize, seed: u64, out_dir: impl AsRef<Path>, config: &SynthConfig) -> Result<DatasetManifest> {
    if n < 10 {
        return Err(Error::invalid(format!("dataset needs at least 10 samples, got {n}")));
    }
    let out = out_dir.as_ref();
    fs::create_dir_all(out)?;
    let n_val = validation_count(n);
    let samples = (0..n)
        .into_par_iter()
        .map(|i| {
            let id = format!("{i:06}");
            let s = generate_sample(sample_seed(seed, i), config)?;
            let entry = SampleEntry {
                id: id.clone(),
                seed: s.seed,
                split: if i >= n - n_val { Split::Val } else { Split::Train },
                background: format!("{id}_background.png"),
                layout_map: format!("{id}_layout.png"),
                smooth_map: format!("{id}_smooth.png"),
                record: format!("{id}.json"),
            };
            s.background.save_png(out.join(&entry.background))?;
            s.layout_map.save_png(out.join(&entry.layout_map))?;
            s.smooth_map.save_png(out.join(&entry.smooth_map))?;
            let record = SampleRecord {
                texts: s.texts,
                boxes: s.boxes,
            };
            fs::write(out.join(&entry.record), serde_json::to_string_pretty(&record)?)?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        version: 1,
        seed,
        count: n,
        canvas: config.canvas,
        map: config.map,
        samples,
    };
    fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// A dataset read back from disk, split into training and validation examples.
#[derive(Clone, Debug, Default)]
pub struct LoadedDataset {
    pub train: Vec<G2Example>,
    pub val: Vec<G2Example>,
}

/// Loads a directory written by [`build_dataset`].
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<LoadedDataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(Error::missing(&manifest_path, "dataset manifest not found"));
    }
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)
        .map_err(|e| Error::load(&manifest_path, e.to_string()))?;
    let read = |name: &str| -> Result<PathBuf> {
        let p = dir.join(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::missing(p, "listed in the dataset manifest"))
        }
    };
    let mut out = LoadedDataset::default();
    for entry in &manifest.samples {
        let record_path = read(&entry.record)?;
        let record: SampleRecord = serde_json::from_str(&fs::read_to_string(&record_path)?)
            .map_err(|e| Error::load(&record_path, e.to_string()))?;
        let example = G2Example {
            smooth: Grid::load_png(read(&entry.smooth_map)?)?,
            distribution: Grid::load_png(read(&entry.layout_map)?)?,
            layout: record.boxes,
        };
        match entry.split {
            Split::Train => out.train.push(example),
            Split::Val => out.val.push(example),
        }
    }
    Ok(out)
}
