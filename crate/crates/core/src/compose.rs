//! End-to-end generation: retrieval, layout, stylization and rendering.

use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StageContext};
use crate::layout::{sample_initial_layout, Attribute, G1Model, G2Model, Layout, LayoutDistribution, TextBox, TextElement};
use crate::raster::{RasterImage, Rgb};
use crate::render::{draw_text, Font};
use crate::retrieval::{query_text, retrieve_top_k, EmbeddingIndex, EmbeddingProvider, ToyEmbedder};
use crate::saliency::{spectral_residual_with, SaliencyConfig, SaliencyMap};
use crate::smooth_region::{detect, SmoothRegionConfig, SmoothRegionMap};
use crate::stylizer::{match_style, sample_background_color, StyleLibrary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    /// Refinement iterations `K`.
    pub iterations: usize,
    pub seed: u64,
    pub canvas: (usize, usize),
    pub saliency: SaliencyConfig,
    pub smooth: SmoothRegionConfig,
    /// Weight of the embedding term when matching styles.
    pub style_weight: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            iterations: 5,
            seed: 0,
            canvas: (300, 400),
            saliency: SaliencyConfig::default(),
            smooth: SmoothRegionConfig::default(),
            style_weight: 0.7,
        }
    }
}

/// Everything `generate` reads; immutable once loaded.
pub struct Resources {
    pub index: EmbeddingIndex,
    pub embedder: Box<dyn EmbeddingProvider>,
    pub g1: G1Model,
    pub g2: G2Model,
    pub library: StyleLibrary,
}

impl Resources {
    /// Loads all artifacts and pairs the index with the toy text embedder of
    /// the index's dimension.
    pub fn load(index: impl AsRef<Path>, g1: impl AsRef<Path>, g2: impl AsRef<Path>, styles: impl AsRef<Path>) -> Result<Self> {
        let index = EmbeddingIndex::import(index)?;
        let embedder = Box::new(ToyEmbedder { dim: index.dim() });
        Ok(Resources {
            index,
            embedder,
            g1: G1Model::load(g1)?,
            g2: G2Model::load(g2)?,
            library: StyleLibrary::load(styles)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextStyle {
    #[serde(with = "crate::raster::hex_color")]
    pub color: Rgb,
    pub font: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosterSpec {
    pub texts: Vec<TextElement>,
    pub background_id: String,
    pub background_path: PathBuf,
    pub canvas: (usize, usize),
    pub layout: Layout,
    pub styles: Vec<TextStyle>,
    /// How far the separation pass moved each box, in normalized units.
    pub displacements: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
}

impl PosterSpec {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Intermediate results of one generation, kept for inspection and tests.
#[derive(Clone, Debug)]
pub struct Trace {
    pub saliency: SaliencyMap,
    pub smooth: SmoothRegionMap,
    pub distribution: LayoutDistribution,
    pub initial: Layout,
    pub refined: Layout,
}

fn overlaps(a: &TextBox, b: &TextBox) -> bool {
    let w = a.right().min(b.right()) - a.x.max(b.x);
    let h = a.bottom().min(b.bottom()) - a.y.max(b.y);
    w > 1e-9 && h > 1e-9
}

fn attribute_rank(a: Attribute) -> u8 {
    match a {
        Attribute::Title => 0,
        Attribute::Subtitle => 1,
        Attribute::Body => 2,
    }
}

/// Greedy separation: boxes are visited Title first, then Subtitle, then
/// Body (text order within an attribute). A box that overlaps an already
/// placed one moves to the nearest free position built from the placed
/// boxes' edges, where upward moves cost 25% more than downward ones. If no
/// edge position is free, a 0.01-step grid is scanned.
pub fn separate(layout: &Layout) -> (Layout, Vec<f64>) {
    let mut order: Vec<usize> = (0..layout.len()).collect();
    order.sort_by_key(|i| (attribute_rank(layout.boxes[*i].attribute), *i));
    let mut placed: Vec<TextBox> = Vec::with_capacity(layout.len());
    let mut out = layout.boxes.clone();
    let mut moved = vec![0.0; layout.len()];
    for i in order {
        let b = layout.boxes[i].clamped();
        let free = |c: &TextBox| c.in_canvas() && placed.iter().all(|p| !overlaps(c, p));
        let chosen = if free(&b) {
            b
        } else {
            let mut xs = vec![b.x, 0.0, 1.0 - b.width];
            let mut ys = vec![b.y, 0.0, 1.0 - b.height];
            for p in &placed {
                xs.extend([p.right(), p.x - b.width]);
                ys.extend([p.bottom(), p.y - b.height]);
            }
            let cost = |c: &TextBox| {
                let d = c.distance_to(&b);
                if c.y < b.y {
                    d * 1.25
                } else {
                    d
                }
            };
            let mut best: Option<(f64, TextBox)> = None;
            let consider = |c: TextBox, best: &mut Option<(f64, TextBox)>| {
                if free(&c) {
                    let v = cost(&c);
                    if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
                        *best = Some((v, c));
                    }
                }
            };
            for &x in &xs {
                for &y in &ys {
                    consider(TextBox { x, y, ..b }, &mut best);
                }
            }
            if best.is_none() {
                for gy in 0..=100 {
                    for gx in 0..=100 {
                        consider(TextBox { x: gx as f64 / 100.0, y: gy as f64 / 100.0, ..b }, &mut best);
                    }
                }
            }
            match best {
                Some((_, c)) => c,
                None => {
                    warn!("no free position for box {i}; leaving it overlapping");
                    b
                }
            }
        };
        moved[i] = chosen.distance_to(&layout.boxes[i]);
        out[i] = chosen;
        placed.push(chosen);
    }
    (Layout { boxes: out }, moved)
}

/// Runs the layout stages on a background: saliency, smooth regions, the
/// layout distribution, sampling and `K` refinement steps.
pub fn layout_for_background(
    background: &RasterImage,
    texts: &[TextElement],
    g1: &G1Model,
    g2: &G2Model,
    config: &GenerateConfig,
) -> Result<Trace> {
    let (mw, mh) = g1.map_dims();
    let saliency = spectral_residual_with(background, &config.saliency).stage("saliency")?.resized(mw, mh);
    let (_, smooth) = detect(&saliency, &config.smooth).stage("smooth_region")?;
    let distribution = g1.predict(&smooth).stage("layout_distribution")?;
    let initial = sample_initial_layout(&distribution, texts, config.seed);
    let refined = g2
        .refine(&smooth, &distribution, &initial, config.iterations)
        .stage("refine")?;
    Ok(Trace {
        saliency,
        smooth,
        distribution,
        initial,
        refined,
    })
}

/// Draws each text in its box with its style; texts that are blank after
/// trimming are skipped.
pub fn render(spec: &PosterSpec, background: &RasterImage) -> Result<RasterImage> {
    if spec.texts.len() != spec.layout.len() || spec.texts.len() != spec.styles.len() {
        return Err(Error::invalid("poster spec needs one box and one style per text"));
    }
    let (w, h) = spec.canvas;
    let mut image = if (background.width(), background.height()) == (w, h) && background.channels() == 3 {
        background.clone()
    } else {
        let resized = background.resized(w, h);
        let mut rgb = RasterImage::filled(w, h, Rgb::BLACK);
        for y in 0..h {
            for x in 0..w {
                rgb.set_pixel(x, y, resized.pixel(x, y));
            }
        }
        rgb
    };
    let mut order: Vec<usize> = (0..spec.texts.len()).collect();
    order.sort_by_key(|i| (attribute_rank(spec.texts[*i].attribute), *i));
    for i in order {
        let text = spec.texts[i].text.trim();
        if text.is_empty() {
            continue;
        }
        let font = Font::from_id(&spec.styles[i].font)?;
        draw_text(&mut image, text, &spec.layout.boxes[i], spec.styles[i].color, font);
    }
    Ok(image)
}

/// Texts in, poster out. Errors carry the name of the failing stage.
pub fn generate(texts: &[TextElement], resources: &Resources, config: &GenerateConfig) -> Result<(PosterSpec, RasterImage)> {
    generate_traced(texts, resources, config).map(|(spec, image, _)| (spec, image))
}

pub fn generate_traced(
    texts: &[TextElement],
    resources: &Resources,
    config: &GenerateConfig,
) -> Result<(PosterSpec, RasterImage, Trace)> {
    if texts.is_empty() {
        return Err(Error::invalid("no texts to place"));
    }
    if let Some(i) = texts.iter().position(|t| t.text.trim().is_empty()) {
        return Err(Error::invalid(format!("text {i} is empty")));
    }
    if config.iterations == 0 {
        return Err(Error::Config("at least one refinement iteration is required".into()));
    }
    let query = resources.embedder.embed(&query_text(texts)).stage("retrieval")?;
    let top = retrieve_top_k(&resources.index, &query, 1).stage("retrieval")?;
    let (id, score) = top.into_iter().next().expect("k = 1 on a non-empty index");
    let entry = resources.index.get(&id).expect("retrieved id exists");
    info!("retrieved background {id} (cosine {score:.4})");
    let loaded = RasterImage::load(&entry.path).stage("retrieval")?;
    let (cw, ch) = config.canvas;
    let background = if (loaded.width(), loaded.height()) == (cw, ch) {
        loaded
    } else {
        loaded.resized(cw, ch)
    };

    let trace = layout_for_background(&background, texts, &resources.g1, &resources.g2, config)?;
    let (layout, displacements) = separate(&trace.refined);

    let styles = texts
        .iter()
        .zip(&layout.boxes)
        .map(|(t, b)| {
            let r = resources.embedder.embed(&t.text)?;
            let c = sample_background_color(&background, b);
            let m = match_style(&resources.library, &r, c, config.style_weight)?;
            Ok(TextStyle {
                color: m.text_color,
                font: m.font,
            })
        })
        .collect::<Result<Vec<_>>>()
        .stage("stylize")?;

    let spec = PosterSpec {
        texts: texts.to_vec(),
        background_id: id,
        background_path: entry.path.clone(),
        canvas: config.canvas,
        layout,
        styles,
        displacements,
        iterations: config.iterations,
        seed: config.seed,
    };
    let image = render(&spec, &background).stage("render")?;
    Ok((spec, image, trace))
}
