//! Text-box layouts and the cascaded auto-encoders that predict them.
//!
//! `g1` turns a smooth-region map into a per-pixel layout distribution;
//! initial positions are sampled from that distribution and `g2` refines
//! them by feeding its own output back in for `K` iterations.

mod g1;
mod g2;
mod train;

pub use g1::{G1Config, G1Model};
pub use g2::{G2Config, G2Model};
pub use train::{
    g1_validation_mse, g2_position_error, sample_perturbed, train_g1, train_g2, G1Example,
    G2Example, PositionErrors, RefinementConfig, TrainConfig, TrainReport,
};

use std::ops::Deref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{pixel_span, Grid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Title,
    Subtitle,
    Body,
}

impl Attribute {
    /// Line height as a fraction of canvas height.
    pub fn line_height(self) -> f64 {
        match self {
            Attribute::Title => 0.08,
            Attribute::Subtitle => 0.05,
            Attribute::Body => 0.035,
        }
    }

    pub fn one_hot(self) -> [f64; 3] {
        match self {
            Attribute::Title => [1.0, 0.0, 0.0],
            Attribute::Subtitle => [0.0, 1.0, 0.0],
            Attribute::Body => [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextElement {
    pub text: String,
    pub attribute: Attribute,
}

impl TextElement {
    pub fn new(text: impl Into<String>, attribute: Attribute) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::invalid("text element must not be empty"));
        }
        Ok(TextElement { text, attribute })
    }
}

/// Character width relative to line height.
pub const GLYPH_ASPECT: f64 = 0.55;
pub const MAX_BOX_WIDTH: f64 = 0.9;

/// Box extents from text length and attribute: height is the attribute's line
/// height, width is `chars * height * 0.55` capped at 0.9.
pub fn size_boxes(texts: &[TextElement]) -> Vec<(f64, f64)> {
    texts
        .iter()
        .map(|t| {
            let h = t.attribute.line_height();
            let w = (t.text.chars().count() as f64 * h * GLYPH_ASPECT).min(MAX_BOX_WIDTH);
            (w, h)
        })
        .collect()
}

/// A text box in normalized canvas coordinates (top-left origin).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    pub attribute: Attribute,
}

impl TextBox {
    pub fn right(&self) -> f64 {
        self.x + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (self.x, self.y, self.right(), self.bottom())
    }

    pub fn iou(&self, other: &TextBox) -> f64 {
        crate::smooth_region::box_iou(self.corners(), other.corners())
    }

    /// Moves the top-left so the whole box lies in the unit square.
    pub fn clamped(mut self) -> Self {
        self.x = self.x.clamp(0.0, (1.0 - self.width).max(0.0));
        self.y = self.y.clamp(0.0, (1.0 - self.height).max(0.0));
        self
    }

    pub fn in_canvas(&self) -> bool {
        const EPS: f64 = 1e-9;
        self.x >= -EPS && self.y >= -EPS && self.right() <= 1.0 + EPS && self.bottom() <= 1.0 + EPS
    }

    pub fn distance_to(&self, other: &TextBox) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Ordered boxes, one per input text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub boxes: Vec<TextBox>,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Mean Euclidean distance between corresponding top-left corners.
    pub fn mean_position_error(&self, truth: &Layout) -> f64 {
        let n = self.boxes.len().min(truth.boxes.len()).max(1);
        self.boxes
            .iter()
            .zip(&truth.boxes)
            .map(|(a, b)| a.distance_to(b))
            .sum::<f64>()
            / n as f64
    }

    /// Binary map with 1 on every pixel whose centre lies inside some box.
    pub fn rasterize(&self, width: usize, height: usize) -> Grid {
        let mut grid = Grid::filled(width, height, 0.0);
        for b in &self.boxes {
            let (c0, c1) = pixel_span(b.x, b.right(), width);
            let (r0, r1) = pixel_span(b.y, b.bottom(), height);
            for y in r0..r1 {
                grid.data[y * width + c0..y * width + c1].fill(1.0);
            }
        }
        grid
    }
}

/// Per-pixel probability that the pixel belongs to a text box.
#[derive(Clone, Debug, PartialEq)]
pub struct LayoutDistribution(pub Grid);

impl Deref for LayoutDistribution {
    type Target = Grid;
    fn deref(&self) -> &Grid {
        &self.0
    }
}

/// Draws each box's top-left corner from `distribution` treated as a
/// categorical distribution over pixels. An all-zero distribution falls back
/// to uniform sampling.
pub fn sample_initial_layout(
    distribution: &LayoutDistribution,
    texts: &[TextElement],
    seed: u64,
) -> Layout {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cdf = Vec::with_capacity(distribution.data.len());
    let mut total = 0.0;
    for v in &distribution.data {
        total += v.max(0.0);
        cdf.push(total);
    }
    let uniform = total <= 0.0 || !total.is_finite();
    if uniform {
        log::warn!("layout distribution has no mass; sampling positions uniformly");
    }
    let (w, h) = (distribution.width, distribution.height);
    let boxes = texts
        .iter()
        .zip(size_boxes(texts))
        .map(|(t, (bw, bh))| {
            let index = if uniform {
                rng.random_range(0..w * h)
            } else {
                let u = rng.random::<f64>() * total;
                cdf.partition_point(|c| *c <= u).min(w * h - 1)
            };
            let (px, py) = (index % w, index / w);
            TextBox {
                x: px as f64 / w as f64,
                y: py as f64 / h as f64,
                width: bw,
                height: bh,
                attribute: t.attribute,
            }
            .clamped()
        })
        .collect();
    Layout { boxes }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(items: &[(&str, Attribute)]) -> Vec<TextElement> {
        items.iter().map(|(t, a)| TextElement::new(*t, *a).unwrap()).collect()
    }

    #[test]
    fn title_box_size() {
        let sizes = size_boxes(&texts(&[("0123456789", Attribute::Title)]));
        let (w, h) = sizes[0];
        assert!((w - 10.0 * 0.08 * 0.55).abs() < 1e-12);
        assert!((w - 0.44).abs() < 1e-12);
        assert_eq!(h, 0.08);
    }

    #[test]
    fn long_body_is_clamped() {
        let long = "x".repeat(200);
        let sizes = size_boxes(&texts(&[(&long, Attribute::Body)]));
        assert_eq!(sizes[0].0, 0.9);
    }

    #[test]
    fn title_larger_than_body() {
        let s = size_boxes(&texts(&[("hello world", Attribute::Title), ("hello world", Attribute::Body)]));
        assert!(s[0].0 > s[1].0 && s[0].1 > s[1].1);
    }

    #[test]
    fn empty_text_rejected() {
        assert!(TextElement::new("  ", Attribute::Body).is_err());
    }

    #[test]
    fn point_mass_fixes_start() {
        let mut g = Grid::filled(60, 80, 0.0);
        g.set(12, 30, 1.0);
        let layout = sample_initial_layout(
            &LayoutDistribution(g),
            &texts(&[("ab", Attribute::Title), ("cd", Attribute::Body), ("ef", Attribute::Subtitle)]),
            5,
        );
        for b in &layout.boxes {
            assert_eq!((b.x, b.y), (12.0 / 60.0, 30.0 / 80.0));
        }
    }

    #[test]
    fn zero_mass_falls_back_to_uniform() {
        let g = Grid::filled(60, 80, 0.0);
        let t = texts(&[("ab", Attribute::Body)]);
        let a = sample_initial_layout(&LayoutDistribution(g.clone()), &t, 1);
        let b = sample_initial_layout(&LayoutDistribution(g), &t, 1);
        assert_eq!(a, b);
        assert!(a.boxes[0].in_canvas());
    }

    #[test]
    fn rasterize_marks_box_pixels() {
        let layout = Layout {
            boxes: vec![TextBox { x: 0.5, y: 0.25, width: 0.5, height: 0.25, attribute: Attribute::Body }],
        };
        let g = layout.rasterize(4, 4);
        let ones: Vec<usize> = (0..16).filter(|i| g.data[*i] == 1.0).collect();
        assert_eq!(ones, vec![6, 7]);
    }
}
