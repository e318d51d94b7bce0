//! Smooth-region detection: score overlapping anchor regions by mean saliency
//! plus a size-sensitive offset, keep those under an adaptive threshold,
//! suppress overlaps, and rasterize the survivors into a binary map.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{pixel_span, Grid};
use crate::saliency::SaliencyMap;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorRegion {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    /// Number of map pixels whose centres lie inside the region.
    pub pixel_count: usize,
    pub score: f64,
}

impl AnchorRegion {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn iou(&self, other: &AnchorRegion) -> f64 {
        box_iou(
            (self.x0, self.y0, self.x1, self.y1),
            (other.x0, other.y0, other.x1, other.y1),
        )
    }

    fn spans(&self, width: usize, height: usize) -> ((usize, usize), (usize, usize)) {
        (pixel_span(self.x0, self.x1, width), pixel_span(self.y0, self.y1, height))
    }
}

/// Intersection over union of two `(x0, y0, x1, y1)` boxes.
pub fn box_iou(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> f64 {
    let iw = (a.2.min(b.2) - a.0.max(b.0)).max(0.0);
    let ih = (a.3.min(b.3) - a.1.max(b.1)).max(0.0);
    let inter = iw * ih;
    let union = (a.2 - a.0) * (a.3 - a.1) + (b.2 - b.0) * (b.3 - b.1) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothRegionConfig {
    /// Size-sensitive offset added to each region's saliency sum.
    pub lambda: f64,
    /// Regions need `score < threshold_factor * mean(score)`.
    pub threshold_factor: f64,
    /// Normalized `(width, height)` anchor sizes.
    pub anchor_scales: Vec<(f64, f64)>,
    pub anchor_stride: f64,
    pub nms_iou: f64,
}

impl Default for SmoothRegionConfig {
    fn default() -> Self {
        let sides = [0.25, 0.4, 0.6, 0.8];
        let mut anchor_scales: Vec<(f64, f64)> = sides
            .iter()
            .flat_map(|w| sides.iter().map(move |h| (*w, *h)))
            .collect();
        anchor_scales.extend([(1.0, 0.2), (1.0, 0.3)]);
        SmoothRegionConfig {
            lambda: 5.0,
            threshold_factor: 1.4,
            anchor_scales,
            anchor_stride: 0.1,
            nms_iou: 0.05,
        }
    }
}

impl SmoothRegionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.anchor_scales.is_empty() {
            return Err(Error::Config("at least one anchor scale is required".into()));
        }
        if self.anchor_stride <= 0.0 {
            return Err(Error::Config("anchor stride must be positive".into()));
        }
        if self
            .anchor_scales
            .iter()
            .any(|(w, h)| !(*w > 0.0 && *w <= 1.0 && *h > 0.0 && *h <= 1.0))
        {
            return Err(Error::Config("anchor scales must lie in (0, 1]".into()));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou < 1.0) || self.lambda < 0.0 {
            return Err(Error::Config("nms_iou must be in (0, 1) and lambda >= 0".into()));
        }
        Ok(())
    }
}

/// Binary map of the selected smooth regions.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothRegionMap(pub Grid);

impl Deref for SmoothRegionMap {
    type Target = Grid;
    fn deref(&self) -> &Grid {
        &self.0
    }
}

impl SmoothRegionMap {
    /// Fraction of a normalized box's pixels that are marked smooth.
    pub fn coverage(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
        self.0.box_mean(x0, y0, x1, y1).unwrap_or(0.0)
    }
}

/// Number of grid positions of one anchor side along an axis.
fn positions(side: f64, stride: f64) -> usize {
    ((1.0 - side) / stride + 1e-9).floor() as usize + 1
}

pub fn generate_anchors(map_dims: (usize, usize), config: &SmoothRegionConfig) -> Vec<AnchorRegion> {
    let (width, height) = map_dims;
    let mut anchors = Vec::new();
    for &(w, h) in &config.anchor_scales {
        for iy in 0..positions(h, config.anchor_stride) {
            for ix in 0..positions(w, config.anchor_stride) {
                let x0 = (ix as f64 * config.anchor_stride).min(1.0 - w);
                let y0 = (iy as f64 * config.anchor_stride).min(1.0 - h);
                let mut a = AnchorRegion {
                    x0,
                    y0,
                    x1: (x0 + w).min(1.0),
                    y1: (y0 + h).min(1.0),
                    pixel_count: 0,
                    score: 0.0,
                };
                let ((c0, c1), (r0, r1)) = a.spans(width, height);
                a.pixel_count = (c1 - c0) * (r1 - r0);
                if a.pixel_count > 0 {
                    anchors.push(a);
                }
            }
        }
    }
    anchors
}

/// `(lambda + sum of saliency inside the region) / pixel count`.
pub fn score_region(region: &AnchorRegion, saliency: &SaliencyMap, lambda: f64) -> Result<f64> {
    let ((c0, c1), (r0, r1)) = region.spans(saliency.width, saliency.height);
    let count = (c1 - c0) * (r1 - r0);
    if count == 0 {
        return Err(Error::invalid("region covers no pixels"));
    }
    let mut sum = 0.0;
    for y in r0..r1 {
        for x in c0..c1 {
            sum += saliency.at(x, y);
        }
    }
    Ok((lambda + sum) / count as f64)
}

/// Summed-area table for O(1) region sums.
struct Integral {
    width: usize,
    table: Vec<f64>,
}

impl Integral {
    fn new(grid: &Grid) -> Self {
        let w = grid.width + 1;
        let mut table = vec![0.0; w * (grid.height + 1)];
        for y in 0..grid.height {
            let mut row = 0.0;
            for x in 0..grid.width {
                row += grid.at(x, y);
                table[(y + 1) * w + x + 1] = table[y * w + x + 1] + row;
            }
        }
        Integral { width: w, table }
    }

    fn sum(&self, (c0, c1): (usize, usize), (r0, r1): (usize, usize)) -> f64 {
        let t = |x: usize, y: usize| self.table[y * self.width + x];
        t(c1, r1) - t(c0, r1) - t(c1, r0) + t(c0, r0)
    }
}

/// Scores every anchor in place.
pub fn score_anchors(anchors: &mut [AnchorRegion], saliency: &SaliencyMap, lambda: f64) {
    let integral = Integral::new(saliency);
    for a in anchors.iter_mut() {
        let (cs, rs) = a.spans(saliency.width, saliency.height);
        a.score = (lambda + integral.sum(cs, rs)) / a.pixel_count as f64;
    }
}

/// Adaptive threshold: `threshold_factor * mean(score)`.
pub fn adaptive_threshold(anchors: &[AnchorRegion], threshold_factor: f64) -> f64 {
    let mean = anchors.iter().map(|a| a.score).sum::<f64>() / anchors.len().max(1) as f64;
    threshold_factor * mean
}

/// Greedy suppression over already-scored anchors, smoothest first with
/// ties broken by input position. Returns indices into `anchors`.
pub fn nms_ascending(anchors: &[AnchorRegion], candidates: &[usize], max_iou: f64) -> Vec<usize> {
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| anchors[a].score.total_cmp(&anchors[b].score).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| anchors[k].iou(&anchors[i]) <= max_iou) {
            kept.push(i);
        }
    }
    kept
}

/// Scores the anchors, keeps `score < v_max`, then applies NMS.
pub fn select_smooth_regions(
    anchors: &[AnchorRegion],
    saliency: &SaliencyMap,
    config: &SmoothRegionConfig,
) -> Vec<AnchorRegion> {
    if anchors.is_empty() {
        return Vec::new();
    }
    let mut scored = anchors.to_vec();
    score_anchors(&mut scored, saliency, config.lambda);
    let v_max = adaptive_threshold(&scored, config.threshold_factor);
    let candidates: Vec<usize> = (0..scored.len()).filter(|&i| scored[i].score < v_max).collect();
    nms_ascending(&scored, &candidates, config.nms_iou)
        .into_iter()
        .map(|i| scored[i])
        .collect()
}

pub fn rasterize(regions: &[AnchorRegion], map_dims: (usize, usize)) -> SmoothRegionMap {
    let (width, height) = map_dims;
    let mut grid = Grid::filled(width, height, 0.0);
    for r in regions {
        let ((c0, c1), (r0, r1)) = r.spans(width, height);
        for y in r0..r1 {
            grid.data[y * width + c0..y * width + c1].fill(1.0);
        }
    }
    SmoothRegionMap(grid)
}

/// Full detector on a saliency map already at map resolution.
pub fn detect(saliency: &SaliencyMap, config: &SmoothRegionConfig) -> Result<(Vec<AnchorRegion>, SmoothRegionMap)> {
    config.validate()?;
    let dims = (saliency.width, saliency.height);
    let anchors = generate_anchors(dims, config);
    let selected = select_smooth_regions(&anchors, saliency, config);
    let map = rasterize(&selected, dims);
    Ok((selected, map))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(width: usize, height: usize, v: f64) -> SaliencyMap {
        SaliencyMap(Grid::filled(width, height, v))
    }

    #[test]
    fn single_scale_tiles_unit_square() {
        let config = SmoothRegionConfig {
            anchor_scales: vec![(0.5, 0.5)],
            anchor_stride: 0.5,
            ..Default::default()
        };
        let anchors = generate_anchors((60, 80), &config);
        assert_eq!(anchors.len(), 4);
        let total: usize = anchors.iter().map(|a| a.pixel_count).sum();
        assert_eq!(total, 60 * 80);
    }

    #[test]
    fn two_scales_sum_counts() {
        let one = |s: (f64, f64)| {
            generate_anchors(
                (60, 80),
                &SmoothRegionConfig {
                    anchor_scales: vec![s],
                    ..Default::default()
                },
            )
            .len()
        };
        let both = generate_anchors(
            (60, 80),
            &SmoothRegionConfig {
                anchor_scales: vec![(0.25, 0.4), (0.8, 0.6)],
                ..Default::default()
            },
        );
        assert_eq!(both.len(), one((0.25, 0.4)) + one((0.8, 0.6)));
        assert_eq!(one((0.25, 0.4)), 8 * 7);
    }

    #[test]
    fn score_formula_trivial_cases() {
        let region = AnchorRegion {
            x0: 0.0,
            y0: 0.0,
            x1: 0.5,
            y1: 0.5,
            pixel_count: 100,
            score: 0.0,
        };
        // 20x20 map → the region covers 10x10 = 100 pixels.
        let v = score_region(&region, &flat(20, 20, 0.0), 2.0).unwrap();
        assert!((v - 0.02).abs() < 1e-15);
        let v = score_region(&region, &flat(20, 20, 0.5), 0.0).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_region_is_rejected() {
        let region = AnchorRegion {
            x0: 0.30,
            y0: 0.0,
            x1: 0.31,
            y1: 0.5,
            pixel_count: 0,
            score: 0.0,
        };
        assert!(score_region(&region, &flat(10, 10, 0.1), 1.0).is_err());
    }

    #[test]
    fn equal_scores_all_pass_threshold() {
        let config = SmoothRegionConfig::default();
        let anchors = generate_anchors((60, 80), &config);
        let mut scored = anchors.clone();
        for a in scored.iter_mut() {
            a.score = 1.0;
        }
        let v_max = adaptive_threshold(&scored, 1.4);
        assert!((v_max - 1.4).abs() < 1e-12);
        assert!(scored.iter().all(|a| a.score < v_max));
    }

    #[test]
    fn rasterize_extremes() {
        let empty = rasterize(&[], (6, 8));
        assert!(empty.data.iter().all(|v| *v == 0.0));
        let full = AnchorRegion {
            x0: 0.0,
            y0: 0.0,
            x1: 1.0,
            y1: 1.0,
            pixel_count: 48,
            score: 0.0,
        };
        assert!(rasterize(&[full], (6, 8)).data.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn empty_anchor_list_selects_nothing() {
        let out = select_smooth_regions(&[], &flat(6, 8, 0.2), &SmoothRegionConfig::default());
        assert!(out.is_empty());
    }

    #[test]
    fn larger_region_scores_lower_at_equal_saliency() {
        let s = flat(60, 80, 0.1);
        let small = AnchorRegion { x0: 0.0, y0: 0.0, x1: 0.25, y1: 0.25, pixel_count: 0, score: 0.0 };
        let large = AnchorRegion { x0: 0.0, y0: 0.0, x1: 0.8, y1: 0.8, pixel_count: 0, score: 0.0 };
        let a = score_region(&small, &s, 5.0).unwrap();
        let b = score_region(&large, &s, 5.0).unwrap();
        assert!(b < a);
    }
}
