//! Fréchet-Layout Distance: the Fréchet distance between Gaussian fits of
//! hand-crafted layout features. Not comparable with Inception-based FID.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::Layout;

pub const FEATURE_DIM: usize = 12;
pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "center_x_mean",
    "center_x_std",
    "center_y_mean",
    "center_y_std",
    "area_mean",
    "area_std",
    "pairwise_iou_mean",
    "coverage",
    "margin_left",
    "margin_top",
    "margin_right",
    "margin_bottom",
];

/// Regularization added to each covariance diagonal.
pub const COVARIANCE_EPS: f64 = 1e-6;

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Area of the union of axis-aligned boxes, by coordinate compression.
fn union_area(rects: &[(f64, f64, f64, f64)]) -> f64 {
    let mut xs: Vec<f64> = rects.iter().flat_map(|r| [r.0, r.2]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut total = 0.0;
    for pair in xs.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let mut spans: Vec<(f64, f64)> = rects
            .iter()
            .filter(|r| r.0 <= a && r.2 >= b)
            .map(|r| (r.1, r.3))
            .collect();
        spans.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut covered = 0.0;
        let mut current: Option<(f64, f64)> = None;
        for (lo, hi) in spans {
            current = match current {
                Some((clo, chi)) if lo <= chi => Some((clo, chi.max(hi))),
                Some((clo, chi)) => {
                    covered += chi - clo;
                    Some((lo, hi))
                }
                None => Some((lo, hi)),
            };
        }
        if let Some((clo, chi)) = current {
            covered += chi - clo;
        }
        total += covered * (b - a);
    }
    total
}

/// Order-independent geometry statistics of a layout (population std).
pub fn layout_features(layout: &Layout) -> Result<[f64; FEATURE_DIM]> {
    if layout.is_empty() {
        return Err(Error::invalid("layout features need at least one box"));
    }
    let b = &layout.boxes;
    let cx: Vec<f64> = b.iter().map(|t| t.x + t.width / 2.0).collect();
    let cy: Vec<f64> = b.iter().map(|t| t.y + t.height / 2.0).collect();
    let areas: Vec<f64> = b.iter().map(|t| t.area()).collect();
    let (mx, sx) = mean_std(&cx);
    let (my, sy) = mean_std(&cy);
    let (ma, sa) = mean_std(&areas);
    let mut iou_sum = 0.0;
    let mut pairs = 0;
    for i in 0..b.len() {
        for j in i + 1..b.len() {
            iou_sum += b[i].iou(&b[j]);
            pairs += 1;
        }
    }
    let iou = if pairs == 0 { 0.0 } else { iou_sum / pairs as f64 };
    let rects: Vec<_> = b.iter().map(|t| t.corners()).collect();
    let coverage = union_area(&rects);
    let fold = |f: fn(&crate::layout::TextBox) -> f64, min: bool| {
        b.iter()
            .map(f)
            .fold(if min { f64::INFINITY } else { f64::NEG_INFINITY }, |a, v| if min { a.min(v) } else { a.max(v) })
    };
    let left = fold(|t| t.x, true);
    let top = fold(|t| t.y, true);
    let right = 1.0 - fold(|t| t.right(), false);
    let bottom = 1.0 - fold(|t| t.bottom(), false);
    let f = [mx, sx, my, sy, ma, sa, iou, coverage, left, top, right, bottom];
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("layout produced non-finite features"));
    }
    Ok(f)
}

fn gaussian_fit(set: &[Vec<f64>], dim: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = set.len() as f64;
    let mut mean = DVector::zeros(dim);
    for v in set {
        mean += DVector::from_column_slice(v);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(dim, dim);
    for v in set {
        let d = DVector::from_column_slice(v) - &mean;
        cov += &d * d.transpose();
    }
    cov /= n - 1.0;
    for i in 0..dim {
        cov[(i, i)] += COVARIANCE_EPS;
    }
    (mean, cov)
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa Σb)^½)` over Gaussian fits of the two
/// sets. The trace of the cross term is taken as the sum of square roots of
/// the eigenvalues of `Σa^½ Σb Σa^½`, which shares its spectrum with `Σa Σb`.
pub fn frechet_distance(set_a: &[Vec<f64>], set_b: &[Vec<f64>]) -> Result<f64> {
    let dim = set_a.first().or(set_b.first()).map(Vec::len).unwrap_or(0);
    if dim == 0 {
        return Err(Error::invalid("feature vectors must be non-empty"));
    }
    for (name, set) in [("first", set_a), ("second", set_b)] {
        if set.len() < dim + 2 {
            return Err(Error::invalid(format!(
                "{name} set has {} samples; at least {} are needed for dimension {dim}",
                set.len(),
                dim + 2
            )));
        }
        if set.iter().any(|v| v.len() != dim || v.iter().any(|x| !x.is_finite())) {
            return Err(Error::invalid(format!("{name} set has malformed feature vectors")));
        }
    }
    let (ma, ca) = gaussian_fit(set_a, dim);
    let (mb, cb) = gaussian_fit(set_b, dim);
    let root_a = sqrt_psd(&ca);
    let inner = &root_a * &cb * &root_a;
    let sym = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(sym).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let d = (ma - mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

pub fn feature_set(layouts: &[Layout]) -> Result<Vec<Vec<f64>>> {
    layouts.iter().map(|l| layout_features(l).map(|f| f.to_vec())).collect()
}

/// Per-feature means of a set, for reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub count: usize,
    pub means: Vec<(String, f64)>,
}

pub fn summarize(set: &[Vec<f64>]) -> FeatureSummary {
    let n = set.len().max(1) as f64;
    let means = FEATURE_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| (name.to_string(), set.iter().map(|v| v.get(i).copied().unwrap_or(0.0)).sum::<f64>() / n))
        .collect();
    FeatureSummary { count: set.len(), means }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{Attribute, TextBox};

    fn bx(x: f64, y: f64, w: f64, h: f64) -> TextBox {
        TextBox {
            x,
            y,
            width: w,
            height: h,
            attribute: Attribute::Body,
        }
    }

    #[test]
    fn single_centered_box() {
        let l = Layout { boxes: vec![bx(0.3, 0.45, 0.4, 0.1)] };
        let f = layout_features(&l).unwrap();
        let expect = [0.5, 0.0, 0.5, 0.0, 0.04, 0.0, 0.0, 0.04, 0.3, 0.45, 0.3, 0.45];
        for (a, b) in f.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{f:?}");
        }
    }

    #[test]
    fn identical_boxes_have_unit_iou() {
        let l = Layout { boxes: vec![bx(0.1, 0.1, 0.3, 0.1); 2] };
        let f = layout_features(&l).unwrap();
        assert!((f[6] - 1.0).abs() < 1e-12);
        assert!((f[7] - 0.03).abs() < 1e-12);
    }

    #[test]
    fn union_of_overlapping_boxes() {
        let u = union_area(&[(0.0, 0.0, 0.5, 0.5), (0.25, 0.25, 0.75, 0.75)]);
        assert!((u - (0.25 + 0.25 - 0.0625)).abs() < 1e-12);
    }

    #[test]
    fn too_few_samples() {
        let set = vec![vec![0.0, 1.0]; 3];
        assert!(matches!(frechet_distance(&set, &set), Err(Error::InvalidInput(_))));
    }
}
