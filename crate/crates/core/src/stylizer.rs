//! Style library: k-means over text embeddings, then nearest-style matching.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::TextBox;
use crate::raster::{pixel_span, RasterImage, Rgb};
use crate::render::font_exists;
use crate::retrieval::{cosine_similarity, EmbeddingProvider, THEMES};

/// Minimum luminance contrast between text and background.
pub const MIN_CONTRAST: f64 = 1.5;

/// One observed styling: the text embedding, the colour behind the text, the
/// text colour and the font.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleTuple {
    pub embedding: Vec<f32>,
    #[serde(with = "crate::raster::hex_color")]
    pub background: Rgb,
    #[serde(with = "crate::raster::hex_color")]
    pub text: Rgb,
    pub font: String,
}

impl StyleTuple {
    fn validate(&self, row: usize) -> Result<()> {
        let in_unit = |c: &Rgb| c.0.iter().all(|v| (0.0..=1.0).contains(v));
        if !in_unit(&self.background) || !in_unit(&self.text) {
            return Err(Error::invalid(format!("style {row}: colour outside [0, 1]")));
        }
        if !font_exists(&self.font) {
            return Err(Error::invalid(format!("style {row}: unknown font {}", self.font)));
        }
        if self.embedding.iter().any(|v| !v.is_finite()) || self.embedding.iter().all(|v| *v == 0.0) {
            return Err(Error::invalid(format!("style {row}: embedding must be finite and non-zero")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleLibrary {
    pub centers: Vec<StyleTuple>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    /// Inertia after each assignment step.
    pub inertia: Vec<f64>,
}

impl KMeans {
    pub fn final_inertia(&self) -> f64 {
        *self.inertia.last().unwrap_or(&0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Index of the nearest center and the squared distance to it; ties go to
/// the lower index.
fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Sum of squared distances from each point to its assigned center.
pub fn inertia(points: &[Vec<f64>], centers: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points.iter().zip(assignments).map(|(p, a)| sq_dist(p, &centers[*a])).sum()
}

fn plus_plus_seeds(points: &[Vec<f64>], m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = d2.iter().rposition(|d| *d > 0.0).unwrap_or(0);
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 && u < *d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[pick]));
        }
    }
    centers
}

/// Lloyd's algorithm from k-means++ seeds. Stops after `max_iters` rounds,
/// when assignments stop changing, or when inertia changes by less than
/// 1e-6 relative.
pub fn kmeans(points: &[Vec<f64>], m: usize, seed: u64, max_iters: usize) -> Result<KMeans> {
    if m == 0 {
        return Err(Error::invalid("cluster count must be at least 1"));
    }
    if m > points.len() {
        return Err(Error::invalid(format!("{m} clusters requested for {} points", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("points have different dimensions"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_seeds(points, m, &mut rng);
    let mut assignments = vec![usize::MAX; points.len()];
    let mut history: Vec<f64> = Vec::new();
    for iter in 0..max_iters.max(1) {
        let mut changed = false;
        let mut total = 0.0;
        for (a, p) in assignments.iter_mut().zip(points) {
            let (j, d) = nearest(p, &centers);
            changed |= *a != j;
            *a = j;
            total += d;
        }
        if let Some(prev) = history.last() {
            assert!(total <= prev + 1e-9 * prev.abs().max(1.0), "inertia rose from {prev} to {total}");
        }
        let relative = history.last().map(|prev| (prev - total).abs() / prev.abs().max(f64::MIN_POSITIVE));
        history.push(total);
        debug!("kmeans iteration {iter} inertia {total}");
        if !changed || relative.is_some_and(|r| r < 1e-6) || total == 0.0 {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; m];
        let mut counts = vec![0usize; m];
        for (p, a) in points.iter().zip(&assignments) {
            counts[*a] += 1;
            for (s, v) in sums[*a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for ((c, s), n) in centers.iter_mut().zip(sums).zip(counts) {
            if n > 0 {
                *c = s.into_iter().map(|v| v / n as f64).collect();
            }
        }
    }
    Ok(KMeans {
        assignments,
        centers,
        inertia: history,
    })
}

/// The member minimizing the summed distance to all others; ties go to the
/// first such member.
fn medoid(colors: &[Rgb]) -> Rgb {
    let cost = |c: &Rgb| colors.iter().map(|o| c.distance(o)).sum::<f64>();
    let mut best = (colors[0], f64::INFINITY);
    for c in colors {
        let v = cost(c);
        if v < best.1 {
            best = (*c, v);
        }
    }
    best.0
}

fn normalized(v: &[f32]) -> Vec<f64> {
    let n = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    v.iter().map(|x| *x as f64 / n).collect()
}

/// Clusters the tuples' embeddings into `m` groups. Each center gets the
/// normalized mean embedding, the medoid background and text colours, and
/// the most frequent font of its members.
pub fn build_library(tuples: &[StyleTuple], m: usize, seed: u64) -> Result<StyleLibrary> {
    if tuples.len() < m {
        return Err(Error::invalid(format!("{} style tuples for {m} clusters", tuples.len())));
    }
    if m == 0 {
        return Err(Error::invalid("cluster count must be at least 1"));
    }
    let dim = tuples[0].embedding.len();
    for (i, t) in tuples.iter().enumerate() {
        t.validate(i)?;
        if t.embedding.len() != dim {
            return Err(Error::Config(format!("style {i}: embedding dim {} != {dim}", t.embedding.len())));
        }
    }
    let points: Vec<Vec<f64>> = tuples.iter().map(|t| normalized(&t.embedding)).collect();
    let clusters = kmeans(&points, m, seed, 100)?;
    let mut centers: Vec<Option<StyleTuple>> = vec![None; m];
    for (j, slot) in centers.iter_mut().enumerate() {
        let members: Vec<usize> = (0..tuples.len()).filter(|i| clusters.assignments[*i] == j).collect();
        if members.is_empty() {
            continue;
        }
        let mut mean = vec![0.0; dim];
        for &i in &members {
            for (s, v) in mean.iter_mut().zip(&points[i]) {
                *s += v;
            }
        }
        let n = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        let embedding: Vec<f32> = if n > 0.0 {
            mean.iter().map(|v| (v / n) as f32).collect()
        } else {
            points[members[0]].iter().map(|v| *v as f32).collect()
        };
        let backgrounds: Vec<Rgb> = members.iter().map(|i| tuples[*i].background).collect();
        let texts: Vec<Rgb> = members.iter().map(|i| tuples[*i].text).collect();
        let mut fonts: BTreeMap<&str, usize> = BTreeMap::new();
        for &i in &members {
            *fonts.entry(tuples[i].font.as_str()).or_default() += 1;
        }
        let top = fonts.values().copied().max().unwrap_or(0);
        let font = fonts.iter().find(|(_, c)| **c == top).map(|(f, _)| f.to_string()).unwrap_or_default();
        *slot = Some(StyleTuple {
            embedding,
            background: medoid(&backgrounds),
            text: medoid(&texts),
            font,
        });
    }
    // An empty cluster copies the style of the nearest non-empty one.
    let filled: Vec<usize> = (0..m).filter(|j| centers[*j].is_some()).collect();
    let resolved = (0..m)
        .map(|j| match &centers[j] {
            Some(c) => c.clone(),
            None => {
                let (k, _) = filled
                    .iter()
                    .map(|k| (*k, sq_dist(&clusters.centers[j], &clusters.centers[*k])))
                    .fold((filled[0], f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
                centers[k].clone().expect("filled cluster")
            }
        })
        .collect();
    Ok(StyleLibrary { centers: resolved })
}

impl StyleLibrary {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::missing(path, "style library not found"));
        }
        let lib: StyleLibrary =
            serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::load(path, e.to_string()))?;
        if lib.centers.is_empty() {
            return Err(Error::load(path, "style library has no centers"));
        }
        for (i, c) in lib.centers.iter().enumerate() {
            c.validate(i).map_err(|e| Error::load(path, e.to_string()))?;
        }
        Ok(lib)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchedStyle {
    pub center: usize,
    pub text_color: Rgb,
    pub font: String,
    /// Whether the contrast guard replaced the center's text colour.
    pub flipped: bool,
}

/// Black or white, whichever contrasts more with `background`.
pub fn best_contrast(background: &Rgb) -> Rgb {
    if Rgb::BLACK.contrast_ratio(background) >= Rgb::WHITE.contrast_ratio(background) {
        Rgb::BLACK
    } else {
        Rgb::WHITE
    }
}

/// Picks the center maximizing `w·cos(r, r_m) + (1 − w)(1 − ‖c − c_m‖/√3)`
/// and returns its text colour and font, swapping the colour for black or
/// white when it contrasts less than [`MIN_CONTRAST`] with `background`.
pub fn match_style(library: &StyleLibrary, embedding: &[f32], background: Rgb, weight: f64) -> Result<MatchedStyle> {
    if library.centers.is_empty() {
        return Err(Error::invalid("style library is empty"));
    }
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::Config(format!("style weight {weight} outside [0, 1]")));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (m, c) in library.centers.iter().enumerate() {
        let cos = cosine_similarity(embedding, &c.embedding)?;
        let score = weight * cos + (1.0 - weight) * (1.0 - background.distance(&c.background) / 3f64.sqrt());
        if score > best.1 {
            best = (m, score);
        }
    }
    let center = &library.centers[best.0];
    let flipped = center.text.contrast_ratio(&background) < MIN_CONTRAST;
    Ok(MatchedStyle {
        center: best.0,
        text_color: if flipped { best_contrast(&background) } else { center.text },
        font: center.font.clone(),
        flipped,
    })
}

/// Mean colour of the pixels whose centres lie inside the box; a box too
/// small to contain a pixel centre reads the pixel under its centre.
pub fn sample_background_color(image: &RasterImage, bx: &TextBox) -> Rgb {
    let (w, h) = (image.width(), image.height());
    let (c0, c1) = pixel_span(bx.x, bx.right(), w);
    let (r0, r1) = pixel_span(bx.y, bx.bottom(), h);
    if c0 == c1 || r0 == r1 {
        let cx = (((bx.x + bx.width / 2.0) * w as f64) as usize).min(w - 1);
        let cy = (((bx.y + bx.height / 2.0) * h as f64) as usize).min(h - 1);
        return image.pixel(cx, cy);
    }
    let mut sum = [0.0; 3];
    for y in r0..r1 {
        for x in c0..c1 {
            let p = image.pixel(x, y);
            for k in 0..3 {
                sum[k] += p.0[k];
            }
        }
    }
    let n = ((c1 - c0) * (r1 - r0)) as f64;
    Rgb(sum.map(|s| s / n))
}

/// A style corpus where every theme has its own text colour and font, with
/// random background colours. Embeddings come from `provider` applied to
/// the theme plus a random suffix word.
pub fn synthetic_style_corpus(n: usize, seed: u64, provider: &dyn EmbeddingProvider) -> Result<Vec<StyleTuple>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fonts = crate::render::FONTS;
    (0..n)
        .map(|_| {
            let t = rng.random_range(0..THEMES.len());
            let mut theme_rng = ChaCha8Rng::seed_from_u64(t as u64 + 1);
            let text = Rgb::new(theme_rng.random(), theme_rng.random(), theme_rng.random());
            let font = fonts[t % fonts.len()].to_string();
            let background = Rgb::new(rng.random(), rng.random(), rng.random());
            let words = ["poster", "event", "today", "welcome", "news"];
            let phrase = format!("{} {}", THEMES[t], words[rng.random_range(0..words.len())]);
            Ok(StyleTuple {
                embedding: provider.embed(&phrase)?,
                background,
                text,
                font,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tuple(e: Vec<f32>, bg: Rgb, text: Rgb, font: &str) -> StyleTuple {
        StyleTuple {
            embedding: e,
            background: bg,
            text,
            font: font.into(),
        }
    }

    #[test]
    fn every_point_its_own_center() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let k = kmeans(&pts, 6, 3, 50).unwrap();
        assert_eq!(k.final_inertia(), 0.0);
        let mut a = k.assignments.clone();
        a.sort();
        a.dedup();
        assert_eq!(a.len(), 6);
    }

    #[test]
    fn too_many_clusters() {
        assert!(matches!(kmeans(&[vec![0.0]], 2, 0, 10), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn identical_tuples_replicate_one_style() {
        let t = tuple(vec![1.0, 2.0], Rgb::new(0.2, 0.3, 0.4), Rgb::WHITE, "bold");
        let lib = build_library(&vec![t.clone(); 5], 3, 1).unwrap();
        assert_eq!(lib.centers.len(), 3);
        for c in &lib.centers {
            assert_eq!((c.background, c.text, c.font.as_str()), (t.background, t.text, "bold"));
        }
    }

    #[test]
    fn white_on_white_flips_to_black() {
        let lib = StyleLibrary {
            centers: vec![tuple(vec![1.0, 0.0], Rgb::WHITE, Rgb::new(0.98, 0.98, 0.98), "regular")],
        };
        let m = match_style(&lib, &[1.0, 0.0], Rgb::WHITE, 0.7).unwrap();
        assert!(m.flipped);
        assert_eq!(m.text_color, Rgb::BLACK);
    }

    #[test]
    fn exact_match_wins() {
        let lib = StyleLibrary {
            centers: vec![
                tuple(vec![1.0, 0.0], Rgb::new(0.1, 0.1, 0.1), Rgb::WHITE, "regular"),
                tuple(vec![0.6, 0.8], Rgb::new(0.9, 0.8, 0.1), Rgb::BLACK, "italic"),
            ],
        };
        let m = match_style(&lib, &[0.6, 0.8], Rgb::new(0.9, 0.8, 0.1), 0.7).unwrap();
        assert_eq!((m.center, m.font.as_str()), (1, "italic"));
    }

    #[test]
    fn half_black_half_white_is_mid_gray() {
        let mut img = RasterImage::filled(20, 10, Rgb::BLACK);
        for y in 0..10 {
            for x in 10..20 {
                img.set_pixel(x, y, Rgb::WHITE);
            }
        }
        let bx = TextBox {
            x: 0.0,
            y: 0.0,
            width: 1.0,
            height: 1.0,
            attribute: crate::layout::Attribute::Body,
        };
        let c = sample_background_color(&img, &bx);
        assert!(c.0.iter().all(|v| (v - 0.5).abs() < 1e-6));
    }
}
