use std::path::Path;

use postergen::compose::{generate, generate_traced, render, separate, GenerateConfig, PosterSpec, Resources};
use postergen::layout::{Attribute, G1Config, G1Model, G2Config, G2Model, Layout, TextBox, TextElement};
use postergen::raster::RasterImage;
use postergen::retrieval::{build_synthetic_index, ToyEmbedder};
use postergen::stylizer::{build_library, synthetic_style_corpus};
use proptest::prelude::*;

fn resources(dir: &Path) -> Resources {
    let embedder = ToyEmbedder::default();
    let index = build_synthetic_index(12, 3, dir, (300, 400), &embedder).unwrap();
    let corpus = synthetic_style_corpus(200, 4, &embedder).unwrap();
    Resources {
        index,
        embedder: Box::new(embedder),
        g1: G1Model::new(G1Config { channels: 4, feature_dim: 8, ..Default::default() }).unwrap(),
        g2: G2Model::new(G2Config { channels: 8, hidden: 12, context_dim: 8, ..Default::default() }).unwrap(),
        library: build_library(&corpus, 8, 5).unwrap(),
    }
}

fn texts() -> Vec<TextElement> {
    vec![
        TextElement::new("Jazz Night", Attribute::Title).unwrap(),
        TextElement::new("live music by the river", Attribute::Subtitle).unwrap(),
        TextElement::new("doors open at eight", Attribute::Body).unwrap(),
        TextElement::new("free entry", Attribute::Body).unwrap(),
    ]
}

fn assert_separated(layout: &Layout) {
    for (i, a) in layout.boxes.iter().enumerate() {
        assert!(a.in_canvas(), "{a:?}");
        for b in &layout.boxes[i + 1..] {
            assert!(a.iou(b) <= 0.05, "{a:?} {b:?}");
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let res = resources(dir.path());
    let config = GenerateConfig { seed: 7, ..Default::default() };
    let (spec_a, img_a) = generate(&texts(), &res, &config).unwrap();
    let (spec_b, img_b) = generate(&texts(), &res, &config).unwrap();
    assert_eq!(spec_a.to_json().unwrap(), spec_b.to_json().unwrap());
    assert_eq!(img_a.data(), img_b.data());
    assert_eq!((img_a.width(), img_a.height()), (300, 400));
    assert_eq!(spec_a.styles.len(), 4);
    assert_separated(&spec_a.layout);
    // Colours are stored as #rrggbb, so the JSON text is the fixed point.
    let back: PosterSpec = serde_json::from_str(&spec_a.to_json().unwrap()).unwrap();
    assert_eq!(back.to_json().unwrap(), spec_a.to_json().unwrap());
    assert_eq!(back.layout, spec_a.layout);
}

#[test]
fn trace_matches_the_spec() {
    let dir = tempfile::tempdir().unwrap();
    let res = resources(dir.path());
    let config = GenerateConfig { seed: 2, iterations: 3, ..Default::default() };
    let (spec, _, trace) = generate_traced(&texts(), &res, &config).unwrap();
    assert_eq!(separate(&trace.refined).0, spec.layout);
    let bg = RasterImage::load(&spec.background_path).unwrap();
    let replayed = postergen::compose::layout_for_background(&bg, &texts(), &res.g1, &res.g2, &config).unwrap();
    assert_eq!(replayed.refined, trace.refined);
}

#[test]
fn rendered_ink_stays_near_boxes() {
    let dir = tempfile::tempdir().unwrap();
    let res = resources(dir.path());
    let (spec, img) = generate(&texts(), &res, &GenerateConfig { seed: 11, ..Default::default() }).unwrap();
    let bg = RasterImage::load(&spec.background_path).unwrap();
    let again = render(&spec, &bg).unwrap();
    assert_eq!(again.data(), img.data());
    let (w, h) = spec.canvas;
    let tol = 2.0;
    let mut ink = 0;
    for y in 0..h {
        for x in 0..w {
            if img.pixel(x, y) == bg.pixel(x, y) {
                continue;
            }
            ink += 1;
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let inside = spec.layout.boxes.iter().any(|b| {
                px >= b.x * w as f64 - tol
                    && px <= b.right() * w as f64 + tol
                    && py >= b.y * h as f64 - tol
                    && py <= b.bottom() * h as f64 + tol
            });
            assert!(inside, "ink at ({x}, {y}) outside every box");
        }
    }
    assert!(ink > 0);
}

#[test]
fn missing_font_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let res = resources(dir.path());
    let (mut spec, _) = generate(&texts(), &res, &GenerateConfig::default()).unwrap();
    spec.styles[1].font = "gothic".into();
    let bg = RasterImage::load(&spec.background_path).unwrap();
    let err = render(&spec, &bg).unwrap_err();
    assert!(err.to_string().contains("gothic"), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn blank_text_is_skipped_when_rendering() {
    let dir = tempfile::tempdir().unwrap();
    let res = resources(dir.path());
    let (mut spec, img) = generate(&texts(), &res, &GenerateConfig::default()).unwrap();
    let bg = RasterImage::load(&spec.background_path).unwrap();
    spec.texts.push(TextElement { text: "   ".into(), attribute: Attribute::Body });
    spec.layout.boxes.push(TextBox { x: 0.0, y: 0.0, width: 1.0, height: 1.0, attribute: Attribute::Body });
    spec.styles.push(spec.styles[0].clone());
    assert_eq!(render(&spec, &bg).unwrap().data(), img.data());
}

#[test]
fn bad_inputs_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let res = resources(dir.path());
    let config = GenerateConfig::default();
    assert_eq!(generate(&[], &res, &config).unwrap_err().exit_code(), 2);
    let blank = vec![TextElement { text: " ".into(), attribute: Attribute::Title }];
    assert_eq!(generate(&blank, &res, &config).unwrap_err().exit_code(), 2);

    std::fs::remove_dir_all(dir.path().join("images")).unwrap();
    let err = generate(&texts(), &res, &config).unwrap_err();
    assert!(err.to_string().contains("retrieval"), "{err}");
    assert_eq!(err.exit_code(), 3);
}

fn boxes() -> impl Strategy<Value = Layout> {
    let attr = prop_oneof![Just(Attribute::Title), Just(Attribute::Subtitle), Just(Attribute::Body)];
    prop::collection::vec((-0.1..1.0f64, -0.1..1.0f64, 0.05..0.6f64, 0.03..0.1f64, attr), 1..6).prop_map(|v| Layout {
        boxes: v
            .into_iter()
            .map(|(x, y, width, height, attribute)| TextBox { x, y, width, height, attribute })
            .collect(),
    })
}

proptest! {
    #[test]
    fn separation_removes_overlap(layout in boxes()) {
        let (out, moved) = separate(&layout);
        prop_assert_eq!(out.len(), layout.len());
        assert_separated(&out);
        for ((a, b), d) in layout.boxes.iter().zip(&out.boxes).zip(&moved) {
            prop_assert_eq!((a.width, a.height, a.attribute), (b.width, b.height, b.attribute));
            prop_assert!((a.distance_to(b) - d).abs() < 1e-12);
        }
    }

    #[test]
    fn separated_layouts_are_fixed_points(layout in boxes()) {
        let (once, _) = separate(&layout);
        let (twice, moved) = separate(&once);
        prop_assert_eq!(once, twice);
        prop_assert!(moved.iter().all(|d| *d == 0.0));
    }
}
