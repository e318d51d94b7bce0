use std::collections::BTreeSet;
use std::fs;

use postergen::dataset::{
    build_dataset, generate_sample, load_dataset, sample_seed, DatasetManifest, Split, SynthConfig, MANIFEST_FILE,
};
use postergen::layout::Attribute;
use postergen::raster::Grid;
use postergen::saliency::spectral_residual_with;

#[test]
fn seed_42_is_bit_identical() {
    let config = SynthConfig::default();
    let a = generate_sample(42, &config).unwrap();
    let b = generate_sample(42, &config).unwrap();
    assert_eq!(a.background.data(), b.background.data());
    assert_eq!(a, b);
}

#[test]
fn samples_satisfy_their_invariants() {
    let config = SynthConfig::default();
    for seed in 0..40 {
        let s = generate_sample(seed, &config).unwrap();
        let (mw, mh) = config.map;
        assert_eq!(s.boxes.rasterize(mw, mh), s.layout_map, "seed {seed}");
        assert!((1..=5).contains(&s.texts.len()));
        assert_eq!(s.texts[0].attribute, Attribute::Title);
        assert!(s.texts[1..].iter().all(|t| t.attribute != Attribute::Title));
        assert!((1..=4).contains(&s.blobs.len()));
        for b in &s.boxes.boxes {
            assert!(b.in_canvas());
            let (x0, y0, x1, y1) = b.corners();
            assert!(s.smooth_map.coverage(x0, y0, x1, y1) >= 0.5, "seed {seed}");
        }
    }
}

#[test]
fn consistency_checked_pixel_by_pixel() {
    // Independent of Layout::rasterize: a pixel is inside a box when its
    // centre is.
    let config = SynthConfig::default();
    let s = generate_sample(9, &config).unwrap();
    let (w, h) = config.map;
    let mut expect = Grid::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
            if s.boxes.boxes.iter().any(|b| px >= b.x && px < b.right() && py >= b.y && py < b.bottom()) {
                expect.set(x, y, 1.0);
            }
        }
    }
    assert_eq!(expect, s.layout_map);
}

#[test]
fn boxes_avoid_blob_saliency() {
    let config = SynthConfig::default();
    let (mw, mh) = config.map;
    let (mut inside, mut centres) = (0.0, 0.0);
    for i in 0..100 {
        let s = generate_sample(sample_seed(1000, i), &config).unwrap();
        let sal = spectral_residual_with(&s.background, &config.saliency).unwrap().resized(mw, mh);
        assert_eq!(sal, s.saliency);
        let boxes: f64 = s
            .boxes
            .boxes
            .iter()
            .map(|b| {
                let (x0, y0, x1, y1) = b.corners();
                sal.box_mean(x0, y0, x1, y1).unwrap()
            })
            .sum();
        inside += boxes / s.boxes.len() as f64;
        let blobs: f64 = s
            .blobs
            .iter()
            .map(|b| {
                let x = ((b.cx * mw as f64) as usize).min(mw - 1);
                let y = ((b.cy * mh as f64) as usize).min(mh - 1);
                sal.at(x, y)
            })
            .sum();
        centres += blobs / s.blobs.len() as f64;
    }
    assert!(inside < centres, "box saliency {} vs blob centres {}", inside / 100.0, centres / 100.0);
}

#[test]
fn build_dataset_splits_and_scans() {
    let dir = tempfile::tempdir().unwrap();
    let config = SynthConfig::default();
    let manifest = build_dataset(10, 3, dir.path(), &config).unwrap();
    let train = manifest.samples.iter().filter(|s| s.split == Split::Train).count();
    assert_eq!((train, manifest.samples.len() - train), (9, 1));

    let on_disk: BTreeSet<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != MANIFEST_FILE)
        .collect();
    let listed: BTreeSet<String> = manifest
        .samples
        .iter()
        .flat_map(|s| [s.background.clone(), s.layout_map.clone(), s.smooth_map.clone(), s.record.clone()])
        .collect();
    assert_eq!(on_disk, listed);
    assert_eq!(on_disk.iter().filter(|n| n.ends_with(".json")).count(), manifest.count);

    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!((loaded.train.len(), loaded.val.len()), (9, 1));
    let direct = generate_sample(sample_seed(3, 9), &config).unwrap();
    assert_eq!(loaded.val[0].layout, direct.boxes);
    assert_eq!(loaded.val[0].distribution, direct.layout_map);
    assert_eq!(loaded.val[0].smooth, direct.smooth_map.0);
}

#[test]
fn rebuild_overwrites_identically() {
    let dir = tempfile::tempdir().unwrap();
    let config = SynthConfig::default();
    build_dataset(10, 5, dir.path(), &config).unwrap();
    let read_all = || {
        let mut names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        names.into_iter().map(|p| fs::read(p).unwrap()).collect::<Vec<_>>()
    };
    let first = read_all();
    build_dataset(10, 5, dir.path(), &config).unwrap();
    assert_eq!(first, read_all());
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest.seed, 5);
}

#[test]
fn too_small_dataset_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(build_dataset(9, 0, dir.path(), &SynthConfig::default()).is_err());
}

#[test]
fn missing_manifest_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}
