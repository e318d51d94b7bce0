use postergen::eval::{frechet_distance, layout_features, COVARIANCE_EPS, FEATURE_DIM};
use postergen::layout::{Attribute, Layout, TextBox};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tb(x: f64, y: f64, w: f64, h: f64) -> TextBox {
    TextBox { x, y, width: w, height: h, attribute: Attribute::Body }
}

fn normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn random_layout(rng: &mut impl Rng) -> Layout {
    let n = rng.random_range(1..=5);
    let boxes = (0..n)
        .map(|_| {
            let (w, h) = (rng.random_range(0.05..0.6), rng.random_range(0.02..0.1));
            tb(rng.random_range(0.0..1.0 - w), rng.random_range(0.0..1.0 - h), w, h)
        })
        .collect();
    Layout { boxes }
}

fn features(layouts: &[Layout]) -> Vec<Vec<f64>> {
    layouts.iter().map(|l| layout_features(l).unwrap().to_vec()).collect()
}

#[test]
fn single_box_by_hand() {
    let f = layout_features(&Layout { boxes: vec![tb(0.25, 0.4, 0.5, 0.1)] }).unwrap();
    let expect = [0.5, 0.0, 0.45, 0.0, 0.05, 0.0, 0.0, 0.05, 0.25, 0.4, 0.25, 0.5];
    for (a, b) in f.iter().zip(expect) {
        assert!((a - b).abs() < 1e-12, "{f:?}");
    }
}

#[test]
fn identical_boxes_have_unit_iou() {
    let b = tb(0.1, 0.1, 0.3, 0.1);
    let f = layout_features(&Layout { boxes: vec![b, b] }).unwrap();
    assert!((f[6] - 1.0).abs() < 1e-12);
    assert!((f[7] - b.area()).abs() < 1e-12);
}

#[test]
fn two_boxes_by_hand() {
    let l = Layout { boxes: vec![tb(0.0, 0.0, 0.4, 0.2), tb(0.2, 0.1, 0.4, 0.2)] };
    let f = layout_features(&l).unwrap();
    // Centres (0.2, 0.1) and (0.4, 0.2); intersection 0.2 x 0.1.
    let inter = 0.02;
    let union = 0.08 + 0.08 - inter;
    let expect = [0.3, 0.1, 0.15, 0.05, 0.08, 0.0, inter / union, union, 0.0, 0.0, 0.4, 0.7];
    for (i, (a, b)) in f.iter().zip(expect).enumerate() {
        assert!((a - b).abs() < 1e-12, "feature {i}: {a} vs {b}");
    }
}

#[test]
fn empty_layout_rejected() {
    assert!(layout_features(&Layout { boxes: vec![] }).is_err());
}

#[test]
fn self_distance_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let set = features(&(0..300).map(|_| random_layout(&mut rng)).collect::<Vec<_>>());
    assert_eq!(set[0].len(), FEATURE_DIM);
    assert!(frechet_distance(&set, &set).unwrap() < 1e-8);
}

#[test]
fn gaussian_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 10_000;
    let a: Vec<Vec<f64>> = (0..n).map(|_| vec![normal(&mut rng)]).collect();
    let b: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0 + normal(&mut rng)]).collect();
    let d = frechet_distance(&a, &b).unwrap();
    assert!((d - 1.0).abs() < 0.05, "{d}");
}

fn mean_cov2(set: &[Vec<f64>]) -> ([f64; 2], [[f64; 2]; 2]) {
    let n = set.len() as f64;
    let m = [set.iter().map(|v| v[0]).sum::<f64>() / n, set.iter().map(|v| v[1]).sum::<f64>() / n];
    let mut c = [[0.0; 2]; 2];
    for v in set {
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] += (v[i] - m[i]) * (v[j] - m[j]) / (n - 1.0);
            }
        }
    }
    c[0][0] += COVARIANCE_EPS;
    c[1][1] += COVARIANCE_EPS;
    (m, c)
}

#[test]
fn two_dimensional_closed_form() {
    // For 2x2 M with positive eigenvalues, tr sqrt(M) = sqrt(tr M + 2 sqrt(det M)).
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (s, t, r) = (rng.random_range(0.2..2.0), rng.random_range(0.2..2.0), rng.random_range(-0.9..0.9));
        let a: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let (u, v) = (normal(&mut rng), normal(&mut rng));
                vec![s * u, t * (r * u + (1.0 - r * r).sqrt() * v)]
            })
            .collect();
        let b: Vec<Vec<f64>> = (0..150).map(|_| vec![normal(&mut rng) + 0.3, 2.0 * normal(&mut rng)]).collect();
        let (ma, ca) = mean_cov2(&a);
        let (mb, cb) = mean_cov2(&b);
        let p = [
            [ca[0][0] * cb[0][0] + ca[0][1] * cb[1][0], ca[0][0] * cb[0][1] + ca[0][1] * cb[1][1]],
            [ca[1][0] * cb[0][0] + ca[1][1] * cb[1][0], ca[1][0] * cb[0][1] + ca[1][1] * cb[1][1]],
        ];
        let det = p[0][0] * p[1][1] - p[0][1] * p[1][0];
        let tr_sqrt = (p[0][0] + p[1][1] + 2.0 * det.sqrt()).sqrt();
        let expect = (ma[0] - mb[0]).powi(2) + (ma[1] - mb[1]).powi(2) + ca[0][0] + ca[1][1] + cb[0][0] + cb[1][1]
            - 2.0 * tr_sqrt;
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - expect).abs() < 1e-9, "{d} vs {expect}");
    }
}

#[test]
fn too_few_samples_rejected() {
    let set: Vec<Vec<f64>> = (0..FEATURE_DIM + 1).map(|i| vec![i as f64; FEATURE_DIM]).collect();
    let err = frechet_distance(&set, &set).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn shifted_sets_are_farther() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base = features(&(0..200).map(|_| random_layout(&mut rng)).collect::<Vec<_>>());
    let other = features(&(0..200).map(|_| random_layout(&mut rng)).collect::<Vec<_>>());
    let shifted: Vec<Vec<f64>> = other.iter().map(|v| v.iter().map(|x| x + 0.2).collect()).collect();
    assert!(frechet_distance(&base, &shifted).unwrap() > frechet_distance(&base, &other).unwrap());
}

fn layout_strategy() -> impl Strategy<Value = Layout> {
    prop::collection::vec((0.0..0.7f64, 0.0..0.9f64, 0.05..0.3f64, 0.02..0.1f64), 1..6)
        .prop_map(|v| Layout { boxes: v.into_iter().map(|(x, y, w, h)| tb(x, y, w, h)).collect() })
}

proptest! {
    #[test]
    fn features_ignore_box_order(layout in layout_strategy(), seed in any::<u64>()) {
        let mut shuffled = layout.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.boxes.len()).rev() {
            let j = rng.random_range(0..=i);
            shuffled.boxes.swap(i, j);
        }
        let (a, b) = (layout_features(&layout).unwrap(), layout_features(&shuffled).unwrap());
        for (x, y) in a.iter().zip(b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn coverage_matches_fine_grid(layout in layout_strategy()) {
        let n = 400;
        let mut hit = 0usize;
        for i in 0..n {
            for j in 0..n {
                let (x, y) = ((i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64);
                if layout.boxes.iter().any(|b| x >= b.x && x < b.right() && y >= b.y && y < b.bottom()) {
                    hit += 1;
                }
            }
        }
        let grid = hit as f64 / (n * n) as f64;
        let f = layout_features(&layout).unwrap();
        // Each box edge can misclassify at most one row or column of cells.
        prop_assert!((f[7] - grid).abs() <= 4.0 * layout.boxes.len() as f64 / n as f64 + 1e-12);
    }

    #[test]
    fn distance_is_symmetric_and_order_free(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = features(&(0..40).map(|_| random_layout(&mut rng)).collect::<Vec<_>>());
        let b = features(&(0..30).map(|_| random_layout(&mut rng)).collect::<Vec<_>>());
        let d = frechet_distance(&a, &b).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!((d - frechet_distance(&b, &a).unwrap()).abs() < 1e-8);
        let mut rev = a.clone();
        rev.reverse();
        prop_assert!((d - frechet_distance(&rev, &b).unwrap()).abs() < 1e-8);
    }
}
