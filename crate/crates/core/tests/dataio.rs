mod common;

use std::fmt::Write as _;
use std::path::Path;

use common::*;
use lcdnet::dataio::*;
use lcdnet::groundtruth::DotMap;
use lcdnet::numerics::Tensor;
use lcdnet::Error;
use proptest::prelude::*;
use rand::Rng;

fn record(boxes: Vec<(f64, f64, f64, f64)>) -> AnnotationRecord {
    AnnotationRecord { image_path: "img".into(), annotations: Annotations::Boxes(boxes), altitude_m: None }
}

fn scene(w: usize, h: usize, n: usize, seed: u64) -> (Tensor, DotMap) {
    synth_scene(&SynthSpec { width: w, height: h, n_objects: n, seed, ..SynthSpec::default() }).unwrap()
}

#[test]
fn box_centres() {
    let d = boxes_to_dots(&record(vec![(10.0, 10.0, 20.0, 20.0)]), 64, 64).unwrap();
    assert_eq!(d.points, vec![(15.0, 15.0)]);
    assert_eq!(boxes_to_dots(&record(vec![]), 64, 64).unwrap().count(), 0);

    let err = boxes_to_dots(&record(vec![(1.0, 1.0, 3.0, 3.0), (5.0, 5.0, 5.0, 9.0)]), 64, 64).unwrap_err();
    assert!(matches!(err, Error::Annotation { index: 1, .. }), "{err:?}");
}

#[test]
fn manifest_of_459_box_records() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rng(459);
    let mut manifest = String::from("image_path,annotation_path\n");
    let pgm = {
        let mut b = b"P5\n12 10\n255\n".to_vec();
        b.extend((0..120).map(|i| (i * 2) as u8));
        b
    };
    let mut total_boxes = 0;
    for i in 0..459 {
        let n = rng.random_range(0..6);
        total_boxes += n;
        let mut ann = String::new();
        for _ in 0..n {
            let (x1, y1) = (rng.random_range(0.0..8.0), rng.random_range(0.0..6.0));
            let (x2, y2) = (x1 + rng.random_range(0.5..4.0), y1 + rng.random_range(0.5..4.0));
            writeln!(ann, "{x1} {y1} {x2} {y2}").unwrap();
        }
        std::fs::write(dir.path().join(format!("c{i}.pgm")), &pgm).unwrap();
        std::fs::write(dir.path().join(format!("c{i}.txt")), ann).unwrap();
        writeln!(manifest, "c{i}.pgm,c{i}.txt").unwrap();
    }
    let path = dir.path().join("test.csv");
    std::fs::write(&path, manifest).unwrap();

    let samples = load_dataset(&path).unwrap();
    assert_eq!(samples.len(), 459);
    assert_eq!(samples.iter().map(|s| s.dots.count()).sum::<usize>(), total_boxes);
    // grey input is replicated to three channels and scaled to [0, 1]
    let img = &samples[0].image;
    assert_eq!(img.shape(), &[1, 3, 10, 12]);
    assert_eq!(img.at4(0, 0, 1, 1), 26.0 / 255.0);
    assert_eq!(img.at4(0, 2, 1, 1), img.at4(0, 0, 1, 1));
    assert!(samples.iter().enumerate().all(|(i, s)| s.id == format!("c{i}.pgm")));
}

#[test]
fn empty_manifest_loads_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    std::fs::write(&path, "").unwrap();
    assert!(load_dataset(&path).unwrap().is_empty());
    std::fs::write(&path, "image_path,annotation_path,altitude\n# nothing yet\n").unwrap();
    assert!(load_dataset(&path).unwrap().is_empty());
}

#[test]
fn missing_image_is_reported_with_path_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    std::fs::write(dir.path().join("a.txt"), "1 1\n").unwrap();
    std::fs::write(&path, "image_path,annotation_path\nnope.ppm,a.txt\n").unwrap();
    let err = load_dataset(&path).unwrap_err().to_string();
    assert!(err.contains("nope.ppm"), "{err}");
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn malformed_annotation_line_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (img, _) = scene(16, 16, 0, 1);
    std::fs::write(dir.path().join("a.ppm"), encode_ppm(&img).unwrap()).unwrap();
    std::fs::write(dir.path().join("a.txt"), "1 1\n2 2\n3\n").unwrap();
    let path = dir.path().join("m.csv");
    std::fs::write(&path, "a.ppm,a.txt\n").unwrap();
    let err = load_dataset(&path).unwrap_err().to_string();
    assert!(err.contains("a.txt") && err.contains("line 3"), "{err}");
}

#[test]
fn save_and_reload_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut scenes = Vec::new();
    for i in 0..4 {
        let (img, mut dots) = scene(24 + 4 * i, 20, 3 + i, 10 + i as u64);
        if i == 2 {
            dots.altitude_m = Some(42.5);
        }
        scenes.push((format!("s{i}"), img, dots));
    }
    let manifest = save_dataset(dir.path(), &scenes).unwrap();
    let loaded = load_dataset(&manifest).unwrap();
    assert_eq!(loaded.len(), 4);
    for ((stem, img, dots), s) in scenes.iter().zip(&loaded) {
        assert_eq!(s.id, format!("{stem}.ppm"));
        assert_eq!(&s.image, img);
        assert_eq!(s.dots.points, dots.points);
        assert_eq!(s.dots.altitude_m, dots.altitude_m);
        assert_eq!((s.dots.image_w, s.dots.image_h), (dots.image_w, dots.image_h));
    }
    // deterministic and order-stable
    assert_eq!(load_dataset(&manifest).unwrap(), loaded);
}

#[test]
fn manifest_order_is_preserved() {
    let dir = tempfile::tempdir().unwrap();
    let scenes: Vec<_> = (0..5)
        .map(|i| {
            let (img, dots) = scene(16, 16, i, i as u64);
            (format!("z{i}"), img, dots)
        })
        .collect();
    let manifest = save_dataset(dir.path(), &scenes).unwrap();
    let text = std::fs::read_to_string(&manifest).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1..].reverse();
    std::fs::write(&manifest, lines.join("\n")).unwrap();
    let ids: Vec<String> = load_dataset(&manifest).unwrap().into_iter().map(|s| s.id).collect();
    assert_eq!(ids, ["z4.ppm", "z3.ppm", "z2.ppm", "z1.ppm", "z0.ppm"]);
}

#[test]
fn synthetic_scene_contract() {
    let (img, dots) = scene(40, 30, 0, 3);
    assert_eq!(dots.count(), 0);
    assert_eq!(img.shape(), &[1, 3, 30, 40]);

    let (img, dots) = scene(40, 30, 10, 3);
    assert_eq!(dots.count(), 10);
    assert!(dots.validate().is_ok());
    assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));

    let again = scene(40, 30, 10, 3);
    assert_eq!(again.0, img);
    assert_eq!(again.1, dots);
    assert_ne!(scene(40, 30, 10, 4).1, dots);

    let crowded = SynthSpec { width: 4, height: 4, n_objects: 500, ..SynthSpec::default() };
    let err = synth_scene(&crowded).unwrap_err();
    assert!(matches!(err, Error::Generation(_)));
    assert!(err.to_string().contains("density"), "{err}");
}

#[test]
fn augmentation_examples() {
    let (img, dots) = scene(100, 12, 6, 5);
    let flip = AugmentDraw { flip: true, brightness: 0.0, contrast: 1.0 };
    let (once, d1) = apply_draw(&img, &dots, flip).unwrap();
    let (twice, d2) = apply_draw(&once, &d1, flip).unwrap();
    assert_eq!(twice, img);
    // w - 1 - (w - 1 - x) is x only up to rounding
    for (a, b) in d2.points.iter().zip(&dots.points) {
        assert!((a.0 - b.0).abs() < 1e-12 && a.1 == b.1);
    }

    let neutral = AugmentDraw { flip: false, brightness: 0.0, contrast: 1.0 };
    let (same, d) = apply_draw(&img, &dots, neutral).unwrap();
    assert_eq!(same, img);
    assert_eq!(d, dots);

    let edge = DotMap::new(100, 12, vec![(0.0, 7.0)]);
    let (_, flipped) = apply_draw(&img, &edge, flip).unwrap();
    assert_eq!(flipped.points, vec![(99.0, 7.0)]);

    let cfg = AugmentationConfig { seed: 9, ..AugmentationConfig::default() };
    assert_eq!(augment(&img, &dots, &cfg, 4).unwrap(), augment(&img, &dots, &cfg, 4).unwrap());
    let (a, _) = augment(&img, &dots, &AugmentationConfig::identity(), 4).unwrap();
    assert_eq!(a, img);

    let mismatched = DotMap::new(50, 12, vec![]);
    assert!(matches!(apply_draw(&img, &mismatched, flip), Err(Error::Dimension(_))));
}

fn pairwise(points: &[(f64, f64)]) -> Vec<f64> {
    let mut d = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d.push(((points[i].0 - points[j].0).powi(2) + (points[i].1 - points[j].1).powi(2)).sqrt());
        }
    }
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn augmentation_keeps_count_and_distances(seed in any::<u64>(), draw in any::<u64>(), n in 0usize..12) {
        let (img, dots) = scene(32, 24, n, seed);
        let cfg = AugmentationConfig { seed, ..AugmentationConfig::default() };
        let (out, moved) = augment(&img, &dots, &cfg, draw).unwrap();
        prop_assert_eq!(moved.count(), dots.count());
        prop_assert_eq!(out.shape(), img.shape());
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        for (a, b) in pairwise(&moved.points).iter().zip(pairwise(&dots.points)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn box_centres_translate_with_boxes(
        seed in any::<u64>(),
        dx in -5.0f64..5.0,
        dy in -5.0f64..5.0,
    ) {
        let mut rng = rng(seed);
        let boxes: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(0..10))
            .map(|_| {
                let (x, y) = (rng.random_range(10.0..60.0), rng.random_range(10.0..60.0));
                (x, y, x + rng.random_range(0.5..20.0), y + rng.random_range(0.5..20.0))
            })
            .collect();
        let shifted: Vec<_> = boxes.iter().map(|&(a, b, c, d)| (a + dx, b + dy, c + dx, d + dy)).collect();
        let base = boxes_to_dots(&record(boxes.clone()), 100, 100).unwrap();
        let moved = boxes_to_dots(&record(shifted), 100, 100).unwrap();
        prop_assert_eq!(base.count(), boxes.len());
        for (p, q) in base.points.iter().zip(&moved.points) {
            prop_assert!((q.0 - p.0 - dx).abs() < 1e-12 && (q.1 - p.1 - dy).abs() < 1e-12);
        }
    }
}

#[test]
fn annotation_parser_accepts_points_or_boxes() {
    let origin = Path::new("ann.txt");
    assert_eq!(parse_annotations("1 2\n3,4 # c\n", origin).unwrap(), Annotations::Points(vec![(1.0, 2.0), (3.0, 4.0)]));
    assert_eq!(parse_annotations("1 2 3 4\n", origin).unwrap(), Annotations::Boxes(vec![(1.0, 2.0, 3.0, 4.0)]));
    assert!(parse_annotations("1 2\n1 2 3 4\n", origin).is_err());
    assert!(parse_annotations("1 nan\n", origin).is_err());
}
