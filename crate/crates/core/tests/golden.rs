use std::path::PathBuf;

use image::{Rgba, RgbaImage};
use zoomground::evaluation::annotate;
use zoomground::geometry::{BBox, PointCoord};
use zoomground::inference::Prediction;

fn canvas() -> RgbaImage {
    RgbaImage::from_fn(96, 64, |x, y| Rgba([(x * 2) as u8, (y * 3) as u8, 90, 255]))
}

/// Compares against `tests/golden/<name>.png`; `UPDATE_GOLDEN=1` rewrites it.
fn check(name: &str, img: &RgbaImage) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.png"));
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        img.save(&path).unwrap();
        return;
    }
    let want = image::open(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display())).to_rgba8();
    assert_eq!(want.dimensions(), img.dimensions(), "{name}");
    let diff = want.pixels().zip(img.pixels()).filter(|(a, b)| a != b).count();
    assert_eq!(diff, 0, "{name}: {diff} pixels differ");
}

#[test]
fn box_prediction() {
    let gt = BBox::new(0.2, 0.25, 0.5, 0.6).unwrap();
    let pred = Prediction::Box(BBox::new(0.3, 0.3, 0.7, 0.8).unwrap());
    check("box", &annotate(&canvas(), &pred, &gt));
}

#[test]
fn point_prediction() {
    let gt = BBox::new(0.6, 0.1, 0.9, 0.4).unwrap();
    let pred = Prediction::Point(PointCoord::new(0.7, 0.3).unwrap());
    check("point", &annotate(&canvas(), &pred, &gt));
}

#[test]
fn boxes_on_the_border() {
    let gt = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
    let pred = Prediction::Box(BBox::new(0.9, 0.9, 1.0, 1.0).unwrap());
    check("border", &annotate(&canvas(), &pred, &gt));
}
