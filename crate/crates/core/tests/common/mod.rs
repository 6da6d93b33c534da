#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use image::{Rgba, RgbaImage};
use rand::Rng;
use zoomground::dataset::{self, DatasetRecord, ElementType, Platform};
use zoomground::geometry::{BBox, Space};
use zoomground::inference::{Backend, BackendError, CoordConvention, ViewRequest};
use zoomground::seeding;

pub const GRID: usize = 2000;

/// Cell centers of an `n`-cell axis that fall in `[lo, hi]`.
fn axis_count(lo: f64, hi: f64, n: usize) -> f64 {
    if hi < lo {
        return 0.0;
    }
    let nf = n as f64;
    let first = (lo * nf - 0.5).ceil().max(0.0);
    let last = (hi * nf - 0.5).floor().min(nf - 1.0);
    (last - first + 1.0).max(0.0)
}

fn cells(xmin: f64, ymin: f64, xmax: f64, ymax: f64, n: usize) -> f64 {
    axis_count(xmin, xmax, n) * axis_count(ymin, ymax, n)
}

/// GIoU by counting cells of an `n x n` grid over the unit square. Axis
/// aligned boxes make each count the product of two per-axis counts.
pub fn grid_giou(a: &BBox, b: &BBox, n: usize) -> f64 {
    let ca = cells(a.xmin, a.ymin, a.xmax, a.ymax, n);
    let cb = cells(b.xmin, b.ymin, b.xmax, b.ymax, n);
    let inter = cells(a.xmin.max(b.xmin), a.ymin.max(b.ymin), a.xmax.min(b.xmax), a.ymax.min(b.ymax), n);
    let hull = cells(a.xmin.min(b.xmin), a.ymin.min(b.ymin), a.xmax.max(b.xmax), a.ymax.max(b.ymax), n);
    let union = ca + cb - inter;
    inter / union - (hull - union) / hull
}

/// Same oracle by visiting every cell; only for small grids.
pub fn brute_grid_giou(a: &BBox, b: &BBox, n: usize) -> f64 {
    let (mut ca, mut cb, mut inter, mut hull) = (0.0, 0.0, 0.0, 0.0);
    let h = BBox::raw(a.xmin.min(b.xmin), a.ymin.min(b.ymin), a.xmax.max(b.xmax), a.ymax.max(b.ymax), Space::Original);
    let inside = |bx: &BBox, x: f64, y: f64| x >= bx.xmin && x <= bx.xmax && y >= bx.ymin && y <= bx.ymax;
    for i in 0..n {
        for j in 0..n {
            let (x, y) = ((i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64);
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            ca += f64::from(u8::from(ia));
            cb += f64::from(u8::from(ib));
            inter += f64::from(u8::from(ia && ib));
            hull += f64::from(u8::from(inside(&h, x, y)));
        }
    }
    let union = ca + cb - inter;
    inter / union - (hull - union) / hull
}

/// Box with both sides at least `min_side`, inside the unit square.
pub fn random_box<R: Rng>(rng: &mut R, min_side: f64) -> BBox {
    let w = rng.random_range(min_side..=1.0);
    let h = rng.random_range(min_side..=1.0);
    let x = rng.random_range(0.0..=1.0 - w);
    let y = rng.random_range(0.0..=1.0 - h);
    BBox::new(x, y, x + w, y + h).unwrap()
}

/// Small target covering 1-3% of the image.
pub fn small_target<R: Rng>(rng: &mut R) -> BBox {
    let area = rng.random_range(0.01..0.03);
    let aspect: f64 = rng.random_range(0.5..2.0);
    let w = (area * aspect).sqrt();
    let h = area / w;
    let x = rng.random_range(0.0..1.0 - w);
    let y = rng.random_range(0.0..1.0 - h);
    BBox::new(x, y, x + w, y + h).unwrap()
}

const PLATFORMS: [Platform; 3] = [Platform::Mobile, Platform::Desktop, Platform::Web];
const ELEMENTS: [ElementType; 2] = [ElementType::Text, ElementType::Icon];

/// Records with declared sizes and no image files, for pixel-free backends.
pub fn sim_records(n: usize, seed: u64, width: u32, height: u32) -> Vec<DatasetRecord> {
    let mut rng = seeding::stream(seed, 0);
    (0..n)
        .map(|i| DatasetRecord {
            id: Some(format!("s{i:04}")),
            image_path: PathBuf::from(format!("missing/{i}.png")),
            instruction: format!("click element {i}"),
            bbox: small_target(&mut rng).as_array(),
            platform: PLATFORMS[i % PLATFORMS.len()],
            element_type: ELEMENTS[i % ELEMENTS.len()],
            width: Some(width),
            height: Some(height),
        })
        .collect()
}

/// Synthetic screenshots with one filled rectangle each, plus the dataset
/// JSONL describing them. Returns the dataset path.
pub fn write_corpus(dir: &Path, n: usize, seed: u64, width: u32, height: u32) -> PathBuf {
    fs::create_dir_all(dir.join("shots")).unwrap();
    let mut rng = seeding::stream(seed, 1);
    let records: Vec<DatasetRecord> = (0..n)
        .map(|i| {
            let w = rng.random_range(0.04..0.2);
            let h = rng.random_range(0.04..0.2);
            let x = rng.random_range(0.0..1.0 - w);
            let y = rng.random_range(0.0..1.0 - h);
            let gt = BBox::new(x, y, x + w, y + h).unwrap();
            let shade = (i * 37 % 200) as u8 + 30;
            let mut img = RgbaImage::from_fn(width, height, |x, y| Rgba([(x % 256) as u8, (y % 256) as u8, shade, 255]));
            let (x0, y0) = ((gt.xmin * f64::from(width)) as u32, (gt.ymin * f64::from(height)) as u32);
            let (x1, y1) = ((gt.xmax * f64::from(width)) as u32, (gt.ymax * f64::from(height)) as u32);
            for y in y0..y1.min(height) {
                for x in x0..x1.min(width) {
                    img.put_pixel(x, y, Rgba([250, 40, 40, 255]));
                }
            }
            let rel = format!("shots/{i:04}.png");
            img.save(dir.join(&rel)).unwrap();
            DatasetRecord {
                id: Some(format!("c{i:04}")),
                image_path: PathBuf::from(rel),
                instruction: format!("click the red box {i}"),
                bbox: gt.as_array(),
                platform: PLATFORMS[i % PLATFORMS.len()],
                element_type: ELEMENTS[i % ELEMENTS.len()],
                width: None,
                height: None,
            }
        })
        .collect();
    let path = dir.join("dataset.jsonl");
    dataset::write_jsonl(&path, &records).unwrap();
    path
}

/// Counts calls that reach the wrapped backend.
pub struct Counting<B> {
    pub inner: B,
    pub calls: AtomicUsize,
}

impl<B> Counting<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<B: Backend> Backend for Counting<B> {
    fn complete(&self, request: &ViewRequest<'_>) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }

    fn needs_pixels(&self) -> bool {
        self.inner.needs_pixels()
    }

    fn convention(&self) -> CoordConvention {
        self.inner.convention()
    }
}

/// Every file under `dir` with its bytes, sorted by relative path.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// GUI-element-sized box: each side between 1% and 30% of the image.
pub fn gui_box<R: Rng>(rng: &mut R) -> BBox {
    let w = rng.random_range(0.01..0.3);
    let h = rng.random_range(0.01..0.3);
    let x = rng.random_range(0.0..1.0 - w);
    let y = rng.random_range(0.0..1.0 - h);
    BBox::new(x, y, x + w, y + h).unwrap()
}
