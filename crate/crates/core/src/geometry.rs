//! Normalized box/point arithmetic and the crop bridge between an original
//! screenshot and a zoomed view of it.
//!
//! Every public coordinate is a fraction of some image. A [`Space`] tag says
//! which image: the original screenshot, or the view produced by a
//! [`CropSpec`]. Pixel conversion follows integer truncation for crop
//! corners, so crops computed here match a reference implementation that
//! casts with `int(...)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum proposal extent, as a fraction of each image dimension, used in
/// place of a zero-width or zero-height prediction.
pub const MIN_PROPOSAL_FRACTION: f64 = 0.02;

/// Margin added around history points when a crop is grown to include them.
pub const INCLUDE_MARGIN_FRACTION: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("coordinates live in different spaces ({0:?} vs {1:?})")]
    MixedSpaces(Space, Space),
    #[error("invalid box ({xmin}, {ymin}, {xmax}, {ymax}): {reason}")]
    InvalidBox {
        xmin: f64,
        ymin: f64,
        xmax: f64,
        ymax: f64,
        reason: &'static str,
    },
    #[error("invalid point ({x}, {y})")]
    InvalidPoint { x: f64, y: f64 },
    #[error("image dimensions must be positive, got {width}x{height}")]
    InvalidDims { width: u32, height: u32 },
    #[error("degenerate crop {0:?}")]
    DegenerateCrop(CropSpec),
    #[error("magnification must exceed 1, got {0}")]
    InvalidMagnification(f64),
    #[error("crop fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("expected coordinates in {expected:?}, got {actual:?}")]
    WrongSpace { expected: Space, actual: Space },
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Which image a normalized coordinate is relative to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    #[default]
    Original,
    View(CropSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidDims { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn full_crop(self) -> CropSpec {
        CropSpec {
            xmin_c: 0,
            ymin_c: 0,
            xmax_c: self.width,
            ymax_c: self.height,
            source_dims: self,
        }
    }
}

/// Pixel rectangle in original-image space, plus the dims it was cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropSpec {
    pub xmin_c: u32,
    pub ymin_c: u32,
    pub xmax_c: u32,
    pub ymax_c: u32,
    pub source_dims: ImageDims,
}

impl CropSpec {
    pub fn new(xmin_c: u32, ymin_c: u32, xmax_c: u32, ymax_c: u32, source_dims: ImageDims) -> Result<Self> {
        let crop = Self {
            xmin_c,
            ymin_c,
            xmax_c,
            ymax_c,
            source_dims,
        };
        crop.validate()?;
        Ok(crop)
    }

    pub fn validate(&self) -> Result<()> {
        let ImageDims { width, height } = self.source_dims;
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidDims { width, height });
        }
        if self.xmin_c >= self.xmax_c || self.ymin_c >= self.ymax_c || self.xmax_c > width || self.ymax_c > height {
            return Err(GeometryError::DegenerateCrop(*self));
        }
        Ok(())
    }

    pub fn width(&self) -> u32 {
        self.xmax_c - self.xmin_c
    }

    pub fn height(&self) -> u32 {
        self.ymax_c - self.ymin_c
    }

    pub fn is_full_image(&self) -> bool {
        *self == self.source_dims.full_crop()
    }

    /// The crop rectangle as a box in original normalized coordinates.
    pub fn as_bbox(&self) -> BBox {
        let w = f64::from(self.source_dims.width);
        let h = f64::from(self.source_dims.height);
        BBox {
            xmin: f64::from(self.xmin_c) / w,
            ymin: f64::from(self.ymin_c) / h,
            xmax: f64::from(self.xmax_c) / w,
            ymax: f64::from(self.ymax_c) / h,
            space: Space::Original,
        }
    }

    /// Closed-interval containment of an original-space box.
    pub fn contains_box(&self, b: &BBox) -> bool {
        let c = self.as_bbox();
        b.xmin >= c.xmin && b.ymin >= c.ymin && b.xmax <= c.xmax && b.ymax <= c.ymax
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
    #[serde(default)]
    pub space: Space,
}

impl BBox {
    /// Validated constructor for an original-space box.
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        Self::in_space(xmin, ymin, xmax, ymax, Space::Original)
    }

    pub fn in_space(xmin: f64, ymin: f64, xmax: f64, ymax: f64, space: Space) -> Result<Self> {
        let b = Self {
            xmin,
            ymin,
            xmax,
            ymax,
            space,
        };
        b.validate()?;
        Ok(b)
    }

    /// Unchecked constructor; coordinates may leave `[0, 1]`, which happens
    /// legitimately for view-space remaps of boxes that exit the crop.
    pub const fn raw(xmin: f64, ymin: f64, xmax: f64, ymax: f64, space: Space) -> Self {
        Self {
            xmin,
            ymin,
            xmax,
            ymax,
            space,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason| GeometryError::InvalidBox {
            xmin: self.xmin,
            ymin: self.ymin,
            xmax: self.xmax,
            ymax: self.ymax,
            reason,
        };
        let coords = [self.xmin, self.ymin, self.xmax, self.ymax];
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite coordinate"));
        }
        if self.xmin > self.xmax || self.ymin > self.ymax {
            return Err(invalid("min exceeds max"));
        }
        if coords.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("coordinate outside [0, 1]"));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }

    pub fn clamp_unit(&self) -> Self {
        Self {
            xmin: self.xmin.clamp(0.0, 1.0),
            ymin: self.ymin.clamp(0.0, 1.0),
            xmax: self.xmax.clamp(0.0, 1.0),
            ymax: self.ymax.clamp(0.0, 1.0),
            space: self.space,
        }
    }

    fn same_coords(&self, other: &Self) -> bool {
        self.as_array() == other.as_array()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointCoord {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub space: Space,
}

impl PointCoord {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        Self::in_space(x, y, Space::Original)
    }

    pub fn in_space(x: f64, y: f64, space: Space) -> Result<Self> {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(GeometryError::InvalidPoint { x, y });
        }
        Ok(Self { x, y, space })
    }

    pub const fn raw(x: f64, y: f64, space: Space) -> Self {
        Self { x, y, space }
    }

    pub fn distance(&self, other: &Self) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

fn check_same_space(a: Space, b: Space) -> Result<()> {
    if a != b {
        return Err(GeometryError::MixedSpaces(a, b));
    }
    Ok(())
}

fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let w = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let h = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    w * h
}

/// Intersection over union. Zero-area inputs score 0 unless the two boxes
/// are identical, which scores 1.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    check_same_space(a.space, b.space)?;
    if a.same_coords(b) {
        return Ok(1.0);
    }
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return Ok(0.0);
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Generalized IoU: `iou - (|C| - |A ∪ B|) / |C|` with `C` the smallest
/// enclosing box.
pub fn giou(a: &BBox, b: &BBox) -> Result<f64> {
    check_same_space(a.space, b.space)?;
    if a.same_coords(b) {
        return Ok(1.0);
    }
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    let hull = (a.xmax.max(b.xmax) - a.xmin.min(b.xmin)) * (a.ymax.max(b.ymax) - a.ymin.min(b.ymin));
    if hull <= 0.0 {
        return Ok(iou);
    }
    Ok(iou - (hull - union) / hull)
}

pub fn center(b: &BBox) -> PointCoord {
    PointCoord {
        x: (b.xmin + b.xmax) / 2.0,
        y: (b.ymin + b.ymax) / 2.0,
        space: b.space,
    }
}

/// Closed-interval membership, so boundary clicks count as hits.
pub fn contains(b: &BBox, p: &PointCoord) -> bool {
    p.x >= b.xmin && p.x <= b.xmax && p.y >= b.ymin && p.y <= b.ymax
}

/// Python-style `int()`: truncation toward zero, saturating into `i64`.
fn trunc_i64(v: f64) -> i64 {
    v.trunc() as i64
}

fn clamp_px(v: i64, hi: u32) -> u32 {
    v.clamp(0, i64::from(hi)) as u32
}

/// Region proposal around a predicted box: a `k`-times enlarged rectangle
/// sharing the prediction's center, clamped to the image.
pub fn zoom_region(dims: ImageDims, pred: &BBox, k: f64) -> Result<CropSpec> {
    if !(k.is_finite() && k > 1.0) {
        return Err(GeometryError::InvalidMagnification(k));
    }
    if pred.space != Space::Original {
        return Err(GeometryError::WrongSpace {
            expected: Space::Original,
            actual: pred.space,
        });
    }
    pred.validate()?;
    let (w, h) = (f64::from(dims.width), f64::from(dims.height));

    let (xmin, ymin) = (pred.xmin * w, pred.ymin * h);
    let (xmax, ymax) = (pred.xmax * w, pred.ymax * h);
    let xc = (xmin + xmax) / 2.0;
    let yc = (ymin + ymax) / 2.0;
    let mut bw = xmax - xmin;
    let mut bh = ymax - ymin;
    if bw <= 0.0 {
        bw = MIN_PROPOSAL_FRACTION * w;
    }
    if bh <= 0.0 {
        bh = MIN_PROPOSAL_FRACTION * h;
    }
    let (cw, ch) = (k * bw, k * bh);

    let xmin_c = trunc_i64(xc - cw / 2.0).max(0);
    let ymin_c = trunc_i64(yc - ch / 2.0).max(0);
    let xmax_c = trunc_i64(xc + cw / 2.0).min(i64::from(dims.width));
    let ymax_c = trunc_i64(yc + ch / 2.0).min(i64::from(dims.height));

    let (x0, x1) = at_least_one_px(xmin_c, xmax_c, dims.width);
    let (y0, y1) = at_least_one_px(ymin_c, ymax_c, dims.height);
    CropSpec::new(x0, y0, x1, y1, dims)
}

/// Truncation can collapse a sub-pixel proposal; widen it to one pixel,
/// staying inside `[0, limit]`.
fn at_least_one_px(lo: i64, hi: i64, limit: u32) -> (u32, u32) {
    let lo = clamp_px(lo, limit);
    let hi = clamp_px(hi, limit);
    if hi > lo {
        (lo, hi)
    } else if lo < limit {
        (lo, lo + 1)
    } else {
        (limit - 1, limit)
    }
}

/// Region proposal around a predicted point: a `fraction`-scaled copy of the
/// image frame centered on the point. Near a border the crop is shifted
/// inward instead of shrunk, so its size is constant.
pub fn point_region(dims: ImageDims, pred: &PointCoord, fraction: f64) -> Result<CropSpec> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(GeometryError::InvalidFraction(fraction));
    }
    if pred.space != Space::Original {
        return Err(GeometryError::WrongSpace {
            expected: Space::Original,
            actual: pred.space,
        });
    }
    let axis = |p: f64, dim: u32| -> (u32, u32) {
        let d = f64::from(dim);
        let size = ((fraction * d).round() as u32).clamp(1, dim);
        let start = (p * d - f64::from(size) / 2.0).floor();
        let start = start.clamp(0.0, f64::from(dim - size)) as u32;
        (start, start + size)
    };
    let (x0, x1) = axis(pred.x, dims.width);
    let (y0, y1) = axis(pred.y, dims.height);
    CropSpec::new(x0, y0, x1, y1, dims)
}

/// Grow `crop` so every point, plus a small margin, lies inside it.
pub fn expand_to_include(crop: &CropSpec, points: &[PointCoord]) -> Result<CropSpec> {
    crop.validate()?;
    if points.is_empty() {
        return Ok(*crop);
    }
    let ImageDims { width, height } = crop.source_dims;
    let (w, h) = (f64::from(width), f64::from(height));
    let (mx, my) = (INCLUDE_MARGIN_FRACTION * w, INCLUDE_MARGIN_FRACTION * h);
    let (mut x0, mut y0) = (f64::from(crop.xmin_c), f64::from(crop.ymin_c));
    let (mut x1, mut y1) = (f64::from(crop.xmax_c), f64::from(crop.ymax_c));
    for p in points {
        if p.space != Space::Original {
            return Err(GeometryError::WrongSpace {
                expected: Space::Original,
                actual: p.space,
            });
        }
        let (px, py) = (p.x * w, p.y * h);
        if px < x0 {
            x0 = px - mx;
        }
        if px > x1 {
            x1 = px + mx;
        }
        if py < y0 {
            y0 = py - my;
        }
        if py > y1 {
            y1 = py + my;
        }
    }
    let x0 = x0.floor().clamp(0.0, w) as u32;
    let y0 = y0.floor().clamp(0.0, h) as u32;
    let x1 = x1.ceil().clamp(0.0, w) as u32;
    let y1 = y1.ceil().clamp(0.0, h) as u32;
    CropSpec::new(x0, y0, x1, y1, crop.source_dims)
}

/// Something with coordinates that can move between original and view space.
pub trait Remap: Sized {
    fn space(&self) -> Space;
    /// Apply `f` to every x coordinate and `g` to every y coordinate.
    fn map_axes(&self, f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64, space: Space) -> Self;
}

impl Remap for BBox {
    fn space(&self) -> Space {
        self.space
    }

    fn map_axes(&self, f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64, space: Space) -> Self {
        BBox::raw(f(self.xmin), g(self.ymin), f(self.xmax), g(self.ymax), space)
    }
}

impl Remap for PointCoord {
    fn space(&self) -> Space {
        self.space
    }

    fn map_axes(&self, f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64, space: Space) -> Self {
        PointCoord::raw(f(self.x), g(self.y), space)
    }
}

/// Express original-space coordinates as fractions of the crop. Results may
/// leave `[0, 1]` when the input extends past the crop; clamping is the
/// caller's decision.
pub fn to_view<C: Remap>(coord: &C, crop: &CropSpec) -> Result<C> {
    crop.validate()?;
    if coord.space() != Space::Original {
        return Err(GeometryError::WrongSpace {
            expected: Space::Original,
            actual: coord.space(),
        });
    }
    let (w, h) = (f64::from(crop.source_dims.width), f64::from(crop.source_dims.height));
    let (x0, y0) = (f64::from(crop.xmin_c), f64::from(crop.ymin_c));
    let (cw, ch) = (f64::from(crop.width()), f64::from(crop.height()));
    Ok(coord.map_axes(|x| (x * w - x0) / cw, |y| (y * h - y0) / ch, Space::View(*crop)))
}

/// Inverse of [`to_view`].
pub fn from_view<C: Remap>(coord: &C, crop: &CropSpec) -> Result<C> {
    crop.validate()?;
    if coord.space() != Space::View(*crop) {
        return Err(GeometryError::WrongSpace {
            expected: Space::View(*crop),
            actual: coord.space(),
        });
    }
    let (w, h) = (f64::from(crop.source_dims.width), f64::from(crop.source_dims.height));
    let (x0, y0) = (f64::from(crop.xmin_c), f64::from(crop.ymin_c));
    let (cw, ch) = (f64::from(crop.width()), f64::from(crop.height()));
    Ok(coord.map_axes(|x| (x0 + x * cw) / w, |y| (y0 + y * ch) / h, Space::Original))
}
