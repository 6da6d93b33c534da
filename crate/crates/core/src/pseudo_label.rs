//! Pseudo labels around a ground truth and their IoU-aware loss weights.
//!
//! A pseudo box is a perturbed copy of the ground truth: each corner is
//! shifted by up to two box extents, the result is recentered with a
//! randomly rescaled width/height, clamped to the unit square and quantized
//! to two decimals. Candidates are kept when their GIoU with the ground
//! truth (recomputed on the quantized box) reaches the threshold. Each kept
//! box is weighted `1 + ln(giou) / 2` in the loss.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, BBox, GeometryError, PointCoord};
use crate::seeding;

/// Default number of pseudo boxes per label.
pub const DEFAULT_PSEUDO_BOXES: usize = 4;
pub const DEFAULT_NUM_CANDIDATES: usize = 100;
pub const DEFAULT_THRESHOLD: f64 = 0.3;

/// Per-axis standard deviation of pseudo-point jitter, in normalized units.
pub const POINT_SIGMA: f64 = 0.05;
/// Fraction of each image side covered by a point-mode region proposal.
pub const POINT_REGION_FRACTION: f64 = 0.3;

/// Distance at which a pseudo point's proximity reaches zero: the diagonal
/// of the point-mode region proposal in normalized units.
pub fn point_reference_distance() -> f64 {
    POINT_REGION_FRACTION * std::f64::consts::SQRT_2
}

/// Floor applied to point proximity before the log; weight 0 at the floor.
pub fn point_proximity_floor() -> f64 {
    (-2.0f64).exp()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PseudoLabelError {
    #[error("only {survivors} of {requested} pseudo labels passed the threshold {threshold} ({candidates} candidates)")]
    Shortfall {
        survivors: usize,
        requested: usize,
        candidates: usize,
        threshold: f64,
    },
    #[error("weight undefined for non-positive GIoU {0}")]
    NonPositiveGiou(f64),
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("ground truth must have positive area: {0:?}")]
    EmptyGroundTruth(BBox),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_outputs: usize,
    pub num_candidates: usize,
    pub threshold: f64,
    pub rng_seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_outputs: DEFAULT_PSEUDO_BOXES,
            num_candidates: DEFAULT_NUM_CANDIDATES,
            threshold: DEFAULT_THRESHOLD,
            rng_seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), PseudoLabelError> {
        if self.n_outputs == 0 {
            return Err(PseudoLabelError::InvalidConfig("n_outputs must be at least 1".into()));
        }
        if self.num_candidates < self.n_outputs {
            return Err(PseudoLabelError::InvalidConfig(format!(
                "num_candidates ({}) must be >= n_outputs ({})",
                self.num_candidates, self.n_outputs
            )));
        }
        if !(self.threshold > -1.0 && self.threshold < 1.0) {
            return Err(PseudoLabelError::InvalidConfig(format!(
                "threshold must lie in (-1, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub gt: BBox,
    pub boxes: Vec<BBox>,
    pub gious: Vec<f64>,
    pub weights: Vec<f64>,
}

impl PseudoLabelSet {
    /// A set with no pseudo boxes; trains exactly like the plain label.
    pub fn empty(gt: BBox) -> Self {
        Self {
            gt,
            boxes: Vec::new(),
            gious: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// Round half to even at two decimals, matching `torch.round(x * 100) / 100`.
pub fn quantize(v: f64) -> f64 {
    (v * 100.0).round_ties_even() / 100.0
}

/// One perturbed candidate around `gt`, clamped and quantized.
pub fn perturb_candidate<R: Rng + ?Sized>(gt: &BBox, rng: &mut R) -> BBox {
    let shifts: [f64; 4] = std::array::from_fn(|_| rng.random::<f64>() * 4.0 - 2.0);
    let scales: [f64; 2] = std::array::from_fn(|_| rng.random::<f64>() * 0.4 + 0.8);
    let (w, h) = (gt.width(), gt.height());

    // Corners are shifted independently, so min/max may cross here; the
    // recentering below restores the ordering.
    let x0 = gt.xmin + shifts[0] * w;
    let y0 = gt.ymin + shifts[1] * h;
    let x2 = gt.xmax + shifts[2] * w;
    let y2 = gt.ymax + shifts[3] * h;

    let (cx, cy) = ((x0 + x2) / 2.0, (y0 + y2) / 2.0);
    let (nw, nh) = (w * scales[0], h * scales[1]);
    let q = |v: f64| quantize(v.clamp(0.0, 1.0));
    BBox::raw(q(cx - nw / 2.0), q(cy - nh / 2.0), q(cx + nw / 2.0), q(cy + nh / 2.0), gt.space)
}

/// Threshold-filtered pseudo boxes for `gt`, first `n_outputs` survivors in
/// generation order.
pub fn generate_pseudo_boxes(gt: &BBox, cfg: &GenConfig) -> Result<PseudoLabelSet, PseudoLabelError> {
    cfg.validate()?;
    gt.validate()?;
    if gt.area() <= 0.0 {
        return Err(PseudoLabelError::EmptyGroundTruth(*gt));
    }
    let mut rng = seeding::stream(cfg.rng_seed, 0);
    let mut set = PseudoLabelSet::empty(*gt);
    let mut survivors = 0;
    for _ in 0..cfg.num_candidates {
        let cand = perturb_candidate(gt, &mut rng);
        let g = geometry::giou(gt, &cand)?;
        if g >= cfg.threshold {
            survivors += 1;
            if set.boxes.len() < cfg.n_outputs {
                set.boxes.push(cand);
                set.gious.push(g);
            }
        }
    }
    if set.boxes.len() < cfg.n_outputs {
        return Err(PseudoLabelError::Shortfall {
            survivors,
            requested: cfg.n_outputs,
            candidates: cfg.num_candidates,
            threshold: cfg.threshold,
        });
    }
    set.weights = set.gious.iter().map(|&g| iou_weight(g)).collect::<Result<_, _>>()?;
    Ok(set)
}

/// Loss weight of a pseudo label: `1 + ln(g) / 2`.
pub fn iou_weight(g: f64) -> Result<f64, PseudoLabelError> {
    if g.is_nan() || g <= 0.0 {
        return Err(PseudoLabelError::NonPositiveGiou(g));
    }
    Ok(1.0 + 0.5 * g.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoPoint {
    pub point: PointCoord,
    pub distance: f64,
    pub weight: f64,
}

/// Weight of a pseudo point at `distance` from the ground-truth point.
pub fn point_weight(distance: f64) -> f64 {
    let proximity = 1.0 - distance / point_reference_distance();
    1.0 + 0.5 * proximity.max(point_proximity_floor()).ln()
}

/// Pseudo points jittered around `gt`. `cfg.threshold` applies to the
/// proximity `1 - d / d_ref`, the point analogue of GIoU.
pub fn generate_pseudo_points(gt: &PointCoord, cfg: &GenConfig) -> Result<Vec<PseudoPoint>, PseudoLabelError> {
    cfg.validate()?;
    PointCoord::in_space(gt.x, gt.y, gt.space)?;
    let d_ref = point_reference_distance();
    let noise = Normal::new(0.0, POINT_SIGMA).expect("constant sigma is valid");
    let mut rng = seeding::stream(cfg.rng_seed, 0);
    let mut out = Vec::with_capacity(cfg.n_outputs);
    let mut survivors = 0;
    for _ in 0..cfg.num_candidates {
        let dx = noise.sample(&mut rng);
        let dy = noise.sample(&mut rng);
        let x = quantize((gt.x + dx).clamp(0.0, 1.0));
        let y = quantize((gt.y + dy).clamp(0.0, 1.0));
        let point = PointCoord::raw(x, y, gt.space);
        let distance = point.distance(gt);
        if distance < d_ref && 1.0 - distance / d_ref >= cfg.threshold {
            survivors += 1;
            if out.len() < cfg.n_outputs {
                out.push(PseudoPoint {
                    point,
                    distance,
                    weight: point_weight(distance),
                });
            }
        }
    }
    if out.len() < cfg.n_outputs {
        return Err(PseudoLabelError::Shortfall {
            survivors,
            requested: cfg.n_outputs,
            candidates: cfg.num_candidates,
            threshold: cfg.threshold,
        });
    }
    Ok(out)
}

/// True when `v` sits on the 0.01 grid.
pub fn is_quantized(v: f64) -> bool {
    ((v * 100.0) - (v * 100.0).round()).abs() < 1e-7
}
