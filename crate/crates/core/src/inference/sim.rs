//! A noisy oracle backend for closed-loop checks.
//!
//! The oracle knows the target box. Asked about a view, it maps the target
//! into that view and adds Gaussian noise whose scale is a fixed fraction of
//! the view's extent, so zooming in shrinks its error in original-image
//! terms. That is the behavior a real model shows on small elements.

use std::sync::Mutex;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{self, BBox};
use crate::seeding::{self, Rng};

use super::{Backend, BackendError, CoordConvention, Mode, ViewRequest};

pub const UNPARSABLE_ANSWER: &str = "I cannot determine the location of that element.";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOracleConfig {
    pub hidden_gt: BBox,
    /// Per-coordinate noise std as a fraction of the current view extent.
    pub noise_scale: f64,
    pub parse_failure_rate: f64,
    pub rng_seed: u64,
    pub mode: Mode,
    /// Decimal places in answers; `None` writes exact floats.
    pub decimals: Option<usize>,
}

impl SimOracleConfig {
    pub fn new(hidden_gt: BBox, noise_scale: f64, rng_seed: u64) -> Self {
        Self {
            hidden_gt,
            noise_scale,
            parse_failure_rate: 0.0,
            rng_seed,
            mode: Mode::Box,
            decimals: None,
        }
    }
}

#[derive(Debug)]
pub struct SimOracle {
    cfg: SimOracleConfig,
    noise: Option<Normal<f64>>,
    rng: Mutex<Rng>,
}

impl SimOracle {
    pub fn new(cfg: SimOracleConfig) -> Result<Self, String> {
        if !(cfg.noise_scale >= 0.0 && cfg.noise_scale.is_finite()) {
            return Err(format!("noise_scale must be >= 0, got {}", cfg.noise_scale));
        }
        if !(0.0..1.0).contains(&cfg.parse_failure_rate) && cfg.parse_failure_rate != 1.0 {
            return Err(format!("parse_failure_rate must lie in [0, 1], got {}", cfg.parse_failure_rate));
        }
        let noise = (cfg.noise_scale > 0.0).then(|| Normal::new(0.0, cfg.noise_scale).expect("checked above"));
        Ok(Self {
            noise,
            rng: Mutex::new(seeding::stream(cfg.rng_seed, 0)),
            cfg,
        })
    }

    pub fn config(&self) -> &SimOracleConfig {
        &self.cfg
    }

    fn fmt(&self, v: f64) -> String {
        match self.cfg.decimals {
            Some(d) => format!("{v:.d$}"),
            None => format!("{v}"),
        }
    }

    /// The oracle's answer for a view of `crop`.
    pub fn simulate(&self, request: &ViewRequest<'_>) -> String {
        let mut rng = self.rng.lock().unwrap_or_else(|e| e.into_inner());
        let fail: f64 = rng.random();
        let mut jitter = |v: f64| match &self.noise {
            Some(n) => v + n.sample(&mut *rng),
            None => v,
        };
        let crop = request.crop;
        let target = if crop.is_full_image() {
            self.cfg.hidden_gt
        } else {
            geometry::to_view(&self.cfg.hidden_gt, &crop).expect("crop validated by the orchestrator")
        };
        let text = match self.cfg.mode {
            Mode::Box => {
                let x0 = jitter(target.xmin).clamp(0.0, 1.0);
                let y0 = jitter(target.ymin).clamp(0.0, 1.0);
                let x1 = jitter(target.xmax).clamp(0.0, 1.0);
                let y1 = jitter(target.ymax).clamp(0.0, 1.0);
                format!(
                    "({},{}),({},{})",
                    self.fmt(x0.min(x1)),
                    self.fmt(y0.min(y1)),
                    self.fmt(x0.max(x1)),
                    self.fmt(y0.max(y1))
                )
            }
            Mode::Point => {
                let c = geometry::center(&target);
                let x = jitter(c.x).clamp(0.0, 1.0);
                let y = jitter(c.y).clamp(0.0, 1.0);
                format!("({},{})", self.fmt(x), self.fmt(y))
            }
        };
        if fail < self.cfg.parse_failure_rate {
            return UNPARSABLE_ANSWER.to_string();
        }
        text
    }
}

impl Backend for SimOracle {
    fn complete(&self, request: &ViewRequest<'_>) -> Result<String, BackendError> {
        Ok(self.simulate(request))
    }

    fn needs_pixels(&self) -> bool {
        false
    }

    fn convention(&self) -> CoordConvention {
        CoordConvention::Normalized
    }
}
