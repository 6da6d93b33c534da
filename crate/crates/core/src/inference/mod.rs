//! Multi-stage zoom-in grounding against a text-completion backend.
//!
//! Stage 1 asks the backend about the full screenshot. Every later stage
//! builds a region proposal from the previous original-space prediction,
//! shows the backend that region stretched to full resolution, and maps its
//! answer back to the original image. Crops are always cut from the original
//! screenshot, never from an earlier zoomed view.

pub mod parse;
pub mod sim;
pub mod wire;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, BBox, CropSpec, GeometryError, PointCoord, Space};
use crate::imaging::{ImagingError, Screenshot};
use crate::prompts::{self, HistoryAction};
use crate::pseudo_label::POINT_REGION_FRACTION;

pub use parse::{parse_coords, CoordConvention, ParseError};
pub use sim::{SimOracle, SimOracleConfig};
pub use wire::{WireApi, WireBackend, WireConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Box,
    Point,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "box" => Ok(Self::Box),
            "point" => Ok(Self::Point),
            other => Err(format!("unknown mode {other:?} (expected box or point)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prediction {
    Box(BBox),
    Point(PointCoord),
}

impl Prediction {
    pub fn space(&self) -> Space {
        match self {
            Self::Box(b) => b.space,
            Self::Point(p) => p.space,
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            Self::Box(_) => Mode::Box,
            Self::Point(_) => Mode::Point,
        }
    }

    /// Where a click would land: the box center, or the point itself.
    pub fn click_point(&self) -> PointCoord {
        match self {
            Self::Box(b) => geometry::center(b),
            Self::Point(p) => *p,
        }
    }

    pub fn as_box(&self) -> Option<&BBox> {
        match self {
            Self::Box(b) => Some(b),
            Self::Point(_) => None,
        }
    }

    pub fn from_view(&self, crop: &CropSpec) -> Result<Self, GeometryError> {
        Ok(match self {
            Self::Box(b) => Self::Box(geometry::from_view(b, crop)?),
            Self::Point(p) => Self::Point(geometry::from_view(p, crop)?),
        })
    }

    pub fn to_view(&self, crop: &CropSpec) -> Result<Self, GeometryError> {
        Ok(match self {
            Self::Box(b) => Self::Box(geometry::to_view(b, crop)?),
            Self::Point(p) => Self::Point(geometry::to_view(p, crop)?),
        })
    }
}

/// What the backend is shown for one call.
#[derive(Debug, Clone)]
pub struct ViewRequest<'a> {
    pub prompt: &'a str,
    /// Region of the original screenshot the view covers.
    pub crop: CropSpec,
    /// PNG bytes of the view; absent for backends that do not read pixels.
    pub image_png: Option<Vec<u8>>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    /// Connection-level failure; the orchestrator retries these once.
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &ViewRequest<'_>) -> Result<String, BackendError>;

    fn needs_pixels(&self) -> bool {
        true
    }

    /// How this backend's out-of-range numbers should be read.
    fn convention(&self) -> CoordConvention {
        CoordConvention::default()
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, request: &ViewRequest<'_>) -> Result<String, BackendError> {
        (**self).complete(request)
    }

    fn needs_pixels(&self) -> bool {
        (**self).needs_pixels()
    }

    fn convention(&self) -> CoordConvention {
        (**self).convention()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&self, request: &ViewRequest<'_>) -> Result<String, BackendError> {
        (**self).complete(request)
    }

    fn needs_pixels(&self) -> bool {
        (**self).needs_pixels()
    }

    fn convention(&self) -> CoordConvention {
        (**self).convention()
    }
}

pub const DEFAULT_STAGES: usize = 2;
pub const DEFAULT_K: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingConfig {
    pub stages: usize,
    pub k: f64,
    pub mode: Mode,
    /// Point-mode proposal size as a fraction of each image side.
    pub point_fraction: f64,
    /// Overrides the zoomed-view template; must contain `[INSTRUCTION]`.
    pub zoom_template: Option<String>,
    pub base_template: Option<String>,
    /// Overrides the backend's own convention.
    pub convention: Option<CoordConvention>,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self {
            stages: DEFAULT_STAGES,
            k: DEFAULT_K,
            mode: Mode::Box,
            point_fraction: POINT_REGION_FRACTION,
            zoom_template: None,
            base_template: None,
            convention: None,
        }
    }
}

impl GroundingConfig {
    fn base_prompt(&self, instruction: &str) -> String {
        let template = self.base_template.as_deref().unwrap_or(match self.mode {
            Mode::Box => prompts::BASE_BOX_TEMPLATE,
            Mode::Point => prompts::BASE_POINT_TEMPLATE,
        });
        prompts::render(template, instruction)
    }

    fn zoom_prompt(&self, instruction: &str) -> String {
        let template = self.zoom_template.as_deref().unwrap_or(match self.mode {
            Mode::Box => prompts::ZOOM_BOX_TEMPLATE,
            Mode::Point => prompts::ZOOM_POINT_TEMPLATE,
        });
        prompts::render(template, instruction)
    }

    /// Region proposal around an original-space prediction.
    pub fn proposal(&self, screenshot_dims: geometry::ImageDims, pred: &Prediction) -> Result<CropSpec, GeometryError> {
        match pred {
            Prediction::Box(b) => geometry::zoom_region(screenshot_dims, &b.clamp_unit(), self.k),
            Prediction::Point(p) => {
                let p = PointCoord::raw(p.x.clamp(0.0, 1.0), p.y.clamp(0.0, 1.0), p.space);
                geometry::point_region(screenshot_dims, &p, self.point_fraction)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub prompt: String,
    pub raw_text: Option<String>,
    /// Prediction in the view's coordinates.
    pub parsed: Option<Prediction>,
    pub crop: CropSpec,
    /// Prediction mapped back to the original screenshot.
    pub inverted: Option<Prediction>,
    pub error: Option<String>,
    pub latency_ms: f64,
}

impl StageRecord {
    pub fn succeeded(&self) -> bool {
        self.inverted.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingResult {
    pub stages: Vec<StageRecord>,
    #[serde(rename = "final")]
    pub final_prediction: Prediction,
    pub fallback_used: bool,
    /// Logical calls, one per stage; transport retries are counted apart.
    pub backend_calls: usize,
    pub transport_retries: usize,
}

impl GroundingResult {
    pub fn stage1(&self) -> Option<&Prediction> {
        self.stages.first().and_then(|s| s.inverted.as_ref())
    }

    /// Zero every wall-clock field, for byte-level comparisons.
    pub fn without_timing(mut self) -> Self {
        for s in &mut self.stages {
            s.latency_ms = 0.0;
        }
        self
    }
}

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("stages must be at least 1")]
    NoStages,
    #[error("first stage failed: {0}")]
    FirstStage(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

struct CallOutcome {
    text: Result<String, BackendError>,
    retries: usize,
}

fn call_with_retry(backend: &dyn Backend, request: &ViewRequest<'_>) -> CallOutcome {
    match backend.complete(request) {
        Err(BackendError::Transport(first)) => {
            log::warn!("backend transport error, retrying once: {first}");
            CallOutcome {
                text: backend.complete(request),
                retries: 1,
            }
        }
        text => CallOutcome { text, retries: 0 },
    }
}

struct StageInput<'a> {
    crop: CropSpec,
    prompt: String,
    screenshot: &'a Screenshot,
}

fn run_stage(backend: &dyn Backend, cfg: &GroundingConfig, input: StageInput<'_>) -> Result<(StageRecord, usize), InferenceError> {
    let started = Instant::now();
    let image_png = if backend.needs_pixels() {
        Some(input.screenshot.encode_view_png(&input.crop)?)
    } else {
        None
    };
    let request = ViewRequest {
        prompt: &input.prompt,
        crop: input.crop,
        image_png,
    };
    let outcome = call_with_retry(backend, &request);
    let convention = cfg.convention.unwrap_or_else(|| backend.convention());
    let space = if input.crop.is_full_image() {
        Space::Original
    } else {
        Space::View(input.crop)
    };

    let mut record = StageRecord {
        prompt: input.prompt.clone(),
        raw_text: None,
        parsed: None,
        crop: input.crop,
        inverted: None,
        error: None,
        latency_ms: 0.0,
    };
    match outcome.text {
        Ok(text) => {
            match parse_coords(&text, cfg.mode, convention, input.crop.source_dims, space) {
                Ok(parsed) => {
                    let inverted = match space {
                        Space::Original => parsed,
                        Space::View(crop) => parsed.from_view(&crop)?,
                    };
                    record.parsed = Some(parsed);
                    record.inverted = Some(inverted);
                }
                Err(e) => record.error = Some(e.to_string()),
            }
            record.raw_text = Some(text);
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record.latency_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok((record, outcome.retries))
}

/// Ground `instruction` in `screenshot` with `cfg.stages` backend calls.
///
/// A failed later stage falls back to the last successful prediction and the
/// chain continues from there; only a first-stage failure is an error.
pub fn ground_multistage(
    backend: &dyn Backend,
    screenshot: &Screenshot,
    instruction: &str,
    cfg: &GroundingConfig,
) -> Result<GroundingResult, InferenceError> {
    ground_navigation(backend, screenshot, instruction, &[], cfg)
}

/// Multi-stage grounding with a navigation history. Later-stage crops are
/// grown to include every history point, and the history coordinates in
/// those prompts are rewritten into the zoomed view's frame.
pub fn ground_navigation(
    backend: &dyn Backend,
    screenshot: &Screenshot,
    instruction: &str,
    history: &[HistoryAction],
    cfg: &GroundingConfig,
) -> Result<GroundingResult, InferenceError> {
    if cfg.stages == 0 {
        return Err(InferenceError::NoStages);
    }
    let dims = screenshot.dims();
    let history_points: Vec<PointCoord> = history.iter().map(|h| h.point).collect();
    let mut stages = Vec::with_capacity(cfg.stages);
    let mut retries = 0;

    let full = dims.full_crop();
    let (first, r) = run_stage(
        backend,
        cfg,
        StageInput {
            crop: full,
            prompt: prompts::with_history(&cfg.base_prompt(instruction), history),
            screenshot,
        },
    )?;
    retries += r;
    let Some(mut current) = first.inverted else {
        return Err(InferenceError::FirstStage(first.error.unwrap_or_else(|| "no prediction".into())));
    };
    stages.push(first);
    let mut fallback_used = false;

    for _ in 1..cfg.stages {
        let crop = geometry::expand_to_include(&cfg.proposal(dims, &current)?, &history_points)?;
        let view_history = history
            .iter()
            .map(|h| {
                Ok(HistoryAction {
                    action: h.action.clone(),
                    point: geometry::to_view(&h.point, &crop)?,
                })
            })
            .collect::<Result<Vec<_>, GeometryError>>()?;
        let prompt = prompts::with_history(&cfg.zoom_prompt(instruction), &view_history);
        let (record, r) = run_stage(backend, cfg, StageInput { crop, prompt, screenshot })?;
        retries += r;
        match record.inverted {
            Some(p) => current = p,
            None => fallback_used = true,
        }
        stages.push(record);
    }

    Ok(GroundingResult {
        backend_calls: stages.len(),
        stages,
        final_prediction: current,
        fallback_used,
        transport_retries: retries,
    })
}
