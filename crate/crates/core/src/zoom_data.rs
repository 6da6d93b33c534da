//! Zoomed-view instruction data from ordinary grounding data.
//!
//! For each ground truth the pipeline samples a plausible noisy first-stage
//! prediction (a perturbed box whose GIoU with the truth reaches `sigma`),
//! cuts the `k`-times region proposal around it, stretches the crop to the
//! original resolution, and relabels the truth in the zoomed frame.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, DatasetError, DatasetRecord, ElementType, Platform};
use crate::geometry::{self, BBox, CropSpec, GeometryError, ImageDims};
use crate::imaging::{self, Screenshot, ZOOM_FILTER_NAME};
use crate::parallel::{self, Jobs};
use crate::prompts;
use crate::pseudo_label::perturb_candidate;
use crate::seeding;
use crate::training_artifacts::format_box;

pub const DEFAULT_SIGMA: f64 = -0.2;
pub const DEFAULT_KS: [f64; 2] = [5.0, 7.0];
pub const DEFAULT_MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Error)]
pub enum ZoomDataError {
    #[error("no candidate reached GIoU {sigma} in {attempts} attempts (best {best_giou})")]
    Exhausted { attempts: usize, sigma: f64, best_giou: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingSample {
    pub image_path: PathBuf,
    pub instruction: String,
    pub gt: BBox,
    pub platform: Platform,
    pub element_type: ElementType,
}

impl GroundingSample {
    pub fn from_record(rec: &DatasetRecord, base: Option<&Path>) -> Result<Self, GeometryError> {
        Ok(Self {
            image_path: rec.resolved_image_path(base),
            instruction: rec.instruction.clone(),
            gt: rec.gt()?,
            platform: rec.platform,
            element_type: rec.element_type,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub bbox: BBox,
    pub giou: f64,
    pub attempts: usize,
}

/// Rejection-sample a perturbed box with `giou(out, gt) >= sigma`.
pub fn perturb_for_zoom<R: rand::Rng + ?Sized>(gt: &BBox, sigma: f64, rng: &mut R, max_attempts: usize) -> Result<Perturbation, ZoomDataError> {
    if !(sigma > -1.0 && sigma < 1.0) {
        return Err(ZoomDataError::Config(format!("sigma must lie in (-1, 1), got {sigma}")));
    }
    let mut best = f64::NEG_INFINITY;
    for attempt in 1..=max_attempts {
        let cand = perturb_candidate(gt, rng);
        let g = geometry::giou(&cand, gt)?;
        if g >= sigma {
            return Ok(Perturbation {
                bbox: cand,
                giou: g,
                attempts: attempt,
            });
        }
        best = best.max(g);
    }
    Err(ZoomDataError::Exhausted {
        attempts: max_attempts,
        sigma,
        best_giou: best,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoomSample {
    pub source: GroundingSample,
    pub perturbed: BBox,
    pub crop: CropSpec,
    pub k: f64,
    pub template_id: usize,
    pub zoomed_image_path: Option<PathBuf>,
    pub instruction_rendered: String,
    /// Truth in the zoomed frame, clamped to `[0, 1]`.
    pub label_view: BBox,
    pub label_view_unclamped: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    GtOutsideCrop,
    /// Truth only partly inside the crop; its label would not invert to the truth.
    GtClipped,
    PerturbExhausted,
    UnreadableImage,
    InvalidGt,
}

/// Build a zoomed sample without touching pixels.
pub fn make_zoom_sample(s: &GroundingSample, dims: ImageDims, perturbed: &BBox, k: f64, template_id: usize) -> Result<ZoomSample, DropReason> {
    let template = prompts::zoom_box_template(template_id).unwrap_or(prompts::ZOOM_BOX_TEMPLATE);
    let crop = geometry::zoom_region(dims, perturbed, k).map_err(|_| DropReason::InvalidGt)?;
    let unclamped = geometry::to_view(&s.gt, &crop).map_err(|_| DropReason::InvalidGt)?;
    let clamped = unclamped.clamp_unit();

    if !crop.contains_box(&s.gt) {
        let c = crop.as_bbox();
        let overlaps = s.gt.xmin < c.xmax && c.xmin < s.gt.xmax && s.gt.ymin < c.ymax && c.ymin < s.gt.ymax;
        return Err(if overlaps { DropReason::GtClipped } else { DropReason::GtOutsideCrop });
    }
    Ok(ZoomSample {
        source: s.clone(),
        perturbed: *perturbed,
        crop,
        k,
        template_id,
        zoomed_image_path: None,
        instruction_rendered: prompts::render(template, &s.instruction),
        label_view: clamped,
        label_view_unclamped: unclamped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoomConfig {
    pub ks: Vec<f64>,
    pub sigma: f64,
    pub seed: u64,
    pub samples_per_gt: usize,
    pub max_attempts: usize,
    /// Templates drawn uniformly per sample.
    pub template_ids: Vec<usize>,
    pub write_images: bool,
    #[serde(skip)]
    pub jobs: Jobs,
}

impl Default for ZoomConfig {
    fn default() -> Self {
        Self {
            ks: DEFAULT_KS.to_vec(),
            sigma: DEFAULT_SIGMA,
            seed: 0,
            samples_per_gt: 1,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            template_ids: (0..prompts::ZOOM_BOX_TEMPLATES.len()).collect(),
            write_images: true,
            jobs: Jobs::SEQUENTIAL,
        }
    }
}

impl ZoomConfig {
    pub fn validate(&self) -> Result<(), ZoomDataError> {
        let bad = |m: String| Err(ZoomDataError::Config(m));
        if self.ks.is_empty() || self.ks.iter().any(|k| !(k.is_finite() && *k > 1.0)) {
            return bad(format!("every k must exceed 1, got {:?}", self.ks));
        }
        if !(self.sigma > -1.0 && self.sigma < 1.0) {
            return bad(format!("sigma must lie in (-1, 1), got {}", self.sigma));
        }
        if self.samples_per_gt == 0 || self.max_attempts == 0 {
            return bad("samples_per_gt and max_attempts must be positive".into());
        }
        if self.template_ids.is_empty() || self.template_ids.iter().any(|&t| t >= prompts::ZOOM_BOX_TEMPLATES.len()) {
            return bad(format!("template ids must be in 0..{}", prompts::ZOOM_BOX_TEMPLATES.len()));
        }
        Ok(())
    }
}

/// One emitted line of zoomed training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoomRecord {
    pub id: String,
    pub source_index: usize,
    pub repeat: usize,
    /// Zoomed image, relative to the output directory.
    pub image: Option<String>,
    pub source_image: String,
    pub instruction: String,
    pub raw_instruction: String,
    pub bbox: [f64; 4],
    pub label_text: String,
    pub label_view_unclamped: [f64; 4],
    pub gt: [f64; 4],
    pub perturbed: [f64; 4],
    pub perturbed_giou: f64,
    pub crop: [u32; 4],
    pub image_width: u32,
    pub image_height: u32,
    pub k: f64,
    pub template_id: usize,
    pub platform: Platform,
    pub element_type: ElementType,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub inputs: usize,
    pub requested: usize,
    pub emitted: usize,
    pub dropped: usize,
    pub drops: BTreeMap<DropReason, usize>,
    pub perturb_attempts: usize,
    pub perturb_accepted: usize,
    pub acceptance_rate: f64,
    /// Emitted samples per k, keyed by its decimal text.
    pub per_k: BTreeMap<String, usize>,
    pub per_template: BTreeMap<usize, usize>,
    pub resample_filter: String,
    pub sigma: f64,
    pub seed: u64,
}

enum Outcome {
    Emitted(Box<ZoomRecord>, usize),
    Dropped(DropReason, usize),
}

pub const OUTPUT_JSONL: &str = "zoom_data.jsonl";
pub const IMAGE_DIR: &str = "images";
pub const STATS_JSON: &str = "stats.json";

fn k_key(k: f64) -> String {
    format!("{k}")
}

fn process_record(index: usize, rec: &DatasetRecord, base: Option<&Path>, cfg: &ZoomConfig, out_dir: &Path) -> Vec<Outcome> {
    let drop_all = |reason| (0..cfg.samples_per_gt).map(|_| Outcome::Dropped(reason, 0)).collect::<Vec<_>>();
    let sample = match GroundingSample::from_record(rec, base) {
        Ok(s) if s.gt.area() > 0.0 => s,
        _ => {
            log::warn!("record {index}: invalid ground truth {:?}", rec.bbox);
            return drop_all(DropReason::InvalidGt);
        }
    };
    let shot = match Screenshot::load(&sample.image_path) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("record {index}: skipping unreadable image: {e}");
            return drop_all(DropReason::UnreadableImage);
        }
    };
    let dims = shot.dims();
    let id = rec.id_or_index(index);

    (0..cfg.samples_per_gt)
        .map(|repeat| {
            let mut rng = seeding::substream(cfg.seed, index as u64, repeat as u64);
            let k = cfg.ks[rng.random_range(0..cfg.ks.len())];
            let template_id = cfg.template_ids[rng.random_range(0..cfg.template_ids.len())];
            let pert = match perturb_for_zoom(&sample.gt, cfg.sigma, &mut rng, cfg.max_attempts) {
                Ok(p) => p,
                Err(ZoomDataError::Exhausted { attempts, .. }) => return Outcome::Dropped(DropReason::PerturbExhausted, attempts),
                Err(_) => return Outcome::Dropped(DropReason::InvalidGt, 0),
            };
            let zs = match make_zoom_sample(&sample, dims, &pert.bbox, k, template_id) {
                Ok(z) => z,
                Err(reason) => return Outcome::Dropped(reason, pert.attempts),
            };
            let image = if cfg.write_images {
                let rel = format!("{IMAGE_DIR}/{id}_{repeat}.png");
                let written = shot
                    .zoomed_view(&zs.crop)
                    .and_then(|view| imaging::save_png(&view, &out_dir.join(&rel)));
                if let Err(e) = written {
                    log::warn!("record {index}: cannot write zoomed image: {e}");
                    return Outcome::Dropped(DropReason::UnreadableImage, pert.attempts);
                }
                Some(rel)
            } else {
                None
            };
            let c = zs.crop;
            Outcome::Emitted(
                Box::new(ZoomRecord {
                    id: format!("{id}_{repeat}"),
                    source_index: index,
                    repeat,
                    image,
                    source_image: rec.image_path.display().to_string(),
                    instruction: zs.instruction_rendered.clone(),
                    raw_instruction: sample.instruction.clone(),
                    bbox: zs.label_view.as_array(),
                    label_text: format_box(&zs.label_view),
                    label_view_unclamped: zs.label_view_unclamped.as_array(),
                    gt: sample.gt.as_array(),
                    perturbed: pert.bbox.as_array(),
                    perturbed_giou: pert.giou,
                    crop: [c.xmin_c, c.ymin_c, c.xmax_c, c.ymax_c],
                    image_width: dims.width,
                    image_height: dims.height,
                    k,
                    template_id,
                    platform: sample.platform,
                    element_type: sample.element_type,
                }),
                pert.attempts,
            )
        })
        .collect()
}

/// Generate zoomed samples for every record. Output order follows input
/// order regardless of `cfg.jobs`.
pub fn generate(records: &[DatasetRecord], base: Option<&Path>, cfg: &ZoomConfig, out_dir: &Path) -> Result<(Vec<ZoomRecord>, PipelineStats), ZoomDataError> {
    cfg.validate()?;
    if cfg.write_images {
        let dir = out_dir.join(IMAGE_DIR);
        fs::create_dir_all(&dir).map_err(|source| ZoomDataError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    let outcomes = parallel::map_indexed(records, cfg.jobs, |i, rec| process_record(i, rec, base, cfg, out_dir));

    let mut stats = PipelineStats {
        inputs: records.len(),
        requested: records.len() * cfg.samples_per_gt,
        resample_filter: ZOOM_FILTER_NAME.to_string(),
        sigma: cfg.sigma,
        seed: cfg.seed,
        ..Default::default()
    };
    let mut emitted = Vec::new();
    for outcome in outcomes.into_iter().flatten() {
        match outcome {
            Outcome::Emitted(rec, attempts) => {
                stats.perturb_attempts += attempts;
                stats.perturb_accepted += 1;
                *stats.per_k.entry(k_key(rec.k)).or_default() += 1;
                *stats.per_template.entry(rec.template_id).or_default() += 1;
                emitted.push(*rec);
            }
            Outcome::Dropped(reason, attempts) => {
                stats.perturb_attempts += attempts;
                if attempts > 0 && reason != DropReason::PerturbExhausted {
                    stats.perturb_accepted += 1;
                }
                *stats.drops.entry(reason).or_default() += 1;
                stats.dropped += 1;
            }
        }
    }
    stats.emitted = emitted.len();
    stats.acceptance_rate = if stats.perturb_attempts > 0 {
        stats.perturb_accepted as f64 / stats.perturb_attempts as f64
    } else {
        0.0
    };
    Ok((emitted, stats))
}

/// Read a grounding JSONL, write `zoom_data.jsonl`, `stats.json` and the
/// zoomed images under `out_dir`.
pub fn run_pipeline(dataset_in: &Path, out_dir: &Path, cfg: &ZoomConfig) -> Result<PipelineStats, ZoomDataError> {
    let (records, base) = dataset::read_dataset(dataset_in)?;
    fs::create_dir_all(out_dir).map_err(|source| ZoomDataError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let (emitted, stats) = generate(&records, base.as_deref(), cfg, out_dir)?;
    dataset::write_jsonl(&out_dir.join(OUTPUT_JSONL), &emitted)?;
    let stats_path = out_dir.join(STATS_JSON);
    let text = serde_json::to_string_pretty(&stats).expect("stats serialize");
    fs::write(&stats_path, text).map_err(|source| ZoomDataError::Io {
        path: stats_path.display().to_string(),
        source,
    })?;
    log::info!("zoom data: {} emitted, {} dropped of {} requested", stats.emitted, stats.dropped, stats.requested);
    Ok(stats)
}
