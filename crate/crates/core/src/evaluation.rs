//! Grounding evaluation: click accuracy per platform and element type, IoU
//! histograms, accuracy by object-size decile, how often the first-stage
//! proposal already contained a missed target, and backend call accounting.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{Rgba, RgbaImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, DatasetError, DatasetRecord, ElementType, Platform};
use crate::geometry::{self, BBox, CropSpec, ImageDims};
use crate::imaging::{self, ImagingError, Screenshot};
use crate::inference::{self, Backend, GroundingConfig, GroundingResult, Mode, Prediction, SimOracle, SimOracleConfig};
use crate::parallel::{self, Jobs};
use crate::seeding;

pub const HISTOGRAM_BINS: usize = 10;
pub const SIZE_BUCKETS: usize = 10;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// When a prediction counts as a hit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Correctness {
    /// The click point (box center, or the point) lies inside the truth.
    #[default]
    CenterInGt,
    /// Box IoU with the truth reaches the threshold.
    IouAtLeast { threshold: f64 },
}

/// Supplies a backend for each dataset record.
pub trait BackendProvider: Sync {
    fn backend_for(&self, index: usize, record: &DatasetRecord, gt: &BBox) -> Result<Arc<dyn Backend>, String>;

    fn describe(&self) -> serde_json::Value;
}

/// Simulated oracle per record, hidden truth taken from the dataset, with a
/// noise stream derived from `(seed, record index)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimProvider {
    pub noise_scale: f64,
    pub parse_failure_rate: f64,
    pub seed: u64,
    pub mode: Mode,
    pub decimals: Option<usize>,
}

impl SimProvider {
    pub fn new(noise_scale: f64, seed: u64) -> Self {
        Self {
            noise_scale,
            parse_failure_rate: 0.0,
            seed,
            mode: Mode::Box,
            decimals: None,
        }
    }
}

impl BackendProvider for SimProvider {
    fn backend_for(&self, index: usize, _record: &DatasetRecord, gt: &BBox) -> Result<Arc<dyn Backend>, String> {
        let oracle = SimOracle::new(SimOracleConfig {
            hidden_gt: *gt,
            noise_scale: self.noise_scale,
            parse_failure_rate: self.parse_failure_rate,
            rng_seed: sample_seed(self.seed, index),
            mode: self.mode,
            decimals: self.decimals,
        })?;
        Ok(Arc::new(oracle))
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({"kind": "sim", "params": self})
    }
}

/// Per-sample seed for the oracle's noise stream.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    use rand::RngCore;
    seeding::stream(seed, index as u64).next_u64()
}

/// One shared backend for every record.
pub struct SharedProvider {
    pub backend: Arc<dyn Backend>,
    pub description: serde_json::Value,
}

impl BackendProvider for SharedProvider {
    fn backend_for(&self, _index: usize, _record: &DatasetRecord, _gt: &BBox) -> Result<Arc<dyn Backend>, String> {
        Ok(Arc::clone(&self.backend))
    }

    fn describe(&self) -> serde_json::Value {
        self.description.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub grounding: GroundingConfig,
    pub correctness: Correctness,
    /// Write annotated screenshots (needs readable images).
    pub annotate: bool,
    #[serde(skip)]
    pub jobs: Jobs,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            grounding: GroundingConfig::default(),
            correctness: Correctness::default(),
            annotate: false,
            jobs: Jobs::SEQUENTIAL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub index: usize,
    pub platform: Platform,
    pub element_type: ElementType,
    pub gt: BBox,
    pub gt_area_fraction: f64,
    pub mode: Mode,
    pub result: Option<GroundingResult>,
    pub correct: bool,
    /// Final-prediction IoU; absent in point mode.
    pub iou: Option<f64>,
    pub stage1_correct: bool,
    pub stage1_iou: Option<f64>,
    /// Region proposal around the first-stage prediction.
    pub proposal: Option<CropSpec>,
    pub error: Option<String>,
}

impl EvalRecord {
    pub fn backend_calls(&self) -> usize {
        self.result.as_ref().map_or(0, |r| r.backend_calls)
    }

    pub fn without_timing(mut self) -> Self {
        self.result = self.result.map(GroundingResult::without_timing);
        self
    }
}

pub fn is_correct(rule: Correctness, pred: &Prediction, gt: &BBox) -> bool {
    match rule {
        Correctness::CenterInGt => geometry::contains(gt, &pred.click_point()),
        Correctness::IouAtLeast { threshold } => match pred {
            Prediction::Box(b) => geometry::iou(&b.clamp_unit(), gt).map(|v| v >= threshold).unwrap_or(false),
            Prediction::Point(p) => geometry::contains(gt, p),
        },
    }
}

fn pred_iou(pred: &Prediction, gt: &BBox) -> Option<f64> {
    pred.as_box().map(|b| geometry::iou(&b.clamp_unit(), gt).unwrap_or(0.0))
}

/// Score one finished (or failed) grounding run.
pub fn score(
    index: usize,
    record: &DatasetRecord,
    gt: BBox,
    outcome: Result<GroundingResult, String>,
    cfg: &EvalConfig,
    dims: Option<ImageDims>,
) -> EvalRecord {
    let mode = cfg.grounding.mode;
    let mut rec = EvalRecord {
        id: record.id_or_index(index),
        index,
        platform: record.platform,
        element_type: record.element_type,
        gt,
        gt_area_fraction: gt.area(),
        mode,
        result: None,
        correct: false,
        iou: (mode == Mode::Box).then_some(0.0),
        stage1_correct: false,
        stage1_iou: (mode == Mode::Box).then_some(0.0),
        proposal: None,
        error: None,
    };
    match outcome {
        Ok(result) => {
            let fin = result.final_prediction;
            rec.correct = is_correct(cfg.correctness, &fin, &gt);
            rec.iou = pred_iou(&fin, &gt);
            if let Some(s1) = result.stage1() {
                rec.stage1_correct = is_correct(cfg.correctness, s1, &gt);
                rec.stage1_iou = pred_iou(s1, &gt);
                rec.proposal = dims.and_then(|d| cfg.grounding.proposal(d, s1).ok());
            }
            rec.result = Some(result);
        }
        Err(e) => rec.error = Some(e),
    }
    rec
}

fn screenshot_for(record: &DatasetRecord, base: Option<&Path>, needs_pixels: bool) -> Result<Screenshot, String> {
    let path = record.resolved_image_path(base);
    if !needs_pixels {
        if let Some(d) = record.declared_dims() {
            return Ok(Screenshot::Blank(d));
        }
        let (w, h) = image::image_dimensions(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        return ImageDims::new(w, h).map(Screenshot::Blank).map_err(|e| e.to_string());
    }
    Screenshot::load(&path).map_err(|e| e.to_string())
}

fn evaluate_one(index: usize, record: &DatasetRecord, base: Option<&Path>, provider: &dyn BackendProvider, cfg: &EvalConfig) -> (EvalRecord, Option<Screenshot>) {
    let gt = match record.gt() {
        Ok(gt) => gt,
        Err(e) => {
            let bogus = BBox::raw(0.0, 0.0, 0.0, 0.0, geometry::Space::Original);
            return (score(index, record, bogus, Err(e.to_string()), cfg, None), None);
        }
    };
    let backend = match provider.backend_for(index, record, &gt) {
        Ok(b) => b,
        Err(e) => return (score(index, record, gt, Err(e), cfg, None), None),
    };
    let shot = match screenshot_for(record, base, backend.needs_pixels() || cfg.annotate) {
        Ok(s) => s,
        Err(e) => return (score(index, record, gt, Err(e), cfg, None), None),
    };
    let outcome = inference::ground_multistage(backend.as_ref(), &shot, &record.instruction, &cfg.grounding).map_err(|e| e.to_string());
    let dims = shot.dims();
    (score(index, record, gt, outcome, cfg, Some(dims)), Some(shot))
}

/// Run every record through the backend. Per-record failures are scored as
/// misses with an error tag.
pub fn run_records(records: &[DatasetRecord], base: Option<&Path>, provider: &dyn BackendProvider, cfg: &EvalConfig, annotate_dir: Option<&Path>) -> Vec<EvalRecord> {
    parallel::map_indexed(records, cfg.jobs, |i, rec| {
        let (scored, shot) = evaluate_one(i, rec, base, provider, cfg);
        if let (Some(dir), Some(Screenshot::Raster(img)), Some(result)) = (annotate_dir, &shot, &scored.result) {
            let path = dir.join(format!("{}.png", scored.id));
            if let Err(e) = write_annotation(img, &result.final_prediction, &scored.gt, &path) {
                log::warn!("annotation for {} failed: {e}", scored.id);
            }
        }
        scored
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl GroupStats {
    fn add(&mut self, hit: bool) {
        self.count += 1;
        self.correct += usize::from(hit);
    }

    fn finish(mut self) -> Self {
        self.accuracy = ratio(self.correct, self.count);
        self
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouHistogram {
    /// Bin `i` covers `[i/10, (i+1)/10)`; the last bin includes 1.0.
    pub counts: [usize; HISTOGRAM_BINS],
}

impl IouHistogram {
    pub fn bin_of(iou: f64) -> usize {
        ((iou.clamp(0.0, 1.0) * HISTOGRAM_BINS as f64).floor() as usize).min(HISTOGRAM_BINS - 1)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// IoU histogram over records; `None` in point mode.
pub fn iou_histogram(records: &[EvalRecord]) -> Option<IouHistogram> {
    let mut counts = [0; HISTOGRAM_BINS];
    for r in records {
        counts[IouHistogram::bin_of(r.iou?)] += 1;
    }
    Some(IouHistogram { counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeBucket {
    pub decile: usize,
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub min_area_fraction: Option<f64>,
    pub max_area_fraction: Option<f64>,
}

/// Decile of each record by ground-truth area rank within the set (ties
/// broken by record order).
pub fn size_deciles(records: &[EvalRecord]) -> Vec<usize> {
    let n = records.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| records[a].gt_area_fraction.total_cmp(&records[b].gt_area_fraction).then(a.cmp(&b)));
    let mut decile = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        decile[i] = rank * SIZE_BUCKETS / n;
    }
    decile
}

pub fn size_percentile_accuracy(records: &[EvalRecord]) -> Vec<SizeBucket> {
    let mut buckets: Vec<SizeBucket> = (0..SIZE_BUCKETS)
        .map(|decile| SizeBucket {
            decile,
            count: 0,
            correct: 0,
            accuracy: 0.0,
            min_area_fraction: None,
            max_area_fraction: None,
        })
        .collect();
    for (r, d) in records.iter().zip(size_deciles(records)) {
        let b = &mut buckets[d];
        b.count += 1;
        b.correct += usize::from(r.correct);
        let a = r.gt_area_fraction;
        b.min_area_fraction = Some(b.min_area_fraction.map_or(a, |m| m.min(a)));
        b.max_area_fraction = Some(b.max_area_fraction.map_or(a, |m| m.max(a)));
    }
    for b in &mut buckets {
        b.accuracy = ratio(b.correct, b.count);
    }
    buckets
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecall {
    pub failures: usize,
    /// Failures whose truth lies fully inside the first-stage proposal.
    pub included: usize,
    pub recall: Option<f64>,
}

/// Among missed records, how often the first-stage proposal contained the
/// whole truth. `None` in point mode.
pub fn stage1_recall(records: &[EvalRecord]) -> Option<ProposalRecall> {
    if records.iter().any(|r| r.mode == Mode::Point) {
        return None;
    }
    let failures: Vec<&EvalRecord> = records.iter().filter(|r| !r.correct).collect();
    let included = failures
        .iter()
        .filter(|r| r.proposal.is_some_and(|c| c.contains_box(&r.gt)))
        .count();
    Some(ProposalRecall {
        failures: failures.len(),
        included,
        recall: (!failures.is_empty()).then(|| ratio(included, failures.len())),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: serde_json::Value,
    pub samples: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub mean_iou: Option<f64>,
    pub stage1_accuracy: f64,
    pub stage1_mean_iou: Option<f64>,
    pub by_platform: BTreeMap<Platform, GroupStats>,
    pub by_element_type: BTreeMap<ElementType, GroupStats>,
    pub iou_histogram: Option<IouHistogram>,
    pub size_percentile_accuracy: Vec<SizeBucket>,
    pub stage1_recall_among_failures: Option<ProposalRecall>,
    pub backend_calls: usize,
    pub backend_calls_per_sample: f64,
    pub transport_retries: usize,
    pub fallbacks: usize,
    pub errors: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Aggregate scored records into a report.
pub fn summarize(records: &[EvalRecord], config: serde_json::Value) -> EvalReport {
    let mut by_platform: BTreeMap<Platform, GroupStats> = BTreeMap::new();
    let mut by_element_type: BTreeMap<ElementType, GroupStats> = BTreeMap::new();
    for r in records {
        by_platform.entry(r.platform).or_default().add(r.correct);
        by_element_type.entry(r.element_type).or_default().add(r.correct);
    }
    let point_mode = records.iter().any(|r| r.mode == Mode::Point);
    let correct = records.iter().filter(|r| r.correct).count();
    let backend_calls: usize = records.iter().map(EvalRecord::backend_calls).sum();
    EvalReport {
        config,
        samples: records.len(),
        correct,
        accuracy: ratio(correct, records.len()),
        mean_iou: if point_mode { None } else { mean(records.iter().filter_map(|r| r.iou)) },
        stage1_accuracy: ratio(records.iter().filter(|r| r.stage1_correct).count(), records.len()),
        stage1_mean_iou: if point_mode { None } else { mean(records.iter().filter_map(|r| r.stage1_iou)) },
        by_platform: by_platform.into_iter().map(|(k, v)| (k, v.finish())).collect(),
        by_element_type: by_element_type.into_iter().map(|(k, v)| (k, v.finish())).collect(),
        iou_histogram: if point_mode { None } else { iou_histogram(records) },
        size_percentile_accuracy: size_percentile_accuracy(records),
        stage1_recall_among_failures: stage1_recall(records),
        backend_calls,
        backend_calls_per_sample: ratio(backend_calls, records.len()),
        transport_retries: records.iter().filter_map(|r| r.result.as_ref()).map(|r| r.transport_retries).sum(),
        fallbacks: records.iter().filter(|r| r.result.as_ref().is_some_and(|r| r.fallback_used)).count(),
        errors: records.iter().filter(|r| r.error.is_some()).count(),
    }
}

/// Wall-clock summary, kept out of the reproducible report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub mean_ms_per_stage: Vec<f64>,
    pub mean_ms_per_sample: Option<f64>,
}

pub fn latency_summary(records: &[EvalRecord]) -> LatencySummary {
    let results: Vec<&GroundingResult> = records.iter().filter_map(|r| r.result.as_ref()).collect();
    let max_stages = results.iter().map(|r| r.stages.len()).max().unwrap_or(0);
    let mean_ms_per_stage = (0..max_stages)
        .map(|i| mean(results.iter().filter_map(|r| r.stages.get(i)).map(|s| s.latency_ms)).unwrap_or(0.0))
        .collect();
    LatencySummary {
        mean_ms_per_stage,
        mean_ms_per_sample: mean(results.iter().map(|r| r.stages.iter().map(|s| s.latency_ms).sum())),
    }
}

pub fn evaluate(dataset_path: &Path, provider: &dyn BackendProvider, cfg: &EvalConfig, report_dir: Option<&Path>) -> Result<(EvalReport, Vec<EvalRecord>), EvalError> {
    let (records, base) = dataset::read_dataset(dataset_path)?;
    let annotate_dir = match (report_dir, cfg.annotate) {
        (Some(dir), true) => {
            let d = dir.join(ANNOTATION_DIR);
            fs::create_dir_all(&d).map_err(io_err(&d))?;
            Some(d)
        }
        _ => None,
    };
    let scored = run_records(&records, base.as_deref(), provider, cfg, annotate_dir.as_deref());
    let report = summarize(&scored, config_echo(cfg, provider));
    if let Some(dir) = report_dir {
        write_report(dir, &report, &scored)?;
    }
    Ok((report, scored))
}

pub fn config_echo(cfg: &EvalConfig, provider: &dyn BackendProvider) -> serde_json::Value {
    serde_json::json!({
        "grounding": cfg.grounding,
        "correctness": cfg.correctness,
        "backend": provider.describe(),
    })
}

pub const REPORT_JSON: &str = "report.json";
pub const RECORDS_JSONL: &str = "records.jsonl";
pub const LATENCY_JSON: &str = "latency.json";
pub const HISTOGRAM_CSV: &str = "iou_histogram.csv";
pub const DECILES_CSV: &str = "size_deciles.csv";
pub const GROUPS_CSV: &str = "accuracy_by_group.csv";
pub const ANNOTATION_DIR: &str = "annotated";

/// Write the report JSON, per-record JSONL, CSV tables and latency summary.
pub fn write_report(dir: &Path, report: &EvalReport, records: &[EvalRecord]) -> Result<(), EvalError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let json = |path: PathBuf, value: &dyn erased::Json| -> Result<(), EvalError> {
        fs::write(&path, value.to_pretty()).map_err(io_err(&path))
    };
    json(dir.join(REPORT_JSON), report)?;
    json(dir.join(LATENCY_JSON), &latency_summary(records))?;
    dataset::write_jsonl(&dir.join(RECORDS_JSONL), records)?;
    write_tables(dir, report)
}

mod erased {
    pub trait Json {
        fn to_pretty(&self) -> String;
    }

    impl<T: serde::Serialize> Json for T {
        fn to_pretty(&self) -> String {
            let mut s = serde_json::to_string_pretty(self).expect("report types serialize");
            s.push('\n');
            s
        }
    }
}

fn write_tables(dir: &Path, report: &EvalReport) -> Result<(), EvalError> {
    let csv_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| EvalError::Csv { path, source }
    };

    let path = dir.join(HISTOGRAM_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["bin_lo", "bin_hi", "count"]).map_err(csv_err(&path))?;
    if let Some(h) = &report.iou_histogram {
        for (i, c) in h.counts.iter().enumerate() {
            w.write_record([format!("{:.1}", i as f64 / 10.0), format!("{:.1}", (i + 1) as f64 / 10.0), c.to_string()])
                .map_err(csv_err(&path))?;
        }
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join(DECILES_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["decile", "count", "correct", "accuracy", "min_area_fraction", "max_area_fraction"])
        .map_err(csv_err(&path))?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for b in &report.size_percentile_accuracy {
        w.write_record([
            b.decile.to_string(),
            b.count.to_string(),
            b.correct.to_string(),
            b.accuracy.to_string(),
            opt(b.min_area_fraction),
            opt(b.max_area_fraction),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join(GROUPS_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["group", "value", "count", "correct", "accuracy"]).map_err(csv_err(&path))?;
    let label = |v: &dyn erased::Json| v.to_pretty().trim().trim_matches('"').to_string();
    for (k, g) in &report.by_platform {
        w.write_record(["platform".into(), label(k), g.count.to_string(), g.correct.to_string(), g.accuracy.to_string()])
            .map_err(csv_err(&path))?;
    }
    for (k, g) in &report.by_element_type {
        w.write_record(["element_type".into(), label(k), g.count.to_string(), g.correct.to_string(), g.accuracy.to_string()])
            .map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))
}

/// Re-derive a report from saved per-record results.
pub fn analyze(records_path: &Path) -> Result<(EvalReport, Vec<EvalRecord>), EvalError> {
    let records: Vec<EvalRecord> = dataset::read_jsonl(records_path)?;
    let config = records_path
        .parent()
        .map(|d| d.join(REPORT_JSON))
        .and_then(|p| fs::read_to_string(p).ok())
        .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
        .and_then(|v| v.get("config").cloned())
        .unwrap_or(serde_json::Value::Null);
    Ok((summarize(&records, config), records))
}

pub const GT_COLOR: Rgba<u8> = Rgba([0, 200, 0, 255]);
pub const PRED_COLOR: Rgba<u8> = Rgba([220, 0, 0, 255]);
const STROKE: u32 = 2;
const POINT_ARM: i64 = 4;

fn px_rect(b: &BBox, w: u32, h: u32) -> (i64, i64, i64, i64) {
    let fx = |v: f64| (v.clamp(0.0, 1.0) * f64::from(w)).floor() as i64;
    let fy = |v: f64| (v.clamp(0.0, 1.0) * f64::from(h)).floor() as i64;
    (fx(b.xmin), fy(b.ymin), fx(b.xmax).min(i64::from(w) - 1), fy(b.ymax).min(i64::from(h) - 1))
}

fn put(img: &mut RgbaImage, x: i64, y: i64, color: Rgba<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn draw_rect(img: &mut RgbaImage, b: &BBox, color: Rgba<u8>) {
    let (x0, y0, x1, y1) = px_rect(b, img.width(), img.height());
    for t in 0..i64::from(STROKE) {
        for x in x0..=x1 {
            put(img, x, y0 + t, color);
            put(img, x, y1 - t, color);
        }
        for y in y0..=y1 {
            put(img, x0 + t, y, color);
            put(img, x1 - t, y, color);
        }
    }
}

fn draw_cross(img: &mut RgbaImage, x: f64, y: f64, color: Rgba<u8>) {
    let cx = (x.clamp(0.0, 1.0) * f64::from(img.width())).floor() as i64;
    let cy = (y.clamp(0.0, 1.0) * f64::from(img.height())).floor() as i64;
    for d in -POINT_ARM..=POINT_ARM {
        for t in 0..i64::from(STROKE) {
            put(img, cx + d, cy + t, color);
            put(img, cx + t, cy + d, color);
        }
    }
}

/// Ground truth in green, prediction in red.
pub fn annotate(img: &RgbaImage, pred: &Prediction, gt: &BBox) -> RgbaImage {
    let mut out = img.clone();
    draw_rect(&mut out, gt, GT_COLOR);
    match pred {
        Prediction::Box(b) => draw_rect(&mut out, b, PRED_COLOR),
        Prediction::Point(p) => draw_cross(&mut out, p.x, p.y, PRED_COLOR),
    }
    out
}

pub fn write_annotation(img: &RgbaImage, pred: &Prediction, gt: &BBox, path: &Path) -> Result<(), EvalError> {
    imaging::save_png(&annotate(img, pred, gt), path)?;
    Ok(())
}
