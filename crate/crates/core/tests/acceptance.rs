//! One line per acceptance criterion: `PASS` or `FAIL`, a short detail and
//! the elapsed time. Exits nonzero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use rand::Rng;
use zoomground::evaluation::{self, EvalConfig, SimProvider};
use zoomground::geometry::{self, BBox, CropSpec, ImageDims, PointCoord};
use zoomground::imaging::Screenshot;
use zoomground::inference::{self, GroundingConfig, SimOracle, SimOracleConfig};
use zoomground::parallel::Jobs;
use zoomground::pseudo_label::{self, is_quantized, GenConfig, PseudoLabelError};
use zoomground::seeding;
use zoomground::training_artifacts::{
    self, build_attention_mask, build_position_ids, ArtifactOptions, AsciiTokenizer, DenseMask, SegmentLayout, TrainingArtifact,
};
use zoomground::zoom_data::{self, ZoomConfig, ZoomRecord};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn giou_correctness() -> Outcome {
    let hand = geometry::giou(
        &BBox::new(0.0, 0.0, 0.5, 0.5).unwrap(),
        &BBox::new(0.25, 0.25, 0.75, 0.75).unwrap(),
    )
    .unwrap();
    ensure((hand - (-0.0794)).abs() <= 1e-4, || format!("hand case gave {hand}"))?;
    let mut rng = seeding::stream(11, 0);
    let mut max_err: f64 = 0.0;
    // Sides of at least 300 cells keep the oracle's own counting error
    // below the tolerance.
    for _ in 0..1000 {
        let a = common::random_box(&mut rng, 0.15);
        let b = common::random_box(&mut rng, 0.15);
        let err = (geometry::giou(&a, &b).unwrap() - common::grid_giou(&a, &b, common::GRID)).abs();
        max_err = max_err.max(err);
    }
    ensure(max_err <= 2e-3, || format!("max abs error {max_err:.2e} vs grid oracle"))?;
    Ok(format!("hand case {hand:.4}, max abs error {max_err:.2e} over 1000 pairs"))
}

fn coordinate_round_trip() -> Outcome {
    let mut rng = seeding::stream(12, 0);
    let mut max_err: f64 = 0.0;
    for _ in 0..10_000 {
        let dims = ImageDims::new(rng.random_range(16..4000), rng.random_range(16..4000)).unwrap();
        let x0 = rng.random_range(0..dims.width - 1);
        let y0 = rng.random_range(0..dims.height - 1);
        let crop = CropSpec::new(x0, y0, rng.random_range(x0 + 1..=dims.width), rng.random_range(y0 + 1..=dims.height), dims).unwrap();
        let b = common::random_box(&mut rng, 0.0);
        let back = geometry::from_view(&geometry::to_view(&b, &crop).unwrap(), &crop).unwrap();
        let p = PointCoord::new(rng.random(), rng.random()).unwrap();
        let pback = geometry::from_view(&geometry::to_view(&p, &crop).unwrap(), &crop).unwrap();
        for (u, v) in b.as_array().iter().zip(back.as_array()).chain([(&p.x, pback.x), (&p.y, pback.y)]) {
            max_err = max_err.max((u - v).abs());
        }
    }
    ensure(max_err <= 1e-9, || format!("max error {max_err:.2e}"))?;
    Ok(format!("10000 box+point pairs, max error {max_err:.2e}"))
}

fn pseudo_box_fidelity() -> Outcome {
    let (mut boxes, mut shortfalls) = (0, 0);
    for seed in 0..1000u64 {
        let mut rng = seeding::stream(seed, 99);
        let gt = common::gui_box(&mut rng);
        let cfg = GenConfig {
            rng_seed: seed,
            ..GenConfig::default()
        };
        let set = match pseudo_label::generate_pseudo_boxes(&gt, &cfg) {
            Ok(s) => s,
            // Too few survivors is an error rather than a short batch.
            Err(PseudoLabelError::Shortfall { survivors, requested, .. }) if survivors < requested => {
                shortfalls += 1;
                continue;
            }
            Err(e) => return Err(format!("seed {seed}: {e}")),
        };
        ensure(set.len() == cfg.n_outputs, || format!("seed {seed}: {} boxes", set.len()))?;
        for (b, &g) in set.boxes.iter().zip(&set.gious) {
            ensure(g >= cfg.threshold, || format!("seed {seed}: giou {g}"))?;
            ensure((geometry::giou(&set.gt, b).unwrap() - g).abs() <= 1e-12, || format!("seed {seed}: stale giou"))?;
            for v in b.as_array() {
                ensure((0.0..=1.0).contains(&v) && is_quantized(v), || format!("seed {seed}: coordinate {v}"))?;
            }
        }
        let again = pseudo_label::generate_pseudo_boxes(&gt, &cfg).unwrap();
        ensure(again == set, || format!("seed {seed}: not deterministic"))?;
        boxes += set.len();
    }
    ensure(shortfalls <= 10, || format!("{shortfalls} shortfalls"))?;
    Ok(format!(
        "1000 seeds, {boxes} boxes, all giou >= 0.3, in the unit square, 0.01-quantized, deterministic; {shortfalls} seeds short of survivors"
    ))
}

fn loss_weight_values() -> Outcome {
    let w1 = pseudo_label::iou_weight(1.0).unwrap();
    let w03 = pseudo_label::iou_weight(0.3).unwrap();
    ensure(w1 == 1.0, || format!("w(1) = {w1}"))?;
    // 1 + ln(0.3)/2, computed independently to 17 digits.
    ensure((w03 - 0.398_013_597_837_031_94).abs() <= 1e-9, || format!("w(0.3) = {w03}"))?;
    ensure(format!("{w03:.5}") == "0.39801", || format!("w(0.3) = {w03}"))?;
    Ok(format!("w(1) = {w1}, w(0.3) = {w03:.12}"))
}

fn check_layout(layout: &SegmentLayout, dense: &DenseMask) -> Result<(), String> {
    let mask = build_attention_mask(layout).map_err(|e| e.to_string())?;
    let pos = build_position_ids(layout).map_err(|e| e.to_string())?;
    let n = layout.total_len();
    ensure(dense.size() == n, || "dense size".into())?;
    for q in 0..n {
        for k in 0..n {
            let allowed = mask.allows(q, k);
            ensure(dense.get(q, k) == allowed, || format!("dense[{q}][{k}] disagrees"))?;
            if let (Some(a), Some(b)) = (layout.span_of(q), layout.span_of(k)) {
                ensure(a == b || !allowed, || format!("cross-span entry {q}->{k}"))?;
            }
        }
    }
    let (s0, e0) = layout.box_spans[0];
    for &(s, e) in &layout.box_spans {
        ensure(pos[s..e] == pos[s0..e0], || format!("span at {s} has different positions"))?;
    }
    Ok(())
}

fn mask_position_invariants() -> Outcome {
    let tok = AsciiTokenizer;
    let mut rng = seeding::stream(13, 0);
    let mut checked = 0;
    for m in 0..=8usize {
        for trial in 0..12 {
            let prefix: String = (0..rng.random_range(0..40)).map(|_| rng.random_range(b' '..=b'~') as char).collect();
            let gt = common::random_box(&mut rng, 0.05);
            let mut set = pseudo_label::PseudoLabelSet::empty(gt);
            if m > 0 {
                let cfg = GenConfig {
                    n_outputs: m,
                    rng_seed: rng.random(),
                    threshold: 0.0,
                    ..GenConfig::default()
                };
                set = pseudo_label::generate_pseudo_boxes(&gt, &cfg).map_err(|e| e.to_string())?;
            }
            let art = TrainingArtifact::build(
                &prefix,
                &set,
                &tok,
                ArtifactOptions {
                    dense_mask: true,
                    ..Default::default()
                },
            )
            .map_err(|e| e.to_string())?;
            art.validate().map_err(|e| format!("M={m} trial {trial}: {e}"))?;
            let dense = art.decoded_dense_mask().map_err(|e| e.to_string())?.ok_or("dense mask missing")?;
            check_layout(&art.layout(), &dense).map_err(|e| format!("M={m} trial {trial}: {e}"))?;

            let (p, s) = (rng.random_range(0..30), rng.random_range(1..20));
            let layout = SegmentLayout::uniform(p, s, m + 1);
            let dense = build_attention_mask(&layout).unwrap().to_dense();
            check_layout(&layout, &dense).map_err(|e| format!("M={m} raw layout: {e}"))?;
            let max_pos = build_position_ids(&layout).unwrap().into_iter().max();
            let base = build_position_ids(&SegmentLayout::uniform(p, s, 1)).unwrap().into_iter().max();
            ensure(max_pos == base, || format!("M={m}: max position {max_pos:?} vs {base:?}"))?;
            checked += 2;
        }
    }
    Ok(format!("{checked} layouts for M in 0..=8: dense matches segments, no cross-span entries, shared positions"))
}

/// Measured on the pinned corpus below; a change here is a behavior change.
const BASELINE_STAGE1_IOU: f64 = 0.339_145_386_838_663_2;
const BASELINE_STAGE2_IOU: f64 = 0.510_385_592_832_438_8;
const BASELINE_STAGE1_ACC: f64 = 0.852;
const BASELINE_STAGE2_ACC: f64 = 0.97;

fn closed_loop_benefit() -> Outcome {
    let records = common::sim_records(500, 2024, 1920, 1080);
    let provider = SimProvider::new(0.05, 2024);
    let cfg = EvalConfig {
        grounding: GroundingConfig {
            stages: 2,
            k: 5.0,
            ..GroundingConfig::default()
        },
        jobs: Jobs(None),
        ..EvalConfig::default()
    };
    let scored = evaluation::run_records(&records, None, &provider, &cfg, None);
    let report = evaluation::summarize(&scored, serde_json::Value::Null);
    let s1 = report.stage1_mean_iou.ok_or("no stage-1 IoU")?;
    let s2 = report.mean_iou.ok_or("no IoU")?;
    let (a1, a2) = (report.stage1_accuracy, report.accuracy);
    let detail = format!("IoU {s1:.4} -> {s2:.4}, click accuracy {a1:.3} -> {a2:.3}");
    ensure(report.errors == 0, || format!("{} errors", report.errors))?;
    ensure(s2 - s1 > 0.10, || format!("gain too small: {detail}"))?;
    ensure(a2 > a1, || format!("accuracy did not improve: {detail}"))?;
    for (got, want, name) in [(s1, BASELINE_STAGE1_IOU, "stage-1 IoU"), (s2, BASELINE_STAGE2_IOU, "stage-2 IoU"), (a1, BASELINE_STAGE1_ACC, "stage-1 accuracy"), (a2, BASELINE_STAGE2_ACC, "stage-2 accuracy")] {
        ensure((got - want).abs() <= 1e-6, || format!("{name} {got} drifted from baseline {want}: {detail}"))?;
    }
    Ok(detail)
}

fn call_count_contract() -> Outcome {
    let dims = ImageDims::new(1280, 800).unwrap();
    let shot = Screenshot::Blank(dims);
    let mut rng = seeding::stream(14, 0);
    let mut rows = Vec::new();
    for stages in 1..=4usize {
        for failure_rate in [0.0, 0.4] {
            for sample in 0..20u64 {
                let gt = common::small_target(&mut rng);
                let oracle = SimOracle::new(SimOracleConfig {
                    parse_failure_rate: failure_rate,
                    ..SimOracleConfig::new(gt, 0.05, sample)
                })
                .unwrap();
                let backend = common::Counting::new(oracle);
                let cfg = GroundingConfig {
                    stages,
                    ..GroundingConfig::default()
                };
                let result = match inference::ground_multistage(&backend, &shot, "click it", &cfg) {
                    Ok(r) => r,
                    Err(inference::InferenceError::FirstStage { .. }) if failure_rate > 0.0 => {
                        ensure(backend.count() == 1, || "first-stage failure made extra calls".into())?;
                        continue;
                    }
                    Err(e) => return Err(e.to_string()),
                };
                ensure(backend.count() == stages && result.backend_calls == stages && result.stages.len() == stages, || {
                    format!("stages={stages}: {} calls observed, {} reported", backend.count(), result.backend_calls)
                })?;
            }
        }
        rows.push(format!("{stages}->{stages}"));
    }
    Ok(format!("calls per sample {}", rows.join(", ")))
}

fn zoom_pipeline() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = common::write_corpus(&tmp.path().join("corpus"), 100, 15, 320, 200);
    let cfg = ZoomConfig {
        seed: 15,
        jobs: Jobs(None),
        ..ZoomConfig::default()
    };
    let (out_a, out_b) = (tmp.path().join("a"), tmp.path().join("b"));
    let stats = zoom_data::run_pipeline(&data, &out_a, &cfg).map_err(|e| e.to_string())?;
    zoom_data::run_pipeline(&data, &out_b, &ZoomConfig { jobs: Jobs::SEQUENTIAL, ..cfg.clone() }).map_err(|e| e.to_string())?;
    ensure(stats.requested == 100 && stats.emitted + stats.dropped == stats.requested, || format!("{stats:?}"))?;
    let emitted: Vec<ZoomRecord> = zoomground::dataset::read_jsonl(&out_a.join(zoom_data::OUTPUT_JSONL)).map_err(|e| e.to_string())?;
    ensure(emitted.len() == stats.emitted, || "JSONL length differs from stats".into())?;
    let mut max_err: f64 = 0.0;
    for r in &emitted {
        let dims = ImageDims::new(r.image_width, r.image_height).unwrap();
        let crop = CropSpec::new(r.crop[0], r.crop[1], r.crop[2], r.crop[3], dims).unwrap();
        let label = BBox::in_space(r.bbox[0], r.bbox[1], r.bbox[2], r.bbox[3], geometry::Space::View(crop)).unwrap();
        let back = geometry::from_view(&label, &crop).map_err(|e| e.to_string())?;
        for (u, v) in back.as_array().iter().zip(r.gt) {
            max_err = max_err.max((u - v).abs());
        }
    }
    ensure(max_err <= 1e-6, || format!("label round-trip error {max_err:.2e}"))?;
    let identical = common::snapshot(&out_a) == common::snapshot(&out_b);
    ensure(identical, || "rerun output differs".into())?;
    Ok(format!(
        "{} emitted + {} dropped = {} requested, max label error {max_err:.2e}, rerun byte-identical",
        stats.emitted, stats.dropped, stats.requested
    ))
}

fn token_economy() -> Outcome {
    let m4 = training_artifacts::token_economy(200, 14, 4);
    let m8 = training_artifacts::token_economy(200, 14, 8);
    ensure((m4.ratio - 0.25).abs() < 0.01, || format!("M=4 ratio {}", m4.ratio))?;
    ensure((m8.ratio - 0.17).abs() < 0.01, || format!("M=8 ratio {}", m8.ratio))?;
    ensure((m4.savings - 0.73).abs() <= 0.05, || format!("M=4 savings {}", m4.savings))?;
    ensure((m8.savings - 0.86).abs() <= 0.05, || format!("M=8 savings {}", m8.savings))?;
    Ok(format!(
        "M=4 ratio {:.3} (savings {:.1}%), M=8 ratio {:.3} (savings {:.1}%)",
        m4.ratio,
        m4.savings * 100.0,
        m8.ratio,
        m8.savings * 100.0
    ))
}

type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);

fn main() {
    let criteria: [Criterion; 9] = [
        ("giou-correctness", giou_correctness, Some(Duration::from_secs(30))),
        ("coordinate-round-trip", coordinate_round_trip, None),
        ("pseudo-box-fidelity", pseudo_box_fidelity, None),
        ("loss-weight-values", loss_weight_values, None),
        ("mask-position-invariants", mask_position_invariants, Some(Duration::from_secs(10))),
        ("closed-loop-zoom-benefit", closed_loop_benefit, Some(Duration::from_secs(60))),
        ("call-count-contract", call_count_contract, None),
        ("zoom-data-pipeline", zoom_pipeline, None),
        ("token-economy", token_economy, None),
    ];
    let mut failed = 0;
    for (name, check, budget) in criteria {
        let start = Instant::now();
        let mut outcome = check();
        let elapsed = start.elapsed();
        if let (Ok(detail), Some(limit)) = (&outcome, budget) {
            if elapsed > limit {
                outcome = Err(format!("{detail}; took {elapsed:.1?}, budget {limit:?}"));
            }
        }
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} ({elapsed:.2?})"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} ({elapsed:.2?})");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
