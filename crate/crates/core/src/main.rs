use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use zoomground::dataset::{self, DatasetError};
use zoomground::evaluation::{self, BackendProvider, Correctness, EvalConfig, SharedProvider, SimProvider};
use zoomground::geometry::{BBox, ImageDims, PointCoord};
use zoomground::imaging::Screenshot;
use zoomground::inference::{self, Backend, GroundingConfig, Mode, SimOracle, SimOracleConfig, WireBackend, WireConfig};
use zoomground::parallel::Jobs;
use zoomground::prompts::HistoryAction;
use zoomground::pseudo_label::{self, GenConfig, PseudoLabelSet};
use zoomground::training_artifacts::{self, ArtifactOptions, AsciiTokenizer, Tokenizer, TrainingArtifact};
use zoomground::zoom_data::{self, ZoomConfig, ZoomDataError};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Parser, Debug)]
#[command(name = "zoomground", version, about = "Zoom-in GUI grounding toolkit", arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GlobalArgs {
    /// TOML file with [global], per-subcommand and [backend] sections; flags override it.
    #[arg(long, global = true)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true)]
    log_level: Option<String>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Defaults to 1.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate GIoU-filtered pseudo boxes (or pseudo points) with loss weights.
    GenPseudo(GenPseudoArgs),
    /// Build zoomed-in training samples from a grounding dataset.
    GenZoomData(GenZoomDataArgs),
    /// Pack pseudo-label records into training artifact files.
    EmitTrainArtifacts(EmitArgs),
    /// Ground one instruction in one screenshot.
    Ground(GroundArgs),
    /// Evaluate a backend on a grounding dataset.
    Evaluate(EvaluateArgs),
    /// Rebuild report tables from saved per-record results.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenPseudoArgs {
    /// Ground truth as x1,y1,x2,y2 (or x,y in point mode).
    #[arg(long, value_delimiter = ',')]
    gt: Option<Vec<f64>>,
    /// Dataset JSONL; one output line per record. Record i uses seed + i.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Pseudo labels per ground truth.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    threshold: Option<f64>,
    #[arg(long)]
    mode: Option<Mode>,
    /// Output JSONL; defaults to <out-dir>/pseudo.jsonl, else stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenZoomDataArgs {
    /// Grounding dataset JSONL.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Magnification factors, drawn uniformly per sample.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<f64>>,
    /// Minimum GIoU of the perturbed box against the ground truth.
    #[arg(long, allow_hyphen_values = true)]
    sigma: Option<f64>,
    #[arg(long)]
    samples_per_gt: Option<usize>,
    #[arg(long)]
    max_attempts: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    template_ids: Option<Vec<usize>>,
    /// Write zoomed PNGs next to the JSONL.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    write_images: Option<bool>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmitArgs {
    /// Pseudo-label JSONL from gen-pseudo.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    input: Option<PathBuf>,
    /// Label text placed before the ground-truth box.
    #[arg(long)]
    prefix: Option<String>,
    /// Tokens preceding the label in the consumer's sequence.
    #[arg(long)]
    prefix_offset: Option<usize>,
    /// Also write the dense mask as base64.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    dense_mask: Option<bool>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundingArgs {
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    mode: Option<Mode>,
    /// Backend TOML ([backend] table or top-level keys).
    #[arg(long)]
    backend_config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundArgs {
    #[arg(long)]
    image: Option<PathBuf>,
    /// Screenshot size WxH when no image is given (simulated backend only).
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    instruction: Option<String>,
    /// Hidden target x1,y1,x2,y2 for the simulated backend.
    #[arg(long, value_delimiter = ',')]
    gt: Option<Vec<f64>>,
    /// JSON array of {action, point: {x, y}} navigation steps.
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    grounding: GroundingArgs,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Defaults to --out-dir.
    #[arg(long)]
    report_dir: Option<PathBuf>,
    /// Count a box as correct when IoU reaches this, instead of center-in-box.
    #[arg(long)]
    iou_threshold: Option<f64>,
    /// Write screenshots with truth and prediction drawn on them.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    annotate: Option<bool>,
    #[command(flatten)]
    #[serde(flatten)]
    grounding: GroundingArgs,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalyzeArgs {
    /// records.jsonl, or the report directory holding it.
    #[arg(long)]
    records: Option<PathBuf>,
}

trait Merge {
    /// Fill unset fields from `file`.
    fn merge(self, file: Self) -> Self;
}

macro_rules! merge_fields {
    ($t:ty { $($f:ident),* $(,)? }) => {
        impl Merge for $t {
            fn merge(self, file: Self) -> Self {
                Self { $($f: self.$f.or(file.$f)),* }
            }
        }
    };
}

merge_fields!(GlobalArgs { config, seed, log_level, out_dir, jobs });
merge_fields!(GenPseudoArgs { gt, input, n, candidates, threshold, mode, out });
merge_fields!(GenZoomDataArgs { input, out, k, sigma, samples_per_gt, max_attempts, template_ids, write_images });
merge_fields!(EmitArgs { input, prefix, prefix_offset, dense_mask });
merge_fields!(AnalyzeArgs { records });

impl Merge for GroundingArgs {
    fn merge(self, file: Self) -> Self {
        Self {
            stages: self.stages.or(file.stages),
            k: self.k.or(file.k),
            mode: self.mode.or(file.mode),
            backend_config: self.backend_config.or(file.backend_config),
        }
    }
}

impl Merge for GroundArgs {
    fn merge(self, file: Self) -> Self {
        Self {
            image: self.image.or(file.image),
            dims: self.dims.or(file.dims),
            instruction: self.instruction.or(file.instruction),
            gt: self.gt.or(file.gt),
            history: self.history.or(file.history),
            grounding: self.grounding.merge(file.grounding),
        }
    }
}

impl Merge for EvaluateArgs {
    fn merge(self, file: Self) -> Self {
        Self {
            dataset: self.dataset.or(file.dataset),
            report_dir: self.report_dir.or(file.report_dir),
            iou_threshold: self.iou_threshold.or(file.iou_threshold),
            annotate: self.annotate.or(file.annotate),
            grounding: self.grounding.merge(file.grounding),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    global: GlobalArgs,
    #[serde(default)]
    gen_pseudo: GenPseudoArgs,
    #[serde(default)]
    gen_zoom_data: GenZoomDataArgs,
    #[serde(default)]
    emit_train_artifacts: EmitArgs,
    #[serde(default)]
    ground: GroundArgs,
    #[serde(default)]
    evaluate: EvaluateArgs,
    #[serde(default)]
    analyze: AnalyzeArgs,
    backend: Option<BackendSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum BackendSpec {
    Sim(SimSpec),
    Wire(WireConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimSpec {
    noise_scale: f64,
    parse_failure_rate: f64,
    /// Defaults to the global seed.
    seed: Option<u64>,
    hidden_gt: Option<[f64; 4]>,
    decimals: Option<usize>,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            noise_scale: 0.05,
            parse_failure_rate: 0.0,
            seed: None,
            hidden_gt: None,
            decimals: None,
        }
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn dataset_failure(e: DatasetError) -> Failure {
    match e {
        DatasetError::Schema { .. } => usage(e.to_string()),
        DatasetError::Io { .. } => Failure::Runtime(e.into()),
    }
}

type CmdResult = Result<(), Failure>;

fn diagnostic(kind: &str, message: &str) {
    eprintln!("{}", serde_json::json!({"error": kind, "message": message}));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                kind => {
                    let msg = kind.to_string();
                    diagnostic("usage", if msg.is_empty() { "missing subcommand" } else { &msg });
                    ExitCode::from(EXIT_USAGE)
                }
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            diagnostic("usage", &msg);
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(e)) => {
            diagnostic("runtime", &format!("{e:#}"));
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile, Failure> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

struct Ctx {
    seed: u64,
    jobs: Jobs,
    out_dir: Option<PathBuf>,
    global: GlobalArgs,
    file_backend: Option<BackendSpec>,
}

impl Ctx {
    /// Record the fully-resolved configuration in `dir`, or log it.
    fn log_resolved<T: Serialize>(&self, dir: Option<&Path>, section: &str, args: &T, backend: Option<&BackendSpec>) -> anyhow::Result<()> {
        let mut table = toml::Table::new();
        table.insert("global".into(), toml::Value::try_from(&self.global)?);
        table.insert(section.into(), toml::Value::try_from(args)?);
        if let Some(b) = backend {
            table.insert("backend".into(), toml::Value::try_from(b)?);
        }
        let text = toml::to_string(&table)?;
        match dir {
            Some(dir) => {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                let path = dir.join(RESOLVED_CONFIG);
                fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
            }
            None => log::info!("resolved config:\n{text}"),
        }
        Ok(())
    }
}

fn run(cli: Cli) -> CmdResult {
    let file = load_config(cli.global.config.as_deref())?;
    let mut global = cli.global.merge(file.global.clone());
    let log_level = global.log_level.get_or_insert_with(|| "warn".into()).clone();
    env_logger::Builder::new().parse_filters(&log_level).try_init().ok();
    let seed = *global.seed.get_or_insert(0);
    let jobs = match *global.jobs.get_or_insert(1) {
        0 => Jobs(None),
        n => Jobs(Some(n)),
    };
    log::info!("seed={seed} jobs={jobs:?}");
    let ctx = Ctx {
        seed,
        jobs,
        out_dir: global.out_dir.clone(),
        global,
        file_backend: file.backend.clone(),
    };
    match cli.command {
        Command::GenPseudo(a) => gen_pseudo(&ctx, a.merge(file.gen_pseudo)),
        Command::GenZoomData(a) => gen_zoom_data(&ctx, a.merge(file.gen_zoom_data)),
        Command::EmitTrainArtifacts(a) => emit_train_artifacts(&ctx, a.merge(file.emit_train_artifacts)),
        Command::Ground(a) => ground(&ctx, a.merge(file.ground)),
        Command::Evaluate(a) => evaluate(&ctx, a.merge(file.evaluate)),
        Command::Analyze(a) => analyze(&ctx, a.merge(file.analyze)),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PseudoBoxRecord {
    gt: [f64; 4],
    boxes: Vec<[f64; 4]>,
    gious: Vec<f64>,
    weights: Vec<f64>,
    seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PseudoPointRecord {
    gt: [f64; 2],
    points: Vec<[f64; 2]>,
    distances: Vec<f64>,
    weights: Vec<f64>,
    seed: u64,
}

fn bbox_from(v: &[f64]) -> Result<BBox, Failure> {
    match *v {
        [x0, y0, x1, y1] => BBox::new(x0, y0, x1, y1).map_err(|e| usage(format!("invalid box {v:?}: {e}"))),
        _ => Err(usage(format!("expected x1,y1,x2,y2, got {v:?}"))),
    }
}

/// Write to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> anyhow::Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(anyhow::Error::new(e).context("writing to stdout")),
        _ => Ok(()),
    }
}

fn write_lines(out: Option<&Path>, lines: &[String]) -> anyhow::Result<()> {
    let mut text = lines.join("\n");
    if !lines.is_empty() {
        text.push('\n');
    }
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => emit(&text),
    }
}

fn gen_pseudo(ctx: &Ctx, mut a: GenPseudoArgs) -> CmdResult {
    let defaults = GenConfig::default();
    let n = *a.n.get_or_insert(defaults.n_outputs);
    let candidates = *a.candidates.get_or_insert(defaults.num_candidates);
    let threshold = *a.threshold.get_or_insert(defaults.threshold);
    let mode = *a.mode.get_or_insert(Mode::Box);
    if a.out.is_none() {
        a.out = ctx.out_dir.as_ref().map(|d| d.join("pseudo.jsonl"));
    }

    let gts: Vec<Vec<f64>> = match (&a.gt, &a.input) {
        (Some(gt), None) => vec![gt.clone()],
        (None, Some(path)) => {
            let (records, _) = dataset::read_dataset(path).map_err(dataset_failure)?;
            records.into_iter().map(|r| r.bbox.to_vec()).collect()
        }
        _ => return Err(usage("gen-pseudo needs exactly one of --gt or --input")),
    };

    let mut lines = Vec::with_capacity(gts.len());
    for (i, gt) in gts.iter().enumerate() {
        let cfg = GenConfig {
            n_outputs: n,
            num_candidates: candidates,
            threshold,
            rng_seed: ctx.seed.wrapping_add(i as u64),
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        let line = match mode {
            Mode::Box => {
                let gt = bbox_from(gt)?;
                let set = pseudo_label::generate_pseudo_boxes(&gt, &cfg).with_context(|| format!("ground truth {i}"))?;
                serde_json::to_string(&PseudoBoxRecord {
                    gt: set.gt.as_array(),
                    boxes: set.boxes.iter().map(BBox::as_array).collect(),
                    gious: set.gious,
                    weights: set.weights,
                    seed: cfg.rng_seed,
                })
            }
            Mode::Point => {
                let p = match gt.as_slice() {
                    &[x, y] => PointCoord::new(x, y).map_err(|e| usage(e.to_string()))?,
                    _ => zoomground::geometry::center(&bbox_from(gt)?),
                };
                let pts = pseudo_label::generate_pseudo_points(&p, &cfg).with_context(|| format!("ground truth {i}"))?;
                serde_json::to_string(&PseudoPointRecord {
                    gt: [p.x, p.y],
                    points: pts.iter().map(|q| [q.point.x, q.point.y]).collect(),
                    distances: pts.iter().map(|q| q.distance).collect(),
                    weights: pts.iter().map(|q| q.weight).collect(),
                    seed: cfg.rng_seed,
                })
            }
        }
        .context("serializing record")?;
        lines.push(line);
    }
    write_lines(a.out.as_deref(), &lines)?;
    let dir = ctx.out_dir.clone();
    ctx.log_resolved(dir.as_deref(), "gen_pseudo", &a, None)?;
    Ok(())
}

fn gen_zoom_data(ctx: &Ctx, mut a: GenZoomDataArgs) -> CmdResult {
    let d = ZoomConfig::default();
    let input = a.input.clone().ok_or_else(|| usage("gen-zoom-data needs --in"))?;
    let out = a
        .out
        .get_or_insert_with(|| ctx.out_dir.clone().unwrap_or_else(|| PathBuf::from("zoom_data")))
        .clone();
    let cfg = ZoomConfig {
        ks: a.k.get_or_insert(d.ks).clone(),
        sigma: *a.sigma.get_or_insert(d.sigma),
        seed: ctx.seed,
        samples_per_gt: *a.samples_per_gt.get_or_insert(d.samples_per_gt),
        max_attempts: *a.max_attempts.get_or_insert(d.max_attempts),
        template_ids: a.template_ids.get_or_insert(d.template_ids).clone(),
        write_images: *a.write_images.get_or_insert(d.write_images),
        jobs: ctx.jobs,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let stats = zoom_data::run_pipeline(&input, &out, &cfg).map_err(|e| match e {
        ZoomDataError::Dataset(d) => dataset_failure(d),
        ZoomDataError::Config(m) => usage(m),
        other => Failure::Runtime(other.into()),
    })?;
    ctx.log_resolved(Some(&out), "gen_zoom_data", &a, None)?;
    emit(&(serde_json::to_string_pretty(&stats).context("serializing stats")? + "\n"))?;
    Ok(())
}

fn emit_train_artifacts(ctx: &Ctx, mut a: EmitArgs) -> CmdResult {
    let input = a.input.clone().ok_or_else(|| usage("emit-train-artifacts needs --in"))?;
    let out = ctx.out_dir.clone().ok_or_else(|| usage("emit-train-artifacts needs --out-dir"))?;
    let prefix = a.prefix.get_or_insert_with(String::new).clone();
    let prefix_offset = *a.prefix_offset.get_or_insert(0);
    let dense_mask = *a.dense_mask.get_or_insert(false);

    let records: Vec<PseudoBoxRecord> = dataset::read_jsonl(&input).map_err(dataset_failure)?;
    let tok = AsciiTokenizer;
    let art_dir = out.join("artifacts");
    fs::create_dir_all(&art_dir).with_context(|| format!("creating {}", art_dir.display()))?;
    let prefix_tokens = tok.encode(&prefix).map_err(|e| usage(e.to_string()))?.len();

    let mut files = Vec::with_capacity(records.len());
    let mut economy = std::collections::BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let schema = |m: String| usage(format!("{}:{}: {m}", input.display(), i + 1));
        let set = PseudoLabelSet {
            gt: bbox_from(&r.gt).map_err(|_| schema(format!("invalid gt {:?}", r.gt)))?,
            boxes: r.boxes.iter().map(|b| bbox_from(b)).collect::<Result<_, _>>().map_err(|_| schema("invalid pseudo box".into()))?,
            gious: r.gious.clone(),
            weights: r.weights.clone(),
        };
        if set.gious.len() != set.boxes.len() || set.weights.len() != set.boxes.len() {
            return Err(schema("boxes, gious and weights differ in length".into()));
        }
        let art = TrainingArtifact::build(
            &prefix,
            &set,
            &tok,
            ArtifactOptions {
                prefix_offset,
                dense_mask,
                seed: Some(r.seed),
            },
        )
        .map_err(|e| schema(e.to_string()))?;
        let name = format!("{i:06}.json");
        art.write(&art_dir.join(&name)).map_err(anyhow::Error::from)?;
        files.push(format!("artifacts/{name}"));
        let span = art.layout().span_len().unwrap_or(0);
        economy
            .entry(set.len())
            .or_insert_with(|| training_artifacts::token_economy(prefix_offset + prefix_tokens, span, set.len()));
    }
    let manifest = serde_json::json!({
        "version": training_artifacts::ARTIFACT_VERSION,
        "tokenizer_id": tok.id(),
        "count": files.len(),
        "files": files,
        "token_economy": economy.into_values().collect::<Vec<_>>(),
    });
    let path = out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).context("serializing manifest")? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    ctx.log_resolved(Some(&out), "emit_train_artifacts", &a, None)?;
    Ok(())
}

fn load_backend_spec(ctx: &Ctx, path: Option<&Path>) -> Result<BackendSpec, Failure> {
    if let Some(path) = path {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read backend config {}: {e}", path.display())))?;
        let value: toml::Table = toml::from_str(&text).map_err(|e| usage(format!("invalid backend config {}: {e}", path.display())))?;
        let table = match value.get("backend") {
            Some(toml::Value::Table(t)) => t.clone(),
            _ => value,
        };
        return table
            .try_into()
            .map_err(|e| usage(format!("invalid backend config {}: {e}", path.display())));
    }
    if let Some(spec) = &ctx.file_backend {
        return Ok(spec.clone());
    }
    if std::env::var(inference::wire::ENV_URL).is_ok_and(|u| !u.is_empty()) {
        return Ok(BackendSpec::Wire(WireConfig::default()));
    }
    Ok(BackendSpec::Sim(SimSpec::default()))
}

fn resolve_backend(ctx: &Ctx, path: Option<&Path>) -> Result<BackendSpec, Failure> {
    Ok(match load_backend_spec(ctx, path)? {
        BackendSpec::Wire(w) => BackendSpec::Wire(w.with_env()),
        BackendSpec::Sim(mut s) => {
            s.seed.get_or_insert(ctx.seed);
            BackendSpec::Sim(s)
        }
    })
}

fn grounding_config(g: &mut GroundingArgs) -> GroundingConfig {
    let d = GroundingConfig::default();
    GroundingConfig {
        stages: *g.stages.get_or_insert(d.stages),
        k: *g.k.get_or_insert(d.k),
        mode: *g.mode.get_or_insert(d.mode),
        ..d
    }
}

fn parse_dims(s: &str) -> Result<ImageDims, Failure> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| usage(format!("--dims expects WxH, got {s:?}")))?;
    let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| usage(format!("--dims {s:?}: {e}")));
    ImageDims::new(parse(w)?, parse(h)?).map_err(|e| usage(e.to_string()))
}

fn ground(ctx: &Ctx, mut a: GroundArgs) -> CmdResult {
    let cfg = grounding_config(&mut a.grounding);
    let spec = resolve_backend(ctx, a.grounding.backend_config.as_deref())?;
    let instruction = a.instruction.clone().unwrap_or_default();
    let history: Vec<HistoryAction> = match &a.history {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read history {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("invalid history {}: {e}", path.display())))?
        }
        None => Vec::new(),
    };

    let backend: Box<dyn Backend> = match &spec {
        BackendSpec::Sim(s) => {
            let gt = match (&a.gt, s.hidden_gt) {
                (Some(v), _) => bbox_from(v)?,
                (None, Some(v)) => bbox_from(&v)?,
                (None, None) => return Err(usage("simulated backend needs --gt or backend.hidden_gt")),
            };
            let oracle = SimOracle::new(SimOracleConfig {
                hidden_gt: gt,
                noise_scale: s.noise_scale,
                parse_failure_rate: s.parse_failure_rate,
                rng_seed: s.seed.unwrap_or(ctx.seed),
                mode: cfg.mode,
                decimals: s.decimals,
            })
            .map_err(usage)?;
            Box::new(oracle)
        }
        BackendSpec::Wire(w) => Box::new(WireBackend::new(w.clone()).map_err(|e| usage(e.to_string()))?),
    };

    let shot = match (&a.image, &a.dims) {
        (Some(path), _) => Screenshot::load(path).with_context(|| format!("loading {}", path.display()))?,
        (None, Some(d)) if !backend.needs_pixels() => Screenshot::Blank(parse_dims(d)?),
        (None, Some(_)) => return Err(usage("this backend needs --image")),
        (None, None) => return Err(usage("ground needs --image (or --dims with the simulated backend)")),
    };

    let result = inference::ground_navigation(backend.as_ref(), &shot, &instruction, &history, &cfg).map_err(|e| Failure::Runtime(e.into()))?;
    let latency: Vec<f64> = result.stages.iter().map(|s| s.latency_ms).collect();
    log::info!("stage latency ms: {latency:?}");
    let text = serde_json::to_string_pretty(&result.without_timing()).context("serializing result")?;
    emit(&format!("{text}\n"))?;
    if let Some(dir) = &ctx.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("ground.json"), text + "\n").context("writing ground.json")?;
        fs::write(dir.join("latency.json"), serde_json::json!({"stage_latency_ms": latency}).to_string() + "\n").context("writing latency.json")?;
    }
    ctx.log_resolved(ctx.out_dir.as_deref(), "ground", &a, Some(&spec))?;
    Ok(())
}

fn evaluate(ctx: &Ctx, mut a: EvaluateArgs) -> CmdResult {
    let grounding = grounding_config(&mut a.grounding);
    let spec = resolve_backend(ctx, a.grounding.backend_config.as_deref())?;
    let dataset_path = a.dataset.clone().ok_or_else(|| usage("evaluate needs --dataset"))?;
    if a.report_dir.is_none() {
        a.report_dir = ctx.out_dir.clone();
    }
    let report_dir = a.report_dir.clone().ok_or_else(|| usage("evaluate needs --report-dir or --out-dir"))?;
    let correctness = match a.iou_threshold {
        Some(threshold) => Correctness::IouAtLeast { threshold },
        None => Correctness::CenterInGt,
    };
    let cfg = EvalConfig {
        grounding,
        correctness,
        annotate: *a.annotate.get_or_insert(false),
        jobs: ctx.jobs,
    };

    let provider: Box<dyn BackendProvider> = match &spec {
        BackendSpec::Sim(s) => Box::new(SimProvider {
            noise_scale: s.noise_scale,
            parse_failure_rate: s.parse_failure_rate,
            seed: s.seed.unwrap_or(ctx.seed),
            mode: cfg.grounding.mode,
            decimals: s.decimals,
        }),
        BackendSpec::Wire(w) => Box::new(SharedProvider {
            backend: Arc::new(WireBackend::new(w.clone()).map_err(|e| usage(e.to_string()))?),
            description: serde_json::json!({"kind": "wire", "params": w}),
        }),
    };

    let (report, _) = evaluation::evaluate(&dataset_path, provider.as_ref(), &cfg, Some(&report_dir)).map_err(|e| match e {
        evaluation::EvalError::Dataset(d) => dataset_failure(d),
        other => Failure::Runtime(other.into()),
    })?;
    ctx.log_resolved(Some(&report_dir), "evaluate", &a, Some(&spec))?;
    let summary = serde_json::json!({
        "samples": report.samples,
        "accuracy": report.accuracy,
        "stage1_accuracy": report.stage1_accuracy,
        "mean_iou": report.mean_iou,
        "backend_calls": report.backend_calls,
        "errors": report.errors,
        "report_dir": report_dir,
    });
    Ok(emit(&format!("{summary}\n"))?)
}

fn analyze(ctx: &Ctx, a: AnalyzeArgs) -> CmdResult {
    let mut path = a.records.clone().ok_or_else(|| usage("analyze needs --records"))?;
    if path.is_dir() {
        path = path.join(evaluation::RECORDS_JSONL);
    }
    let (report, records) = evaluation::analyze(&path).map_err(|e| match e {
        evaluation::EvalError::Dataset(d) => dataset_failure(d),
        other => Failure::Runtime(other.into()),
    })?;
    if let Some(dir) = &ctx.out_dir {
        evaluation::write_report(dir, &report, &records).context("writing analysis")?;
    }
    ctx.log_resolved(ctx.out_dir.as_deref(), "analyze", &a, None)?;
    emit(&(serde_json::to_string_pretty(&report).context("serializing report")? + "\n"))?;
    Ok(())
}
