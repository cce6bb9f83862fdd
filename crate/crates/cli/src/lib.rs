//! Command-line surface over the harmonic3d library: gradient checking,
//! gradient-field export, synthetic training and benchmarking, KITTI-file
//! evaluation and a rotated-box IoU helper.
//!
//! Exit codes: 0 on success, 1 when a checked contract fails (for example
//! gradient-check failures), 2 on usage or I/O errors. Results go to the
//! output stream, diagnostics to the error stream.

use clap::{Args, Parser, Subcommand};
use harmonic3d::analysis::{
    gradcheck, sample_grad_field, write_grad_field_csv, GradFieldSpec, PartialKind,
};
use harmonic3d::config::RunConfig;
use harmonic3d::detector::{run_benchmark, write_benchmark_csv, write_checkpoint, write_history};
use harmonic3d::eval::{evaluate, render_summary, Detection, FrameResult, IouKind};
use harmonic3d::geometry::{bev_iou, iou_3d, Box3d};
use harmonic3d::kitti::{kitti_to_box3d, parse_label_file};
use harmonic3d::losses::{LossKind, SmoothL1Form};
use std::io::Write;
use std::path::{Path, PathBuf};

const EXIT_OK: i32 = 0;
const EXIT_CONTRACT: i32 = 1;
const EXIT_USAGE: i32 = 2;

#[derive(Parser)]
#[command(name = "harmonic3d", version, about = "Harmonic detection-loss toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PartialArg {
    Cls,
    Reg,
    Dir,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum LossArg {
    Baseline,
    Harmonic,
}

impl From<LossArg> for LossKind {
    fn from(v: LossArg) -> Self {
        match v {
            LossArg::Baseline => LossKind::Baseline,
            LossArg::Harmonic => LossKind::Harmonic,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum IouKindArg {
    Bev,
    #[value(name = "3d")]
    ThreeD,
}

impl From<IouKindArg> for IouKind {
    fn from(v: IouKindArg) -> Self {
        match v {
            IouKindArg::Bev => IouKind::Bev,
            IouKindArg::ThreeD => IouKind::ThreeD,
        }
    }
}

/// Overrides shared by the synthetic-training commands. Precedence:
/// command-line flag over config file over built-in default.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat TOML config file; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    train_scenes: Option<usize>,
    #[arg(long)]
    val_scenes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_path(path).map_err(|e| e.to_string())?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.noise_sigma {
            cfg.noise_sigma = v;
        }
        if let Some(v) = self.train_scenes {
            cfg.train_scenes = v;
        }
        if let Some(v) = self.val_scenes {
            cfg.val_scenes = v;
        }
        if let Some(v) = self.seed {
            cfg.scene_seed = v;
            cfg.train_seed = v;
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.display().to_string();
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Verify analytic gradients against the finite-difference oracle.
    Gradcheck {
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sample a gradient field on a grid and write it as CSV.
    Gradfield {
        #[arg(long, value_enum)]
        partial: PartialArg,
        #[arg(long, value_enum)]
        loss: LossArg,
        #[arg(long)]
        out: PathBuf,
        /// Points per axis.
        #[arg(long, default_value_t = 22)]
        resolution: usize,
        /// Direction label for the dir partial.
        #[arg(long, default_value_t = true)]
        dir_gt: bool,
    },
    /// Train the toy detector on synthetic scenes.
    SynthTrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum)]
        loss: LossArg,
    },
    /// Run the baseline-vs-harmonic benchmark over several seeds.
    SynthBench {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Number of seeds (0, 1, ..).
        #[arg(long)]
        seeds: Option<usize>,
        /// Output CSV path; defaults to <out_dir>/benchmark.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate KITTI-format predictions against ground-truth labels.
    Evaluate {
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        pred_dir: PathBuf,
        /// Comma-separated IoU thresholds.
        #[arg(long, default_value = "0.7,0.5")]
        thresholds: String,
        #[arg(long, value_enum, default_value = "bev")]
        iou_kind: IouKindArg,
        /// Object class to evaluate.
        #[arg(long, default_value = "Car")]
        object_type: String,
        /// Optional JSON output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print BEV and 3D IoU of two boxes given as x,y,z,l,w,h,yaw.
    Iou {
        #[arg(long)]
        box_a: String,
        #[arg(long)]
        box_b: String,
    },
}

/// Parses argv and dispatches; never panics on user input.
pub fn run<O: Write, E: Write>(argv: &[String], out: &mut O, err: &mut E) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own help/version through the error path
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_USAGE;
            }
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
    };
    match cli.command {
        Command::Gradcheck { n, tol, seed } => cmd_gradcheck(n, tol, seed, out, err),
        Command::Gradfield { partial, loss, out: path, resolution, dir_gt } => {
            cmd_gradfield(partial, loss, &path, resolution, dir_gt, out, err)
        }
        Command::SynthTrain { cfg, loss } => cmd_synth_train(&cfg, loss.into(), out, err),
        Command::SynthBench { cfg, seeds, out: path } => cmd_synth_bench(&cfg, seeds, path, out, err),
        Command::Evaluate { gt_dir, pred_dir, thresholds, iou_kind, object_type, out: path } => {
            cmd_evaluate(&gt_dir, &pred_dir, &thresholds, iou_kind.into(), &object_type, path, out, err)
        }
        Command::Iou { box_a, box_b } => cmd_iou(&box_a, &box_b, out, err),
    }
}

fn cmd_gradcheck<O: Write, E: Write>(n: usize, tol: f64, seed: u64, out: &mut O, err: &mut E) -> i32 {
    if n == 0 {
        let _ = writeln!(err, "error: --n must be at least 1");
        return EXIT_USAGE;
    }
    let mut all_pass = true;
    for form in [SmoothL1Form::Quadratic, SmoothL1Form::AsPrinted] {
        let cfg = harmonic3d::losses::LossConfig { smoothl1_form: form, ..Default::default() };
        let report = gradcheck(n, tol, seed, &cfg);
        let form_name = match form {
            SmoothL1Form::Quadratic => "quadratic",
            SmoothL1Form::AsPrinted => "as-printed",
        };
        let _ = writeln!(
            out,
            "gradcheck smoothl1={form_name}: samples={} comparisons={} max_rel_err={:.3e} max_abs_err={:.3e} failures={}",
            report.samples, report.comparisons, report.max_rel_err, report.max_abs_err, report.failures
        );
        for w in &report.worst {
            let _ = writeln!(
                err,
                "  worst: sample {} {} {}: analytic {:.9e} vs numeric {:.9e} (rel {:.3e})",
                w.sample_index, w.loss, w.partial, w.analytic, w.numeric, w.rel_err
            );
        }
        all_pass &= report.passed();
    }
    if all_pass {
        let _ = writeln!(out, "gradcheck PASS");
        EXIT_OK
    } else {
        let _ = writeln!(out, "gradcheck FAIL");
        EXIT_CONTRACT
    }
}

fn cmd_gradfield<O: Write, E: Write>(
    partial: PartialArg,
    loss: LossArg,
    path: &Path,
    resolution: usize,
    dir_gt: bool,
    out: &mut O,
    err: &mut E,
) -> i32 {
    let partial = match partial {
        PartialArg::Cls => PartialKind::Cls,
        PartialArg::Reg => PartialKind::Reg,
        PartialArg::Dir => PartialKind::Dir,
    };
    let spec = GradFieldSpec { resolution, dir_gt, ..GradFieldSpec::default_for(partial, loss.into()) };
    let cfg = harmonic3d::losses::LossConfig::default();
    let field = match sample_grad_field(&spec, &cfg) {
        Ok(f) => f,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    if let Err(e) = write_grad_field_csv(path, &spec, &field) {
        let _ = writeln!(err, "error: {e}");
        return EXIT_USAGE;
    }
    let _ = writeln!(out, "wrote {} grid points to {}", field.len(), path.display());
    EXIT_OK
}

fn cmd_synth_train<O: Write, E: Write>(args: &ConfigArgs, kind: LossKind, out: &mut O, err: &mut E) -> i32 {
    let cfg = match args.load() {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let out_dir = PathBuf::from(&cfg.out_dir);
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        let _ = writeln!(err, "error: cannot create {}: {e}", out_dir.display());
        return EXIT_USAGE;
    }
    let train_cfg = cfg.train_config(kind);
    let spec = cfg.scene_spec();
    let _ = writeln!(
        out,
        "config: epochs={} lr={} batch_size={} train_scenes={} val_scenes={} noise_sigma={} seed={}",
        train_cfg.epochs,
        train_cfg.learning_rate,
        train_cfg.batch_size,
        train_cfg.train_scenes,
        train_cfg.val_scenes,
        spec.noise_sigma,
        train_cfg.seed
    );
    let (model, history) = match harmonic3d::detector::train::train_with_loss_config(&train_cfg, &spec, &cfg.loss_config()) {
        Ok(v) => v,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_CONTRACT;
        }
    };
    let ckpt = out_dir.join(format!("checkpoint-{kind}.json"));
    let hist = out_dir.join(format!("history-{kind}.json"));
    if let Err(e) = write_checkpoint(&ckpt, &model).and_then(|_| write_history(&hist, &history)) {
        let _ = writeln!(err, "error: {e}");
        return EXIT_USAGE;
    }
    if let Some(last) = history.epochs.last() {
        let _ = writeln!(
            out,
            "trained {kind} for {} epochs: val ap@0.7 {:.6} ap@0.5 {:.6} aos@0.7 {:.6} pearson_r {:.6}",
            history.epochs.len(),
            last.val_ap_07,
            last.val_ap_05,
            last.val_aos_07,
            last.val_pearson_r
        );
    } else {
        let _ = writeln!(out, "trained {kind} for 0 epochs (model left at initialization)");
    }
    let _ = writeln!(out, "checkpoint {}", ckpt.display());
    let _ = writeln!(out, "history {}", hist.display());
    EXIT_OK
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn cmd_synth_bench<O: Write, E: Write>(
    args: &ConfigArgs,
    seeds: Option<usize>,
    out_path: Option<PathBuf>,
    out: &mut O,
    err: &mut E,
) -> i32 {
    let cfg = match args.load() {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let n_seeds = seeds.unwrap_or(cfg.bench_seeds);
    if n_seeds == 0 {
        let _ = writeln!(err, "error: --seeds must be at least 1");
        return EXIT_USAGE;
    }
    let out_dir = PathBuf::from(&cfg.out_dir);
    let csv_path = out_path.unwrap_or_else(|| out_dir.join("benchmark.csv"));
    if let Some(parent) = csv_path.parent() {
        if !parent.as_os_str().is_empty() {
            if let Err(e) = std::fs::create_dir_all(parent) {
                let _ = writeln!(err, "error: cannot create {}: {e}", parent.display());
                return EXIT_USAGE;
            }
        }
    }
    let seed_list: Vec<u64> = (0..n_seeds as u64).collect();
    let rows = match run_benchmark(&cfg.train_config(LossKind::Baseline), &cfg.scene_spec(), &seed_list) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_CONTRACT;
        }
    };
    if let Err(e) = write_benchmark_csv(&csv_path, &rows) {
        let _ = writeln!(err, "error: {e}");
        return EXIT_USAGE;
    }
    for r in &rows {
        let _ = writeln!(
            out,
            "seed {} {}: ap@0.7 {:.6} ap@0.5 {:.6} aos@0.7 {:.6} pearson_r {:.6}",
            r.seed, r.loss_kind, r.ap_07, r.ap_05, r.aos_07, r.pearson_r
        );
    }
    for kind in [LossKind::Baseline, LossKind::Harmonic] {
        let of_kind: Vec<_> = rows.iter().filter(|r| r.loss_kind == kind).collect();
        let _ = writeln!(
            out,
            "median {kind}: ap@0.7 {:.6} pearson_r {:.6}",
            median(of_kind.iter().map(|r| r.ap_07).collect()),
            median(of_kind.iter().map(|r| r.pearson_r).collect()),
        );
    }
    let _ = writeln!(out, "wrote {}", csv_path.display());
    EXIT_OK
}

/// Reads one directory pair into frames. Ground-truth stems define the frame
/// set; a missing prediction file means zero detections for that frame.
fn load_kitti_frames(
    gt_dir: &Path,
    pred_dir: &Path,
    object_type: &str,
) -> Result<Vec<FrameResult>, String> {
    let mut stems: Vec<(String, PathBuf)> = Vec::new();
    let entries = std::fs::read_dir(gt_dir).map_err(|e| format!("cannot read {}: {e}", gt_dir.display()))?;
    for entry in entries {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.extension().map_or(false, |ext| ext == "txt") {
            let stem = path.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
            stems.push((stem, path));
        }
    }
    stems.sort();
    if stems.is_empty() {
        return Err(format!("no .txt label files in {}", gt_dir.display()));
    }
    let mut frames = Vec::with_capacity(stems.len());
    for (stem, gt_path) in stems {
        let text = std::fs::read_to_string(&gt_path).map_err(|e| format!("cannot read {}: {e}", gt_path.display()))?;
        let records = parse_label_file(&text).map_err(|e| format!("{}: {e}", gt_path.display()))?;
        let mut gts = Vec::new();
        for r in records.iter().filter(|r| !r.is_dont_care() && r.object_type == object_type) {
            gts.push(kitti_to_box3d(r).map_err(|e| format!("{}: {e}", gt_path.display()))?);
        }
        let pred_path = pred_dir.join(format!("{stem}.txt"));
        let mut dets = Vec::new();
        if pred_path.exists() {
            let text = std::fs::read_to_string(&pred_path).map_err(|e| format!("cannot read {}: {e}", pred_path.display()))?;
            let records = parse_label_file(&text).map_err(|e| format!("{}: {e}", pred_path.display()))?;
            for r in records.iter().filter(|r| !r.is_dont_care() && r.object_type == object_type) {
                dets.push(Detection {
                    box3d: kitti_to_box3d(r).map_err(|e| format!("{}: {e}", pred_path.display()))?,
                    score: r.score.unwrap_or(1.0),
                });
            }
        }
        frames.push(FrameResult { gts, dets });
    }
    Ok(frames)
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate<O: Write, E: Write>(
    gt_dir: &Path,
    pred_dir: &Path,
    thresholds: &str,
    kind: IouKind,
    object_type: &str,
    out_path: Option<PathBuf>,
    out: &mut O,
    err: &mut E,
) -> i32 {
    let thresholds: Result<Vec<f64>, _> = thresholds.split(',').map(|t| t.trim().parse::<f64>()).collect();
    let thresholds = match thresholds {
        Ok(t) if !t.is_empty() && t.iter().all(|v| (0.0..=1.0).contains(v)) => t,
        _ => {
            let _ = writeln!(err, "error: --thresholds must be comma-separated ratios in [0, 1]");
            return EXIT_USAGE;
        }
    };
    let frames = match load_kitti_frames(gt_dir, pred_dir, object_type) {
        Ok(f) => f,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let summary = match evaluate(&frames, &thresholds, kind) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let _ = write!(out, "{}", render_summary(&summary));
    if let Some(path) = out_path {
        let payload = format!("{}\n", serde_json::to_string_pretty(&summary).expect("summary serializes"));
        if let Err(e) = std::fs::write(&path, payload) {
            let _ = writeln!(err, "error: cannot write {}: {e}", path.display());
            return EXIT_USAGE;
        }
        let _ = writeln!(out, "wrote {}", path.display());
    }
    EXIT_OK
}

fn parse_box(text: &str) -> Result<Box3d, String> {
    let parts: Result<Vec<f64>, _> = text.split(',').map(|t| t.trim().parse::<f64>()).collect();
    let parts = parts.map_err(|e| format!("cannot parse box {text:?}: {e}"))?;
    if parts.len() != 7 {
        return Err(format!("expected 7 comma-separated numbers (x,y,z,l,w,h,yaw), got {}", parts.len()));
    }
    Box3d::new(parts[0], parts[1], parts[2], parts[3], parts[4], parts[5], parts[6]).map_err(|e| e.to_string())
}

fn cmd_iou<O: Write, E: Write>(box_a: &str, box_b: &str, out: &mut O, err: &mut E) -> i32 {
    let (a, b) = match (parse_box(box_a), parse_box(box_b)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let _ = writeln!(out, "bev {:.6}", bev_iou(&a, &b));
    let _ = writeln!(out, "3d {:.6}", iou_3d(&a, &b));
    EXIT_OK
}
