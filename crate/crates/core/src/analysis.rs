//! Finite-difference verification of the analytic gradients and grid sampling
//! of the per-sub-task gradient fields.
//!
//! The oracle is a plain central difference. Two facts about that oracle
//! shape this module:
//!
//! * its round-off floor is about `eps * |f| / h`, so comparisons below that
//!   floor carry no information and are not counted as disagreements;
//! * it is only valid where the stencil stays inside a smooth region, so the
//!   sample generator keeps probabilities away from the log singularities and
//!   residuals away from the SmoothL1 branch points.

use crate::geometry::BoxDelta;
use crate::losses::{
    baseline_grads, baseline_loss, dir_loss_grad, focal_loss, focal_loss_grad, harmonic_grads,
    harmonic_loss, smooth_l1, smooth_l1_grad, GradRecord, HarmonicWeights, LossConfig, LossSample,
    LossTerms,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("step size {0} outside [1e-8, 1e-3]")]
    BadStep(f64),
    #[error("grid resolution must be at least 2 per axis, got {0}")]
    BadResolution(usize),
    #[error("axis range [{0}, {1}] is empty")]
    EmptyRange(f64, f64),
    #[error("grid of {got} points exceeds the cap of {cap}")]
    GridTooLarge { got: usize, cap: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Which coordinate of a [`LossSample`] a derivative is taken against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coord {
    ClsProb,
    Delta(usize),
    DirProb,
}

impl Coord {
    fn get(self, s: &LossSample) -> f64 {
        match self {
            Coord::ClsProb => s.p,
            Coord::Delta(k) => s.delta.as_array()[k],
            Coord::DirProb => s.p_dir,
        }
    }

    fn set(self, s: &LossSample, v: f64) -> LossSample {
        let mut out = *s;
        match self {
            Coord::ClsProb => out.p = v,
            Coord::Delta(k) => {
                let mut a = out.delta.as_array();
                a[k] = v;
                out.delta = BoxDelta::from_array(a);
            }
            Coord::DirProb => out.p_dir = v,
        }
        out
    }

    /// Interval on which the loss is a smooth function of this coordinate.
    fn domain(self, cfg: &LossConfig) -> (f64, f64) {
        match self {
            Coord::ClsProb => (cfg.prob_floor, 1.0),
            Coord::Delta(_) => (f64::NEG_INFINITY, f64::INFINITY),
            Coord::DirProb => (cfg.prob_floor, 1.0 - cfg.prob_floor),
        }
    }
}

/// A finite-difference derivative estimate.
#[derive(Debug, Clone, Copy)]
pub struct FdEstimate {
    pub value: f64,
    /// Set when a boundary forced a one-sided stencil instead of the central one.
    pub shifted: bool,
    /// Largest |f| evaluated by the stencil; used for the round-off floor.
    pub max_abs_f: f64,
    pub step: f64,
}

impl FdEstimate {
    /// Upper bound on the round-off noise of this estimate.
    pub fn noise_floor(&self) -> f64 {
        8.0 * f64::EPSILON * self.max_abs_f / self.step
    }
}

/// Central difference `(f(x+h) - f(x-h)) / 2h` of `f` along one sample
/// coordinate. Falls back to a flagged second-order one-sided stencil when a
/// perturbation would leave the coordinate's valid domain.
pub fn finite_diff<F>(
    f: F,
    s: &LossSample,
    coord: Coord,
    h: f64,
    cfg: &LossConfig,
) -> Result<FdEstimate, AnalysisError>
where
    F: Fn(&LossSample) -> f64,
{
    if !(1e-8..=1e-3).contains(&h) {
        return Err(AnalysisError::BadStep(h));
    }
    let x = coord.get(s);
    let (lo, hi) = coord.domain(cfg);
    let eval = |v: f64| f(&coord.set(s, v));

    if x - h >= lo && x + h <= hi {
        let fp = eval(x + h);
        let fm = eval(x - h);
        Ok(FdEstimate {
            value: (fp - fm) / (2.0 * h),
            shifted: false,
            max_abs_f: fp.abs().max(fm.abs()),
            step: h,
        })
    } else if x + h > hi {
        // f'(x) ~ (3 f(x) - 4 f(x-h) + f(x-2h)) / 2h
        let f0 = eval(x);
        let f1 = eval(x - h);
        let f2 = eval(x - 2.0 * h);
        Ok(FdEstimate {
            value: (3.0 * f0 - 4.0 * f1 + f2) / (2.0 * h),
            shifted: true,
            max_abs_f: f0.abs().max(f1.abs()).max(f2.abs()),
            step: h,
        })
    } else {
        let f0 = eval(x);
        let f1 = eval(x + h);
        let f2 = eval(x + 2.0 * h);
        Ok(FdEstimate {
            value: (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h),
            shifted: true,
            max_abs_f: f0.abs().max(f1.abs()).max(f2.abs()),
            step: h,
        })
    }
}

/// Absolute floor below which analytic-vs-numeric disagreement is vacuous.
pub const GRADCHECK_ABS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckFailure {
    pub sample_index: usize,
    pub loss: &'static str,
    pub partial: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub samples: usize,
    pub comparisons: usize,
    pub tol_rel: f64,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub failures: usize,
    /// Worst offenders, at most five, sorted by relative error descending.
    pub worst: Vec<GradCheckFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Draws a random sample for gradient checking.
///
/// Probabilities stay in `[1e-4, 1 - 1e-4]` and residuals are redrawn while
/// within `1e-3` of a SmoothL1 branch point: closer to a singularity or kink
/// the central-difference stencil itself stops being a valid oracle for the
/// spec'd step range.
fn draw_sample(rng: &mut ChaCha8Rng) -> LossSample {
    const PROB_GUARD: f64 = 1e-4;
    const KINK_GUARD: f64 = 1e-3;
    let p = rng.gen_range(PROB_GUARD..1.0 - PROB_GUARD);
    let p_dir = rng.gen_range(PROB_GUARD..1.0 - PROB_GUARD);
    let mut a = [0.0; 7];
    for slot in &mut a {
        *slot = loop {
            let d: f64 = rng.gen_range(-3.0..3.0);
            if d.abs() > KINK_GUARD && (d.abs() - 1.0).abs() > KINK_GUARD {
                break d;
            }
        };
    }
    LossSample::positive(p, BoxDelta::from_array(a), p_dir, rng.gen_bool(0.5)).unwrap()
}

fn coord_step(coord: Coord, s: &LossSample) -> f64 {
    match coord {
        // Keep the truncation error of the log terms under control: the
        // third derivative grows like 1/p^3, so scale h with the distance to
        // the singularity.
        Coord::ClsProb => (1e-4 * s.p).clamp(1e-8, 1e-6),
        Coord::DirProb => (1e-4 * s.p_dir.min(1.0 - s.p_dir)).clamp(1e-8, 1e-6),
        // SmoothL1 is piecewise polynomial: away from kinks the central
        // difference is exact up to round-off, so a larger step only helps.
        Coord::Delta(_) => 1e-4,
    }
}

const ALL_COORDS: [Coord; 9] = [
    Coord::ClsProb,
    Coord::Delta(0),
    Coord::Delta(1),
    Coord::Delta(2),
    Coord::Delta(3),
    Coord::Delta(4),
    Coord::Delta(5),
    Coord::Delta(6),
    Coord::DirProb,
];

fn analytic_partial(g: &GradRecord, coord: Coord) -> f64 {
    match coord {
        Coord::ClsProb => g.d_p,
        Coord::Delta(k) => g.d_delta[k],
        Coord::DirProb => g.d_pdir,
    }
}

fn coord_name(coord: Coord) -> String {
    match coord {
        Coord::ClsProb => "d_p".into(),
        Coord::Delta(k) => format!("d_delta[{k}]"),
        Coord::DirProb => "d_pdir".into(),
    }
}

/// Compares every partial of [`baseline_grads`] and [`harmonic_grads`] on `n`
/// random samples against the central-difference oracle. Deterministic given
/// the seed.
pub fn gradcheck(n: usize, tol_rel: f64, seed: u64, cfg: &LossConfig) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        samples: n,
        comparisons: 0,
        tol_rel,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        failures: 0,
        worst: Vec::new(),
    };

    let kinds: [(&'static str, fn(&LossSample, &LossConfig) -> f64, fn(&LossSample, &LossConfig) -> GradRecord); 2] = [
        ("baseline", |s, c| baseline_loss(s, c).1, baseline_grads),
        ("harmonic", |s, c| harmonic_loss(s, c).2, harmonic_grads),
    ];

    for i in 0..n {
        let s = draw_sample(&mut rng);
        for (name, loss_fn, grad_fn) in kinds {
            let g = grad_fn(&s, cfg);
            for coord in ALL_COORDS {
                let h = coord_step(coord, &s);
                let fd = finite_diff(|x| loss_fn(x, cfg), &s, coord, h, cfg)
                    .expect("step schedule stays in range");
                let a = analytic_partial(&g, coord);
                let abs_err = (a - fd.value).abs();
                let scale = a.abs().max(fd.value.abs());
                let rel_err = if scale > 0.0 { abs_err / scale } else { 0.0 };
                report.comparisons += 1;
                report.max_abs_err = report.max_abs_err.max(abs_err);
                let within_noise = abs_err <= GRADCHECK_ABS_TOL.max(fd.noise_floor());
                if !within_noise {
                    report.max_rel_err = report.max_rel_err.max(rel_err);
                }
                if !within_noise && rel_err > tol_rel {
                    report.failures += 1;
                    report.worst.push(GradCheckFailure {
                        sample_index: i,
                        loss: name,
                        partial: coord_name(coord),
                        analytic: a,
                        numeric: fd.value,
                        rel_err,
                    });
                }
            }
        }
    }
    report.worst.sort_by(|a, b| b.rel_err.total_cmp(&a.rel_err));
    report.worst.truncate(5);
    report
}

/// Sub-task whose partial a gradient field samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartialKind {
    Cls,
    Reg,
    Dir,
}

pub use crate::losses::LossKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisRange {
    pub lo: f64,
    pub hi: f64,
}

impl AxisRange {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn point(&self, i: usize, n: usize) -> f64 {
        if i + 1 == n {
            self.hi
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (n - 1) as f64
        }
    }
}

/// Grid specification for one gradient field.
///
/// Axis meaning depends on the partial: for `Cls` the axes are
/// `(p, l_reg, l_dir)`, for `Reg` they are `(delta, l_cls, l_dir)` and for
/// `Dir` they are `(p_dir, l_cls, l_reg)`. The injected losses enter the
/// weight factors directly instead of being derived from a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradFieldSpec {
    pub partial: PartialKind,
    pub loss: LossKind,
    pub axes: [AxisRange; 3],
    /// Points per axis.
    pub resolution: usize,
    /// Direction label used when `partial == Dir`.
    pub dir_gt: bool,
}

pub const GRID_POINT_CAP: usize = 2_000_000;

impl GradFieldSpec {
    /// Default ranges: probabilities over `[0.01, 1]`, injected losses over
    /// `[0, 4]`, residuals over `[0, 3]`, 22 points per axis (about ten
    /// thousand grid points).
    pub fn default_for(partial: PartialKind, loss: LossKind) -> Self {
        let own_axis = match partial {
            PartialKind::Cls | PartialKind::Dir => AxisRange::new(0.01, 1.0),
            PartialKind::Reg => AxisRange::new(0.0, 3.0),
        };
        Self {
            partial,
            loss,
            axes: [own_axis, AxisRange::new(0.0, 4.0), AxisRange::new(0.0, 4.0)],
            resolution: 22,
            dir_gt: true,
        }
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        if self.resolution < 2 {
            return Err(AnalysisError::BadResolution(self.resolution));
        }
        for ax in &self.axes {
            if !(ax.lo < ax.hi) {
                return Err(AnalysisError::EmptyRange(ax.lo, ax.hi));
            }
        }
        let total = self.resolution.pow(3);
        if total > GRID_POINT_CAP {
            return Err(AnalysisError::GridTooLarge { got: total, cap: GRID_POINT_CAP });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradFieldSample {
    pub coord: [f64; 3],
    pub grad: f64,
}

/// The partial at one grid point of the selected field.
pub fn field_grad(spec: &GradFieldSpec, coord: [f64; 3], cfg: &LossConfig) -> f64 {
    match (spec.partial, spec.loss) {
        (PartialKind::Cls, LossKind::Baseline) => focal_loss_grad(coord[0], cfg),
        (PartialKind::Cls, LossKind::Harmonic) => {
            let (p, l_reg, l_dir) = (coord[0], coord[1], coord[2]);
            let terms = LossTerms { l_cls: focal_loss(p, cfg), l_reg, l_dir };
            let w = HarmonicWeights::from_terms(&terms, cfg.beta_dir);
            let j = focal_loss_grad(p, cfg);
            w.w_cls * j + (l_reg - l_dir / cfg.beta_dir) * (-w.beta_c * j)
        }
        (PartialKind::Reg, LossKind::Baseline) => smooth_l1_grad(coord[0], cfg),
        (PartialKind::Reg, LossKind::Harmonic) => {
            let (d, l_cls, l_dir) = (coord[0], coord[1], coord[2]);
            let terms = LossTerms { l_cls, l_reg: smooth_l1(d, cfg), l_dir };
            let w = HarmonicWeights::from_terms(&terms, cfg.beta_dir);
            let g = smooth_l1_grad(d, cfg);
            w.w_reg * g + (l_cls - l_dir / cfg.beta_dir) * (-w.beta_r * g)
        }
        (PartialKind::Dir, LossKind::Baseline) => dir_loss_grad(coord[0], spec.dir_gt, cfg),
        (PartialKind::Dir, LossKind::Harmonic) => {
            let (p_dir, l_cls, l_reg) = (coord[0], coord[1], coord[2]);
            let terms = LossTerms { l_cls, l_reg, l_dir: 0.0 };
            let w = HarmonicWeights::from_terms(&terms, cfg.beta_dir);
            w.w_dir * dir_loss_grad(p_dir, spec.dir_gt, cfg)
        }
    }
}

/// Evaluates the selected partial on the full grid, row-major over the axes
/// (first axis slowest). Output ordering is fixed regardless of execution.
pub fn sample_grad_field(spec: &GradFieldSpec, cfg: &LossConfig) -> Result<Vec<GradFieldSample>, AnalysisError> {
    spec.validate()?;
    let n = spec.resolution;
    let mut out = Vec::with_capacity(n * n * n);
    for i0 in 0..n {
        let a0 = spec.axes[0].point(i0, n);
        for i1 in 0..n {
            let a1 = spec.axes[1].point(i1, n);
            for i2 in 0..n {
                let a2 = spec.axes[2].point(i2, n);
                let coord = [a0, a1, a2];
                out.push(GradFieldSample { coord, grad: field_grad(spec, coord, cfg) });
            }
        }
    }
    Ok(out)
}

/// Grid points where the sampled partial is within `tol_abs` of zero.
pub fn find_stationary_points(field: &[GradFieldSample], tol_abs: f64) -> Vec<[f64; 3]> {
    field.iter().filter(|s| s.grad.abs() < tol_abs).map(|s| s.coord).collect()
}

/// Writes a field as CSV (`axis1,axis2,axis3,grad`) plus a JSON sidecar
/// carrying the spec, at `<path>` and `<path>.spec.json`.
pub fn write_grad_field_csv(
    path: &std::path::Path,
    spec: &GradFieldSpec,
    field: &[GradFieldSample],
) -> Result<(), AnalysisError> {
    let mut out = String::with_capacity(field.len() * 32);
    out.push_str("axis1,axis2,axis3,grad\n");
    for s in field {
        out.push_str(&format!("{},{},{},{}\n", s.coord[0], s.coord[1], s.coord[2], s.grad));
    }
    std::fs::write(path, out)?;
    let sidecar = path.with_file_name(format!(
        "{}.spec.json",
        path.file_name().map(|s| s.to_string_lossy()).unwrap_or_default()
    ));
    let mut f = std::fs::File::create(sidecar)?;
    writeln!(f, "{}", serde_json::to_string_pretty(spec).expect("spec serializes"))?;
    Ok(())
}
