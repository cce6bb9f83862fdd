//! The composite detection loss, its harmonically weighted variant and exact
//! analytic gradients for both.
//!
//! A positive training sample carries a classification probability, seven
//! regression residuals and a direction probability. The baseline total is
//! the plain sum of a focal classification term, a SmoothL1 regression term
//! and a binary cross-entropy direction term. The harmonic total reweights
//! the three terms with factors derived from each other's losses:
//!
//! ```text
//! total = (1 + br) * l_cls + (1 + bc) * l_reg + (1 - (br + bc)/beta_dir) * l_dir
//! br = exp(-l_reg), bc = exp(-l_cls)
//! ```
//!
//! Gradients are the exact derivatives of those totals, including the
//! coupling through `br` and `bc`; `analysis::gradcheck` holds them to a
//! finite-difference oracle.

use crate::geometry::BoxDelta;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("{0} out of range: {1}")]
    OutOfRange(&'static str, f64),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
}

/// Which composite loss drives training or a gradient field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Baseline,
    Harmonic,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Baseline => "baseline",
            LossKind::Harmonic => "harmonic",
        })
    }
}

/// Branch selector for the SmoothL1 inner segment.
///
/// `Quadratic` is the standard `0.5 d^2` inner branch with a continuous first
/// derivative at `|d| = 1`. `AsPrinted` keeps the `0.5 |d|` inner branch,
/// whose derivative jumps at the branch point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothL1Form {
    Quadratic,
    AsPrinted,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossConfig {
    /// Focal loss class weight for positives.
    pub alpha: f64,
    /// Focal loss focusing exponent.
    pub gamma: f64,
    /// Direction-weight normalizer in the harmonic total.
    pub beta_dir: f64,
    pub smoothl1_form: SmoothL1Form,
    /// Probability floor applied before logarithms.
    pub prob_floor: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
            beta_dir: 2.0,
            smoothl1_form: SmoothL1Form::Quadratic,
            prob_floor: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(LossError::OutOfRange("alpha", self.alpha));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(LossError::OutOfRange("gamma", self.gamma));
        }
        if !(self.beta_dir > 0.0 && self.beta_dir.is_finite()) {
            return Err(LossError::OutOfRange("beta_dir", self.beta_dir));
        }
        if !(self.prob_floor > 0.0 && self.prob_floor <= 1e-3) {
            return Err(LossError::OutOfRange("prob_floor", self.prob_floor));
        }
        Ok(())
    }
}

/// One positive training sample's inputs to the loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSample {
    /// Classification probability in `[0, 1]`.
    pub p: f64,
    /// Class label; the composite losses are defined for positives.
    pub p_gt: bool,
    /// Regression residuals: predicted offsets minus target offsets.
    pub delta: BoxDelta,
    /// Direction probability in `[0, 1]`.
    pub p_dir: f64,
    /// Direction label.
    pub p_dir_gt: bool,
}

impl LossSample {
    pub fn positive(p: f64, delta: BoxDelta, p_dir: f64, p_dir_gt: bool) -> Result<Self, LossError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(LossError::OutOfRange("p", p));
        }
        if !(0.0..=1.0).contains(&p_dir) {
            return Err(LossError::OutOfRange("p_dir", p_dir));
        }
        if !delta.is_finite() {
            return Err(LossError::NonFinite("delta"));
        }
        Ok(Self { p, p_gt: true, delta, p_dir, p_dir_gt })
    }
}

/// The three nonnegative component losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub l_cls: f64,
    pub l_reg: f64,
    pub l_dir: f64,
}

impl LossTerms {
    pub fn sum(&self) -> f64 {
        self.l_cls + self.l_reg + self.l_dir
    }
}

/// The dynamic factors of the harmonic total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonicWeights {
    pub beta_r: f64,
    pub beta_c: f64,
    pub w_cls: f64,
    pub w_reg: f64,
    pub w_dir: f64,
}

impl HarmonicWeights {
    pub fn from_terms(terms: &LossTerms, beta_dir: f64) -> Self {
        let beta_r = (-terms.l_reg).exp();
        let beta_c = (-terms.l_cls).exp();
        Self {
            beta_r,
            beta_c,
            w_cls: 1.0 + beta_r,
            w_reg: 1.0 + beta_c,
            w_dir: 1.0 - (beta_r + beta_c) / beta_dir,
        }
    }
}

/// A scalar loss together with its partials with respect to every sample
/// coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradRecord {
    pub loss: f64,
    pub d_p: f64,
    pub d_delta: [f64; 7],
    pub d_pdir: f64,
}

/// Focal classification loss for a positive sample:
/// `-alpha (1-p)^gamma ln(p)` with `p` clamped to `[prob_floor, 1]`.
pub fn focal_loss(p: f64, cfg: &LossConfig) -> f64 {
    let p = p.clamp(cfg.prob_floor, 1.0);
    -cfg.alpha * (1.0 - p).powf(cfg.gamma) * p.ln()
}

/// Derivative of [`focal_loss`] with respect to `p` (the paper calls this
/// `J(p)` at the default `alpha`, `gamma`).
pub fn focal_loss_grad(p: f64, cfg: &LossConfig) -> f64 {
    let p = p.clamp(cfg.prob_floor, 1.0);
    let one_m = 1.0 - p;
    // gamma * (1-p)^(gamma-1) evaluated safely at gamma = 0.
    let dpow = if cfg.gamma == 0.0 { 0.0 } else { cfg.gamma * one_m.powf(cfg.gamma - 1.0) };
    -cfg.alpha * (one_m.powf(cfg.gamma) / p - dpow * p.ln())
}

/// Focal classification loss for a negative sample: the mirror of
/// [`focal_loss`] under `p -> 1-p`, `alpha -> 1-alpha`.
pub fn focal_loss_negative(p: f64, cfg: &LossConfig) -> f64 {
    let p = p.clamp(0.0, 1.0 - cfg.prob_floor);
    -(1.0 - cfg.alpha) * p.powf(cfg.gamma) * (1.0 - p).ln()
}

pub fn focal_loss_negative_grad(p: f64, cfg: &LossConfig) -> f64 {
    let p = p.clamp(0.0, 1.0 - cfg.prob_floor);
    let dpow = if cfg.gamma == 0.0 { 0.0 } else { cfg.gamma * p.powf(cfg.gamma - 1.0) };
    (1.0 - cfg.alpha) * (p.powf(cfg.gamma) / (1.0 - p) - dpow * (1.0 - p).ln())
}

/// SmoothL1 penalty of a single residual.
pub fn smooth_l1(d: f64, cfg: &LossConfig) -> f64 {
    let a = d.abs();
    if a < 1.0 {
        match cfg.smoothl1_form {
            SmoothL1Form::Quadratic => 0.5 * d * d,
            SmoothL1Form::AsPrinted => 0.5 * a,
        }
    } else {
        a - 0.5
    }
}

/// Derivative of [`smooth_l1`]; the subgradient 0 is used at `d = 0`.
pub fn smooth_l1_grad(d: f64, cfg: &LossConfig) -> f64 {
    let a = d.abs();
    if a < 1.0 {
        match cfg.smoothl1_form {
            SmoothL1Form::Quadratic => d,
            SmoothL1Form::AsPrinted => 0.5 * d.signum() * (d != 0.0) as u8 as f64,
        }
    } else {
        d.signum()
    }
}

/// Regression loss: SmoothL1 summed over the seven residual components.
pub fn reg_loss(delta: &BoxDelta, cfg: &LossConfig) -> f64 {
    delta.as_array().iter().map(|&d| smooth_l1(d, cfg)).sum()
}

pub fn reg_loss_grad(delta: &BoxDelta, cfg: &LossConfig) -> [f64; 7] {
    delta.as_array().map(|d| smooth_l1_grad(d, cfg))
}

/// Binary cross-entropy direction loss with the probability clamped to
/// `[prob_floor, 1 - prob_floor]`.
pub fn dir_loss(p_dir: f64, p_dir_gt: bool, cfg: &LossConfig) -> f64 {
    let p = p_dir.clamp(cfg.prob_floor, 1.0 - cfg.prob_floor);
    if p_dir_gt {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Derivative of [`dir_loss`] with respect to the (clamped) probability.
pub fn dir_loss_grad(p_dir: f64, p_dir_gt: bool, cfg: &LossConfig) -> f64 {
    let p = p_dir.clamp(cfg.prob_floor, 1.0 - cfg.prob_floor);
    if p_dir_gt {
        -1.0 / p
    } else {
        1.0 / (1.0 - p)
    }
}

fn component_terms(s: &LossSample, cfg: &LossConfig) -> LossTerms {
    LossTerms {
        l_cls: focal_loss(s.p, cfg),
        l_reg: reg_loss(&s.delta, cfg),
        l_dir: dir_loss(s.p_dir, s.p_dir_gt, cfg),
    }
}

/// Unit-weight composite loss: the three sub-tasks supervised independently.
pub fn baseline_loss(s: &LossSample, cfg: &LossConfig) -> (LossTerms, f64) {
    debug_assert!(s.p_gt, "composite losses are defined for positive samples");
    let terms = component_terms(s, cfg);
    let total = terms.sum();
    (terms, total)
}

/// Combines already-computed component losses into the harmonic total.
pub fn harmonic_total(terms: &LossTerms, cfg: &LossConfig) -> (HarmonicWeights, f64) {
    let w = HarmonicWeights::from_terms(terms, cfg.beta_dir);
    let total = w.w_cls * terms.l_cls + w.w_reg * terms.l_reg + w.w_dir * terms.l_dir;
    (w, total)
}

/// Harmonically weighted composite loss.
pub fn harmonic_loss(s: &LossSample, cfg: &LossConfig) -> (LossTerms, HarmonicWeights, f64) {
    debug_assert!(s.p_gt, "composite losses are defined for positive samples");
    let terms = component_terms(s, cfg);
    let (w, total) = harmonic_total(&terms, cfg);
    (terms, w, total)
}

/// Exact partials of [`baseline_loss`]; each sub-task's partial depends only
/// on that sub-task's own inputs.
pub fn baseline_grads(s: &LossSample, cfg: &LossConfig) -> GradRecord {
    let (_, total) = baseline_loss(s, cfg);
    GradRecord {
        loss: total,
        d_p: focal_loss_grad(s.p, cfg),
        d_delta: reg_loss_grad(&s.delta, cfg),
        d_pdir: dir_loss_grad(s.p_dir, s.p_dir_gt, cfg),
    }
}

/// Exact partials of [`harmonic_loss`], including the coupling through the
/// dynamic factors (`d beta / d x = -beta * d l / d x`).
pub fn harmonic_grads(s: &LossSample, cfg: &LossConfig) -> GradRecord {
    let (terms, w, total) = harmonic_loss(s, cfg);

    let dl_cls = focal_loss_grad(s.p, cfg);
    let dl_reg = reg_loss_grad(&s.delta, cfg);
    let dl_dir = dir_loss_grad(s.p_dir, s.p_dir_gt, cfg);

    let d_p = w.w_cls * dl_cls + (terms.l_reg - terms.l_dir / cfg.beta_dir) * (-w.beta_c * dl_cls);
    let reg_coupling = terms.l_cls - terms.l_dir / cfg.beta_dir;
    let d_delta = dl_reg.map(|g| w.w_reg * g + reg_coupling * (-w.beta_r * g));
    let d_pdir = w.w_dir * dl_dir;

    GradRecord { loss: total, d_p, d_delta, d_pdir }
}
