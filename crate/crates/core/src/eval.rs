//! Rotated-box detection evaluation: greedy NMS, detection-to-ground-truth
//! matching, average precision with 40 recall positions, average orientation
//! similarity and the confidence-IoU consistency metric.

use crate::geometry::{bev_iou, iou_3d, wrap_angle, Box3d};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("average precision is undefined without ground truths")]
    NoGroundTruth,
    #[error("correlation undefined: {0}")]
    DegenerateCorrelation(&'static str),
}

/// Which overlap measure drives matching and suppression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IouKind {
    Bev,
    ThreeD,
}

impl IouKind {
    pub fn iou(self, a: &Box3d, b: &Box3d) -> f64 {
        match self {
            IouKind::Bev => bev_iou(a, b),
            IouKind::ThreeD => iou_3d(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub box3d: Box3d,
    pub score: f64,
}

/// One frame's ground truths and scored detections.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FrameResult {
    pub gts: Vec<Box3d>,
    pub dets: Vec<Detection>,
}

/// Indices of `dets` sorted by score descending; ties keep input order.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap_or(std::cmp::Ordering::Equal));
    order
}

/// Greedy non-maximum suppression. Keeps the highest-scoring box and drops
/// anything overlapping a kept box by strictly more than `iou_thr`. Output is
/// in descending score order.
pub fn nms(dets: &[Detection], iou_thr: f64, kind: IouKind) -> Vec<Detection> {
    let order = score_order(dets);
    let mut kept: Vec<Detection> = Vec::new();
    for idx in order {
        let cand = dets[idx];
        if kept.iter().all(|k| kind.iou(&k.box3d, &cand.box3d) <= iou_thr) {
            kept.push(cand);
        }
    }
    kept
}

/// Outcome for a single detection, in input order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetOutcome {
    Tp { gt: usize, iou: f64, dyaw: f64 },
    Fp,
}

#[derive(Debug, Clone)]
pub struct MatchResult {
    pub outcomes: Vec<DetOutcome>,
    pub gt_matched: Vec<bool>,
}

/// Greedy matching in descending score order. A detection is a true positive
/// iff its best-overlapping unmatched ground truth reaches `iou_thr`; each
/// ground truth matches at most one detection. Candidates must overlap
/// (IoU > 0), so `iou_thr = 0` means "any overlap".
pub fn match_frame(frame: &FrameResult, iou_thr: f64, kind: IouKind) -> MatchResult {
    let mut outcomes = vec![DetOutcome::Fp; frame.dets.len()];
    let mut gt_matched = vec![false; frame.gts.len()];
    for det_idx in score_order(&frame.dets) {
        let det = &frame.dets[det_idx];
        let mut best: Option<(usize, f64)> = None;
        for (gt_idx, gt) in frame.gts.iter().enumerate() {
            if gt_matched[gt_idx] {
                continue;
            }
            let iou = kind.iou(&det.box3d, gt);
            if iou > 0.0 {
                let better = match best {
                    None => true,
                    Some((_, best_iou)) => iou > best_iou,
                };
                if better {
                    best = Some((gt_idx, iou));
                }
            }
        }
        if let Some((gt_idx, iou)) = best {
            if iou >= iou_thr {
                gt_matched[gt_idx] = true;
                let dyaw = wrap_angle(det.box3d.yaw - frame.gts[gt_idx].yaw).unwrap_or(0.0);
                outcomes[det_idx] = DetOutcome::Tp { gt: gt_idx, iou, dyaw };
            }
        }
    }
    MatchResult { outcomes, gt_matched }
}

/// Pooled sweep events: `(score, tp, orientation_similarity)`, globally
/// sorted by score descending with stable frame-then-input tie order.
fn pooled_events(frames: &[FrameResult], iou_thr: f64, kind: IouKind) -> (Vec<(f64, bool, f64)>, usize) {
    let mut events: Vec<(f64, bool, f64)> = Vec::new();
    let mut total_gts = 0;
    for frame in frames {
        total_gts += frame.gts.len();
        let m = match_frame(frame, iou_thr, kind);
        for (det, outcome) in frame.dets.iter().zip(&m.outcomes) {
            match outcome {
                DetOutcome::Tp { dyaw, .. } => {
                    events.push((det.score, true, 0.5 * (1.0 + dyaw.cos())));
                }
                DetOutcome::Fp => events.push((det.score, false, 0.0)),
            }
        }
    }
    events.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    (events, total_gts)
}

/// Shared 40-recall-position sweep. `numer` accumulates 1 per TP for AP or
/// the orientation similarity per TP for AOS; the denominator is always the
/// number of detections seen so far.
fn forty_point_average(events: &[(f64, bool, f64)], total_gts: usize, orientation: bool) -> f64 {
    let mut curve: Vec<(f64, f64)> = Vec::new(); // (recall, precision-like)
    let mut tp = 0usize;
    let mut numer = 0.0f64;
    for (i, &(_, is_tp, sim)) in events.iter().enumerate() {
        if is_tp {
            tp += 1;
            numer += if orientation { sim } else { 1.0 };
        }
        let recall = tp as f64 / total_gts as f64;
        let prec = numer / (i + 1) as f64;
        curve.push((recall, prec));
    }
    let mut acc = 0.0;
    for k in 1..=40 {
        let r = k as f64 / 40.0;
        let best = curve
            .iter()
            .filter(|(recall, _)| *recall >= r)
            .map(|(_, p)| *p)
            .fold(f64::NEG_INFINITY, f64::max);
        if best.is_finite() {
            acc += best;
        }
    }
    acc / 40.0
}

/// Average precision interpolated at the 40 recall positions 1/40 .. 40/40.
pub fn ap40(frames: &[FrameResult], iou_thr: f64, kind: IouKind) -> Result<f64, EvalError> {
    let (events, total_gts) = pooled_events(frames, iou_thr, kind);
    if total_gts == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    Ok(forty_point_average(&events, total_gts, false))
}

/// Average orientation similarity: the AP sweep with each true positive
/// contributing `(1 + cos(dyaw)) / 2` to the precision numerator.
pub fn aos40(frames: &[FrameResult], iou_thr: f64, kind: IouKind) -> Result<f64, EvalError> {
    let (events, total_gts) = pooled_events(frames, iou_thr, kind);
    if total_gts == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    Ok(forty_point_average(&events, total_gts, true))
}

/// Pearson correlation between detection score and matched IoU over all true
/// positives, matched at any positive overlap.
pub fn confidence_iou_correlation(frames: &[FrameResult], kind: IouKind) -> Result<f64, EvalError> {
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for frame in frames {
        let m = match_frame(frame, 0.0, kind);
        for (det, outcome) in frame.dets.iter().zip(&m.outcomes) {
            if let DetOutcome::Tp { iou, .. } = outcome {
                pairs.push((det.score, *iou));
            }
        }
    }
    pearson(&pairs)
}

/// Pearson correlation coefficient of `(x, y)` pairs.
pub fn pearson(pairs: &[(f64, f64)]) -> Result<f64, EvalError> {
    let n = pairs.len();
    if n < 2 {
        return Err(EvalError::DegenerateCorrelation("fewer than two matched detections"));
    }
    let nf = n as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(EvalError::DegenerateCorrelation("zero variance in scores or IoUs"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub iou_thr: f64,
    pub ap: f64,
    pub aos: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Evaluation summary over a frame set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub iou_kind: IouKind,
    pub per_threshold: Vec<ThresholdMetrics>,
    /// `None` when the matched population is degenerate.
    pub pearson_r: Option<f64>,
    pub frames: usize,
    pub total_gts: usize,
    pub total_dets: usize,
}

/// Runs AP40, AOS40 and counts at every threshold plus the confidence-IoU
/// correlation.
pub fn evaluate(frames: &[FrameResult], thresholds: &[f64], kind: IouKind) -> Result<EvalSummary, EvalError> {
    let mut per_threshold = Vec::with_capacity(thresholds.len());
    for &thr in thresholds {
        let ap = ap40(frames, thr, kind)?;
        let aos = aos40(frames, thr, kind)?;
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for frame in frames {
            let m = match_frame(frame, thr, kind);
            tp += m.outcomes.iter().filter(|o| matches!(o, DetOutcome::Tp { .. })).count();
            fp += m.outcomes.iter().filter(|o| matches!(o, DetOutcome::Fp)).count();
            fn_ += m.gt_matched.iter().filter(|&&matched| !matched).count();
        }
        per_threshold.push(ThresholdMetrics { iou_thr: thr, ap, aos, tp, fp, fn_ });
    }
    Ok(EvalSummary {
        iou_kind: kind,
        per_threshold,
        pearson_r: confidence_iou_correlation(frames, kind).ok(),
        frames: frames.len(),
        total_gts: frames.iter().map(|f| f.gts.len()).sum(),
        total_dets: frames.iter().map(|f| f.dets.len()).sum(),
    })
}

/// Renders a summary as an aligned text table.
pub fn render_summary(summary: &EvalSummary) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "frames {}  gts {}  dets {}  iou-kind {}\n",
        summary.frames,
        summary.total_gts,
        summary.total_dets,
        match summary.iou_kind {
            IouKind::Bev => "bev",
            IouKind::ThreeD => "3d",
        }
    ));
    out.push_str(&format!("{:>8} {:>10} {:>10} {:>6} {:>6} {:>6}\n", "iou_thr", "ap40", "aos40", "tp", "fp", "fn"));
    for t in &summary.per_threshold {
        out.push_str(&format!(
            "{:>8.2} {:>10.6} {:>10.6} {:>6} {:>6} {:>6}\n",
            t.iou_thr, t.ap, t.aos, t.tp, t.fp, t.fn_
        ));
    }
    match summary.pearson_r {
        Some(r) => out.push_str(&format!("pearson_r {:.6}\n", r)),
        None => out.push_str("pearson_r undefined\n"),
    }
    out
}
