//! Seeded synthetic BEV scenes and anchor target assignment.
//!
//! A scene is a rectangle of ground plane with a fixed anchor grid (two yaws
//! per location) and a handful of non-overlapping car-like objects. Each
//! anchor carries a feature vector that embeds its own regression answer plus
//! noise; representation learning is deliberately not part of the exercise,
//! so training stays minutes-scale and fully deterministic.
//!
//! Feature layout, `FEATURE_DIM = 12` channels per anchor:
//!
//! | channels | content                                                        |
//! |----------|----------------------------------------------------------------|
//! | 0..7     | encoded offsets to the best-matching object, noise added       |
//! | 7        | objectness: +1 near objects, -1 elsewhere, noise added         |
//! | 8        | direction: +1/-1 for the object's heading bit, noise added     |
//! | 9        | difficulty of the matched object (noise scale multiplier)      |
//! | 10..12   | pure-noise distractors                                         |
//!
//! Per-object noise scales by a difficulty multiplier drawn from
//! [`DIFFICULTY_BAND`], the stand-in for how sparsely an object was scanned.
//! Every anchor's difficulty channel draws from the same marginal
//! distribution, so it predicts localization quality without separating
//! objects from background. Clutter anchors get noise on every channel.

use crate::geometry::{bev_iou, encode_box, wrap_angle, Box3d, EncodingMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

pub const FEATURE_DIM: usize = 12;
pub const CH_OBJECTNESS: usize = 7;
pub const CH_DIRECTION: usize = 8;
pub const CH_DIFFICULTY: usize = 9;

/// Range of the per-object noise multiplier.
pub const DIFFICULTY_BAND: (f64, f64) = (0.25, 12.0);

/// Fraction of objects drawn from the degraded end of the band.
pub const HARD_FRACTION: f64 = 0.25;

/// Bimodal difficulty draw: most objects are well measured, a minority is
/// severely degraded (sparsely scanned, in effect).
fn draw_difficulty(rng: &mut ChaCha8Rng) -> f64 {
    let hard = rng.gen_bool(HARD_FRACTION);
    let v: f64 = rng.gen_range(0.0..1.0);
    if hard {
        0.5 * DIFFICULTY_BAND.1 + 0.5 * DIFFICULTY_BAND.1 * v
    } else {
        DIFFICULTY_BAND.0 + v
    }
}

/// Anchor grid yaws.
pub const ANCHOR_YAWS: [f64; 2] = [0.0, FRAC_PI_2];

/// Anchor dimensions (length, width, height).
pub const ANCHOR_DIMS: (f64, f64, f64) = (4.15, 1.8, 1.6);

/// Objectness-channel noise ratio relative to the base sigma. Large enough
/// that classification never becomes perfectly separable at nonzero noise,
/// which keeps confidences off the saturated ends like a real detector.
const OBJECTNESS_AMBIGUITY: f64 = 8.0;

/// Overlap threshold above which feature vectors carry the object signal.
const SIGNAL_IOU: f64 = 0.45;

/// Maximum placement retries per object before giving up on it.
const PLACEMENT_RETRIES: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub extent_x: f64,
    pub extent_y: f64,
    /// Spacing of the anchor grid in meters.
    pub anchor_stride: f64,
    pub objects_min: usize,
    pub objects_max: usize,
    pub l_min: f64,
    pub l_max: f64,
    pub w_min: f64,
    pub w_max: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub yaw_min: f64,
    pub yaw_max: f64,
    /// Base feature noise scale; zero makes features exact.
    pub noise_sigma: f64,
    /// Fraction of background anchors replaced by pure-noise clutter.
    pub clutter_fraction: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            extent_x: 40.0,
            extent_y: 40.0,
            anchor_stride: 4.0,
            objects_min: 2,
            objects_max: 5,
            l_min: 3.5,
            l_max: 4.8,
            w_min: 1.6,
            w_max: 2.0,
            h_min: 1.4,
            h_max: 1.8,
            yaw_min: -PI,
            yaw_max: PI,
            noise_sigma: 0.05,
            clutter_fraction: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub gts: Vec<Box3d>,
    /// Per-object noise multiplier, aligned with `gts`.
    pub difficulty: Vec<f64>,
    pub anchors: Vec<Box3d>,
    /// One `FEATURE_DIM`-length vector per anchor.
    pub features: Vec<Vec<f64>>,
    /// Set when object placement gave up before reaching the drawn count.
    pub truncated: bool,
}

/// Label of one anchor after target assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    /// Index of the matched ground truth.
    Positive(usize),
    Negative,
    Ignored,
}

/// The fixed anchor grid for a spec: two yaws per location, constant
/// car-like dimensions, centered on the extent.
pub fn anchor_grid(spec: &SceneSpec) -> Vec<Box3d> {
    let (al, aw, ah) = ANCHOR_DIMS;
    let nx = (spec.extent_x / spec.anchor_stride).floor().max(1.0) as usize;
    let ny = (spec.extent_y / spec.anchor_stride).floor().max(1.0) as usize;
    let mut anchors = Vec::with_capacity(nx * ny * 2);
    for iy in 0..ny {
        for ix in 0..nx {
            let x = (ix as f64 + 0.5) * spec.anchor_stride - 0.5 * spec.extent_x;
            let y = (iy as f64 + 0.5) * spec.anchor_stride - 0.5 * spec.extent_y;
            for yaw in ANCHOR_YAWS {
                anchors.push(Box3d::new(x, y, 0.0, al, aw, ah, yaw).expect("valid anchor"));
            }
        }
    }
    anchors
}

fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Best-overlapping ground truth per anchor: `(gt index, iou)`, ties broken
/// toward the lower gt index.
fn best_gt_per_anchor(gts: &[Box3d], anchors: &[Box3d]) -> Vec<Option<(usize, f64)>> {
    anchors
        .iter()
        .map(|a| {
            let mut best: Option<(usize, f64)> = None;
            for (gi, gt) in gts.iter().enumerate() {
                let iou = bev_iou(a, gt);
                if iou > 0.0 && best.map_or(true, |(_, b)| iou > b) {
                    best = Some((gi, iou));
                }
            }
            best
        })
        .collect()
}

/// Best anchor per ground truth, ties broken toward the lower anchor index.
fn best_anchor_per_gt(gts: &[Box3d], anchors: &[Box3d]) -> Vec<Option<(usize, f64)>> {
    gts.iter()
        .map(|gt| {
            let mut best: Option<(usize, f64)> = None;
            for (ai, a) in anchors.iter().enumerate() {
                let iou = bev_iou(a, gt);
                if iou > 0.0 && best.map_or(true, |(_, b)| iou > b) {
                    best = Some((ai, iou));
                }
            }
            best
        })
        .collect()
}

fn raw_assign(gts: &[Box3d], anchors: &[Box3d], pos_iou: f64, neg_iou: f64) -> Vec<AnchorLabel> {
    let best = best_gt_per_anchor(gts, anchors);
    let mut labels: Vec<AnchorLabel> = best
        .iter()
        .map(|b| match b {
            Some((gi, iou)) if *iou >= pos_iou => AnchorLabel::Positive(*gi),
            Some((_, iou)) if *iou >= neg_iou => AnchorLabel::Ignored,
            _ => AnchorLabel::Negative,
        })
        .collect();
    // Every ground truth keeps its best anchor, even below the threshold. An
    // anchor already held by another ground truth with strictly higher
    // overlap stays put.
    for (gi, slot) in best_anchor_per_gt(gts, anchors).iter().enumerate() {
        if let Some((ai, iou)) = slot {
            let keep_existing = match labels[*ai] {
                AnchorLabel::Positive(prev) => prev != gi && bev_iou(&anchors[*ai], &gts[prev]) > *iou,
                _ => false,
            };
            if !keep_existing {
                labels[*ai] = AnchorLabel::Positive(gi);
            }
        }
    }
    labels
}

/// Assigns each anchor a positive / negative / ignored label against the
/// scene's ground truths. An anchor is positive when its best BEV overlap
/// reaches `pos_iou`, negative below `neg_iou`, ignored in between; the best
/// anchor of every ground truth is forced positive.
pub fn assign_targets(scene: &Scene, pos_iou: f64, neg_iou: f64) -> Vec<AnchorLabel> {
    raw_assign(&scene.gts, &scene.anchors, pos_iou, neg_iou)
}

/// Ground truth with its heading folded into a half turn of the anchor, so
/// the sine-encoded offset decodes back on the principal branch. The lost
/// half-turn is carried by the direction bit.
pub fn reduce_gt_toward_anchor(gt: &Box3d, anchor: &Box3d) -> Box3d {
    let mut dyaw = wrap_angle(gt.yaw - anchor.yaw).expect("finite yaw");
    if dyaw >= FRAC_PI_2 {
        dyaw -= PI;
    } else if dyaw < -FRAC_PI_2 {
        dyaw += PI;
    }
    let mut out = *gt;
    out.yaw = wrap_angle(anchor.yaw + dyaw).expect("finite yaw");
    out
}

/// Direction label: true iff the wrapped heading lies in `[0, pi)`.
pub fn direction_bit(yaw: f64) -> bool {
    let w = wrap_angle(yaw).expect("finite yaw");
    (0.0..PI).contains(&w)
}

/// Regression target and direction label for a positive anchor.
pub fn anchor_target(gt: &Box3d, anchor: &Box3d) -> (crate::geometry::BoxDelta, bool) {
    let reduced = reduce_gt_toward_anchor(gt, anchor);
    (encode_box(&reduced, anchor, EncodingMode::StandardLog), direction_bit(gt.yaw))
}

/// Generates a deterministic scene for `(spec.seed, index)`.
pub fn gen_scene(spec: &SceneSpec, index: u64) -> Scene {
    let mut rng = scene_rng(spec.seed, index);
    let anchors = anchor_grid(spec);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    // Object placement with bounded retries; overlaps above 0.1 IoU rejected.
    let count = rng.gen_range(spec.objects_min..=spec.objects_max);
    let mut gts: Vec<Box3d> = Vec::with_capacity(count);
    let mut difficulty: Vec<f64> = Vec::with_capacity(count);
    let mut truncated = false;
    let margin = 0.5 * spec.l_max;
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..PLACEMENT_RETRIES {
            let cand = Box3d::new(
                rng.gen_range(-0.5 * spec.extent_x + margin..0.5 * spec.extent_x - margin),
                rng.gen_range(-0.5 * spec.extent_y + margin..0.5 * spec.extent_y - margin),
                0.0,
                rng.gen_range(spec.l_min..=spec.l_max),
                rng.gen_range(spec.w_min..=spec.w_max),
                rng.gen_range(spec.h_min..=spec.h_max),
                rng.gen_range(spec.yaw_min..spec.yaw_max),
            )
            .expect("valid object");
            if gts.iter().all(|g| bev_iou(g, &cand) <= 0.1) {
                gts.push(cand);
                difficulty.push(draw_difficulty(&mut rng));
                placed = true;
                break;
            }
        }
        if !placed {
            truncated = true;
            break;
        }
    }

    // Anchors close enough to an object carry its (noisy) answer; a fraction
    // of the rest is clutter.
    let signal = raw_assign(&gts, &anchors, SIGNAL_IOU, SIGNAL_IOU);
    let sigma = spec.noise_sigma;
    let mut features = Vec::with_capacity(anchors.len());
    for (ai, anchor) in anchors.iter().enumerate() {
        let mut f = vec![0.0; FEATURE_DIM];
        match signal[ai] {
            AnchorLabel::Positive(gi) => {
                let u = difficulty[gi];
                let (target, bit) = anchor_target(&gts[gi], anchor);
                for (k, t) in target.as_array().iter().enumerate() {
                    f[k] = t + sigma * u * normal.sample(&mut rng);
                }
                f[CH_OBJECTNESS] = 1.0 + sigma * OBJECTNESS_AMBIGUITY * normal.sample(&mut rng);
                f[CH_DIRECTION] = if bit { 1.0 } else { -1.0 } + sigma * 0.3 * normal.sample(&mut rng);
                f[CH_DIFFICULTY] = u + sigma * 0.1 * normal.sample(&mut rng);
            }
            _ if rng.gen_bool(spec.clutter_fraction) => {
                for slot in f.iter_mut().take(CH_DIFFICULTY) {
                    *slot = normal.sample(&mut rng);
                }
                f[CH_DIFFICULTY] = draw_difficulty(&mut rng);
            }
            _ => {
                // Background target and direction channels share the positive
                // marginals, so objectness is the only class-separating cue
                // and the score cannot read geometry.
                for slot in f.iter_mut().take(CH_OBJECTNESS) {
                    *slot = 0.45 * normal.sample(&mut rng);
                }
                f[CH_OBJECTNESS] = -1.0 + sigma * OBJECTNESS_AMBIGUITY * normal.sample(&mut rng);
                f[CH_DIRECTION] =
                    if rng.gen_bool(0.5) { 1.0 } else { -1.0 } + sigma * 0.3 * normal.sample(&mut rng);
                f[CH_DIFFICULTY] = draw_difficulty(&mut rng);
            }
        }
        // Distractor channels never carry signal.
        f[CH_DIFFICULTY + 1] = normal.sample(&mut rng);
        f[CH_DIFFICULTY + 2] = normal.sample(&mut rng);
        features.push(f);
    }

    Scene { gts, difficulty, anchors, features, truncated }
}
