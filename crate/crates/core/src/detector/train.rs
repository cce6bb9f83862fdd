//! SGD training of the toy detector and the baseline-vs-harmonic benchmark.

use super::model::{backward_anchor, sigmoid_grad_from_value, AnchorOutput, ModelGrads, ToyModel, OUT_DIM};
use super::scene::{anchor_target, assign_targets, direction_bit, gen_scene, AnchorLabel, Scene, SceneSpec, FEATURE_DIM};
use crate::eval::{confidence_iou_correlation, nms, Detection, FrameResult, IouKind};
use crate::geometry::{decode_box, wrap_angle, Box3d, BoxDelta, EncodingMode};
use crate::losses::{
    baseline_grads, focal_loss_negative, focal_loss_negative_grad, harmonic_grads, LossConfig,
    LossKind, LossSample,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use thiserror::Error;

pub const HIDDEN_DIM: usize = 24;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Scenes per SGD step.
    pub batch_size: usize,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub pos_iou: f64,
    pub neg_iou: f64,
    /// Score filter applied at prediction time.
    pub score_thr: f64,
    /// BEV NMS threshold applied at prediction time.
    pub nms_iou: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_kind: LossKind::Baseline,
            epochs: 240,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 16,
            train_scenes: 48,
            val_scenes: 24,
            pos_iou: 0.6,
            neg_iou: 0.45,
            score_thr: 0.1,
            nms_iou: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.pos_iou > self.neg_iou) {
            return Err(TrainError::InvalidConfig(format!(
                "pos_iou {} must exceed neg_iou {}",
                self.pos_iou, self.neg_iou
            )));
        }
        for (v, name) in [
            (self.learning_rate, "learning_rate"),
            (self.pos_iou, "pos_iou"),
            (self.neg_iou, "neg_iou"),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(TrainError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.batch_size == 0 || self.train_scenes == 0 {
            return Err(TrainError::InvalidConfig("batch_size and train_scenes must be positive".into()));
        }
        Ok(())
    }
}

/// Per-epoch record of the training terms and validation metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_l_cls: f64,
    pub mean_l_reg: f64,
    pub mean_l_dir: f64,
    pub mean_total: f64,
    pub val_ap_07: f64,
    pub val_ap_05: f64,
    pub val_aos_07: f64,
    /// NaN when the matched validation population is degenerate.
    pub val_pearson_r: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub loss_kind: LossKind,
    pub epochs: Vec<EpochStats>,
}

/// All per-anchor outputs for a scene.
pub fn forward(model: &ToyModel, scene: &Scene) -> Vec<AnchorOutput> {
    scene.features.iter().map(|f| model.forward_anchor(f).0).collect()
}

/// Accumulated loss and gradient for one scene. Returns the summed loss
/// terms over positives, the positive count, and the raw (unnormalized)
/// gradient contribution.
struct SceneLoss {
    l_cls: f64,
    l_reg: f64,
    l_dir: f64,
    total: f64,
    positives: usize,
}

fn accumulate_scene(
    model: &ToyModel,
    scene: &Scene,
    labels: &[AnchorLabel],
    kind: LossKind,
    loss_cfg: &LossConfig,
    grads: Option<&mut ModelGrads>,
) -> SceneLoss {
    let mut out = SceneLoss { l_cls: 0.0, l_reg: 0.0, l_dir: 0.0, total: 0.0, positives: 0 };
    let mut grads = grads;
    for (ai, label) in labels.iter().enumerate() {
        let (pred, cache) = model.forward_anchor(&scene.features[ai]);
        let mut d_out = [0.0; OUT_DIM];
        match label {
            AnchorLabel::Positive(gi) => {
                let (target, dir_gt) = anchor_target(&scene.gts[*gi], &scene.anchors[ai]);
                let residual = BoxDelta::from_array(
                    pred.offsets
                        .as_array()
                        .iter()
                        .zip(target.as_array())
                        .map(|(p, t)| p - t)
                        .collect::<Vec<_>>()
                        .try_into()
                        .expect("seven components"),
                );
                let sample = LossSample { p: pred.p, p_gt: true, delta: residual, p_dir: pred.p_dir, p_dir_gt: dir_gt };
                let rec = match kind {
                    LossKind::Baseline => baseline_grads(&sample, loss_cfg),
                    LossKind::Harmonic => harmonic_grads(&sample, loss_cfg),
                };
                out.positives += 1;
                out.total += rec.loss;
                let terms = match kind {
                    LossKind::Baseline => crate::losses::baseline_loss(&sample, loss_cfg).0,
                    LossKind::Harmonic => crate::losses::harmonic_loss(&sample, loss_cfg).0,
                };
                out.l_cls += terms.l_cls;
                out.l_reg += terms.l_reg;
                out.l_dir += terms.l_dir;
                // The loss partials are taken at the floored probability, so
                // the logistic chain factor uses it too; otherwise a head
                // saturated past the floor stops receiving any pull back.
                let pc = pred.p.clamp(loss_cfg.prob_floor, 1.0 - loss_cfg.prob_floor);
                let pdc = pred.p_dir.clamp(loss_cfg.prob_floor, 1.0 - loss_cfg.prob_floor);
                d_out[0] = rec.d_p * sigmoid_grad_from_value(pc);
                d_out[1..8].copy_from_slice(&rec.d_delta);
                d_out[8] = rec.d_pdir * sigmoid_grad_from_value(pdc);
            }
            AnchorLabel::Negative => {
                out.total += focal_loss_negative(pred.p, loss_cfg);
                let pc = pred.p.clamp(loss_cfg.prob_floor, 1.0 - loss_cfg.prob_floor);
                d_out[0] = focal_loss_negative_grad(pred.p, loss_cfg) * sigmoid_grad_from_value(pc);
            }
            AnchorLabel::Ignored => continue,
        }
        if let Some(g) = grads.as_deref_mut() {
            backward_anchor(model, &scene.features[ai], &cache, &d_out, g);
        }
    }
    out
}

/// Total batch loss normalized by the positive count, as used by the SGD
/// step. Exposed for the end-to-end gradient check.
pub fn batch_loss(
    model: &ToyModel,
    scenes: &[&Scene],
    labels: &[Vec<AnchorLabel>],
    kind: LossKind,
    loss_cfg: &LossConfig,
) -> f64 {
    let mut total = 0.0;
    let mut positives = 0usize;
    for (scene, lab) in scenes.iter().zip(labels) {
        let s = accumulate_scene(model, scene, lab, kind, loss_cfg, None);
        total += s.total;
        positives += s.positives;
    }
    total / positives.max(1) as f64
}

/// Gradient of [`batch_loss`] with respect to every model parameter.
pub fn batch_grads(
    model: &ToyModel,
    scenes: &[&Scene],
    labels: &[Vec<AnchorLabel>],
    kind: LossKind,
    loss_cfg: &LossConfig,
) -> (f64, ModelGrads) {
    let mut grads = ModelGrads::zeros_like(model);
    let mut total = 0.0;
    let mut positives = 0usize;
    for (scene, lab) in scenes.iter().zip(labels) {
        let s = accumulate_scene(model, scene, lab, kind, loss_cfg, Some(&mut grads));
        total += s.total;
        positives += s.positives;
    }
    let norm = positives.max(1) as f64;
    grads.scale(1.0 / norm);
    (total / norm, grads)
}

/// Decodes one anchor's outputs into a scored box. Size offsets are clamped
/// before exponentiation so early-training outputs cannot overflow.
fn decode_prediction(pred: &AnchorOutput, anchor: &Box3d) -> Option<Detection> {
    let mut a = pred.offsets.as_array();
    for v in a.iter_mut().take(3) {
        *v = v.clamp(-10.0, 10.0);
    }
    for v in a.iter_mut().skip(3).take(3) {
        *v = v.clamp(-4.0, 4.0);
    }
    let delta = BoxDelta::from_array(a);
    let mut box3d = decode_box(&delta, anchor, EncodingMode::StandardLog).ok()?;
    // Flip by half a turn when the direction head disagrees with the decoded
    // principal branch.
    let bit = pred.p_dir >= 0.5;
    if direction_bit(box3d.yaw) != bit {
        box3d.yaw = wrap_angle(box3d.yaw + PI).expect("finite yaw");
    }
    Some(Detection { box3d, score: pred.p })
}

/// Decode, direction-fix, score-filter and suppress a full scene of outputs.
/// This path never sees the loss kind a model was trained with.
pub fn predict_outputs(outputs: &[AnchorOutput], anchors: &[Box3d], score_thr: f64, nms_iou: f64) -> Vec<Detection> {
    let dets: Vec<Detection> = outputs
        .iter()
        .zip(anchors)
        .filter(|(o, _)| o.p >= score_thr)
        .filter_map(|(o, a)| decode_prediction(o, a))
        .collect();
    nms(&dets, nms_iou, IouKind::Bev)
}

pub fn predict(model: &ToyModel, scene: &Scene, score_thr: f64, nms_iou: f64) -> Vec<Detection> {
    predict_outputs(&forward(model, scene), &scene.anchors, score_thr, nms_iou)
}

fn val_frames(model: &ToyModel, scenes: &[Scene], cfg: &TrainConfig) -> Vec<FrameResult> {
    scenes
        .iter()
        .map(|s| FrameResult { gts: s.gts.clone(), dets: predict(model, s, cfg.score_thr, cfg.nms_iou) })
        .collect()
}

/// Trains a fresh model under the configured loss kind. Fully deterministic
/// given the seeds in `cfg` and `spec`.
pub fn train(cfg: &TrainConfig, spec: &SceneSpec) -> Result<(ToyModel, TrainHistory), TrainError> {
    cfg.validate()?;
    let loss_cfg = LossConfig::default();
    train_with_loss_config(cfg, spec, &loss_cfg)
}

pub fn train_with_loss_config(
    cfg: &TrainConfig,
    spec: &SceneSpec,
    loss_cfg: &LossConfig,
) -> Result<(ToyModel, TrainHistory), TrainError> {
    cfg.validate()?;
    let train_scenes: Vec<Scene> = (0..cfg.train_scenes).map(|i| gen_scene(spec, i as u64)).collect();
    let val_scenes: Vec<Scene> =
        (0..cfg.val_scenes).map(|i| gen_scene(spec, (cfg.train_scenes + i) as u64)).collect();
    let labels: Vec<Vec<AnchorLabel>> =
        train_scenes.iter().map(|s| assign_targets(s, cfg.pos_iou, cfg.neg_iou)).collect();

    let mut model = ToyModel::new(FEATURE_DIM, HIDDEN_DIM, cfg.seed);
    let mut velocity = ModelGrads::zeros_like(&model);
    let mut order: Vec<usize> = (0..train_scenes.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED));

    let mut history = TrainHistory { loss_kind: cfg.loss_kind, epochs: Vec::with_capacity(cfg.epochs) };
    for epoch in 0..cfg.epochs {
        // Fisher-Yates over the scene order.
        for i in (1..order.len()).rev() {
            order.swap(i, shuffle_rng.gen_range(0..=i));
        }
        let mut sum = SceneLoss { l_cls: 0.0, l_reg: 0.0, l_dir: 0.0, total: 0.0, positives: 0 };
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads = ModelGrads::zeros_like(&model);
            let mut batch_total = 0.0;
            let mut batch_pos = 0usize;
            for &si in chunk {
                let s = accumulate_scene(&model, &train_scenes[si], &labels[si], cfg.loss_kind, loss_cfg, Some(&mut grads));
                batch_total += s.total;
                batch_pos += s.positives;
                sum.l_cls += s.l_cls;
                sum.l_reg += s.l_reg;
                sum.l_dir += s.l_dir;
                sum.total += s.total;
                sum.positives += s.positives;
            }
            let norm = batch_pos.max(1) as f64;
            if !batch_total.is_finite() {
                return Err(TrainError::Diverged { epoch, loss: batch_total });
            }
            grads.scale(1.0 / norm);
            for (v, g) in velocity
                .w1
                .iter_mut()
                .chain(&mut velocity.b1)
                .chain(&mut velocity.w2)
                .chain(&mut velocity.b2)
                .zip(grads.w1.iter().chain(&grads.b1).chain(&grads.w2).chain(&grads.b2))
            {
                *v = cfg.momentum * *v + g;
            }
            for (w, v) in model
                .w1
                .iter_mut()
                .chain(&mut model.b1)
                .chain(&mut model.w2)
                .chain(&mut model.b2)
                .zip(velocity.w1.iter().chain(&velocity.b1).chain(&velocity.w2).chain(&velocity.b2))
            {
                *w -= cfg.learning_rate * v;
            }
        }
        let frames = val_frames(&model, &val_scenes, cfg);
        let npos = sum.positives.max(1) as f64;
        history.epochs.push(EpochStats {
            epoch,
            mean_l_cls: sum.l_cls / npos,
            mean_l_reg: sum.l_reg / npos,
            mean_l_dir: sum.l_dir / npos,
            mean_total: sum.total / npos,
            val_ap_07: crate::eval::ap40(&frames, 0.7, IouKind::Bev).unwrap_or(0.0),
            val_ap_05: crate::eval::ap40(&frames, 0.5, IouKind::Bev).unwrap_or(0.0),
            val_aos_07: crate::eval::aos40(&frames, 0.7, IouKind::Bev).unwrap_or(0.0),
            val_pearson_r: confidence_iou_correlation(&frames, IouKind::Bev).unwrap_or(f64::NAN),
        });
    }
    Ok((model, history))
}

/// One benchmark row: a trained model's validation metrics.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BenchRow {
    pub seed: u64,
    pub loss_kind: LossKind,
    pub ap_07: f64,
    pub ap_05: f64,
    pub aos_07: f64,
    pub pearson_r: f64,
}

/// Trains both loss kinds head-to-head over the given seeds. Each seed gets
/// its own scene stream; the two loss kinds see identical data.
pub fn run_benchmark(cfg: &TrainConfig, spec: &SceneSpec, seeds: &[u64]) -> Result<Vec<BenchRow>, TrainError> {
    let mut rows = Vec::with_capacity(seeds.len() * 2);
    for &seed in seeds {
        let spec_s = SceneSpec { seed: spec.seed.wrapping_add(seed), ..*spec };
        for kind in [LossKind::Baseline, LossKind::Harmonic] {
            let cfg_s = TrainConfig { loss_kind: kind, seed: cfg.seed.wrapping_add(seed), ..*cfg };
            let (model, _) = train(&cfg_s, &spec_s)?;
            let val_scenes: Vec<Scene> =
                (0..cfg.val_scenes).map(|i| gen_scene(&spec_s, (cfg.train_scenes + i) as u64)).collect();
            let frames = val_frames(&model, &val_scenes, &cfg_s);
            rows.push(BenchRow {
                seed,
                loss_kind: kind,
                ap_07: crate::eval::ap40(&frames, 0.7, IouKind::Bev).unwrap_or(0.0),
                ap_05: crate::eval::ap40(&frames, 0.5, IouKind::Bev).unwrap_or(0.0),
                aos_07: crate::eval::aos40(&frames, 0.7, IouKind::Bev).unwrap_or(0.0),
                pearson_r: confidence_iou_correlation(&frames, IouKind::Bev).unwrap_or(f64::NAN),
            });
        }
    }
    Ok(rows)
}

/// Writes benchmark rows as `seed,loss_kind,ap_07,ap_05,aos_07,pearson_r`.
pub fn write_benchmark_csv(path: &std::path::Path, rows: &[BenchRow]) -> Result<(), TrainError> {
    let mut out = String::from("seed,loss_kind,ap_07,ap_05,aos_07,pearson_r\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6}\n",
            r.seed, r.loss_kind, r.ap_07, r.ap_05, r.aos_07, r.pearson_r
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Serializes a model checkpoint: flat parameter arrays plus shape metadata.
pub fn write_checkpoint(path: &std::path::Path, model: &ToyModel) -> Result<(), TrainError> {
    let payload = serde_json::json!({
        "feature_dim": model.feature_dim,
        "hidden_dim": model.hidden_dim,
        "layers": [
            { "name": "w1", "shape": [model.hidden_dim, model.feature_dim], "data": model.w1 },
            { "name": "b1", "shape": [model.hidden_dim], "data": model.b1 },
            { "name": "w2", "shape": [OUT_DIM, model.hidden_dim], "data": model.w2 },
            { "name": "b2", "shape": [OUT_DIM], "data": model.b2 },
        ],
    });
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{}", serde_json::to_string_pretty(&payload).expect("model serializes"))?;
    Ok(())
}

/// Reads a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint(path: &std::path::Path) -> Result<ToyModel, TrainError> {
    let text = std::fs::read_to_string(path)?;
    let v: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| TrainError::InvalidConfig(format!("bad checkpoint: {e}")))?;
    let arr = |name: &str| -> Result<Vec<f64>, TrainError> {
        v["layers"]
            .as_array()
            .and_then(|ls| ls.iter().find(|l| l["name"] == name))
            .and_then(|l| l["data"].as_array())
            .map(|d| d.iter().filter_map(|x| x.as_f64()).collect())
            .ok_or_else(|| TrainError::InvalidConfig(format!("checkpoint missing layer {name}")))
    };
    Ok(ToyModel {
        feature_dim: v["feature_dim"].as_u64().unwrap_or(FEATURE_DIM as u64) as usize,
        hidden_dim: v["hidden_dim"].as_u64().unwrap_or(HIDDEN_DIM as u64) as usize,
        w1: arr("w1")?,
        b1: arr("b1")?,
        w2: arr("w2")?,
        b2: arr("b2")?,
    })
}

pub fn write_history(path: &std::path::Path, history: &TrainHistory) -> Result<(), TrainError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{}", serde_json::to_string_pretty(history).expect("history serializes"))?;
    Ok(())
}
