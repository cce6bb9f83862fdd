//! Flat run configuration: one key-value document covering the loss, the
//! synthetic scenes, training and evaluation. Every key has a default;
//! unknown keys are rejected.

use crate::detector::{SceneSpec, TrainConfig};
use crate::eval::IouKind;
use crate::losses::{LossConfig, LossKind, SmoothL1Form};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // loss
    pub alpha: f64,
    pub gamma: f64,
    pub beta_dir: f64,
    pub smoothl1_form: SmoothL1Form,
    pub prob_floor: f64,
    // scenes
    pub extent_x: f64,
    pub extent_y: f64,
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
    pub noise_sigma: f64,
    pub clutter_fraction: f64,
    pub scene_seed: u64,
    // training
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub pos_iou: f64,
    pub neg_iou: f64,
    pub train_seed: u64,
    // prediction / evaluation
    pub score_thr: f64,
    pub nms_iou: f64,
    pub eval_thresholds: Vec<f64>,
    pub iou_kind: IouKind,
    // outputs
    pub out_dir: String,
    // benchmark
    pub bench_seeds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let loss = LossConfig::default();
        let scene = SceneSpec::default();
        let train = TrainConfig::default();
        Self {
            alpha: loss.alpha,
            gamma: loss.gamma,
            beta_dir: loss.beta_dir,
            smoothl1_form: loss.smoothl1_form,
            prob_floor: loss.prob_floor,
            extent_x: scene.extent_x,
            extent_y: scene.extent_y,
            anchor_stride: scene.anchor_stride,
            objects_min: scene.objects_min,
            objects_max: scene.objects_max,
            l_min: scene.l_min,
            l_max: scene.l_max,
            w_min: scene.w_min,
            w_max: scene.w_max,
            h_min: scene.h_min,
            h_max: scene.h_max,
            yaw_min: scene.yaw_min,
            yaw_max: scene.yaw_max,
            noise_sigma: scene.noise_sigma,
            clutter_fraction: scene.clutter_fraction,
            scene_seed: scene.seed,
            epochs: train.epochs,
            learning_rate: train.learning_rate,
            momentum: train.momentum,
            batch_size: train.batch_size,
            train_scenes: train.train_scenes,
            val_scenes: train.val_scenes,
            pos_iou: train.pos_iou,
            neg_iou: train.neg_iou,
            train_seed: train.seed,
            score_thr: train.score_thr,
            nms_iou: train.nms_iou,
            eval_thresholds: vec![0.7, 0.5],
            iou_kind: IouKind::Bev,
            out_dir: "out".to_string(),
            bench_seeds: 10,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.loss_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.objects_min > self.objects_max {
            return Err(ConfigError::Invalid("objects_min exceeds objects_max".into()));
        }
        for (lo, hi, name) in [
            (self.l_min, self.l_max, "l"),
            (self.w_min, self.w_max, "w"),
            (self.h_min, self.h_max, "h"),
        ] {
            if !(lo > 0.0 && hi >= lo) {
                return Err(ConfigError::Invalid(format!("bad {name} dimension range [{lo}, {hi}]")));
            }
        }
        if !(self.yaw_min < self.yaw_max && self.yaw_min >= -PI - 1e-9 && self.yaw_max <= PI + 1e-9) {
            return Err(ConfigError::Invalid("yaw range must be a nonempty subinterval of [-pi, pi]".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(ConfigError::Invalid("noise_sigma must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.clutter_fraction) {
            return Err(ConfigError::Invalid("clutter_fraction must lie in [0, 1]".into()));
        }
        if !(self.pos_iou > self.neg_iou) {
            return Err(ConfigError::Invalid("pos_iou must exceed neg_iou".into()));
        }
        if self.extent_x < 2.0 * self.l_max || self.extent_y < 2.0 * self.l_max {
            return Err(ConfigError::Invalid("extent too small for the object sizes".into()));
        }
        if self.eval_thresholds.is_empty() || self.eval_thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(ConfigError::Invalid("eval_thresholds must be nonempty ratios in [0, 1]".into()));
        }
        if self.bench_seeds == 0 {
            return Err(ConfigError::Invalid("bench_seeds must be positive".into()));
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            gamma: self.gamma,
            beta_dir: self.beta_dir,
            smoothl1_form: self.smoothl1_form,
            prob_floor: self.prob_floor,
        }
    }

    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            extent_x: self.extent_x,
            extent_y: self.extent_y,
            anchor_stride: self.anchor_stride,
            objects_min: self.objects_min,
            objects_max: self.objects_max,
            l_min: self.l_min,
            l_max: self.l_max,
            w_min: self.w_min,
            w_max: self.w_max,
            h_min: self.h_min,
            h_max: self.h_max,
            yaw_min: self.yaw_min,
            yaw_max: self.yaw_max,
            noise_sigma: self.noise_sigma,
            clutter_fraction: self.clutter_fraction,
            seed: self.scene_seed,
        }
    }

    pub fn train_config(&self, loss_kind: LossKind) -> TrainConfig {
        TrainConfig {
            loss_kind,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            train_scenes: self.train_scenes,
            val_scenes: self.val_scenes,
            pos_iou: self.pos_iou,
            neg_iou: self.neg_iou,
            score_thr: self.score_thr,
            nms_iou: self.nms_iou,
            seed: self.train_seed,
        }
    }
}
