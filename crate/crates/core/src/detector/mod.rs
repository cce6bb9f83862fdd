//! Synthetic scene generation, a tiny trainable detector head and the
//! baseline-vs-harmonic training benchmark.

pub mod model;
pub mod scene;
pub mod train;

pub use model::{AnchorOutput, ModelGrads, ToyModel, OUT_DIM};
pub use scene::{
    anchor_grid, anchor_target, assign_targets, direction_bit, gen_scene, AnchorLabel, Scene,
    SceneSpec, FEATURE_DIM,
};
pub use train::{
    predict, predict_outputs, run_benchmark, train, write_benchmark_csv, write_checkpoint,
    write_history, BenchRow, EpochStats, TrainConfig, TrainError, TrainHistory, HIDDEN_DIM,
};
