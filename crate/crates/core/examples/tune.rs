//! Scratch harness for tuning the synthetic benchmark (not shipped).

use harmonic3d::detector::{gen_scene, predict, run_benchmark, train, SceneSpec, TrainConfig};
use harmonic3d::eval::{ap40, confidence_iou_correlation, FrameResult, IouKind};
use harmonic3d::losses::LossKind;
use std::time::Instant;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn env_f(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() {
    let t0 = Instant::now();
    let noise = env_f("NOISE", 0.08);
    let epochs = env_f("EPOCHS", 45.0) as usize;
    let lr = env_f("LR", 0.1);
    let skip_clean = env_f("SKIP_CLEAN", 0.0) > 0.5;
    println!("noise={noise} epochs={epochs} lr={lr}");

    // 1. Noiseless sanity: both kinds should hit AP@0.7 >= 0.95.
    let clean_spec = SceneSpec { noise_sigma: 0.0, clutter_fraction: 0.0, seed: 100, ..Default::default() };
    for kind in [LossKind::Baseline, LossKind::Harmonic] {
        if skip_clean {
            break;
        }
        let cfg = TrainConfig { loss_kind: kind, epochs, learning_rate: lr, score_thr: env_f("SCORE_THR", 0.1), batch_size: env_f("BATCH", 48.0) as usize, ..Default::default() };
        let (model, history) = train(&cfg, &clean_spec).unwrap();
        let last = history.epochs.last().unwrap();
        let frames: Vec<FrameResult> = (0..cfg.val_scenes)
            .map(|i| {
                let s = gen_scene(&clean_spec, (cfg.train_scenes + i) as u64);
                FrameResult { gts: s.gts.clone(), dets: predict(&model, &s, cfg.score_thr, cfg.nms_iou) }
            })
            .collect();
        let ap = ap40(&frames, 0.7, IouKind::Bev).unwrap();
        println!(
            "noiseless {kind}: ap07={ap:.4} (last epoch: ap07={:.4} ap05={:.4} aos07={:.4} r={:.4} l_cls={:.4} l_reg={:.4} l_dir={:.4})",
            last.val_ap_07, last.val_ap_05, last.val_aos_07, last.val_pearson_r,
            last.mean_l_cls, last.mean_l_reg, last.mean_l_dir
        );
        let _ = confidence_iou_correlation(&frames, IouKind::Bev);
    }
    println!("noiseless done in {:?}", t0.elapsed());

    // 2. Default benchmark over 10 seeds.
    let t1 = Instant::now();
    let spec = SceneSpec { noise_sigma: noise, clutter_fraction: env_f("CLUTTER", 0.05), ..Default::default() };
    let cfg = TrainConfig { epochs, learning_rate: lr, score_thr: env_f("SCORE_THR", 0.1), batch_size: env_f("BATCH", 8.0) as usize, ..Default::default() };
    let seeds: Vec<u64> = (0..10).collect();
    let rows = run_benchmark(&cfg, &spec, &seeds).unwrap();
    for r in &rows {
        println!(
            "seed {} {:9}: ap07={:.4} ap05={:.4} aos07={:.4} r={:+.4}",
            r.seed,
            r.loss_kind.to_string(),
            r.ap_07,
            r.ap_05,
            r.aos_07,
            r.pearson_r
        );
    }
    let base: Vec<&_> = rows.iter().filter(|r| r.loss_kind == LossKind::Baseline).collect();
    let harm: Vec<&_> = rows.iter().filter(|r| r.loss_kind == LossKind::Harmonic).collect();
    println!(
        "medians baseline: ap07={:.4} r={:+.4} | harmonic: ap07={:.4} r={:+.4}",
        median(base.iter().map(|r| r.ap_07).collect()),
        median(base.iter().map(|r| r.pearson_r).collect()),
        median(harm.iter().map(|r| r.ap_07).collect()),
        median(harm.iter().map(|r| r.pearson_r).collect()),
    );
    println!("benchmark done in {:?} (total {:?})", t1.elapsed(), t0.elapsed());
}
