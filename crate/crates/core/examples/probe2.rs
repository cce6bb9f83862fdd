//! Scratch probe comparing scatter for both loss kinds (not shipped).

use harmonic3d::detector::{gen_scene, predict, train, SceneSpec, TrainConfig};
use harmonic3d::eval::{match_frame, DetOutcome, FrameResult, IouKind};
use harmonic3d::losses::LossKind;

fn env_f(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() {
    let seed = env_f("SEED", 0.0) as u64;
    let spec = SceneSpec {
        seed,
        noise_sigma: env_f("NOISE", 0.05),
        clutter_fraction: env_f("CLUTTER", 0.02),
        ..Default::default()
    };
    for kind in [LossKind::Baseline, LossKind::Harmonic] {
        let cfg = TrainConfig {
            loss_kind: kind,
            seed,
            epochs: env_f("EPOCHS", 90.0) as usize,
            learning_rate: env_f("LR", 0.1),
            batch_size: env_f("BATCH", 48.0) as usize,
            ..Default::default()
        };
        let (model, _) = train(&cfg, &spec).unwrap();
        let mut pairs: Vec<(f64, f64, f64)> = Vec::new();
        for i in 0..cfg.val_scenes {
            let s = gen_scene(&spec, (cfg.train_scenes + i) as u64);
            let dets = predict(&model, &s, cfg.score_thr, cfg.nms_iou);
            let frame = FrameResult { gts: s.gts.clone(), dets };
            let m = match_frame(&frame, 0.0, IouKind::Bev);
            for (det, o) in frame.dets.iter().zip(&m.outcomes) {
                if let DetOutcome::Tp { gt, iou, .. } = o {
                    pairs.push((det.score, *iou, s.difficulty[*gt]));
                }
            }
        }
        let r = harmonic3d::eval::pearson(&pairs.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>()).unwrap_or(f64::NAN);
        // split stats by difficulty population
        let easy: Vec<_> = pairs.iter().filter(|p| p.2 < 2.0).collect();
        let hard: Vec<_> = pairs.iter().filter(|p| p.2 >= 2.0).collect();
        let med = |v: &mut Vec<f64>| -> f64 {
            v.sort_by(f64::total_cmp);
            if v.is_empty() { f64::NAN } else { v[v.len() / 2] }
        };
        let mut es: Vec<f64> = easy.iter().map(|p| p.0).collect();
        let mut ei: Vec<f64> = easy.iter().map(|p| p.1).collect();
        let mut hs: Vec<f64> = hard.iter().map(|p| p.0).collect();
        let mut hi: Vec<f64> = hard.iter().map(|p| p.1).collect();
        println!(
            "{kind}: n={} r={r:+.3} | easy n={} med score={:.3} med iou={:.3} | hard n={} med score={:.3} med iou={:.3}",
            pairs.len(),
            easy.len(),
            med(&mut es),
            med(&mut ei),
            hard.len(),
            med(&mut hs),
            med(&mut hi),
        );
    }
}
