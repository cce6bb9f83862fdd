//! Scratch probe for one benchmark seed (not shipped).

use harmonic3d::detector::{assign_targets, gen_scene, predict, train, AnchorLabel, SceneSpec, TrainConfig};
use harmonic3d::eval::IouKind;
use harmonic3d::geometry::bev_iou;
use harmonic3d::losses::LossKind;

fn env_f(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() {
    let seed = env_f("SEED", 5.0) as u64;
    let noise = env_f("NOISE", 0.08);
    let epochs = env_f("EPOCHS", 60.0) as usize;
    let spec = SceneSpec { seed, noise_sigma: noise, ..Default::default() };
    let cfg = TrainConfig { loss_kind: LossKind::Baseline, seed, epochs, ..Default::default() };

    // scene composition
    let mut pos = 0;
    let mut neg = 0;
    let mut ign = 0;
    let mut gts = 0;
    for i in 0..cfg.train_scenes {
        let s = gen_scene(&spec, i as u64);
        gts += s.gts.len();
        for l in assign_targets(&s, cfg.pos_iou, cfg.neg_iou) {
            match l {
                AnchorLabel::Positive(_) => pos += 1,
                AnchorLabel::Negative => neg += 1,
                AnchorLabel::Ignored => ign += 1,
            }
        }
    }
    println!("train scenes: {gts} gts, {pos} pos / {neg} neg / {ign} ignored anchors");

    let (model, history) = train(&cfg, &spec).unwrap();
    for e in history.epochs.iter().step_by(10).chain(history.epochs.last()) {
        println!(
            "epoch {:3}: total={:.4} cls={:.4} reg={:.4} dir={:.4} ap07={:.3} ap05={:.3} r={:+.3}",
            e.epoch, e.mean_total, e.mean_l_cls, e.mean_l_reg, e.mean_l_dir, e.val_ap_07, e.val_ap_05, e.val_pearson_r
        );
    }

    // inspect one val scene in detail
    let s = gen_scene(&spec, cfg.train_scenes as u64);
    let dets = predict(&model, &s, cfg.score_thr, cfg.nms_iou);
    println!("val scene: {} gts, {} dets (score_thr {})", s.gts.len(), dets.len(), cfg.score_thr);
    for (i, d) in dets.iter().enumerate().take(15) {
        let best = s.gts.iter().map(|g| bev_iou(g, &d.box3d)).fold(0.0, f64::max);
        println!("  det {i}: score={:.3} best_iou={:.3} at ({:+.1},{:+.1}) yaw {:+.2}", d.score, best, d.box3d.x, d.box3d.y, d.box3d.yaw);
    }
    for (i, g) in s.gts.iter().enumerate() {
        let best = dets.iter().map(|d| bev_iou(g, &d.box3d)).fold(0.0, f64::max);
        println!("  gt {i}: difficulty={:.2} best det iou={:.3} at ({:+.1},{:+.1})", s.difficulty[i], best, g.x, g.y);
    }

    // dump the matched (score, iou, difficulty-of-gt) population across val scenes
    println!("matched pairs over all val scenes:");
    let mut pairs = Vec::new();
    for i in 0..cfg.val_scenes {
        let s = gen_scene(&spec, (cfg.train_scenes + i) as u64);
        let dets = predict(&model, &s, cfg.score_thr, cfg.nms_iou);
        let frame = harmonic3d::eval::FrameResult { gts: s.gts.clone(), dets };
        let m = harmonic3d::eval::match_frame(&frame, 0.0, IouKind::Bev);
        for (det, o) in frame.dets.iter().zip(&m.outcomes) {
            if let harmonic3d::eval::DetOutcome::Tp { gt, iou, .. } = o {
                pairs.push((det.score, *iou, s.difficulty[*gt]));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (score, iou, diff) in &pairs {
        println!("  score={score:.3} iou={iou:.3} gt_difficulty={diff:.2}");
    }
}
