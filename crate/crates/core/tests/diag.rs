use rlgt_core::raster::OccupancyConfig;
use rlgt_core::rewards::RewardWeights;
use rlgt_core::scene::{render_frame, synth_scene, CameraModel, DistortionParams, SceneConfig};
use rlgt_core::windowed::{
    build_reference, clean_scores, optimize, EvalContext, OptimizerConfig, PipelineConfig,
    WindowConfig,
};

fn calibrate_depth_scale(
    scene: &rlgt_core::SceneSpec, cam: &CameraModel, base: &DistortionParams,
    occ: &OccupancyConfig, reference: &rlgt_core::windowed::SceneReference, target: f64,
) -> f64 {
    let frame = render_frame(scene, cam, base, occ).unwrap();
    let (mut a, mut b, mut c, mut n) = (0.0f64, 0.0f64, 0.0f64, 0u64);
    let road = &reference.road_raster;
    for r in 0..road.height() {
        for col in 0..road.width() {
            if road.get(r, col) && frame.depth.defined(r, col) && reference.depth_raster.defined(r, col) {
                let dp = f64::from(frame.depth.get(r, col));
                let dr = f64::from(reference.depth_raster.get(r, col));
                a += dp * dp; b += dp * dr; c += dr * dr; n += 1;
            }
        }
    }
    let (a, b, c) = (a / n as f64, b / n as f64, c / n as f64);
    (b + (b * b - a * (c - target * target)).max(0.0).sqrt()) / a
}

#[test]
fn diag_optimize5() {
    let t0 = std::time::Instant::now();
    let cam = CameraModel::default();
    let scene = synth_scene(7, &SceneConfig::default()).unwrap();
    let pipe = PipelineConfig::default();
    let reference = build_reference(&scene, &cam, &pipe).unwrap();
    let ctx = EvalContext { scene: &scene, cam: &cam, reference: &reference, weights: RewardWeights::default(), cfg: &pipe };

    let mut theta0 = DistortionParams {
        vp_shift: [0.086, 0.0],
        lane_warp_amp: 0.12,
        lane_warp_freq: 0.9,
        ..DistortionParams::identity()
    };
    for _ in 0..4 {
        let (_, s) = clean_scores(&ctx, &theta0);
        let err = s.vp_error.unwrap() - 0.086;
        if err.abs() < 5e-4 { break; }
        theta0.vp_shift[0] -= err;
    }
    theta0.depth_scale = calibrate_depth_scale(&scene, &cam, &theta0, &pipe.occupancy, &reference, 1.822);
    let (_, s0) = clean_scores(&ctx, &theta0);
    println!("init: vp {:?} lane {:?} depth {:?}", s0.vp_error, s0.lane_f1, s0.depth_rmse);

    for (lr, decay, seed) in [
        (0.02f64, 1.0f64, 42u64), (0.02, 1.0, 1), (0.02, 1.0, 7),
    ] {
        let fd = 0.02f64;
        let wcfg = WindowConfig::default();
        let ocfg = OptimizerConfig { seed, learning_rate: lr, lr_decay: decay, fd_step: fd, ..OptimizerConfig::default() };
        let trace = optimize(&ctx, &theta0, &wcfg, &ocfg).unwrap();
        for e in trace.entries.iter().step_by(400) {
            let t = e.theta.to_vec();
            println!("iter {:3} | vp_err {:?} f1 {:?} drm {:?} | vpx {:+.4} vpy {:+.4} s {:.4} b {:+.3} amp {:+.3} frq {:+.3} jx {:+.3} jy {:+.3} | rvp {:+.4} rlane {:+.3} rdep {:+.3} ralign {:+.3} riou {:+.3}",
                e.iter,
                e.scores.vp_error.map(|v| (v*1e4).round()/1e4),
                e.scores.lane_f1.map(|v| (v*1e3).round()/1e3),
                e.scores.depth_rmse.map(|v| (v*1e3).round()/1e3),
                t[0], t[1], t[2], t[3], t[4], t[5], t[6], t[7],
                e.reward.r_vp, e.reward.r_lane, e.reward.r_depth, e.reward.r_align, e.reward.r_iou);
        }
        let best = &trace.entries[trace.best_iter as usize];
        println!("lr {lr} decay {decay} seed {seed} BEST iter {:3} vp {:.4} lane {:.3} depth {:.3}", best.iter,
            best.scores.vp_error.unwrap_or(f64::NAN), best.scores.lane_f1.unwrap_or(f64::NAN), best.scores.depth_rmse.unwrap_or(f64::NAN));
    }
    println!("elapsed {:.1}s", t0.elapsed().as_secs_f64());
}
