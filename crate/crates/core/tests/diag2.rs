use rlgt_core::latent::project_to_latent;
use rlgt_core::raster::OccupancyConfig;
use rlgt_core::scene::{render_frame, synth_scene, CameraModel, DistortionParams, SceneConfig};

#[test]
fn diag_feature_stats() {
    let cam = CameraModel::default();
    let scene = synth_scene(7, &SceneConfig::default()).unwrap();
    let occ = OccupancyConfig::default();
    for vpx in [0.0f64, 0.02, 0.05, 0.088, 0.10] {
        let theta = DistortionParams {
            vp_shift: [vpx, 0.0],
            lane_warp_amp: 0.12,
            lane_warp_freq: 0.9,
            ..DistortionParams::identity()
        };
        let frame = render_frame(&scene, &cam, &theta, &occ).unwrap();
        let z = project_to_latent(&frame, 1).unwrap();
        let stats = |v: &[f64]| {
            let n = v.len() as f64;
            let mu = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1.0);
            (mu, var)
        };
        let (mv, vv) = stats(&z.vehicle);
        let (md, vd) = stats(&z.depth);
        println!("vpx {vpx:+.3}: veh mu {mv:.6} var {vv:.6e} | depth mu {md:.3} var {vd:.3}");
    }
}
