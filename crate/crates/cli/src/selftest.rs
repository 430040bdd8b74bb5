//! Quick property checks runnable from the command line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use virtview::camera::{wrap_angle, Box2D, CameraIntrinsics, Size3};
use virtview::classes::NUM_CLASSES;
use virtview::codec::{anchors_for_view, decode_2d, decode_3d, encode};
use virtview::config::RunConfig;
use virtview::eval::evaluate;
use virtview::kitti::{box3d_to_kitti, format_label_file, kitti_to_box3d, parse_label_file};
use virtview::overlap::OverlapMetric;
use virtview::par::{derive_seed, Execution};
use virtview::pipeline::{run_inference, GlobalNms, OracleConfig, OracleDetector, OracleNoise};
use virtview::synth::generate_scenes;
use virtview::viewport::{sweep_depths, ViewBox};

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn kitti_camera() -> CameraIntrinsics {
    CameraIntrinsics::new(721.5377, 721.5377, 609.5593, 172.854, 1242, 375).expect("valid camera")
}

pub fn run_all(cfg: &RunConfig, exec: Execution, scenes: usize) -> Vec<Check> {
    vec![
        coverage(cfg),
        codec_round_trip(cfg),
        kitti_round_trip(cfg, exec),
        oracle_ap(cfg, exec, scenes),
    ]
}

/// Every depth in the sweep range lies in some view's window.
fn coverage(cfg: &RunConfig) -> Check {
    let v = &cfg.view;
    let starts = sweep_depths(v);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let misses = (0..10_000)
        .filter(|_| {
            let z = rng.gen_range(v.z_min..=v.z_max);
            !starts.iter().any(|&s| (s..=s + v.z_res).contains(&z))
        })
        .count();
    Check {
        name: "coverage",
        passed: misses == 0,
        detail: format!("views={} misses={misses}", starts.len()),
    }
}

fn codec_round_trip(cfg: &RunConfig) -> Check {
    let anchors = anchors_for_view(cfg.view.out_width, cfg.view.out_height);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let a = &anchors[rng.gen_range(0..anchors.len())];
        let (u, v) = (rng.gen_range(0.0..300.0), rng.gen_range(0.0..100.0));
        let gt_2d = Box2D::new(
            u,
            v,
            u + rng.gen_range(2.0..80.0),
            v + rng.gen_range(2.0..80.0),
        );
        let class_id = rng.gen_range(0..NUM_CLASSES);
        let gt = ViewBox {
            center_u: rng.gen_range(0.0..300.0),
            center_v: rng.gen_range(0.0..100.0),
            depth: rng.gen_range(0.0..5.0),
            size: Size3::new(
                rng.gen_range(0.3..3.0),
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.3..6.0),
            ),
            alpha: rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            class_id,
            score: None,
        };
        let prior = &cfg.priors[class_id];
        let Ok(t) = encode(&gt_2d, &gt, a, prior) else {
            worst = f64::INFINITY;
            break;
        };
        let b2 = decode_2d(a, &t.theta_2d);
        let Ok(b3) = decode_3d(&t.theta_3d, prior, b2.center(), class_id) else {
            worst = f64::INFINITY;
            break;
        };
        let errs = [
            b2.u_min - gt_2d.u_min,
            b2.v_min - gt_2d.v_min,
            b2.u_max - gt_2d.u_max,
            b2.v_max - gt_2d.v_max,
            b3.center_u - gt.center_u,
            b3.center_v - gt.center_v,
            b3.depth - gt.depth,
            b3.size.w - gt.size.w,
            b3.size.h - gt.size.h,
            b3.size.l - gt.size.l,
            wrap_angle(b3.alpha - gt.alpha),
        ];
        worst = errs.iter().fold(worst, |m, e| m.max(e.abs()));
    }
    Check {
        name: "codec_round_trip",
        passed: worst <= 1e-9,
        detail: format!("max_error={worst:.3e}"),
    }
}

/// Label text survives parse, box conversion and formatting unchanged.
fn kitti_round_trip(cfg: &RunConfig, exec: Execution) -> Check {
    let k = kitti_camera();
    let scenes = generate_scenes(&cfg.synth, &k, 20, derive_seed(cfg.seed, 3), exec);
    let mut bad = 0;
    for s in &scenes {
        let text = format_label_file(
            &s.objects
                .iter()
                .map(|b| box3d_to_kitti(b, Some(&k)))
                .collect::<Vec<_>>(),
        );
        let again = parse_label_file(&text).map(|recs| {
            format_label_file(
                &recs
                    .iter()
                    .map(|r| box3d_to_kitti(&kitti_to_box3d(r), None))
                    .collect::<Vec<_>>(),
            )
        });
        if again.ok().as_deref() != Some(text.as_str()) {
            bad += 1;
        }
    }
    Check {
        name: "kitti_round_trip",
        passed: bad == 0,
        detail: format!("files={} mismatches={bad}", scenes.len()),
    }
}

/// A noise-free oracle scores AP 100 in every populated cell.
fn oracle_ap(cfg: &RunConfig, exec: Execution, n: usize) -> Check {
    let k = kitti_camera();
    let mut params = cfg.synth.clone();
    params.z_lo = params.z_lo.max(5.0);
    params.z_hi = params.z_hi.min(40.0);
    params.min_nearest_depth = params.min_nearest_depth.max(cfg.view.z_min);
    params.max_2d_iou = Some(params.max_2d_iou.map_or(0.4, |v| v.min(0.4)));
    let scenes = generate_scenes(&params, &k, n, derive_seed(cfg.seed, 4), exec);
    let mut icfg = cfg.inference();
    icfg.global_nms = Some(GlobalNms {
        metric: OverlapMetric::Bev,
        threshold: 0.5,
    });
    let oracle = OracleConfig {
        noise: OracleNoise::default(),
        drop_prob: 0.0,
        clutter_rate: 0.0,
        seed: cfg.seed,
    };
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for (i, s) in scenes.iter().enumerate() {
        let det = OracleDetector::new(
            s.objects.clone(),
            k,
            &icfg,
            OracleConfig {
                seed: derive_seed(cfg.seed, i as u64),
                ..oracle.clone()
            },
        );
        match run_inference(&k, None, &det, &icfg, exec, None) {
            Ok(out) => dets.push((i.to_string(), out.detections)),
            Err(e) => {
                return Check {
                    name: "oracle_ap",
                    passed: false,
                    detail: format!("scene {i}: {e}"),
                }
            }
        }
        gts.push((i.to_string(), s.objects.clone()));
    }
    match evaluate(&dets, &gts, &cfg.eval, exec) {
        Ok(report) => {
            let aps: Vec<f64> = report.entries.iter().filter_map(|e| e.ap).collect();
            let min = aps.iter().copied().fold(f64::INFINITY, f64::min);
            Check {
                name: "oracle_ap",
                passed: !aps.is_empty() && (min - 100.0).abs() <= 1e-6,
                detail: format!("scenes={n} cells={} min_ap={min:.4}", aps.len()),
            }
        }
        Err(e) => Check {
            name: "oracle_ap",
            passed: false,
            detail: e.to_string(),
        },
    }
}
