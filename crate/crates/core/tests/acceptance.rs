//! Acceptance criteria 1-10. Runs as a plain binary so every criterion prints
//! one PASS/FAIL line regardless of output capture.

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use virtview::camera::{project_box_to_2d, wrap_angle, Box2D, Box3D, CameraIntrinsics, ObjectMeta, Point3, Size3};
use virtview::classes::{default_priors, CAR, NUM_CLASSES};
use virtview::codec::{
    anchors_for_view, confidence_target_loss, confidence_target_loss_grad, decode_2d, decode_3d, encode, focal_loss,
    focal_loss_grad, huber, huber_grad, lifting_disentangled_grad, lifting_disentangled_loss, smooth_l1, total_loss,
    LiftContext, LossConfig, ParamGroup, Theta3d,
};
use virtview::eval::{average_precision, evaluate, EvalConfig, RecallSamples};
use virtview::kitti::{
    box3d_to_kitti, format_calib, format_label_file, kitti_to_box3d, parse_calib, parse_label_file,
    read_calib_file, read_label_dir, read_label_file, write_atomic, write_results, Calib, Difficulty, KittiLabel,
};
use virtview::overlap::{bev_iou_boxes, iou_3d, OverlapMetric};
use virtview::par::{derive_seed, Execution};
use virtview::pipeline::{
    build_training_batch, run_inference, OracleConfig, OracleDetector, OracleNoise, InferenceConfig, TrainingConfig,
};
use virtview::synth::{generate_scenes, make_range_split, render_scene, RangeSplitKind, SceneParams};
use virtview::viewport::{
    inference_viewports, lift_detection, resample_all, view_box_from_box, viewport_to_spec, viewport_width,
    ViewConfig, Viewport3D, VirtualViewSpec,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn kitti() -> CameraIntrinsics {
    CameraIntrinsics::new(721.5377, 721.5377, 609.5593, 172.854, 1242, 375)
        .unwrap()
        .with_translation([44.857, 0.2163, 0.002746])
}

fn random_box(rng: &mut ChaCha8Rng, class_id: usize, z: (f64, f64)) -> Box3D {
    let prior = default_priors()[class_id];
    let j = |rng: &mut ChaCha8Rng| rng.gen_range(0.8..1.25);
    let size = Size3::new(prior.size.w * j(rng), prior.size.h * j(rng), prior.size.l * j(rng));
    let zc = rng.gen_range(z.0..z.1);
    Box3D::new(
        Point3::new(rng.gen_range(-0.4..0.4) * zc, 1.65 - 0.5 * size.h, zc),
        size,
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        class_id,
    )
}

/// Object height in a virtual view equals out_height * H_obj / H_v when the
/// object stands on the viewport plane.
fn c1_scale_normalization() -> Outcome {
    let k = kitti();
    let (out_w, out_h, h_v) = (331u32, 100u32, 2.28);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for z in [2.0, 5.0, 10.0, 20.0, 50.0, 100.0] {
        for _ in 0..200 {
            let vp = Viewport3D {
                x_left: rng.gen_range(-20.0..5.0),
                y_top: rng.gen_range(-1.0..1.0),
                z,
                height: h_v,
                width: viewport_width(out_h, h_v, &k, out_w),
            };
            let spec = viewport_to_spec(&k, vp, out_w, out_h).map_err(|e| e.to_string())?;
            let h_obj = rng.gen_range(0.3..2.5);
            let (x, y) = (rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..1.5));
            let (u0, v0) = k.project(Point3::new(x, y, z)).map_err(|e| e.to_string())?;
            let (u1, v1) = k.project(Point3::new(x, y + h_obj, z)).map_err(|e| e.to_string())?;
            let (_, a) = spec.source_to_virtual(u0, v0);
            let (_, b) = spec.source_to_virtual(u1, v1);
            let expected = out_h as f64 * h_obj / h_v;
            worst = worst.max(((b - a) - expected).abs());
        }
    }
    ensure!(worst <= 1e-6, "max height error {worst:.3e} px");
    Ok(format!("max error {worst:.2e} px over 6 depths"))
}

fn c2_inference_coverage() -> Outcome {
    let k = kitti();
    let cfg = ViewConfig::default();
    let specs = inference_viewports(&k, &cfg, k.width).map_err(|e| e.to_string())?;
    ensure!(specs.len() == 17, "{} viewports", specs.len());
    ensure!(
        specs.iter().all(|s| s.out_width % 32 == 0 && s.out_height == cfg.out_height),
        "view widths not multiples of 32"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    for i in 0..10_000 {
        let mut b = random_box(&mut rng, i % NUM_CLASSES, (10.0, 20.0));
        let target = if i == 0 { cfg.z_min } else if i == 1 { cfg.z_max } else { rng.gen_range(cfg.z_min..=cfg.z_max) };
        b.center.z += target - b.nearest_depth();
        let zhat = b.nearest_depth();
        if !specs.iter().any(|s| (0.0..=cfg.z_res).contains(&(zhat - s.viewport.z))) {
            violations += 1;
        }
    }
    ensure!(violations == 0, "{violations} uncovered depths");
    Ok("17 viewports, 0 of 10000 depths uncovered".into())
}

fn c3_codec_round_trip() -> Outcome {
    let k = kitti();
    let cfg = ViewConfig::default();
    let specs = inference_viewports(&k, &cfg, k.width).map_err(|e| e.to_string())?;
    let priors = default_priors();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let anchors: Vec<_> = specs.iter().map(|s| anchors_for_view(s.out_width, s.out_height)).collect();
    for i in 0..100_000 {
        let class = i % NUM_CLASSES;
        let b = random_box(&mut rng, class, (6.0, 45.0));
        let zhat = b.nearest_depth();
        let Some(v) = specs.iter().position(|s| (0.0..=cfg.z_res).contains(&(zhat - s.viewport.z))) else {
            continue;
        };
        let spec = &specs[v];
        let gt_2d = spec.box_to_virtual(&project_box_to_2d(&k, &b, false).map_err(|e| e.to_string())?);
        let vb = view_box_from_box(&b, spec, &k).map_err(|e| e.to_string())?;
        let anchor = &anchors[v][rng.gen_range(0..anchors[v].len())];
        let t = encode(&gt_2d, &vb, anchor, &priors[class]).map_err(|e| e.to_string())?;
        let d2 = decode_2d(anchor, &t.theta_2d);
        let d3 = decode_3d(&t.theta_3d, &priors[class], d2.center(), class).map_err(|e| e.to_string())?;
        let lifted = lift_detection(&d3, spec, &k).map_err(|e| e.to_string())?;
        let errs = [
            d2.u_min - gt_2d.u_min,
            d2.v_min - gt_2d.v_min,
            d2.u_max - gt_2d.u_max,
            d2.v_max - gt_2d.v_max,
            d3.center_u - vb.center_u,
            d3.center_v - vb.center_v,
            d3.depth - vb.depth,
            d3.size.w - vb.size.w,
            d3.size.h - vb.size.h,
            d3.size.l - vb.size.l,
            wrap_angle(d3.alpha - vb.alpha),
            lifted.center.x - b.center.x,
            lifted.center.y - b.center.y,
            lifted.center.z - b.center.z,
            wrap_angle(lifted.yaw - b.yaw),
        ];
        ensure!(d3.class_id == class, "class changed");
        worst = errs.iter().fold(worst, |m, e| m.max(e.abs()));
    }
    ensure!(worst <= 1e-9, "max field error {worst:.3e}");
    Ok(format!("1e5 boxes, max field error {worst:.2e}"))
}

fn fd(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

fn c4_losses() -> Outcome {
    let k = kitti();
    let specs = inference_viewports(&k, &ViewConfig::default(), k.width).map_err(|e| e.to_string())?;
    let priors = default_priors();
    let lc = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;

    // zero at the encoded ground truth
    ensure!(huber(0.0, lc.huber_delta) == 0.0 && smooth_l1(0.0, lc.smooth_l1_beta) == 0.0, "regression loss at 0");
    ensure!(confidence_target_loss(40.0, 0.0, lc.temperature) < 1e-15, "confidence loss at a perfect box");
    ensure!(focal_loss(1.0 - 1e-12, true, lc.focal_gamma, lc.focal_alpha) < 1e-20, "focal loss at p = 1");
    ensure!(focal_loss(1e-12, false, lc.focal_gamma, lc.focal_alpha) < 1e-20, "focal loss at p = 0");
    let scenes = generate_scenes(&SceneParams::default(), &k, 10, 40, Execution::Sequential);
    let tcfg = TrainingConfig::default();
    for s in &scenes {
        let batch = build_training_batch(&s.objects, &k, None, &tcfg, &mut rng).map_err(|e| e.to_string())?;
        for sample in &batch {
            let outputs = sample.perfect_outputs();
            let b = total_loss(&[sample.loss_input(&outputs, &s.objects, &k, &priors)], &lc).map_err(|e| e.to_string())?;
            ensure!(b.reg_2d < 1e-18 && b.reg_3d < 1e-12, "regression loss at targets: {b:?}");
        }
    }

    for i in 0..1000 {
        let class = i % NUM_CLASSES;
        let spec: &VirtualViewSpec = &specs[rng.gen_range(0..specs.len())];
        let mut gt = random_box(&mut rng, class, (10.0, 11.0));
        gt.center.z += spec.viewport.z + rng.gen_range(0.5..4.5) - gt.nearest_depth();
        let (u, v) = k.project(gt.center).map_err(|e| e.to_string())?;
        let (cu, cv) = spec.source_to_virtual(u, v);
        let ctx = LiftContext {
            k: &k,
            spec,
            prior: &priors[class],
            box2d_center: (cu + rng.gen_range(-5.0..5.0), cv + rng.gen_range(-5.0..5.0)),
        };
        let t = ctx.gt_theta(&gt).map_err(|e| e.to_string())?;
        let at_gt = lifting_disentangled_loss(&t, &gt, &ctx, lc.huber_delta).map_err(|e| e.to_string())?;
        ensure!(at_gt.total() < 1e-18, "lifting loss at ground truth {at_gt:?}");

        let mut p = t.to_array();
        for x in p.iter_mut() {
            *x += rng.gen_range(-0.3..0.3);
        }
        let (_, grad) = lifting_disentangled_grad(&Theta3d::from_array(p), &gt, &ctx, lc.huber_delta).map_err(|e| e.to_string())?;
        for g in ParamGroup::ALL {
            for j in 0..8 {
                let f = |x: f64| {
                    let mut q = p;
                    q[j] = x;
                    lifting_disentangled_loss(&Theta3d::from_array(q), &gt, &ctx, lc.huber_delta)
                        .map(|l| l.get(g))
                        .unwrap_or(f64::NAN)
                };
                let num = fd(f, p[j], 1e-6);
                if g.indices().contains(&j) {
                    worst = worst.max(rel_err(grad[j], num));
                } else {
                    ensure!(num == 0.0, "group {g:?} has gradient {num} on parameter {j}");
                }
            }
        }

        let prob = rng.gen_range(0.02..0.98);
        let y = rng.gen_bool(0.5);
        worst = worst.max(rel_err(
            focal_loss_grad(prob, y, lc.focal_gamma, lc.focal_alpha),
            fd(|q| focal_loss(q, y, lc.focal_gamma, lc.focal_alpha), prob, 1e-7),
        ));
        let x: f64 = rng.gen_range(-10.0..10.0);
        if (x.abs() - lc.huber_delta).abs() > 1e-3 {
            worst = worst.max(rel_err(huber_grad(x, lc.huber_delta), fd(|q| huber(q, lc.huber_delta), x, 1e-6)));
        }
        let (zeta, loss) = (rng.gen_range(-6.0..6.0), rng.gen_range(0.0..5.0));
        worst = worst.max(rel_err(
            confidence_target_loss_grad(zeta, loss, lc.temperature),
            fd(|q| confidence_target_loss(q, loss, lc.temperature), zeta, 1e-6),
        ));
    }
    ensure!(worst < 1e-4, "max relative gradient error {worst:.3e}");
    Ok(format!("1000 points, max relative gradient error {worst:.2e}"))
}

/// Fraction of `n` points drawn uniformly inside `a` that also lie inside
/// `b`, over the ground plane or in full 3D.
fn mc_fraction_inside(a: &Box3D, b: &Box3D, n: u64, bev: bool, seed: u64) -> f64 {
    const CHUNK: u64 = 250_000;
    let chunks = n.div_ceil(CHUNK);
    let (sa, ca) = a.yaw.sin_cos();
    let (sb, cb) = b.yaw.sin_cos();
    let hits: Vec<u64> = Execution::Parallel.map_range(chunks as usize, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, c as u64));
        let m = CHUNK.min(n - c as u64 * CHUNK);
        let mut hit = 0u64;
        for _ in 0..m {
            // local frame: length along x, width along z
            let lx = (rng.gen::<f64>() - 0.5) * a.size.l;
            let lz = (rng.gen::<f64>() - 0.5) * a.size.w;
            let x = a.center.x + ca * lx + sa * lz;
            let z = a.center.z - sa * lx + ca * lz;
            let (dx, dz) = (x - b.center.x, z - b.center.z);
            let bx = cb * dx - sb * dz;
            let bz = sb * dx + cb * dz;
            let mut inside = bx.abs() <= 0.5 * b.size.l && bz.abs() <= 0.5 * b.size.w;
            if !bev {
                let y = a.center.y + (rng.gen::<f64>() - 0.5) * a.size.h;
                inside &= (y - b.center.y).abs() <= 0.5 * b.size.h;
            }
            hit += inside as u64;
        }
        hit
    });
    hits.iter().sum::<u64>() as f64 / n as f64
}

fn c5_overlap_oracles() -> Outcome {
    const SAMPLES: u64 = 10_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut overlapping = 0;
    for pair in 0..100u64 {
        let a = random_box(&mut rng, CAR, (10.0, 30.0));
        let mut b = random_box(&mut rng, (pair % 3) as usize, (10.0, 11.0));
        b.center = Point3::new(
            a.center.x + rng.gen_range(-2.5..2.5),
            a.center.y + rng.gen_range(-0.6..0.6),
            a.center.z + rng.gen_range(-3.0..3.0),
        );
        if pair % 10 == 0 {
            b = a.clone();
            b.yaw += rng.gen_range(-0.3..0.3);
        }
        for bev in [true, false] {
            let (va, vb) = if bev {
                (a.size.l * a.size.w, b.size.l * b.size.w)
            } else {
                (a.size.volume(), b.size.volume())
            };
            let inter = va * mc_fraction_inside(&a, &b, SAMPLES, bev, derive_seed(pair, bev as u64));
            let mc = inter / (va + vb - inter);
            let exact = if bev { bev_iou_boxes(&a, &b) } else { iou_3d(&a, &b) };
            overlapping += (exact > 0.0) as usize;
            worst = worst.max((mc - exact).abs());
        }
    }
    ensure!(worst <= 2e-3, "max deviation from Monte Carlo {worst:.3e}");
    ensure!(overlapping >= 100, "only {overlapping} overlapping cases");
    Ok(format!("100 pairs x 1e7 samples, max deviation {worst:.2e}"))
}

fn oracle_detections(scenes: &[virtview::synth::Scene], k: &CameraIntrinsics, noise: OracleNoise) -> Result<Vec<(String, Vec<Box3D>)>, String> {
    let icfg = InferenceConfig::default();
    scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let ocfg = OracleConfig {
                noise,
                seed: derive_seed(66, i as u64),
                ..OracleConfig::default()
            };
            let det = OracleDetector::new(s.objects.clone(), *k, &icfg, ocfg);
            run_inference(k, None, &det, &icfg, Execution::Parallel, None)
                .map(|o| (i.to_string(), o.detections))
                .map_err(|e| e.to_string())
        })
        .collect()
}

fn c6_end_to_end_ap() -> Outcome {
    let k = kitti();
    let params = SceneParams {
        max_objects: 10,
        z_lo: 5.0,
        z_hi: 40.0,
        min_nearest_depth: 4.5,
        max_2d_iou: Some(0.4),
        ..SceneParams::default()
    };
    let scenes = generate_scenes(&params, &k, 50, 6, Execution::Parallel);
    let gts: Vec<(String, Vec<Box3D>)> = scenes.iter().enumerate().map(|(i, s)| (i.to_string(), s.objects.clone())).collect();
    let strict = EvalConfig::default();
    let loose = EvalConfig {
        iou_thresholds: [0.5; NUM_CLASSES],
        metrics: vec![OverlapMetric::Bev],
        ..EvalConfig::default()
    };
    let eval = |dets: &[(String, Vec<Box3D>)], cfg: &EvalConfig| evaluate(dets, &gts, cfg, Execution::Parallel).map_err(|e| e.to_string());

    let clean = oracle_detections(&scenes, &k, OracleNoise::default())?;
    let report = eval(&clean, &strict)?;
    let cells: Vec<_> = report.entries.iter().filter(|e| e.ap.is_some()).collect();
    ensure!(cells.len() == 18, "{} populated cells", cells.len());
    for e in &cells {
        ensure!((e.ap.unwrap() - 100.0).abs() <= 1e-6, "{} AP={:?}", e.key(), e.ap);
    }

    let noisy = oracle_detections(&scenes, &k, OracleNoise { depth: 0.5, ..OracleNoise::default() })?;
    let noisy_strict = eval(&noisy, &strict)?;
    let noisy_loose = eval(&noisy, &loose)?;
    let mut worst_3d = 0.0f64;
    for d in Difficulty::ALL {
        let ap3d = noisy_strict.ap(CAR, d, OverlapMetric::Box3d).ok_or("no Car 3D cell")?;
        let apbev = noisy_loose.ap(CAR, d, OverlapMetric::Bev).ok_or("no Car BEV cell")?;
        ensure!(ap3d < 100.0, "Car/{d}/3D AP did not drop ({ap3d})");
        ensure!(apbev > ap3d, "Car/{d} BEV@0.5 {apbev} not above 3D@0.7 {ap3d}");
        worst_3d = worst_3d.max(ap3d);
    }
    let moderate = noisy_loose.ap(CAR, Difficulty::Moderate, OverlapMetric::Bev).unwrap_or(f64::NAN);
    Ok(format!(
        "clean: 18 cells at 100.00; 0.5 m depth noise: Car 3D@0.7 <= {worst_3d:.2}, Car/Moderate BEV@0.5 = {moderate:.2}"
    ))
}

/// Interpolated AP computed directly: mean over sample recalls r of the best
/// precision at recall >= r.
fn direct_ap(points: &[(f64, f64)], recalls: &[f64]) -> f64 {
    let sum: f64 = recalls
        .iter()
        .map(|&r| points.iter().filter(|p| p.0 >= r - 1e-12).map(|p| p.1).fold(0.0, f64::max))
        .sum();
    100.0 * sum / recalls.len() as f64
}

fn c7_recall_bias() -> Outcome {
    let n_gt = 4;
    let scored = [(0.9, true)];
    let r11 = average_precision(&scored, n_gt, RecallSamples::R11).ok_or("no R11 value")?;
    let r40 = average_precision(&scored, n_gt, RecallSamples::R40).ok_or("no R40 value")?;
    let curve = [(0.25, 1.0)];
    let d11 = direct_ap(&curve, &(0..=10).map(|i| i as f64 / 10.0).collect::<Vec<_>>());
    let d40 = direct_ap(&curve, &(1..=40).map(|i| i as f64 / 40.0).collect::<Vec<_>>());
    ensure!((r11 - d11).abs() < 1e-9 && (r40 - d40).abs() < 1e-9, "direct {d11}/{d40} vs {r11}/{r40}");
    ensure!(r11 > r40, "R11 {r11} not above R40 {r40}");

    // the same case through the full evaluator
    let car = |x: f64| {
        Box3D::new(Point3::new(x, 1.0, 20.0), Size3::new(1.6, 1.5, 3.9), 0.0, CAR).with_meta(ObjectMeta {
            truncation: 0.0,
            occlusion: 0,
            alpha: None,
            bbox: Some(Box2D::new(100.0, 100.0, 200.0, 160.0)),
            label: None,
        })
    };
    let gts = vec![("0".to_string(), vec![car(-9.0), car(-3.0), car(3.0), car(9.0)])];
    let dets = vec![("0".to_string(), vec![car(3.0).with_score(0.9)])];
    let mut cfg = EvalConfig::default();
    let mut full = [0.0; 2];
    for (slot, samples) in [RecallSamples::R11, RecallSamples::R40].into_iter().enumerate() {
        cfg.recall = samples;
        let rep = evaluate(&dets, &gts, &cfg, Execution::Sequential).map_err(|e| e.to_string())?;
        full[slot] = rep.ap(CAR, Difficulty::Easy, OverlapMetric::Box3d).ok_or("no cell")?;
    }
    ensure!((full[0] - d11).abs() < 1e-9 && (full[1] - d40).abs() < 1e-9, "evaluator gave {full:?}");
    Ok(format!("single TP of 4: AP|R11 = {r11:.2} > AP|R40 = {r40:.2}"))
}

fn c8_range_splits() -> Outcome {
    let expect: [(RangeSplitKind, &[(f64, f64)], &[(f64, f64)]); 3] = [
        (RangeSplitKind::FarNear, &[(0.0, 20.0)], &[(20.0, 50.0)]),
        (RangeSplitKind::NearFar, &[(20.0, 50.0)], &[(0.0, 20.0)]),
        (RangeSplitKind::NearFarMiddle, &[(0.0, 10.0), (20.0, 40.0)], &[(10.0, 20.0)]),
    ];
    let member = |iv: &[(f64, f64)], z: f64| iv.iter().any(|&(lo, hi)| lo <= z && z < hi);
    let k = kitti();
    let params = SceneParams {
        z_lo: 1.0,
        z_hi: 55.0,
        min_nearest_depth: 0.5,
        ..SceneParams::default()
    };
    let frames: Vec<Vec<Box3D>> = generate_scenes(&params, &k, 300, 8, Execution::Parallel)
        .into_iter()
        .map(|s| s.objects)
        .collect();
    let mut checked = 0usize;
    for (kind, train_iv, val_iv) in expect {
        let (train, val) = kind.ranges();
        // grid membership, including every interval endpoint
        for i in 0..=6000 {
            let z = i as f64 / 100.0;
            ensure!(train.contains(z) == member(train_iv, z), "{} train at {z}", kind.name());
            ensure!(val.contains(z) == member(val_iv, z), "{} val at {z}", kind.name());
        }
        let (tr, va) = make_range_split(&frames, &train, &val);
        for (set, iv) in [(&tr, train_iv), (&va, val_iv)] {
            let mut kept_frames = set.iter().map(|(i, _)| *i).peekable();
            for (i, objs) in frames.iter().enumerate() {
                let want: Vec<&Box3D> = objs.iter().filter(|b| member(iv, b.center.z)).collect();
                if want.is_empty() {
                    ensure!(kept_frames.peek() != Some(&i), "{}: frame {i} kept without objects", kind.name());
                    continue;
                }
                ensure!(kept_frames.next() == Some(i), "{}: frame {i} missing", kind.name());
                let got = &set.iter().find(|(j, _)| *j == i).unwrap().1;
                ensure!(got.iter().eq(want.iter().copied()), "{}: frame {i} membership differs", kind.name());
                checked += objs.len();
            }
        }
    }
    Ok(format!("3 splits, {checked} box memberships checked"))
}

fn c9_view_performance() -> Outcome {
    let k = kitti();
    let scene = generate_scenes(&SceneParams::default(), &k, 1, 9, Execution::Sequential).remove(0);
    let image = render_scene(&k, &scene.objects, 1.65);
    let cfg = ViewConfig::default();
    let mut best = Duration::MAX;
    for _ in 0..7 {
        let t = Instant::now();
        let specs = inference_viewports(&k, &cfg, k.width).map_err(|e| e.to_string())?;
        let views = resample_all(&image, &specs, Execution::Sequential).map_err(|e| e.to_string())?;
        best = best.min(t.elapsed());
        ensure!(views.len() == 17, "{} views", views.len());
    }
    ensure!(best < Duration::from_millis(100), "best of 7 took {best:?}");
    Ok(format!("17 views of 1242x375 in {:.1} ms single-threaded", best.as_secs_f64() * 1e3))
}

fn c10_io_fidelity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let k = kitti();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let scenes = generate_scenes(&SceneParams::default(), &k, 100, 10, Execution::Parallel);
    let mut results = Vec::new();
    for (i, s) in scenes.iter().enumerate() {
        let id = format!("{i:06}");
        let mut labels: Vec<KittiLabel> = s.objects.iter().map(|b| box3d_to_kitti(b, Some(&k))).collect();
        labels.push(parse_label_file("DontCare -1 -1 -10.00 503.89 169.71 590.61 190.13 -1.00 -1.00 -1.00 -1000.00 -1000.00 -1000.00 -10.00\n").map_err(|e| e.to_string())?.remove(0));
        let text = format_label_file(&labels);
        let path = dir.path().join("label_2").join(format!("{id}.txt"));
        write_atomic(&path, text.as_bytes()).map_err(|e| e.to_string())?;
        let back = read_label_file(&path).map_err(|e| e.to_string())?;
        ensure!(back == labels, "label records differ in {id}");
        let via_boxes: Vec<KittiLabel> = back.iter().map(|r| box3d_to_kitti(&kitti_to_box3d(r), None)).collect();
        ensure!(format_label_file(&via_boxes) == text, "label text differs after box conversion in {id}");

        let mut calib = Calib::from_intrinsics(&k);
        for e in calib.entries.iter_mut() {
            for v in e.1.iter_mut() {
                *v *= 1.0 + rng.gen_range(-1e-3..1e-3);
            }
        }
        let ctext = format_calib(&calib);
        let cpath = dir.path().join("calib").join(format!("{id}.txt"));
        write_atomic(&cpath, ctext.as_bytes()).map_err(|e| e.to_string())?;
        let cback = read_calib_file(&cpath).map_err(|e| e.to_string())?;
        let bits = |c: &Calib| c.entries.iter().flat_map(|e| e.1.iter().map(|v| v.to_bits())).collect::<Vec<_>>();
        ensure!(bits(&cback) == bits(&calib), "calibration values differ in {id}");
        ensure!(format_calib(&parse_calib(&ctext).map_err(|e| e.to_string())?) == ctext, "calibration text differs in {id}");

        let dets: Vec<KittiLabel> = s
            .objects
            .iter()
            .map(|b| {
                let mut d = b.clone().with_score(rng.gen_range(0.0..1.0));
                d.meta = None;
                box3d_to_kitti(&d, Some(&k))
            })
            .collect();
        results.push((id, dets));
    }
    let rdir = dir.path().join("results");
    write_results(&rdir, &results).map_err(|e| e.to_string())?;
    ensure!(read_label_dir(&rdir).map_err(|e| e.to_string())? == results, "result files differ");
    Ok("100 label, calibration and result files round trip bit-exactly".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 10] = [
        ("scale normalization", c1_scale_normalization, Duration::from_secs(1)),
        ("inference coverage", c2_inference_coverage, Duration::from_secs(1)),
        ("codec round trips", c3_codec_round_trip, Duration::from_secs(5)),
        ("loss correctness", c4_losses, Duration::from_secs(30)),
        ("overlap oracles", c5_overlap_oracles, Duration::from_secs(120)),
        ("end-to-end oracle AP", c6_end_to_end_ap, Duration::from_secs(60)),
        ("R11 vs R40 bias", c7_recall_bias, Duration::from_secs(1)),
        ("range-split harness", c8_range_splits, Duration::from_secs(10)),
        ("view performance", c9_view_performance, Duration::from_secs(10)),
        ("I/O fidelity", c10_io_fidelity, Duration::from_secs(1)),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f, budget)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = t.elapsed();
        let outcome = match outcome {
            Ok(_) if elapsed > *budget => Err(format!("took {elapsed:.2?}, budget {budget:?}")),
            o => o,
        };
        match outcome {
            Ok(msg) => println!("criterion {:>2} PASS {name}: {msg} ({elapsed:.2?})", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {msg} ({elapsed:.2?})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
