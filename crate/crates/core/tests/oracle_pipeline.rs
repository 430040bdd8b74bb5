//! Statistical and end-to-end behaviour of the oracle-driven pipeline.

use virtview::camera::{Box3D, CameraIntrinsics, Point3, Size3};
use virtview::classes::{CAR, NUM_CLASSES};
use virtview::eval::{evaluate, EvalConfig};
use virtview::kitti::Difficulty;
use virtview::overlap::OverlapMetric;
use virtview::par::{derive_seed, Execution};
use virtview::pipeline::{run_inference, Detector, InferenceConfig, OracleConfig, OracleDetector, OracleNoise};
use virtview::synth::{generate_scenes, Scene, SceneParams};
use virtview::viewport::inference_viewports;

fn kitti() -> CameraIntrinsics {
    CameraIntrinsics::new(721.5377, 721.5377, 609.5593, 172.854, 1242, 375).unwrap()
}

fn clean_scenes(n: usize, seed: u64) -> Vec<Scene> {
    let p = SceneParams {
        z_lo: 5.0,
        z_hi: 40.0,
        min_nearest_depth: 4.5,
        max_2d_iou: Some(0.4),
        ..SceneParams::default()
    };
    generate_scenes(&p, &kitti(), n, seed, Execution::Parallel)
}

fn run(scenes: &[Scene], ocfg: &OracleConfig, exec: Execution) -> Vec<(String, Vec<Box3D>)> {
    let k = kitti();
    let icfg = InferenceConfig::default();
    scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let cfg = OracleConfig {
                seed: derive_seed(ocfg.seed, i as u64),
                ..ocfg.clone()
            };
            let det = OracleDetector::new(s.objects.clone(), k, &icfg, cfg);
            let out = run_inference(&k, None, &det, &icfg, exec, None).unwrap();
            (i.to_string(), out.detections)
        })
        .collect()
}

fn gts(scenes: &[Scene]) -> Vec<(String, Vec<Box3D>)> {
    scenes.iter().enumerate().map(|(i, s)| (i.to_string(), s.objects.clone())).collect()
}

/// Per-view output counts follow Binomial(n, 1 - drop) + Poisson(clutter).
#[test]
fn oracle_output_counts_match_their_distribution() {
    let k = kitti();
    let icfg = InferenceConfig::default();
    let spec = inference_viewports(&k, &icfg.view, k.width).unwrap()[6];
    let n_obj = 6usize;
    let gt: Vec<Box3D> = (0..n_obj)
        .map(|i| {
            let mut b = Box3D::new(
                Point3::new(-6.0 + 2.4 * i as f64, 1.0, 0.0),
                Size3::new(1.6, 1.5, 3.9),
                0.3 * i as f64,
                CAR,
            );
            b.center.z += spec.viewport.z + 0.5 + 0.6 * i as f64 - b.nearest_depth();
            b
        })
        .collect();
    let (drop, clutter) = (0.3, 0.8);
    let det = OracleDetector::new(
        gt,
        k,
        &icfg,
        OracleConfig {
            drop_prob: drop,
            clutter_rate: clutter,
            seed: 12,
            ..OracleConfig::default()
        },
    );
    let views = 10_000usize;
    let counts: Vec<f64> = (0..views).map(|v| det.detect(v, &spec, None).unwrap().len() as f64).collect();
    let mean = counts.iter().sum::<f64>() / views as f64;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (views - 1) as f64;
    let mu = n_obj as f64 * (1.0 - drop) + clutter;
    let sigma2 = n_obj as f64 * drop * (1.0 - drop) + clutter;
    let se = (sigma2 / views as f64).sqrt();
    assert!((mean - mu).abs() < 3.0 * se, "mean {mean} vs {mu} (se {se})");
    // variance of the sample variance, using the fourth central moment bound 3 sigma^4 + sigma^2
    let var_se = ((3.0 * sigma2 * sigma2 + sigma2) / views as f64).sqrt();
    assert!((var - sigma2).abs() < 3.0 * var_se, "variance {var} vs {sigma2}");
}

#[test]
fn perfect_oracle_gives_full_ap_everywhere() {
    let scenes = clean_scenes(30, 1);
    let dets = run(&scenes, &OracleConfig::default(), Execution::Parallel);
    let rep = evaluate(&dets, &gts(&scenes), &EvalConfig::default(), Execution::Parallel).unwrap();
    let cells: Vec<_> = rep.entries.iter().filter(|e| e.ap.is_some()).collect();
    assert_eq!(cells.len(), NUM_CLASSES * 3 * 2);
    for e in cells {
        assert!((e.ap.unwrap() - 100.0).abs() < 1e-9, "{} {:?}", e.key(), e.ap);
        assert_eq!(e.fp, 0, "{}", e.key());
    }
}

#[test]
fn ap_does_not_increase_with_depth_noise() {
    let scenes = clean_scenes(30, 2);
    let truth = gts(&scenes);
    let mut prev = f64::INFINITY;
    for sigma in [0.0, 0.1, 0.3, 0.6, 1.2] {
        let ocfg = OracleConfig {
            noise: OracleNoise {
                depth: sigma,
                ..OracleNoise::default()
            },
            seed: 5,
            ..OracleConfig::default()
        };
        let rep = evaluate(&run(&scenes, &ocfg, Execution::Parallel), &truth, &EvalConfig::default(), Execution::Parallel).unwrap();
        let ap = rep.ap(CAR, Difficulty::Moderate, OverlapMetric::Box3d).unwrap();
        assert!(ap <= prev + 1e-9, "AP rose to {ap} at sigma {sigma} (was {prev})");
        prev = ap;
    }
    assert!(prev < 50.0, "1.2 m depth noise left AP at {prev}");
}

#[test]
fn pipeline_output_is_independent_of_execution_mode() {
    let scenes = clean_scenes(8, 3);
    let ocfg = OracleConfig {
        noise: OracleNoise {
            center: 1.0,
            depth: 0.4,
            size: 0.05,
            rotation: 0.1,
        },
        drop_prob: 0.1,
        clutter_rate: 0.5,
        seed: 77,
    };
    let a = run(&scenes, &ocfg, Execution::Sequential);
    let b = run(&scenes, &ocfg, Execution::Parallel);
    assert_eq!(a, b);
    let truth = gts(&scenes);
    let ra = evaluate(&a, &truth, &EvalConfig::default(), Execution::Sequential).unwrap();
    let rb = evaluate(&b, &truth, &EvalConfig::default(), Execution::Parallel).unwrap();
    assert_eq!(ra.to_csv(), rb.to_csv());
}
