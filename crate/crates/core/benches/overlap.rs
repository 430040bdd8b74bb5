use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use virtview::camera::{Box3D, Point3, Size3};
use virtview::classes::CAR;
use virtview::overlap::{bev_iou_boxes, iou_3d, nms};
use virtview::par::Execution;

fn boxes(n: usize, seed: u64) -> Vec<Box3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut b = Box3D::new(
                Point3::new(rng.gen_range(-10.0..10.0), rng.gen_range(1.0..2.0), rng.gen_range(5.0..30.0)),
                Size3::new(rng.gen_range(1.4..2.0), rng.gen_range(1.3..1.8), rng.gen_range(3.2..4.8)),
                rng.gen_range(-3.1..3.1),
                CAR,
            );
            b.score = Some(rng.gen());
            b
        })
        .collect()
}

fn overlap(c: &mut Criterion) {
    let a = boxes(200, 1);
    let b = boxes(200, 2);
    for (label, f) in [("bev_iou_200x200", bev_iou_boxes as fn(&Box3D, &Box3D) -> f64), ("iou_3d_200x200", iou_3d)] {
        let mut g = c.benchmark_group(label);
        g.sample_size(20);
        for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |bench, &exec| {
                bench.iter(|| exec.map(&a, |x| b.iter().map(|y| f(x, y)).sum::<f64>()))
            });
        }
        g.finish();
    }

    let dense = boxes(500, 3);
    c.bench_function("nms_bev_500", |bench| {
        bench.iter(|| nms(black_box(&dense), |b| b.score.unwrap_or(0.0), bev_iou_boxes, 0.5))
    });
}

criterion_group!(benches, overlap);
criterion_main!(benches);
