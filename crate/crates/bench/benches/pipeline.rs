use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use pixmotion::flow::{baseline_flow, BaselineFlow};
use pixmotion::movable::movable_probability;
use pixmotion::pipeline::{estimate_frame, EstimatorParams, FrameSource};
use pixmotion::slam::solve_weighted_ba;
use pixmotion::synthesis::{relative_pose, splat_view, DEFAULT_SHARPNESS};
use pixmotion::{MovableParams, SolverConfig};
use pixmotion_bench::{desk_sequence, pose_only_problem};

fn stages(c: &mut Criterion) {
    let seq = desk_sequence(160, 120, 5);
    let k = seq.intrinsics();
    let (a, b) = (seq.frame(2).unwrap(), seq.frame(0).unwrap());

    c.bench_function("movable_probability 160x120", |bn| {
        bn.iter(|| movable_probability(black_box(&a.rgb), black_box(&a.background_rgb), &MovableParams::default()))
    });

    let rel = relative_pose(a.pose.as_ref().unwrap(), b.pose.as_ref().unwrap());
    c.bench_function("splat_view 160x120", |bn| {
        bn.iter(|| splat_view(black_box(&b.rgb), &b.depth, &rel, &k, DEFAULT_SHARPNESS))
    });

    c.bench_function("baseline_flow 160x120", |bn| bn.iter(|| baseline_flow(black_box(&a.rgb), black_box(&b.rgb))));

    let params = EstimatorParams::default();
    let flow = BaselineFlow::default();
    let mut g = c.benchmark_group("end_to_end");
    g.sample_size(10);
    g.bench_function("estimate_frame 160x120", |bn| bn.iter(|| estimate_frame(&seq, 2, &params, &flow, false)));
    g.finish();
}

fn bundle_adjustment(c: &mut Criterion) {
    let problem = pose_only_problem(300, 90);
    let config = SolverConfig::default();
    c.bench_function("solve_weighted_ba 300 points", |bn| bn.iter(|| solve_weighted_ba(black_box(&problem), &config)));
}

criterion_group!(benches, stages, bundle_adjustment);
criterion_main!(benches);
