//! Fixtures shared by the benchmarks.

use nalgebra::{Point2, Point3, Vector3};
use pixmotion::dataset::{render_synthetic_sequence, SyntheticScene, SyntheticSequence};
use pixmotion::geometry::project;
use pixmotion::slam::{BaPoint, BaPose, BaProblem, Observation, TrackedPoint};
use pixmotion::{Intrinsics, PoseSE3};

/// The desk scene at `width x height`, keeping the field of view.
pub fn desk_sequence(width: u32, height: u32, frames: usize) -> SyntheticSequence {
    let mut scene = SyntheticScene::desk();
    let s = width as f64 / scene.intrinsics.width as f64;
    let k = scene.intrinsics;
    scene.intrinsics =
        Intrinsics::new(k.fx * s, k.fy * s, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height)
            .expect("valid intrinsics");
    render_synthetic_sequence(&scene, frames).expect("desk scene renders")
}

/// One free pose observing `points` fixed landmarks, the first `outliers`
/// of them displaced and fully dynamic.
pub fn pose_only_problem(points: usize, outliers: usize) -> BaProblem {
    let k = Intrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).expect("valid intrinsics");
    let truth = PoseSE3::from_axis_angle(Vector3::new(0.02, -0.05, 0.01), Vector3::new(0.1, -0.05, 0.2));
    let mut pts = Vec::with_capacity(points);
    let mut obs = Vec::with_capacity(points);
    for i in 0..points {
        let f = i as f64;
        let world = Point3::new((f * 0.37).sin() * 1.5, (f * 0.61).cos(), 3.0 + 2.0 * (f * 0.13).sin().abs());
        let mut px = project(&truth.transform(&world), &k).expect("point in front");
        let prob = if i < outliers {
            px.x += 20.0 * (f * 1.7).sin();
            px.y += 20.0 * (f * 2.3).cos();
            1.0
        } else {
            0.0
        };
        pts.push(BaPoint { point: TrackedPoint::new(i as u64, px, world, prob).expect("valid point"), fixed: true });
        obs.push(Observation { pose: 0, point: i, pixel: Point2::new(px.x, px.y) });
    }
    let start = PoseSE3::from_axis_angle(Vector3::new(0.05, 0.0, 0.0), Vector3::new(0.0, 0.0, 0.1)) * truth;
    BaProblem { intrinsics: k, poses: vec![BaPose { pose: start, fixed: false }], points: pts, observations: obs }
}
