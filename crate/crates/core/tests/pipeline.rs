use std::fs;

use pixmotion::dataset::{render_synthetic_sequence, SyntheticScene, SyntheticSequence};
use pixmotion::flow::{write_flo, BaselineFlow, FlowFiles, FlowKind, FlowProvider, FlowRequest};
use pixmotion::fusion::FusionParams;
use pixmotion::pipeline::{estimate_frame, neighbour_indices, EstimatorParams, FrameSource, InMemorySequence};
use pixmotion::{FlowField, Intrinsics, Result};

fn small_scene() -> SyntheticScene {
    let mut s = SyntheticScene::desk();
    s.intrinsics = Intrinsics::new(80.0, 80.0, 47.5, 35.5, 96, 72).unwrap();
    s
}

#[test]
fn static_scene_gives_zero_probability() {
    let mut s = small_scene();
    s.moving_boxes.clear();
    s.shadows.clear();
    let seq = render_synthetic_sequence(&s, 5).unwrap();
    for t in [0, 2, 4] {
        let e = estimate_frame(&seq, t, &EstimatorParams::default(), &BaselineFlow::default(), false).unwrap();
        assert!(e.probability.values().iter().all(|&p| p == 0.0), "frame {t}");
    }
}

#[test]
fn moving_box_is_highlighted() {
    let seq = render_synthetic_sequence(&small_scene(), 7).unwrap();
    let e = estimate_frame(&seq, 3, &EstimatorParams::default(), &BaselineFlow::default(), true).unwrap();
    assert!(e.probability.masked_mean(&seq.motion_masks[3]).unwrap() >= 0.5);
    assert!(e.probability.masked_mean(&seq.static_mask(3)).unwrap() <= 0.1);
    assert_eq!(e.neighbours.iter().map(|n| n.source).collect::<Vec<_>>(), vec![5, 1]);
}

#[test]
fn single_frame_falls_back_to_movable_prior() {
    let seq = render_synthetic_sequence(&small_scene(), 1).unwrap();
    let e = estimate_frame(&seq, 0, &EstimatorParams::default(), &BaselineFlow::default(), false).unwrap();
    assert_eq!(e.probability, e.movable);
    assert!(e.motion.valid.iter().all(|&v| !v));
}

#[test]
fn missing_pose_is_an_error() {
    let seq = render_synthetic_sequence(&small_scene(), 3).unwrap();
    let mut frames = seq.frames.clone();
    frames[2].pose = None;
    let mem = InMemorySequence { intrinsics: seq.intrinsics(), frames };
    assert!(estimate_frame(&mem, 0, &EstimatorParams::default(), &BaselineFlow::default(), false).is_err());
}

/// Serves ground-truth residual flow for dynamic requests and zeros for the background.
struct OracleFlow<'a>(&'a SyntheticSequence);

impl FlowProvider for OracleFlow<'_> {
    fn flow(&self, r: &FlowRequest<'_>) -> Result<FlowField> {
        let (w, h) = r.reference.dimensions();
        match r.kind {
            FlowKind::Dynamic => self.0.residual_flow(r.target_frame, r.source_frame),
            FlowKind::Background => Ok(FlowField::zeros(w, h)),
        }
    }
}

#[test]
fn precomputed_flow_files_match_in_memory_provider() {
    let seq = render_synthetic_sequence(&small_scene(), 5).unwrap();
    let oracle = OracleFlow(&seq);
    let params =
        EstimatorParams { fusion: FusionParams { offsets: vec![1, 2], ..Default::default() }, ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    let t = 2;
    for s in neighbour_indices(t, seq.len(), &params.fusion.offsets) {
        let f = seq.frame(t).unwrap();
        for kind in [FlowKind::Dynamic, FlowKind::Background] {
            let req = FlowRequest { target_frame: t, source_frame: s, kind, reference: &f.rgb, synthesized: &f.rgb };
            write_flo(&FlowFiles::path_for(dir.path(), t, s, kind), &oracle.flow(&req).unwrap()).unwrap();
        }
    }
    let a = estimate_frame(&seq, t, &params, &oracle, false).unwrap();
    let b = estimate_frame(&seq, t, &params, &FlowFiles::new(dir.path()), false).unwrap();
    // .flo stores f32
    for (x, y) in a.probability.values().iter().zip(b.probability.values().iter()) {
        assert!((x - y).abs() < 1e-5);
    }
    assert!(a.probability.masked_mean(&seq.motion_masks[t]).unwrap() > 0.5);

    fs::remove_file(FlowFiles::path_for(dir.path(), t, 4, FlowKind::Background)).unwrap();
    assert!(estimate_frame(&seq, t, &params, &FlowFiles::new(dir.path()), false).is_err());
}
