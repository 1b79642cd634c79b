//! Per-pixel motion probability for dynamic RGB-D SLAM.
//!
//! The estimator combines a movable-region prior from background
//! differencing with moving-region evidence from optical flow measured
//! against neighbouring frames synthesized into the current view. The
//! resulting probabilities gate map points and weight the residuals of a
//! bundle adjustment backend.
//!
//! ```no_run
//! use pixmotion::dataset::{render_synthetic_sequence, SyntheticScene};
//! use pixmotion::flow::BaselineFlow;
//! use pixmotion::pipeline::{estimate_frame, EstimatorParams};
//!
//! let seq = render_synthetic_sequence(&SyntheticScene::desk(), 10).unwrap();
//! let est = estimate_frame(&seq, 5, &EstimatorParams::default(), &BaselineFlow::default(), false).unwrap();
//! println!("P at centre: {}", est.probability.get(80, 60));
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod eval;
pub mod flow;
pub mod fusion;
pub mod geometry;
pub mod movable;
pub mod pipeline;
pub mod slam;
pub mod synthesis;

pub use error::{Error, Result};
pub use eval::{EvalReport, Trajectory};
pub use flow::{FlowField, FlowProvider};
pub use fusion::{FusionParams, MotionMap};
pub use geometry::{DepthMap, Grid, ImageBuffer, Intrinsics, PoseSE3, ProbabilityMap};
pub use movable::MovableParams;
pub use pipeline::{EstimatorParams, FrameBundle, FrameSource};
pub use slam::{SelectionParams, SolverConfig, TrackedPoint};
