//! End-to-end per-frame motion probability.
//!
//! For frame `t` the estimator needs the frames `t - max(J) ..= t + max(J)`
//! and nothing else, so frames can be processed independently and in any
//! order.

use std::borrow::Cow;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{FlowKind, FlowProvider, FlowRequest};
use crate::fusion::{differenced_motion, final_probability, temporal_average, FusionParams, MotionMap};
use crate::geometry::{DepthMap, Grid, ImageBuffer, Intrinsics, PoseSE3, ProbabilityMap};
use crate::movable::{movable_probability, MovableParams};
use crate::synthesis::{relative_pose, splat_view, SplattedFrame, DEFAULT_SHARPNESS};

/// One timestamped RGB-D observation with its static-background counterpart.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBundle {
    pub timestamp: f64,
    pub rgb: ImageBuffer,
    pub depth: DepthMap,
    pub background_rgb: ImageBuffer,
    /// Depth of the static background; the observed depth is used when absent.
    pub background_depth: Option<DepthMap>,
    /// Camera-to-world pose.
    pub pose: Option<PoseSE3>,
}

impl FrameBundle {
    pub fn validate(&self, k: &Intrinsics) -> Result<()> {
        let dims = k.dims();
        crate::geometry::ensure_same_dims(dims, self.rgb.dimensions())?;
        crate::geometry::ensure_same_dims(dims, self.depth.dims())?;
        crate::geometry::ensure_same_dims(dims, self.background_rgb.dimensions())?;
        if let Some(d) = &self.background_depth {
            crate::geometry::ensure_same_dims(dims, d.dims())?;
        }
        Ok(())
    }

    fn pose_or_err(&self) -> Result<&PoseSE3> {
        self.pose.as_ref().ok_or_else(|| Error::param(format!("frame at t={} has no pose", self.timestamp)))
    }
}

/// Random access to the frames of a sequence.
pub trait FrameSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn intrinsics(&self) -> Intrinsics;

    fn frame(&self, index: usize) -> Result<Cow<'_, FrameBundle>>;
}

#[derive(Clone, Debug)]
pub struct InMemorySequence {
    pub intrinsics: Intrinsics,
    pub frames: Vec<FrameBundle>,
}

impl FrameSource for InMemorySequence {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn intrinsics(&self) -> Intrinsics {
        self.intrinsics
    }

    fn frame(&self, index: usize) -> Result<Cow<'_, FrameBundle>> {
        self.frames.get(index).map(Cow::Borrowed).ok_or(Error::Empty("frame index out of range"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorParams {
    pub movable: MovableParams,
    pub fusion: FusionParams,
    /// Depth sharpness of the splatting weights.
    pub sharpness: f64,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        Self { movable: MovableParams::default(), fusion: FusionParams::default(), sharpness: DEFAULT_SHARPNESS }
    }
}

impl EstimatorParams {
    pub fn validate(&self) -> Result<()> {
        self.movable.validate()?;
        self.fusion.validate()?;
        if !(self.sharpness >= 0.0 && self.sharpness.is_finite()) {
            return Err(Error::param("sharpness must be non-negative"));
        }
        Ok(())
    }
}

/// Intermediate results for one neighbour.
#[derive(Clone, Debug)]
pub struct NeighbourDiagnostics {
    pub source: usize,
    pub splat: SplattedFrame,
    pub background_splat: SplattedFrame,
    pub motion: MotionMap,
}

#[derive(Clone, Debug)]
pub struct FrameEstimate {
    pub index: usize,
    pub probability: ProbabilityMap,
    pub movable: ProbabilityMap,
    /// Averaged moving-region magnitude.
    pub motion: MotionMap,
    /// Filled only when diagnostics were requested.
    pub neighbours: Vec<NeighbourDiagnostics>,
}

/// Neighbour indices used for frame `t`, ordered `t+j, t-j` for ascending `j`.
pub fn neighbour_indices(t: usize, len: usize, offsets: &[usize]) -> Vec<usize> {
    let mut js: Vec<usize> = offsets.to_vec();
    js.sort_unstable();
    js.dedup();
    let mut out = Vec::new();
    for j in js {
        if t + j < len {
            out.push(t + j);
        }
        if t >= j {
            out.push(t - j);
        }
    }
    out
}

/// Differenced motion between frame `t` and neighbour `s` synthesized into view `t`.
pub fn neighbour_motion(
    current: &FrameBundle,
    neighbour: &FrameBundle,
    t: usize,
    s: usize,
    k: &Intrinsics,
    sharpness: f64,
    flow: &dyn FlowProvider,
) -> Result<NeighbourDiagnostics> {
    let rel = relative_pose(current.pose_or_err()?, neighbour.pose_or_err()?);
    let splat = splat_view(&neighbour.rgb, &neighbour.depth, &rel, k, sharpness)?;
    let bg_depth = neighbour.background_depth.as_ref().unwrap_or(&neighbour.depth);
    let background_splat = splat_view(&neighbour.background_rgb, bg_depth, &rel, k, sharpness)?;

    // Holes take the reference pixel so they read as zero motion in the flow.
    let synth = splat.to_rgb8(Some(&current.rgb));
    let synth_bg = background_splat.to_rgb8(Some(&current.background_rgb));
    let dyn_flow = flow.flow(&FlowRequest {
        target_frame: t,
        source_frame: s,
        kind: FlowKind::Dynamic,
        reference: &current.rgb,
        synthesized: &synth,
    })?;
    let mut bg_flow = flow.flow(&FlowRequest {
        target_frame: t,
        source_frame: s,
        kind: FlowKind::Background,
        reference: &current.background_rgb,
        synthesized: &synth_bg,
    })?;
    for (i, ok) in bg_flow.valid.as_mut_slice().iter_mut().enumerate() {
        *ok &= splat.valid.as_slice()[i] && background_splat.valid.as_slice()[i];
    }
    let motion = differenced_motion(&dyn_flow, &bg_flow)?;
    Ok(NeighbourDiagnostics { source: s, splat, background_splat, motion })
}

pub fn estimate_frame(
    source: &dyn FrameSource,
    t: usize,
    params: &EstimatorParams,
    flow: &dyn FlowProvider,
    keep_diagnostics: bool,
) -> Result<FrameEstimate> {
    params.validate()?;
    let k = source.intrinsics();
    let current = source.frame(t)?;
    current.validate(&k)?;
    let movable = movable_probability(&current.rgb, &current.background_rgb, &params.movable)?;

    let mut contributions = Vec::new();
    let mut neighbours = Vec::new();
    for s in neighbour_indices(t, source.len(), &params.fusion.offsets) {
        let nb = source.frame(s)?;
        nb.validate(&k)?;
        let diag = neighbour_motion(&current, &nb, t, s, &k, params.sharpness, flow)?;
        contributions.push(diag.motion.clone());
        if keep_diagnostics {
            neighbours.push(diag);
        }
    }
    let motion = if contributions.is_empty() {
        log::warn!("frame {t}: no neighbours available, using the movable prior alone");
        let (w, h) = k.dims();
        MotionMap { values: Grid::new(w, h, 0.0), valid: Grid::new(w, h, false) }
    } else {
        temporal_average(&contributions)?
    };
    let probability = final_probability(&movable, &motion, &params.fusion)?;
    Ok(FrameEstimate { index: t, probability, movable, motion, neighbours })
}

/// Estimates every frame in parallel on the current rayon pool. Results are
/// returned in frame order and do not depend on the number of threads.
pub fn estimate_sequence(
    source: &dyn FrameSource,
    params: &EstimatorParams,
    flow: &dyn FlowProvider,
    keep_diagnostics: bool,
) -> Vec<Result<FrameEstimate>> {
    (0..source.len()).into_par_iter().map(|t| estimate_frame(source, t, params, flow, keep_diagnostics)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbours_at_boundaries() {
        assert_eq!(neighbour_indices(0, 10, &[2]), vec![2]);
        assert_eq!(neighbour_indices(5, 10, &[2]), vec![7, 3]);
        assert_eq!(neighbour_indices(9, 10, &[2]), vec![7]);
        assert_eq!(neighbour_indices(3, 10, &[3, 1, 1]), vec![4, 2, 6, 0]);
        assert!(neighbour_indices(0, 1, &[2]).is_empty());
    }
}
